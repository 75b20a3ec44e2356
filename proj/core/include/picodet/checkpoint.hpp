/* Copyright (c) 2026 The picodet-cpp Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <map>
#include <string>

#include "picodet/nn.hpp"

namespace picodet {

// Single-file checkpoint: u64 little-endian header length, JSON header with
// per-tensor name -> {shape, offset}, then raw little-endian float32 payload.
void save_checkpoint(const std::string& path, const nn::ParamList& params,
                     const std::map<std::string, std::string>& meta = {});

// Loads into an existing parameter list; every parameter must be present with
// a matching shape. Returns the stored metadata.
std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   const nn::ParamList& params);

// Raw tensor map load (for tools that inspect checkpoints).
std::map<std::string, Tensor> load_checkpoint_tensors(const std::string& path);

}  // namespace picodet
