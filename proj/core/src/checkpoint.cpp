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

#include "picodet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace picodet {

namespace {

using json = nlohmann::json;

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f32_le(std::ostream& os, const std::vector<float>& data) {
  // Assume little-endian host (x86/arm64); serialize raw floats.
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

json parse_header(std::istream& is) {
  std::uint64_t header_len = read_u64_le(is);
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error("checkpoint: truncated JSON header");
  json j = json::parse(header, nullptr, false);
  if (j.is_discarded() || !j.contains("tensors"))
    throw std::runtime_error("checkpoint: malformed JSON header");
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamList& params,
                     const std::map<std::string, std::string>& meta) {
  json tensors = json::object();
  std::uint64_t offset = 0;
  for (const nn::Parameter* p : params) {
    const Tensor& t = p->value();
    tensors[p->name] = {{"shape", t.shape()}, {"offset", offset}};
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  json header = {{"format", "picodet-ckpt-v1"}, {"tensors", tensors}, {"meta", meta}};
  std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  write_u64_le(os, header_str.size());
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const nn::Parameter* p : params) write_f32_le(os, p->value().vec());
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   const nn::ParamList& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  json header = parse_header(is);
  std::uint64_t payload_base = static_cast<std::uint64_t>(is.tellg());

  const json& tensors = header["tensors"];
  for (nn::Parameter* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint: missing tensor '" + p->name + "' in " + path);
    std::vector<int> shape = (*it)["shape"].get<std::vector<int>>();
    Tensor& t = p->value();
    if (shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name +
                               "', model expects " + t.shape_str());
    std::uint64_t offset = (*it)["offset"].get<std::uint64_t>();
    is.seekg(static_cast<std::streamoff>(payload_base + offset));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for '" + p->name + "'");
  }

  std::map<std::string, std::string> meta;
  if (header.contains("meta")) {
    for (auto& [k, v] : header["meta"].items()) meta[k] = v.get<std::string>();
  }
  return meta;
}

std::map<std::string, Tensor> load_checkpoint_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  json header = parse_header(is);
  std::uint64_t payload_base = static_cast<std::uint64_t>(is.tellg());

  std::map<std::string, Tensor> out;
  for (auto& [name, info] : header["tensors"].items()) {
    std::vector<int> shape = info["shape"].get<std::vector<int>>();
    Tensor t = Tensor::zeros(shape);
    std::uint64_t offset = info["offset"].get<std::uint64_t>();
    is.seekg(static_cast<std::streamoff>(payload_base + offset));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for '" + name + "'");
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace picodet
