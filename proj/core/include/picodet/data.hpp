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

#include <string>
#include <vector>

#include "picodet/geometry.hpp"
#include "picodet/tensor.hpp"

namespace picodet {

struct ImageRecord {
  int id = 0;
  std::string file_name;  // relative to the index root directory
  int width = 0;
  int height = 0;
};

struct Annotation {
  int id = 0;
  int image_id = 0;
  int category_id = 0;  // COCO category id (1-based in generated data)
  Box box;              // canonical xyxy, image pixel coordinates
};

struct Category {
  int id = 0;
  std::string name;
};

// Immutable after load. Annotations are validated against images; boxes are
// canonical xyxy with positive area inside image bounds.
struct DatasetIndex {
  std::string root;  // directory image file_names are relative to
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;  // sorted by id

  // 0-based contiguous class id for a COCO category id (position in the
  // sorted categories list). Throws on unknown ids.
  int class_of(int category_id) const;
  int category_of(int class_id) const;
  int num_classes() const { return static_cast<int>(categories.size()); }

  // All annotations of one image as labeled boxes with 0-based class ids.
  std::vector<LabeledBox> boxes_of(int image_id) const;
};

struct SynthSpec {
  int num_images = 50;
  int image_size = 256;
  int min_shapes = 1;
  int max_shapes = 4;
  std::uint64_t seed = 0;
};

// Renders colored rectangles / circles / triangles on noise backgrounds,
// writes PNGs plus a COCO-style annotations.json into out_dir.
// Bit-identical output for a given spec (including the seed).
DatasetIndex generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

// COCO-JSON ingestion; bbox xywh -> canonical xyxy, invariants enforced
// (dangling image ids rejected, boxes clipped to bounds when clip_boxes,
// rejected otherwise; nonpositive-area boxes always rejected).
DatasetIndex load_coco_json(const std::string& path, bool clip_boxes = false);
void save_coco_json(const DatasetIndex& index, const std::string& path);

// Loads a PNG/JPEG as float CHW in [0, 1], RGB order.
Tensor load_image_chw(const std::string& path);

}  // namespace picodet
