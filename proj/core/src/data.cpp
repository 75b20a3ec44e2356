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

#include "picodet/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace picodet {

namespace fs = std::filesystem;
using json = nlohmann::json;

int DatasetIndex::class_of(int category_id) const {
  for (size_t i = 0; i < categories.size(); ++i)
    if (categories[i].id == category_id) return static_cast<int>(i);
  throw std::runtime_error("dataset: unknown category id " + std::to_string(category_id));
}

int DatasetIndex::category_of(int class_id) const {
  if (class_id < 0 || class_id >= num_classes())
    throw std::runtime_error("dataset: class id out of range: " + std::to_string(class_id));
  return categories[static_cast<size_t>(class_id)].id;
}

std::vector<LabeledBox> DatasetIndex::boxes_of(int image_id) const {
  std::vector<LabeledBox> out;
  for (const Annotation& a : annotations)
    if (a.image_id == image_id) out.push_back({a.box, class_of(a.category_id)});
  return out;
}

namespace {

const char* kSynthClassNames[3] = {"rectangle", "circle", "triangle"};

void validate_index(const DatasetIndex& index, bool clip_boxes, DatasetIndex& out) {
  out.root = index.root;
  out.images = index.images;
  out.categories = index.categories;
  std::sort(out.categories.begin(), out.categories.end(),
            [](const Category& a, const Category& b) { return a.id < b.id; });
  for (const Annotation& a : index.annotations) {
    const ImageRecord* img = nullptr;
    for (const ImageRecord& r : out.images)
      if (r.id == a.image_id) { img = &r; break; }
    if (!img)
      throw std::runtime_error("dataset: annotation " + std::to_string(a.id) +
                               " references unknown image_id " + std::to_string(a.image_id));
    out.class_of(a.category_id);  // throws on unknown category
    Annotation b = a;
    if (clip_boxes) {
      b.box.x1 = std::clamp(b.box.x1, 0.0, double(img->width));
      b.box.y1 = std::clamp(b.box.y1, 0.0, double(img->height));
      b.box.x2 = std::clamp(b.box.x2, 0.0, double(img->width));
      b.box.y2 = std::clamp(b.box.y2, 0.0, double(img->height));
    } else if (b.box.x1 < 0 || b.box.y1 < 0 || b.box.x2 > img->width ||
               b.box.y2 > img->height) {
      throw std::runtime_error("dataset: annotation " + std::to_string(a.id) +
                               " box out of image bounds");
    }
    if (b.box.width() <= 0 || b.box.height() <= 0)
      throw std::runtime_error("dataset: annotation " + std::to_string(a.id) +
                               " has nonpositive area");
    out.annotations.push_back(b);
  }
}

}  // namespace

DatasetIndex generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
  fs::create_directories(out_dir);
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("dataset: cannot create directory " + out_dir);

  std::mt19937 rng(static_cast<std::uint32_t>(spec.seed));
  const int sz = spec.image_size;
  std::uniform_int_distribution<int> noise(40, 90);
  std::uniform_int_distribution<int> nshapes(spec.min_shapes, spec.max_shapes);
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_int_distribution<int> chan(120, 255);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DatasetIndex raw;
  raw.root = out_dir;
  for (int c = 0; c < 3; ++c) raw.categories.push_back({c + 1, kSynthClassNames[c]});

  int ann_id = 1;
  for (int i = 0; i < spec.num_images; ++i) {
    cv::Mat img(sz, sz, CV_8UC3);
    for (int y = 0; y < sz; ++y)
      for (int x = 0; x < sz; ++x) {
        int v = noise(rng);
        img.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<unsigned char>(v),
                                            static_cast<unsigned char>(v),
                                            static_cast<unsigned char>(v));
      }

    std::vector<Box> placed;
    int want = nshapes(rng);
    for (int s = 0; s < want; ++s) {
      int c = cls(rng);
      cv::Scalar color(chan(rng), chan(rng), chan(rng));
      // Shape bounding box: side 20%..45% of the image, fully inside.
      double side = (0.20 + 0.25 * unit(rng)) * sz;
      double side2 = (0.20 + 0.25 * unit(rng)) * sz;
      double x1 = unit(rng) * (sz - side - 2) + 1;
      double y1 = unit(rng) * (sz - side2 - 2) + 1;
      Box b{x1, y1, x1 + side, y1 + side2};

      // Skip heavily overlapping placements (bounded retries at the loop
      // level: an overlapping draw is simply dropped).
      bool clash = false;
      for (const Box& p : placed)
        if (iou(p, b) > 0.3) { clash = true; break; }
      if (clash) continue;

      if (c == 0) {
        cv::rectangle(img, cv::Point2d(b.x1, b.y1), cv::Point2d(b.x2, b.y2), color,
                      cv::FILLED);
      } else if (c == 1) {
        double r = 0.5 * std::min(b.width(), b.height());
        cv::Point2d center(b.cx(), b.cy());
        cv::circle(img, center, static_cast<int>(r), color, cv::FILLED);
        b = Box{center.x - r, center.y - r, center.x + r, center.y + r};
      } else {
        // Upright triangle spanning the box.
        std::vector<cv::Point> pts = {
            cv::Point(static_cast<int>(b.cx()), static_cast<int>(b.y1)),
            cv::Point(static_cast<int>(b.x1), static_cast<int>(b.y2)),
            cv::Point(static_cast<int>(b.x2), static_cast<int>(b.y2))};
        cv::fillConvexPoly(img, pts, color);
      }
      placed.push_back(b);
      raw.annotations.push_back({ann_id++, i + 1, c + 1, b});
    }
    if (placed.empty()) {
      // Guarantee at least one object per image: centered rectangle.
      double q = sz * 0.25;
      Box b{q, q, sz - q, sz - q};
      cv::rectangle(img, cv::Point2d(b.x1, b.y1), cv::Point2d(b.x2, b.y2),
                    cv::Scalar(chan(rng), chan(rng), chan(rng)), cv::FILLED);
      raw.annotations.push_back({ann_id++, i + 1, 1, b});
    }

    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", i + 1);
    cv::imwrite((fs::path(out_dir) / name).string(), img,
                {cv::IMWRITE_PNG_COMPRESSION, 3});
    raw.images.push_back({i + 1, name, sz, sz});
  }

  save_coco_json(raw, (fs::path(out_dir) / "annotations.json").string());
  DatasetIndex out;
  validate_index(raw, /*clip_boxes=*/false, out);
  return out;
}

DatasetIndex load_coco_json(const std::string& path, bool clip_boxes) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("dataset: malformed JSON in " + path);

  DatasetIndex raw;
  raw.root = fs::path(path).parent_path().string();
  for (const auto& im : j.value("images", json::array())) {
    raw.images.push_back({im.at("id").get<int>(), im.at("file_name").get<std::string>(),
                          im.at("width").get<int>(), im.at("height").get<int>()});
  }
  for (const auto& cat : j.value("categories", json::array())) {
    raw.categories.push_back({cat.at("id").get<int>(), cat.at("name").get<std::string>()});
  }
  for (const auto& an : j.value("annotations", json::array())) {
    const auto& bb = an.at("bbox");
    double x = bb.at(0).get<double>(), y = bb.at(1).get<double>();
    double w = bb.at(2).get<double>(), h = bb.at(3).get<double>();
    raw.annotations.push_back({an.at("id").get<int>(), an.at("image_id").get<int>(),
                               an.at("category_id").get<int>(), Box{x, y, x + w, y + h}});
  }

  DatasetIndex out;
  validate_index(raw, clip_boxes, out);
  return out;
}

void save_coco_json(const DatasetIndex& index, const std::string& path) {
  json images = json::array();
  for (const ImageRecord& im : index.images)
    images.push_back({{"id", im.id},
                      {"file_name", im.file_name},
                      {"width", im.width},
                      {"height", im.height}});
  json annotations = json::array();
  for (const Annotation& a : index.annotations)
    annotations.push_back({{"id", a.id},
                           {"image_id", a.image_id},
                           {"category_id", a.category_id},
                           {"bbox", {a.box.x1, a.box.y1, a.box.width(), a.box.height()}},
                           {"area", a.box.area()},
                           {"iscrowd", 0}});
  json categories = json::array();
  for (const Category& c : index.categories)
    categories.push_back({{"id", c.id}, {"name", c.name}});

  json root = {{"images", images}, {"annotations", annotations}, {"categories", categories}};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot write " + path);
  os << root.dump();
}

Tensor load_image_chw(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("dataset: cannot read image " + path);
  Tensor t({3, img.rows, img.cols});
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) {
      cv::Vec3b bgr = img.at<cv::Vec3b>(y, x);
      // BGR -> RGB, [0, 1]
      t[(0 * img.rows + y) * img.cols + x] = bgr[2] / 255.0f;
      t[(1 * img.rows + y) * img.cols + x] = bgr[1] / 255.0f;
      t[(2 * img.rows + y) * img.cols + x] = bgr[0] / 255.0f;
    }
  return t;
}

}  // namespace picodet
