// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/renderview/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>

#include "viewmatch/common/parallel.hpp"
#include "viewmatch/common/rng.hpp"

namespace viewmatch::renderview {

using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DatasetError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (std::size_t k = 0; k < bytes.size(); ++k) bytes[k] = to_byte(img.pixels[k]);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < img.height; ++i) {
    png_write_row(png, bytes.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(img.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DatasetError("cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("libpng initialisation failed");
  }
  Image img;
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("PNG decoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    // External renders may be RGB; convert with Rec. 601 weights.
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  img = Image(h, w, 0.0f);
  row.resize(png_get_rowbytes(png, info));
  for (int i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (int j = 0; j < w; ++j) img.at(i, j) = static_cast<float>(row[static_cast<std::size_t>(j)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_raw(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
  for (float v : img.pixels) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    out.write(b, 4);
  }
  if (!out) throw DatasetError("write failed: " + path.string());
}

Image read_raw(const std::filesystem::path& path, int height, int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  Image img(height, width, 0.0f);
  for (auto& v : img.pixels) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DatasetError("raw image truncated: " + path.string());
    v = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DatasetError("raw image has trailing bytes: " + path.string());
  return img;
}

Image DatasetManifest::load_image(const ViewRecord& r) const {
  Image img = r.raw_path.empty() ? read_png(root / r.path)
                                 : read_raw(root / r.raw_path, r.intrinsics.height, r.intrinsics.width);
  if (img.height != r.intrinsics.height || img.width != r.intrinsics.width) {
    throw DatasetError("image size of " + r.path + " disagrees with its manifest record");
  }
  return img;
}

std::vector<std::vector<std::size_t>> DatasetManifest::by_object() const {
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < records.size(); ++k) {
    auto [it, inserted] = slot.emplace(records[k].object_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(k);
  }
  return groups;
}

CameraPose sample_pose(SamplerKind kind, std::uint64_t seed, double radius, double elevation_deg) {
  return kind == SamplerKind::Sphere ? sample_pose_sphere(seed, radius)
                                     : sample_pose_ring(seed, radius, elevation_deg);
}

std::uint64_t view_seed(std::uint64_t dataset_seed, std::uint64_t object_seed, int view_index) {
  return derive_seed(dataset_seed, {object_seed, static_cast<std::uint64_t>(view_index)});
}

DatasetManifest write_dataset(const shapegen::Catalog& catalog, const DatasetOptions& opt,
                              const std::filesystem::path& out_dir) {
  if (catalog.objects.empty()) throw DatasetError("catalog is empty");
  if (opt.views_per_object < 1) throw DatasetError("views_per_object must be positive");
  opt.intrinsics.validate();
  std::filesystem::create_directories(out_dir / "images");

  DatasetManifest m;
  m.root = out_dir;
  m.sampler = to_string(opt.sampler);
  m.radius = opt.radius;
  m.seed = opt.seed;
  const auto nv = static_cast<std::size_t>(opt.views_per_object);
  m.records.resize(catalog.objects.size() * nv);

  parallel_for(catalog.objects.size(), opt.workers, [&](std::size_t o) {
    const auto& e = catalog.objects[o];
    const MeshAccel accel(catalog.mesh_for(e));
    for (std::size_t v = 0; v < nv; ++v) {
      ViewRecord r;
      r.object_id = e.object_id;
      r.family = e.family;
      r.split = e.split;
      r.view_index = static_cast<int>(v);
      r.pose = sample_pose(opt.sampler, view_seed(opt.seed, e.seed, r.view_index), opt.radius, opt.elevation_deg);
      r.intrinsics = opt.intrinsics;
      const Image img = render_accel(accel, r.pose, r.intrinsics, opt.shading, 1);
      const std::string stem = "images/" + e.object_id + "_v" + std::to_string(v);
      r.path = stem + ".png";
      write_png(out_dir / r.path, img);
      if (opt.write_raw) {
        r.raw_path = stem + ".f32";
        write_raw(out_dir / r.raw_path, img);
      }
      m.records[o * nv + v] = std::move(r);
    }
  });
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

json to_json(const DatasetManifest& m) {
  json recs = json::array();
  for (const auto& r : m.records) {
    json j{{"object_id", r.object_id},
           {"family", r.family},
           {"split", shapegen::to_string(r.split)},
           {"view_index", r.view_index},
           {"pose", r.pose.row_major()},
           {"fov", r.intrinsics.fov_deg},
           {"width", r.intrinsics.width},
           {"height", r.intrinsics.height},
           {"path", r.path}};
    if (!r.raw_path.empty()) j["raw_path"] = r.raw_path;
    recs.push_back(std::move(j));
  }
  return json{{"sampler", m.sampler}, {"radius", m.radius}, {"seed", m.seed}, {"records", recs}};
}

DatasetManifest manifest_from_json(const json& j, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  const json* recs = &j;
  if (j.is_object()) {
    m.sampler = j.value("sampler", std::string("external"));
    m.radius = j.value("radius", 2.0);
    m.seed = j.value("seed", std::uint64_t{0});
    recs = &j.at("records");
  }
  for (const auto& rj : *recs) {
    ViewRecord r;
    r.object_id = rj.at("object_id").get<std::string>();
    r.family = rj.value("family", 0);
    r.split = shapegen::split_from_string(rj.value("split", std::string("train")));
    r.view_index = rj.at("view_index").get<int>();
    const auto pose = rj.at("pose").get<std::vector<double>>();
    if (pose.size() != 16) throw DatasetError("pose of " + r.object_id + " must have 16 values");
    std::array<double, 16> a{};
    std::copy(pose.begin(), pose.end(), a.begin());
    r.pose = CameraPose::from_row_major(a);
    if (!r.pose.valid()) throw DatasetError("pose of " + r.object_id + " view " + std::to_string(r.view_index) + " is not rigid");
    r.intrinsics = {rj.at("width").get<int>(), rj.at("height").get<int>(), rj.at("fov").get<double>()};
    r.intrinsics.validate();
    r.path = rj.at("path").get<std::string>();
    r.raw_path = rj.value("raw_path", std::string());
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DatasetError("cannot read manifest " + manifest_path.string());
  return manifest_from_json(json::parse(in), manifest_path.parent_path());
}

void write_manifest(const std::filesystem::path& manifest_path, const DatasetManifest& m) {
  std::ofstream out(manifest_path);
  if (!out) throw DatasetError("cannot write manifest " + manifest_path.string());
  out << to_json(m).dump(1) << '\n';
}

}  // namespace viewmatch::renderview
