// Copyright 2026 The viewmatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "viewmatch/diffcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace viewmatch::diffcore {

namespace {

constexpr char kMagic[4] = {'V', 'M', 'C', 'K'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void uint(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const std::string& s) { out_ += s; }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v), 4); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kCheckpointVersion);
  w.uint(0, 3);
  w.uint(ckpt.step, 8);
  w.uint(ckpt.config_json.size(), 4);
  w.bytes(ckpt.config_json);
  w.uint(ckpt.params.size(), 4);
  for (const auto& [name, t] : ckpt.params) {
    if (name.size() > 0xffff) throw CheckpointError("parameter name too long: " + name);
    w.uint(name.size(), 2);
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.uint(static_cast<std::uint64_t>(d), 8);
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.uint(1);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  r.uint(3);
  Checkpoint ckpt;
  ckpt.step = r.uint(8);
  ckpt.config_json = r.bytes(r.uint(4));
  const auto count = r.uint(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.uint(2));
    const auto rank = r.uint(1);
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::int64_t>(r.uint(8)));
    std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = r.f32();
    ckpt.params.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace viewmatch::diffcore
