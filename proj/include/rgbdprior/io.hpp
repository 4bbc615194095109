#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgbdprior/common.hpp"
#include "rgbdprior/tensor.hpp"

namespace rgbdprior {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const std::string& bytes);

// 8-bit PNG round trip; tensors are C x H x W with values in [0,1]
// (clamped on write). Write accepts 1 or 3 channels; read always yields 3.
void write_png(const std::string& path, const Tensor3f& image);
Tensor3f read_png(const std::string& path);

// 16-bit grayscale PNG from values in [0,1] (clamped).
void write_png_gray16(const std::string& path, const Eigen::ArrayXXf& map);

// Raw float32 grid with a small header; used for ground-truth depth maps.
void write_float_map(const std::string& path, const Eigen::ArrayXXf& map);
Eigen::ArrayXXf read_float_map(const std::string& path);

// --- checkpoint archive ------------------------------------------------------
//
// Single-file container for named float32 tensors plus a JSON metadata blob
// and a version tag. Layout (all integers little-endian):
//   magic "RGBDPAK1"
//   u32 tag_len, tag bytes
//   u64 meta_len, meta JSON bytes
//   u32 tensor_count
//   per tensor: u32 name_len, name, u8 dtype (0 = f32), u8 ndim,
//               u64 dims[ndim], payload f32[Π dims]

struct NamedTensor {
  std::vector<int64_t> shape;
  ArrX<float> data;
};

struct Checkpoint {
  std::string tag;
  nlohmann::json meta;
  std::map<std::string, NamedTensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rgbdprior
