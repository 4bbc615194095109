#include "rgbdprior/io.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rgbdprior {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

// --- SHA-256 -----------------------------------------------------------------

namespace {

constexpr uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline uint32_t rotr(uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

void sha256_block(uint32_t h[8], const uint8_t* p) {
  uint32_t w[64];
  for (int i = 0; i < 16; ++i)
    w[i] = (uint32_t(p[4 * i]) << 24) | (uint32_t(p[4 * i + 1]) << 16) |
           (uint32_t(p[4 * i + 2]) << 8) | uint32_t(p[4 * i + 3]);
  for (int i = 16; i < 64; ++i) {
    const uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
    const uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
    w[i] = w[i - 16] + s0 + w[i - 7] + s1;
  }
  uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
  uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
  for (int i = 0; i < 64; ++i) {
    const uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
    const uint32_t ch = (e & f) ^ (~e & g);
    const uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
    const uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
    const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
    const uint32_t t2 = s0 + maj;
    hh = g; g = f; f = e; e = d + t1;
    d = c; c = b; b = a; a = t1 + t2;
  }
  h[0] += a; h[1] += b; h[2] += c; h[3] += d;
  h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                   0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  const uint64_t bit_len = uint64_t(bytes.size()) * 8;
  const uint8_t* data = reinterpret_cast<const uint8_t*>(bytes.data());
  size_t n = bytes.size();
  while (n >= 64) {
    sha256_block(h, data);
    data += 64;
    n -= 64;
  }
  uint8_t tail[128] = {0};
  std::memcpy(tail, data, n);
  tail[n] = 0x80;
  const size_t tail_len = (n + 9 <= 64) ? 64 : 128;
  for (int i = 0; i < 8; ++i)
    tail[tail_len - 1 - i] = uint8_t(bit_len >> (8 * i));
  sha256_block(h, tail);
  if (tail_len == 128) sha256_block(h, tail + 64);

  static const char* hex = "0123456789abcdef";
  std::string out(64, '0');
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      out[8 * i + j] = hex[(h[i] >> (28 - 4 * j)) & 0xf];
  return out;
}

// --- PNG ---------------------------------------------------------------------

void write_png(const std::string& path, const Tensor3f& image) {
  check(image.c == 1 || image.c == 3, "write_png: expected 1 or 3 channels");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = png_uint_32(image.w);
  png.height = png_uint_32(image.h);
  png.format = image.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

  std::vector<uint8_t> buf(size_t(image.w) * image.h * image.c);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      for (int ci = 0; ci < image.c; ++ci) {
        const float v = std::clamp(image.at(ci, y, x), 0.0f, 1.0f);
        buf[(size_t(y) * image.w + x) * image.c + ci] =
            uint8_t(std::lround(v * 255.0f));
      }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("png write failed: " + path + ": " + png.message);
}

void write_png_gray16(const std::string& path, const Eigen::ArrayXXf& map) {
  check(map.size() > 0, "write_png_gray16: empty map");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = png_uint_32(map.cols());
  png.height = png_uint_32(map.rows());
  png.format = PNG_FORMAT_LINEAR_Y;

  std::vector<uint16_t> buf(size_t(map.size()));
  for (Eigen::Index y = 0; y < map.rows(); ++y)
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const float v = std::clamp(map(y, x), 0.0f, 1.0f);
      buf[size_t(y) * size_t(map.cols()) + size_t(x)] =
          uint16_t(std::lround(v * 65535.0f));
    }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("png write failed: " + path + ": " + png.message);
}

Tensor3f read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw std::runtime_error("png open failed: " + path + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr))
    throw std::runtime_error("png read failed: " + path + ": " + png.message);

  Tensor3f out(3, int(png.height), int(png.width));
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ci = 0; ci < 3; ++ci)
        out.at(ci, y, x) =
            float(buf[(size_t(y) * out.w + x) * 3 + ci]) / 255.0f;
  return out;
}

// --- float map ---------------------------------------------------------------

static constexpr char kFloatMapMagic[8] = {'R', 'G', 'B', 'D',
                                           'M', 'A', 'P', '1'};

void write_float_map(const std::string& path, const Eigen::ArrayXXf& map) {
  std::string bytes(sizeof(kFloatMapMagic) + 8 + sizeof(float) * map.size(), '\0');
  char* p = bytes.data();
  std::memcpy(p, kFloatMapMagic, 8); p += 8;
  const uint32_t h = uint32_t(map.rows()), w = uint32_t(map.cols());
  std::memcpy(p, &h, 4); p += 4;
  std::memcpy(p, &w, 4); p += 4;
  // Row-major scanlines.
  for (Eigen::Index y = 0; y < map.rows(); ++y) {
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const float v = map(y, x);
      std::memcpy(p, &v, 4); p += 4;
    }
  }
  write_file(path, bytes);
}

Eigen::ArrayXXf read_float_map(const std::string& path) {
  const std::string bytes = read_file(path);
  check(bytes.size() >= 16 && std::memcmp(bytes.data(), kFloatMapMagic, 8) == 0,
        "bad float map header: " + path);
  uint32_t h = 0, w = 0;
  std::memcpy(&h, bytes.data() + 8, 4);
  std::memcpy(&w, bytes.data() + 12, 4);
  check(bytes.size() == 16 + size_t(4) * h * w, "truncated float map: " + path);
  Eigen::ArrayXXf map(h, w);
  const char* p = bytes.data() + 16;
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x) {
      float v;
      std::memcpy(&v, p, 4); p += 4;
      map(y, x) = v;
    }
  return map;
}

// --- checkpoint archive ------------------------------------------------------

namespace {

constexpr char kPakMagic[8] = {'R', 'G', 'B', 'D', 'P', 'A', 'K', '1'};

template <typename T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    throw std::runtime_error("truncated checkpoint archive");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string take_str(const std::string& in, size_t& pos, size_t n) {
  if (pos + n > in.size()) throw std::runtime_error("truncated checkpoint archive");
  std::string s = in.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kPakMagic, 8);
  put<uint32_t>(out, uint32_t(ckpt.tag.size()));
  out += ckpt.tag;
  const std::string meta = ckpt.meta.dump();
  put<uint64_t>(out, meta.size());
  out += meta;
  put<uint32_t>(out, uint32_t(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    int64_t n = 1;
    for (int64_t d : t.shape) n *= d;
    check(n == t.data.size(), "tensor shape/data mismatch: " + name);
    put<uint32_t>(out, uint32_t(name.size()));
    out += name;
    put<uint8_t>(out, 0);  // f32
    put<uint8_t>(out, uint8_t(t.shape.size()));
    for (int64_t d : t.shape) put<uint64_t>(out, uint64_t(d));
    out.append(reinterpret_cast<const char*>(t.data.data()),
               sizeof(float) * size_t(t.data.size()));
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string in = read_file(path);
  size_t pos = 0;
  if (in.size() < 8 || std::memcmp(in.data(), kPakMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint archive: " + path);
  pos = 8;
  Checkpoint ckpt;
  ckpt.tag = take_str(in, pos, take<uint32_t>(in, pos));
  const std::string meta = take_str(in, pos, take<uint64_t>(in, pos));
  ckpt.meta = nlohmann::json::parse(meta);
  const uint32_t count = take<uint32_t>(in, pos);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = take_str(in, pos, take<uint32_t>(in, pos));
    const uint8_t dtype = take<uint8_t>(in, pos);
    if (dtype != 0) throw std::runtime_error("unsupported tensor dtype in " + path);
    const int ndim = take<uint8_t>(in, pos);
    NamedTensor t;
    int64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      t.shape.push_back(int64_t(take<uint64_t>(in, pos)));
      n *= t.shape.back();
    }
    t.data.resize(n);
    const std::string payload = take_str(in, pos, sizeof(float) * size_t(n));
    std::memcpy(t.data.data(), payload.data(), payload.size());
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

}  // namespace rgbdprior
