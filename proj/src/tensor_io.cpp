#include "dyn/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace dyn {

namespace {

constexpr uint16_t kVersion = 1;
constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v & 0xff));
  out.push_back(uint8_t(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0] | (uint16_t(p[1]) << 8)); }

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

}  // namespace

TensorBlob TensorBlob::from_f32(std::vector<uint32_t> dims, const std::vector<float>& v) {
  TensorBlob b;
  b.dtype = Dtype::f32;
  b.dims = std::move(dims);
  require_data(b.element_count() == v.size(), "tensor payload size mismatch");
  b.bytes.resize(v.size() * 4);
  std::memcpy(b.bytes.data(), v.data(), b.bytes.size());
  return b;
}

TensorBlob TensorBlob::from_f64(std::vector<uint32_t> dims, const std::vector<double>& v) {
  TensorBlob b;
  b.dtype = Dtype::f64;
  b.dims = std::move(dims);
  require_data(b.element_count() == v.size(), "tensor payload size mismatch");
  b.bytes.resize(v.size() * 8);
  std::memcpy(b.bytes.data(), v.data(), b.bytes.size());
  return b;
}

TensorBlob TensorBlob::from_u8(std::vector<uint32_t> dims, const std::vector<uint8_t>& v) {
  TensorBlob b;
  b.dtype = Dtype::u8;
  b.dims = std::move(dims);
  require_data(b.element_count() == v.size(), "tensor payload size mismatch");
  b.bytes = v;
  return b;
}

std::vector<float> TensorBlob::to_f32_vector() const {
  std::vector<float> v(element_count());
  if (dtype == Dtype::f32) {
    std::memcpy(v.data(), bytes.data(), bytes.size());
  } else if (dtype == Dtype::f64) {
    const double* p = as_f64();
    for (size_t i = 0; i < v.size(); ++i) v[i] = float(p[i]);
  } else {
    for (size_t i = 0; i < v.size(); ++i) v[i] = float(bytes[i]);
  }
  return v;
}

std::vector<double> TensorBlob::to_f64_vector() const {
  std::vector<double> v(element_count());
  if (dtype == Dtype::f64) {
    std::memcpy(v.data(), bytes.data(), bytes.size());
  } else if (dtype == Dtype::f32) {
    const float* p = as_f32();
    for (size_t i = 0; i < v.size(); ++i) v[i] = double(p[i]);
  } else {
    for (size_t i = 0; i < v.size(); ++i) v[i] = double(bytes[i]);
  }
  return v;
}

void write_tnsr(const std::filesystem::path& path, const TensorBlob& blob) {
  require_data(blob.bytes.size() == blob.element_count() * blob.element_size(),
               "tensor payload size mismatch");
  require_data(blob.dims.size() <= 255, "tensor rank > 255");
  std::vector<uint8_t> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  put_u16(header, kVersion);
  header.push_back(uint8_t(blob.dtype));
  header.push_back(uint8_t(blob.dims.size()));
  for (uint32_t d : blob.dims) put_u32(header, d);

  std::ofstream f(path, std::ios::binary);
  require_data(f.good(), "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(header.data()), std::streamsize(header.size()));
  f.write(reinterpret_cast<const char*>(blob.bytes.data()), std::streamsize(blob.bytes.size()));
  require_data(f.good(), "write failed: " + path.string());
}

TensorBlob read_tnsr(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require_data(f.good(), "cannot open: " + path.string());
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require_data(raw.size() >= 8, "truncated tensor file: " + path.string());
  require_data(std::memcmp(raw.data(), kMagic, 4) == 0, "bad magic: " + path.string());
  uint16_t version = get_u16(raw.data() + 4);
  require_data(version == kVersion, "unknown tensor version: " + std::to_string(version));
  uint8_t dtype = raw[6];
  require_data(dtype >= 1 && dtype <= 3, "unknown dtype code: " + std::to_string(dtype));
  uint8_t rank = raw[7];
  size_t off = 8;
  require_data(raw.size() >= off + 4u * rank, "truncated tensor header: " + path.string());

  TensorBlob b;
  b.dtype = TensorBlob::Dtype(dtype);
  b.dims.resize(rank);
  for (int i = 0; i < rank; ++i) {
    b.dims[size_t(i)] = get_u32(raw.data() + off);
    off += 4;
  }
  size_t payload = b.element_count() * b.element_size();
  require_data(raw.size() == off + payload, "tensor payload length mismatch: " + path.string());
  b.bytes.assign(raw.begin() + std::ptrdiff_t(off), raw.end());
  return b;
}

}  // namespace dyn
