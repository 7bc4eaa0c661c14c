#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dyn/error.hpp"

namespace dyn {

// Raw tensor container: magic "TNSR", version u16, dtype u8 (f32=1, f64=2,
// u8=3), rank u8, dims u32 each, little-endian payload.
struct TensorBlob {
  enum class Dtype : uint8_t { f32 = 1, f64 = 2, u8 = 3 };

  Dtype dtype = Dtype::f32;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> bytes;

  size_t element_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
  size_t element_size() const {
    switch (dtype) {
      case Dtype::f32: return 4;
      case Dtype::f64: return 8;
      case Dtype::u8: return 1;
    }
    return 0;
  }

  const float* as_f32() const {
    require_data(dtype == Dtype::f32, "tensor is not f32");
    return reinterpret_cast<const float*>(bytes.data());
  }
  const double* as_f64() const {
    require_data(dtype == Dtype::f64, "tensor is not f64");
    return reinterpret_cast<const double*>(bytes.data());
  }
  const uint8_t* as_u8() const {
    require_data(dtype == Dtype::u8, "tensor is not u8");
    return bytes.data();
  }

  static TensorBlob from_f32(std::vector<uint32_t> dims, const std::vector<float>& v);
  static TensorBlob from_f64(std::vector<uint32_t> dims, const std::vector<double>& v);
  static TensorBlob from_u8(std::vector<uint32_t> dims, const std::vector<uint8_t>& v);
  std::vector<float> to_f32_vector() const;
  std::vector<double> to_f64_vector() const;
};

void write_tnsr(const std::filesystem::path& path, const TensorBlob& blob);
TensorBlob read_tnsr(const std::filesystem::path& path);

}  // namespace dyn
