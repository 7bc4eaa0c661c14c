#include "dyn/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace dyn {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint32_t get_u32_be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32_be(out, uint32_t(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = uint32_t(crc32(0, out.data() + start, uInt(out.size() - start)));
  put_u32_be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void png_write(const std::filesystem::path& path, const ImageU8& img) {
  require_data(img.ch == 1 || img.ch == 3, "png_write: ch must be 1 or 3");
  require_data(img.px.size() == size_t(img.w) * size_t(img.h) * size_t(img.ch),
               "png_write: pixel buffer size mismatch");

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, uint32_t(img.w));
  put_u32_be(ihdr, uint32_t(img.h));
  ihdr.push_back(8);                           // bit depth
  ihdr.push_back(img.ch == 1 ? 0 : 2);         // color type
  ihdr.push_back(0);                           // compression
  ihdr.push_back(0);                           // filter method
  ihdr.push_back(0);                           // no interlace

  size_t stride = size_t(img.w) * size_t(img.ch);
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * size_t(img.h));
  for (int y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter type none
    raw.insert(raw.end(), img.px.begin() + std::ptrdiff_t(y * long(stride)),
               img.px.begin() + std::ptrdiff_t((y + 1) * long(stride)));
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  int rc = compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6);
  require_data(rc == Z_OK, "png_write: deflate failed");
  comp.resize(comp_len);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  require_data(f.good(), "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  require_data(f.good(), "write failed: " + path.string());
}

ImageU8 png_read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require_data(f.good(), "cannot open: " + path.string());
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  require_data(raw.size() > 8 && std::memcmp(raw.data(), sig, 8) == 0,
               "not a png: " + path.string());

  ImageU8 img;
  std::vector<uint8_t> idat;
  size_t off = 8;
  int bit_depth = 0, color_type = 0;
  while (off + 8 <= raw.size()) {
    uint32_t len = get_u32_be(raw.data() + off);
    require_data(off + 12 + len <= raw.size(), "truncated png chunk");
    const char* type = reinterpret_cast<const char*>(raw.data() + off + 4);
    const uint8_t* data = raw.data() + off + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      img.w = int(get_u32_be(data));
      img.h = int(get_u32_be(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      require_data(bit_depth == 8 && (color_type == 0 || color_type == 2),
                   "unsupported png format (need 8-bit gray or rgb)");
      require_data(data[12] == 0, "interlaced png unsupported");
      img.ch = color_type == 0 ? 1 : 3;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    off += 12 + len;
  }
  require_data(img.w > 0 && img.h > 0, "png missing IHDR");

  size_t stride = size_t(img.w) * size_t(img.ch);
  std::vector<uint8_t> lines((stride + 1) * size_t(img.h));
  uLongf dest_len = uLongf(lines.size());
  int rc = uncompress(lines.data(), &dest_len, idat.data(), uLong(idat.size()));
  require_data(rc == Z_OK && dest_len == lines.size(), "png inflate failed");

  img.px.resize(stride * size_t(img.h));
  int bpp = img.ch;
  for (int y = 0; y < img.h; ++y) {
    const uint8_t* src = lines.data() + size_t(y) * (stride + 1);
    uint8_t filter = src[0];
    uint8_t* dst = img.px.data() + size_t(y) * stride;
    const uint8_t* prev = y > 0 ? img.px.data() + size_t(y - 1) * stride : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= size_t(bpp) ? dst[x - size_t(bpp)] : 0;
      int b = prev ? prev[x] : 0;
      int c = (prev && x >= size_t(bpp)) ? prev[x - size_t(bpp)] : 0;
      int v = src[1 + x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw DataError("unknown png filter");
      }
      dst[x] = uint8_t(v & 0xff);
    }
  }
  return img;
}

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out;
  out.w = img.w;
  out.h = img.h;
  out.ch = img.ch;
  out.px.resize(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) {
    float v = img.px[i];
    v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    out.px[i] = uint8_t(std::lround(v * 255.f));
  }
  return out;
}

ImageF to_f32(const ImageU8& img) {
  ImageF out;
  out.w = img.w;
  out.h = img.h;
  out.ch = img.ch;
  out.px.resize(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) out.px[i] = float(img.px[i]) / 255.f;
  return out;
}

ImageU8 signed_to_u8(const ImageF& img) {
  ImageF shifted = img;
  for (float& v : shifted.px) v = 0.5f * (v + 1.f);
  return to_u8(shifted);
}

}  // namespace dyn
