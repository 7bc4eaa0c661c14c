#pragma once

#include <array>
#include <limits>
#include <span>
#include <vector>

#include "dyn/geometry.hpp"
#include "dyn/uvbake.hpp"

namespace dyn::render {

// Weak-perspective camera: pixel = (s*X + cx, s*Y + cy), depth key = Z.
struct Camera {
  double cx = 0, cy = 0;
  double s = 1;  // pixels per meter, > 0
  int w = 0, h = 0;

  void validate() const {
    require(s > 0, "camera scale must be > 0");
    require(w >= 8 && h >= 8, "camera image size must be >= 8");
  }
};

inline Vec2d project(const Camera& cam, const Vec3d& p) {
  return {cam.s * p.x + cam.cx, cam.s * p.y + cam.cy};
}

// One drawable mesh; uv/labels/attributes optional. Chunks made of closed
// outward-wound shells may set `closed`: their back faces can never be the
// nearest fragment, so the rasterizer skips them.
struct RasterChunk {
  const std::vector<Vec3d>* positions = nullptr;
  const std::vector<std::array<int, 3>>* faces = nullptr;
  const std::vector<std::array<Vec2d, 3>>* uv_corners = nullptr;
  const std::vector<int>* part_labels = nullptr;  // per face
  const std::vector<double>* vertex_attrs = nullptr;  // m x attr_channels
  int attr_channels = 0;
  bool closed = false;
};

struct RenderedFrame {
  int w = 0, h = 0;
  std::vector<uint8_t> mask;    // w*h
  std::vector<double> depth;    // +inf on background
  std::vector<int32_t> part;    // 0 on background
  std::vector<double> uvmap;    // w*h*2
  std::vector<int32_t> tri;     // winning global triangle index, -1 background
  int attr_channels = 0;
  std::vector<double> attrs;    // w*h*attr_channels
  bool empty_projection = false;

  size_t pixel(int x, int y) const { return size_t(y) * size_t(w) + size_t(x); }
};

RenderedFrame rasterize(std::span<const RasterChunk> chunks, const Camera& cam);

// Convenience: body-only IUV render.
RenderedFrame rasterize_body(const geom::CanonicalBody& body, const std::vector<Vec3d>& positions,
                             const Camera& cam,
                             const std::vector<double>* vertex_attrs = nullptr,
                             int attr_channels = 0);

// Feature transport: per masked pixel, sample the UV grid at the pixel's IUV
// coordinate; zero off mask. More than 1% sample misses on the mask is a
// data-quality error.
struct TransportStats {
  int masked_pixels = 0;
  int misses = 0;
};

template <class S>
std::vector<S> transport(const uv::UvGridT<S>& descriptor, const RenderedFrame& frame,
                         TransportStats* stats = nullptr) {
  std::vector<S> out(size_t(frame.w) * size_t(frame.h) * size_t(descriptor.channels), S(0));
  int masked = 0, misses = 0;
  for (int y = 0; y < frame.h; ++y) {
    for (int x = 0; x < frame.w; ++x) {
      size_t pi = frame.pixel(x, y);
      if (!frame.mask[pi]) continue;
      ++masked;
      Vec2<S> uvc{S(frame.uvmap[2 * pi]), S(frame.uvmap[2 * pi + 1])};
      auto res = uv::sample(descriptor, uvc);
      if (res.miss) {
        ++misses;
        continue;
      }
      S* dst = out.data() + pi * size_t(descriptor.channels);
      for (int c = 0; c < descriptor.channels; ++c) dst[c] = res.value[size_t(c)];
    }
  }
  if (stats) {
    stats->masked_pixels = masked;
    stats->misses = misses;
  }
  if (masked > 0 && misses * 100 > masked)
    throw DataError("transport: " + std::to_string(misses) + "/" + std::to_string(masked) +
                    " masked pixels missed the descriptor grid");
  return out;
}

// Sparse bilinear gather table for differentiable transport.
struct GatherTable {
  int grid_w = 0, grid_h = 0, out_pixels = 0;
  struct Entry {
    int32_t texel[4] = {-1, -1, -1, -1};
    float weight[4] = {0, 0, 0, 0};
  };
  std::vector<Entry> entries;  // one per output pixel
};

GatherTable build_gather_table(const RenderedFrame& frame, const std::vector<uint8_t>& occupancy,
                               int grid_w, int grid_h);

// Lambertian relighting of predicted appearance with predicted normals.
std::vector<double> relight(const std::vector<double>& appearance,
                            const std::vector<double>& normals,
                            const std::vector<uint8_t>& mask, int w, int h, Vec3d light_dir,
                            double ambient, bool* warned_non_unit = nullptr);

}  // namespace dyn::render
