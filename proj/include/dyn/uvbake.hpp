#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dyn/geometry.hpp"
#include "dyn/motionfield.hpp"

namespace dyn::uv {

// UV-space scalar grid. Unoccupied texels hold zeros. Seam dilation marks the
// filled border texels occupied so that bilinear lookups near chart edges do
// not bleed zeros.
template <class S>
struct UvGridT {
  int width = 0, height = 0, channels = 0;
  std::vector<S> data;            // height x width x channels
  std::vector<uint8_t> occupancy; // height x width

  S* texel(int x, int y) { return data.data() + (size_t(y) * size_t(width) + size_t(x)) * size_t(channels); }
  const S* texel(int x, int y) const {
    return data.data() + (size_t(y) * size_t(width) + size_t(x)) * size_t(channels);
  }
  bool occupied(int x, int y) const { return occupancy[size_t(y) * size_t(width) + size_t(x)] != 0; }
};

using UvGrid = UvGridT<double>;

namespace detail {

// Shared edge function: exact IEEE expression used by both the baker and its
// test oracle.
template <class S>
S edge_fn(const Vec2<S>& a, const Vec2<S>& b, const Vec2<S>& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

// Top-left fill rule on an edge of a counter-clockwise triangle.
template <class S>
bool edge_accepts(S value, const Vec2<S>& a, const Vec2<S>& b) {
  if (value > S(0)) return true;
  if (value < S(0)) return false;
  S dy = b.y - a.y;
  S dx = b.x - a.x;
  return dy < S(0) || (dy == S(0) && dx > S(0));  // left edge, or top edge
}

}  // namespace detail

// Rasterizes per-vertex values into the UV atlas with barycentric
// interpolation, texel-center coverage and k-pass seam dilation. Charts must
// be disjoint; a texel claimed twice is an atlas error.
template <class S>
UvGridT<S> bake(const geom::CanonicalBodyT<S>& body, const std::vector<S>& per_vertex,
                int channels, int resolution, int dilate = 2) {
  require(resolution >= 8, "bake: resolution must be >= 8");
  require(channels >= 1 && per_vertex.size() == size_t(body.vertex_count()) * size_t(channels),
          "bake: per-vertex buffer size mismatch");

  UvGridT<S> grid;
  grid.width = grid.height = resolution;
  grid.channels = channels;
  grid.data.assign(size_t(resolution) * size_t(resolution) * size_t(channels), S(0));
  grid.occupancy.assign(size_t(resolution) * size_t(resolution), 0);
  std::vector<int32_t> owner_chart(size_t(resolution) * size_t(resolution), -1);

  const S res = S(resolution);
  for (size_t f = 0; f < body.faces.size(); ++f) {
    Vec2<S> t0 = body.uv_corners[f][0];
    Vec2<S> t1 = body.uv_corners[f][1];
    Vec2<S> t2 = body.uv_corners[f][2];
    S area = detail::edge_fn(t0, t1, t2);
    if (area == S(0)) continue;
    bool flipped = area < S(0);
    if (flipped) {  // normalize orientation so the fill rule is consistent
      std::swap(t1, t2);
      area = -area;
    }
    S min_x = std::min({t0.x, t1.x, t2.x}) * res;
    S max_x = std::max({t0.x, t1.x, t2.x}) * res;
    S min_y = std::min({t0.y, t1.y, t2.y}) * res;
    S max_y = std::max({t0.y, t1.y, t2.y}) * res;
    int x0 = std::max(0, int(std::floor(double(min_x) - 0.5)));
    int x1 = std::min(resolution - 1, int(std::ceil(double(max_x))));
    int y0 = std::max(0, int(std::floor(double(min_y) - 0.5)));
    int y1 = std::min(resolution - 1, int(std::ceil(double(max_y))));

    const auto& face = body.faces[f];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        Vec2<S> p{(S(x) + S(0.5)) / res, (S(y) + S(0.5)) / res};
        S e0 = detail::edge_fn(t1, t2, p);
        S e1 = detail::edge_fn(t2, t0, p);
        S e2 = detail::edge_fn(t0, t1, p);
        if (!detail::edge_accepts(e0, t1, t2) || !detail::edge_accepts(e1, t2, t0) ||
            !detail::edge_accepts(e2, t0, t1))
          continue;
        size_t ti = size_t(y) * size_t(resolution) + size_t(x);
        int chart = body.face_chart.empty() ? 0 : body.face_chart[f];
        if (grid.occupancy[ti]) {
          if (owner_chart[ti] != chart)
            throw DataError("bake: overlapping UV charts at texel (" + std::to_string(x) + "," +
                            std::to_string(y) + ")");
          continue;  // shared edge tie inside one chart; first writer wins
        }
        S c0 = e0 / area, c1 = e1 / area, c2 = e2 / area;
        if (flipped) std::swap(c1, c2);  // map weights back to the original corners
        S* out = grid.texel(x, y);
        const S* a0 = per_vertex.data() + size_t(face[0]) * size_t(channels);
        const S* a1 = per_vertex.data() + size_t(face[1]) * size_t(channels);
        const S* a2 = per_vertex.data() + size_t(face[2]) * size_t(channels);
        for (int c = 0; c < channels; ++c) out[c] = c0 * a0[c] + c1 * a1[c] + c2 * a2[c];
        grid.occupancy[ti] = 1;
        owner_chart[ti] = chart;
      }
    }
  }

  // Seam dilation: average occupied 8-neighbours into adjacent empty texels.
  for (int pass = 0; pass < dilate; ++pass) {
    std::vector<uint8_t> prev_occ = grid.occupancy;
    std::vector<S> prev_data = grid.data;
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        size_t ti = size_t(y) * size_t(resolution) + size_t(x);
        if (prev_occ[ti]) continue;
        int found = 0;
        std::vector<S> acc(size_t(channels), S(0));
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= resolution || ny >= resolution) continue;
            size_t ni = size_t(ny) * size_t(resolution) + size_t(nx);
            if (!prev_occ[ni]) continue;
            const S* src = prev_data.data() + ni * size_t(channels);
            for (int c = 0; c < channels; ++c) acc[size_t(c)] += src[c];
            ++found;
          }
        }
        if (!found) continue;
        S* out = grid.texel(x, y);
        for (int c = 0; c < channels; ++c) out[c] = acc[size_t(c)] / S(found);
        grid.occupancy[ti] = 2;  // dilated
      }
    }
  }
  return grid;
}

template <class S>
struct SampleResult {
  std::vector<S> value;
  bool miss = false;
};

// Occupancy-weighted bilinear lookup; a fully unoccupied neighbourhood yields
// zeros with the miss flag set.
template <class S>
SampleResult<S> sample(const UvGridT<S>& grid, Vec2<S> uvc) {
  if (!(uvc.x >= S(0) && uvc.x <= S(1) && uvc.y >= S(0) && uvc.y <= S(1)))
    throw DataError("sample: uv outside [0,1]^2 domain");
  SampleResult<S> res;
  res.value.assign(size_t(grid.channels), S(0));
  S fx = uvc.x * S(grid.width) - S(0.5);
  S fy = uvc.y * S(grid.height) - S(0.5);
  int x0 = int(std::floor(double(fx)));
  int y0 = int(std::floor(double(fy)));
  S ax = fx - S(x0);
  S ay = fy - S(y0);
  S wsum = 0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      int x = std::clamp(x0 + dx, 0, grid.width - 1);
      int y = std::clamp(y0 + dy, 0, grid.height - 1);
      if (!grid.occupied(x, y)) continue;
      S w = (dx ? ax : S(1) - ax) * (dy ? ay : S(1) - ay);
      if (w <= S(0)) continue;
      const S* src = grid.texel(x, y);
      for (int c = 0; c < grid.channels; ++c) res.value[size_t(c)] += w * src[c];
      wsum += w;
    }
  }
  if (wsum <= S(0)) {
    res.miss = true;
    return res;
  }
  for (auto& v : res.value) v /= wsum;
  return res;
}

// Channel layout of the descriptor input: normals then velocity slabs
// (most-recent-first), optionally followed by the occupancy channel.
template <class S>
UvGridT<S> bake_descriptor_input(const geom::CanonicalBodyT<S>& body,
                                 const motion::FrameDerivativesT<S>& deriv, int resolution,
                                 bool occupancy_channel = false, int dilate = 2) {
  int t_slabs = int(deriv.velocities.size());
  int channels = 3 + 3 * t_slabs;
  std::vector<S> per_vertex(size_t(body.vertex_count()) * size_t(channels));
  for (int v = 0; v < body.vertex_count(); ++v) {
    S* dst = per_vertex.data() + size_t(v) * size_t(channels);
    dst[0] = deriv.normals[size_t(v)].x;
    dst[1] = deriv.normals[size_t(v)].y;
    dst[2] = deriv.normals[size_t(v)].z;
    for (int k = 0; k < t_slabs; ++k) {
      const Vec3<S>& vel = deriv.velocities[size_t(k)][size_t(v)];
      dst[3 + 3 * k] = vel.x;
      dst[3 + 3 * k + 1] = vel.y;
      dst[3 + 3 * k + 2] = vel.z;
    }
  }
  UvGridT<S> grid = bake(body, per_vertex, channels, resolution, dilate);
  if (occupancy_channel) {
    UvGridT<S> with_occ;
    with_occ.width = grid.width;
    with_occ.height = grid.height;
    with_occ.channels = grid.channels + 1;
    with_occ.occupancy = grid.occupancy;
    with_occ.data.assign(size_t(grid.width) * size_t(grid.height) * size_t(with_occ.channels), S(0));
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x) {
        const S* src = grid.texel(x, y);
        S* dst = with_occ.texel(x, y);
        for (int c = 0; c < grid.channels; ++c) dst[c] = src[c];
        dst[grid.channels] = grid.occupied(x, y) ? S(1) : S(0);
      }
    return with_occ;
  }
  return grid;
}

// Nearest-vertex index over the UV atlas: per texel, the face corner with the
// largest barycentric weight. Used to derive pixel-to-vertex correspondences
// from IUV maps.
template <class S>
std::vector<int32_t> bake_vertex_index(const geom::CanonicalBodyT<S>& body, int resolution) {
  std::vector<int32_t> index(size_t(resolution) * size_t(resolution), -1);
  const S res = S(resolution);
  for (size_t f = 0; f < body.faces.size(); ++f) {
    Vec2<S> t0 = body.uv_corners[f][0];
    Vec2<S> t1 = body.uv_corners[f][1];
    Vec2<S> t2 = body.uv_corners[f][2];
    S area = detail::edge_fn(t0, t1, t2);
    if (area == S(0)) continue;
    bool flipped = area < S(0);
    if (flipped) {
      std::swap(t1, t2);
      area = -area;
    }
    int x0 = std::max(0, int(std::floor(double(std::min({t0.x, t1.x, t2.x})) * resolution - 1)));
    int x1 = std::min(resolution - 1, int(std::ceil(double(std::max({t0.x, t1.x, t2.x})) * resolution)));
    int y0 = std::max(0, int(std::floor(double(std::min({t0.y, t1.y, t2.y})) * resolution - 1)));
    int y1 = std::min(resolution - 1, int(std::ceil(double(std::max({t0.y, t1.y, t2.y})) * resolution)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        Vec2<S> p{(S(x) + S(0.5)) / res, (S(y) + S(0.5)) / res};
        S e0 = detail::edge_fn(t1, t2, p);
        S e1 = detail::edge_fn(t2, t0, p);
        S e2 = detail::edge_fn(t0, t1, p);
        if (!detail::edge_accepts(e0, t1, t2) || !detail::edge_accepts(e1, t2, t0) ||
            !detail::edge_accepts(e2, t0, t1))
          continue;
        size_t ti = size_t(y) * size_t(resolution) + size_t(x);
        if (index[ti] >= 0) continue;
        S c0 = e0 / area, c1 = e1 / area, c2 = e2 / area;
        if (flipped) std::swap(c1, c2);
        int corner = c0 >= c1 && c0 >= c2 ? 0 : (c1 >= c2 ? 1 : 2);
        index[ti] = body.faces[f][size_t(corner)];
      }
  }
  return index;
}

}  // namespace dyn::uv
