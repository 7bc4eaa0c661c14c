#include "dyn/render.hpp"

#include <cmath>

#include "dyn/parallel.hpp"

namespace dyn::render {

namespace {

using uv::detail::edge_accepts;
using uv::detail::edge_fn;

struct ScreenTri {
  Vec2d p0, p1, p2;
  double z0, z1, z2;
  int chunk = -1;
  int face = -1;
  int global_id = -1;  // submission index before any culling
};

}  // namespace

RenderedFrame rasterize(std::span<const RasterChunk> chunks, const Camera& cam) {
  cam.validate();
  int attr_channels = 0;
  for (const auto& c : chunks) {
    require(c.positions && c.faces, "rasterize: chunk missing positions/faces");
    if (c.attr_channels > 0) {
      require(attr_channels == 0 || attr_channels == c.attr_channels,
              "rasterize: chunks disagree on attribute channel count");
      attr_channels = c.attr_channels;
      require(c.vertex_attrs &&
                  c.vertex_attrs->size() == c.positions->size() * size_t(c.attr_channels),
              "rasterize: vertex attribute buffer size mismatch");
    }
  }

  RenderedFrame frame;
  frame.w = cam.w;
  frame.h = cam.h;
  size_t n = size_t(cam.w) * size_t(cam.h);
  frame.mask.assign(n, 0);
  frame.depth.assign(n, std::numeric_limits<double>::infinity());
  frame.part.assign(n, 0);
  frame.uvmap.assign(n * 2, 0.0);
  frame.tri.assign(n, -1);
  frame.attr_channels = attr_channels;
  frame.attrs.assign(n * size_t(attr_channels), 0.0);

  // Project every vertex once, then lay out screen triangles. Closed chunks
  // drop back faces: on watertight outward-wound shells the nearest fragment
  // along any ray is always front-facing.
  std::vector<ScreenTri> tris;
  tris.reserve(512);
  std::vector<Vec2d> projected;
  int global_id = 0;
  for (size_t ci = 0; ci < chunks.size(); ++ci) {
    const auto& ch = chunks[ci];
    projected.resize(ch.positions->size());
    for (size_t v = 0; v < ch.positions->size(); ++v) projected[v] = project(cam, (*ch.positions)[v]);
    for (size_t f = 0; f < ch.faces->size(); ++f, ++global_id) {
      const auto& face = (*ch.faces)[f];
      ScreenTri t;
      t.chunk = int(ci);
      t.face = int(f);
      t.global_id = global_id;
      t.p0 = projected[size_t(face[0])];
      t.p1 = projected[size_t(face[1])];
      t.p2 = projected[size_t(face[2])];
      if (ch.closed) {
        // front faces of outward CCW shells project with negative area here
        double area = edge_fn(t.p0, t.p1, t.p2);
        if (area >= 0.0) continue;
      }
      t.z0 = (*ch.positions)[size_t(face[0])].z;
      t.z1 = (*ch.positions)[size_t(face[1])].z;
      t.z2 = (*ch.positions)[size_t(face[2])].z;
      tris.push_back(t);
    }
  }

  // Row bands own disjoint pixels; triangle order inside a band is the global
  // submission order, so equal-depth ties resolve to the lower triangle index.
  parallel_for(0, cam.h, [&](long y_begin, long y_end) {
    for (size_t ti = 0; ti < tris.size(); ++ti) {
      ScreenTri t = tris[ti];
      double area = edge_fn(t.p0, t.p1, t.p2);
      if (area == 0.0) continue;
      bool flipped = area < 0.0;
      if (flipped) {
        std::swap(t.p1, t.p2);
        std::swap(t.z1, t.z2);
        area = -area;
      }
      int x0 = std::max(0, int(std::floor(std::min({t.p0.x, t.p1.x, t.p2.x}) - 0.5)));
      int x1 = std::min(cam.w - 1, int(std::ceil(std::max({t.p0.x, t.p1.x, t.p2.x}))));
      int y0 = std::max(int(y_begin), int(std::floor(std::min({t.p0.y, t.p1.y, t.p2.y}) - 0.5)));
      int y1 = std::min(int(y_end) - 1, int(std::ceil(std::max({t.p0.y, t.p1.y, t.p2.y}))));
      if (x0 > x1 || y0 > y1) continue;

      const auto& ch = chunks[size_t(tris[ti].chunk)];
      const auto& face = (*ch.faces)[size_t(tris[ti].face)];
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          Vec2d p{double(x) + 0.5, double(y) + 0.5};
          double e0 = edge_fn(t.p1, t.p2, p);
          double e1 = edge_fn(t.p2, t.p0, p);
          double e2 = edge_fn(t.p0, t.p1, p);
          if (!edge_accepts(e0, t.p1, t.p2) || !edge_accepts(e1, t.p2, t.p0) ||
              !edge_accepts(e2, t.p0, t.p1))
            continue;
          double w0 = e0 / area, w1 = e1 / area, w2 = e2 / area;
          double z = w0 * t.z0 + w1 * t.z1 + w2 * t.z2;
          size_t pi = frame.pixel(x, y);
          if (!(z < frame.depth[pi])) continue;
          if (flipped) std::swap(w1, w2);

          frame.depth[pi] = z;
          frame.mask[pi] = 1;
          frame.tri[pi] = tris[ti].global_id;
          frame.part[pi] = ch.part_labels ? (*ch.part_labels)[size_t(tris[ti].face)] : 0;
          if (ch.uv_corners) {
            const auto& uvc = (*ch.uv_corners)[size_t(tris[ti].face)];
            frame.uvmap[2 * pi] = w0 * uvc[0].x + w1 * uvc[1].x + w2 * uvc[2].x;
            frame.uvmap[2 * pi + 1] = w0 * uvc[0].y + w1 * uvc[1].y + w2 * uvc[2].y;
          } else {
            frame.uvmap[2 * pi] = 0;
            frame.uvmap[2 * pi + 1] = 0;
          }
          if (attr_channels > 0) {
            double* dst = frame.attrs.data() + pi * size_t(attr_channels);
            if (ch.vertex_attrs) {
              const double* a0 = ch.vertex_attrs->data() + size_t(face[0]) * size_t(attr_channels);
              const double* a1 = ch.vertex_attrs->data() + size_t(face[1]) * size_t(attr_channels);
              const double* a2 = ch.vertex_attrs->data() + size_t(face[2]) * size_t(attr_channels);
              for (int c = 0; c < attr_channels; ++c)
                dst[c] = w0 * a0[c] + w1 * a1[c] + w2 * a2[c];
            } else {
              for (int c = 0; c < attr_channels; ++c) dst[c] = 0;
            }
          }
        }
      }
    }
  });

  bool any = false;
  for (uint8_t m : frame.mask)
    if (m) {
      any = true;
      break;
    }
  frame.empty_projection = !any;
  return frame;
}

RenderedFrame rasterize_body(const geom::CanonicalBody& body, const std::vector<Vec3d>& positions,
                             const Camera& cam, const std::vector<double>* vertex_attrs,
                             int attr_channels) {
  RasterChunk chunk;
  chunk.positions = &positions;
  chunk.faces = &body.faces;
  chunk.uv_corners = &body.uv_corners;
  chunk.part_labels = &body.part_labels;
  chunk.vertex_attrs = vertex_attrs;
  chunk.attr_channels = attr_channels;
  chunk.closed = true;  // capsule shells are watertight and outward wound
  return rasterize(std::span<const RasterChunk>(&chunk, 1), cam);
}

GatherTable build_gather_table(const RenderedFrame& frame, const std::vector<uint8_t>& occupancy,
                               int grid_w, int grid_h) {
  GatherTable table;
  table.grid_w = grid_w;
  table.grid_h = grid_h;
  table.out_pixels = frame.w * frame.h;
  table.entries.resize(size_t(table.out_pixels));
  for (int y = 0; y < frame.h; ++y) {
    for (int x = 0; x < frame.w; ++x) {
      size_t pi = frame.pixel(x, y);
      if (!frame.mask[pi]) continue;
      double fx = frame.uvmap[2 * pi] * grid_w - 0.5;
      double fy = frame.uvmap[2 * pi + 1] * grid_h - 0.5;
      int x0 = int(std::floor(fx));
      int y0 = int(std::floor(fy));
      double ax = fx - x0, ay = fy - y0;
      GatherTable::Entry e;
      double wsum = 0;
      int slot = 0;
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          int gx = std::clamp(x0 + dx, 0, grid_w - 1);
          int gy = std::clamp(y0 + dy, 0, grid_h - 1);
          if (!occupancy[size_t(gy) * size_t(grid_w) + size_t(gx)]) continue;
          double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
          if (w <= 0) continue;
          e.texel[slot] = int32_t(gy * grid_w + gx);
          e.weight[slot] = float(w);
          wsum += w;
          ++slot;
        }
      }
      if (wsum > 0)
        for (int i = 0; i < slot; ++i) e.weight[i] = float(double(e.weight[i]) / wsum);
      table.entries[pi] = e;
    }
  }
  return table;
}

std::vector<double> relight(const std::vector<double>& appearance,
                            const std::vector<double>& normals,
                            const std::vector<uint8_t>& mask, int w, int h, Vec3d light_dir,
                            double ambient, bool* warned_non_unit) {
  require(ambient >= 0.0 && ambient <= 1.0, "relight: ambient must be in [0,1]");
  size_t n = size_t(w) * size_t(h);
  require(appearance.size() == 3 * n && normals.size() == 3 * n && mask.size() == n,
          "relight: buffer sizes mismatch");
  double ln = light_dir.norm();
  bool warn = std::abs(ln - 1.0) > 1e-9;
  if (warned_non_unit) *warned_non_unit = warn;
  require_data(ln > 0, "relight: zero light direction");
  Vec3d l = light_dir * (1.0 / ln);
  std::vector<double> out(3 * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    Vec3d nrm{normals[3 * i], normals[3 * i + 1], normals[3 * i + 2]};
    double ndl = std::max(0.0, nrm.dot(l));
    double f = ambient + (1.0 - ambient) * ndl;
    for (int c = 0; c < 3; ++c) out[3 * i + size_t(c)] = std::clamp(appearance[3 * i + size_t(c)] * f, 0.0, 1.0);
  }
  return out;
}

}  // namespace dyn::render
