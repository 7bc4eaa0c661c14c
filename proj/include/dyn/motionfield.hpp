#pragma once

#include <vector>

#include "dyn/geometry.hpp"

namespace dyn::motion {

// Canonicalized spatial/temporal derivatives of the posed surface.
// Velocity slabs are ordered most-recent-first; short history zero-pads and
// clears the slab flag.
template <class S>
struct FrameDerivativesT {
  std::vector<Vec3<S>> normals;                   // m unit vectors
  std::vector<std::vector<Vec3<S>>> velocities;   // T slabs of m vectors, meters/frame
  std::vector<uint8_t> slab_valid;                // T flags
};

using FrameDerivatives = FrameDerivativesT<double>;

// Angle-weighted per-vertex normals. Degenerate faces are skipped; a vertex
// incident to no usable face is an error.
template <class S>
std::vector<Vec3<S>> surface_normals(const std::vector<Vec3<S>>& positions,
                                     const std::vector<std::array<int, 3>>& faces) {
  std::vector<Vec3<S>> acc(positions.size(), Vec3<S>{0, 0, 0});
  std::vector<uint8_t> touched(positions.size(), 0);
  for (const auto& f : faces) {
    const Vec3<S>& p0 = positions[size_t(f[0])];
    const Vec3<S>& p1 = positions[size_t(f[1])];
    const Vec3<S>& p2 = positions[size_t(f[2])];
    Vec3<S> n = (p1 - p0).cross(p2 - p0);
    S area2 = n.norm();
    if (double(area2) < 1e-14) continue;  // degenerate
    n = n * (S(1) / area2);
    for (int c = 0; c < 3; ++c) {
      const Vec3<S>& a = positions[size_t(f[size_t(c)])];
      Vec3<S> e1 = (positions[size_t(f[size_t((c + 1) % 3)])] - a).normalized();
      Vec3<S> e2 = (positions[size_t(f[size_t((c + 2) % 3)])] - a).normalized();
      S cosang = std::clamp(e1.dot(e2), S(-1), S(1));
      S ang = std::acos(cosang);
      acc[size_t(f[size_t(c)])] += n * ang;
      touched[size_t(f[size_t(c)])] = 1;
    }
  }
  std::vector<Vec3<S>> out(positions.size());
  for (size_t v = 0; v < positions.size(); ++v) {
    if (!touched[v]) throw DataError("surface_normals: isolated vertex " + std::to_string(v));
    out[v] = acc[v].normalized();
  }
  return out;
}

// Backward differences over the last T steps in world space, newest first:
// slab k = positions(t-k+1) - positions(t-k). History is ordered oldest to
// newest with the current frame last.
template <class S>
std::pair<std::vector<std::vector<Vec3<S>>>, std::vector<uint8_t>> velocities(
    const std::vector<const std::vector<Vec3<S>>*>& history, int t_slabs) {
  require(!history.empty(), "velocities: empty history");
  size_t m = history.back()->size();
  std::vector<std::vector<Vec3<S>>> slabs(size_t(t_slabs), std::vector<Vec3<S>>(m, Vec3<S>{0, 0, 0}));
  std::vector<uint8_t> valid(size_t(t_slabs), 0);
  int frames = int(history.size());
  for (int k = 1; k <= t_slabs; ++k) {
    int inew = frames - k;
    int iold = frames - k - 1;
    if (iold < 0) break;
    const auto& pn = *history[size_t(inew)];
    const auto& po = *history[size_t(iold)];
    require(pn.size() == m && po.size() == m, "velocities: vertex count changed in history");
    auto& slab = slabs[size_t(k - 1)];
    for (size_t v = 0; v < m; ++v) slab[v] = pn[v] - po[v];
    valid[size_t(k - 1)] = 1;
  }
  return {std::move(slabs), std::move(valid)};
}

// Applies the current frame's inverse skinning rotations to normals and to
// every velocity slab.
template <class S>
FrameDerivativesT<S> canonicalize(const geom::PosedMeshT<S>& mesh,
                                  const std::vector<Vec3<S>>& normals,
                                  const std::vector<std::vector<Vec3<S>>>& velocity_slabs,
                                  const std::vector<uint8_t>& slab_valid) {
  require(normals.size() == mesh.positions.size(), "canonicalize: normal count mismatch");
  FrameDerivativesT<S> out;
  out.normals = geom::inverse_skin(mesh, normals);
  out.velocities.reserve(velocity_slabs.size());
  for (const auto& slab : velocity_slabs) out.velocities.push_back(geom::inverse_skin(mesh, slab));
  out.slab_valid = slab_valid;
  return out;
}

}  // namespace dyn::motion
