#include "dyn/retrieval.hpp"

#include <cmath>

#include "dyn/motionfield.hpp"
#include "dyn/uvbake.hpp"

namespace dyn::retrieval {

DescriptorKind kind_from_string(const std::string& s) {
  if (s == "3d-uv") return DescriptorKind::k3dUv;
  if (s == "2d-sparse") return DescriptorKind::k2dSparse;
  if (s == "2d-dense") return DescriptorKind::k2dDense;
  throw UsageError("unknown descriptor kind: " + s + " (want 3d-uv, 2d-sparse or 2d-dense)");
}

std::string kind_to_string(DescriptorKind k) {
  switch (k) {
    case DescriptorKind::k3dUv: return "3d-uv";
    case DescriptorKind::k2dSparse: return "2d-sparse";
    case DescriptorKind::k2dDense: return "2d-dense";
  }
  return "?";
}

NccResult ncc(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), "ncc: vectors must have equal nonzero length");
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(a.size());
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double xa = a[i] - ma, xb = b[i] - mb;
    dot += xa * xb;
    na += xa * xa;
    nb += xb * xb;
  }
  if (na <= 0 || nb <= 0) return {0.0, true};  // constant vector: undefined
  double score = dot / std::sqrt(na * nb);
  score = std::clamp(score, -1.0, 1.0);
  return {score, false};
}

NccResult ncc_masked(const DescriptorTrack& ta, int frame_a, const DescriptorTrack& tb,
                     int frame_b) {
  require(ta.kind == tb.kind && ta.dim == tb.dim, "ncc_masked: descriptor kinds must match");
  const auto& va = ta.frames[size_t(frame_a)];
  const auto& vb = tb.frames[size_t(frame_b)];
  if (ta.point_valid.empty() || tb.point_valid.empty()) return ncc(va, vb);

  const auto& ma = ta.point_valid[size_t(frame_a)];
  const auto& mb = tb.point_valid[size_t(frame_b)];
  std::vector<double> sa, sb;
  int vpp = ta.values_per_point;
  for (size_t p = 0; p < ma.size(); ++p) {
    if (!ma[p] || !mb[p]) continue;
    for (int i = 0; i < vpp; ++i) {
      sa.push_back(va[p * size_t(vpp) + size_t(i)]);
      sb.push_back(vb[p * size_t(vpp) + size_t(i)]);
    }
  }
  if (sa.size() < 2) return {0.0, true};
  return ncc(sa, sb);
}

RetrievalResult retrieve(const DescriptorTrack& query_track, int query_frame,
                         const DescriptorTrack& reference, const std::vector<int>& reference_frames,
                         int k) {
  require(reference_frames.size() >= 2, "retrieve: reference must have at least 2 frames");
  RetrievalResult res;
  res.profile.scores.resize(reference_frames.size());
  for (size_t i = 0; i < reference_frames.size(); ++i)
    res.profile.scores[i] = ncc_masked(query_track, query_frame, reference, reference_frames[i]).score;

  double global_max = -2;
  for (double s : res.profile.scores) global_max = std::max(global_max, s);
  for (size_t i = 0; i < res.profile.scores.size(); ++i) {
    double s = res.profile.scores[i];
    bool left_ok = i == 0 || s > res.profile.scores[i - 1];
    bool right_ok = i + 1 == res.profile.scores.size() || s >= res.profile.scores[i + 1];
    if (left_ok && right_ok && s >= 0.5 * global_max) res.profile.peaks.push_back(int(i));
  }

  std::vector<size_t> order(reference_frames.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    return res.profile.scores[x] > res.profile.scores[y];
  });
  for (int i = 0; i < k && i < int(order.size()); ++i)
    res.top.push_back(reference_frames[order[size_t(i)]]);
  return res;
}

DescriptorTrack build_3d_track(const geom::CanonicalBody& body,
                               const std::vector<geom::PoseFrame>& poses, int t_slabs, int uv_res,
                               const geom::UvRect<double>* region) {
  DescriptorTrack track;
  track.kind = DescriptorKind::k3dUv;

  std::vector<geom::PosedMesh> meshes;
  meshes.reserve(poses.size());
  for (const auto& p : poses) meshes.push_back(geom::pose(body, p));

  std::vector<size_t> selected;  // texel*channel indices chosen on frame 0
  for (size_t t = 0; t < poses.size(); ++t) {
    std::vector<const std::vector<Vec3d>*> hist;
    for (size_t q = t >= size_t(t_slabs) ? t - size_t(t_slabs) : 0; q <= t; ++q)
      hist.push_back(&meshes[q].positions);
    auto normals = motion::surface_normals(meshes[t].positions, body.faces);
    auto [slabs, valid] = motion::velocities<double>(hist, t_slabs);
    auto canon = motion::canonicalize(meshes[t], normals, slabs, valid);
    auto grid = uv::bake_descriptor_input(body, canon, uv_res);

    if (t == 0) {
      for (int y = 0; y < grid.height; ++y)
        for (int x = 0; x < grid.width; ++x) {
          if (!grid.occupied(x, y)) continue;
          if (region) {
            Vec2d center{(x + 0.5) / grid.width, (y + 0.5) / grid.height};
            if (!region->contains(center)) continue;
          }
          size_t base = (size_t(y) * size_t(grid.width) + size_t(x)) * size_t(grid.channels);
          for (int c = 0; c < grid.channels; ++c) selected.push_back(base + size_t(c));
        }
      require(!selected.empty(), "build_3d_track: region selects no occupied texels");
      track.dim = int(selected.size());
    }
    std::vector<double> vec(selected.size());
    for (size_t i = 0; i < selected.size(); ++i) vec[i] = grid.data[selected[i]];
    track.frames.push_back(std::move(vec));
  }
  return track;
}

DescriptorTrack build_2d_baseline(const geom::CanonicalBody& body,
                                  const std::vector<geom::PoseFrame>& poses,
                                  const render::Camera& cam, DescriptorKind mode, int t_slabs,
                                  int dense_stride, double depth_tolerance) {
  require(mode == DescriptorKind::k2dSparse || mode == DescriptorKind::k2dDense,
          "build_2d_baseline: mode must be a 2d kind");
  DescriptorTrack track;
  track.kind = mode;

  // tracked points: joints (sparse) or a fixed vertex subset (dense)
  std::vector<int> dense_vertices;
  if (mode == DescriptorKind::k2dDense)
    for (int v = 0; v < body.vertex_count(); v += dense_stride) dense_vertices.push_back(v);
  size_t points =
      mode == DescriptorKind::k2dSparse ? size_t(body.joint_count()) : dense_vertices.size();
  track.values_per_point = 2 * (1 + t_slabs);
  track.dim = int(points) * track.values_per_point;

  // world positions of tracked points per frame, plus visibility via z-buffer
  std::vector<std::vector<Vec2d>> projected(poses.size(),
                                            std::vector<Vec2d>(points));
  std::vector<std::vector<uint8_t>> visible(poses.size(), std::vector<uint8_t>(points, 0));
  for (size_t t = 0; t < poses.size(); ++t) {
    auto positions = geom::pose_positions(body, poses[t]);
    std::vector<Vec3d> tracked(points);
    if (mode == DescriptorKind::k2dSparse) {
      auto globals = geom::forward_kinematics<double>(body, &poses[t].theta);
      // joints sit inside the capsules; posed joint = global translation
      for (size_t j = 0; j < points; ++j) tracked[j] = globals[j].t;
    } else {
      for (size_t i = 0; i < points; ++i) tracked[i] = positions[size_t(dense_vertices[i])];
    }
    auto frame = render::rasterize_body(body, positions, cam);
    for (size_t p = 0; p < points; ++p) {
      Vec2d px = render::project(cam, tracked[p]);
      projected[t][p] = px;
      int ix = int(std::floor(px.x));
      int iy = int(std::floor(px.y));
      if (ix < 0 || iy < 0 || ix >= cam.w || iy >= cam.h) continue;
      double depth = frame.depth[frame.pixel(ix, iy)];
      double tol = mode == DescriptorKind::k2dSparse ? 0.18 : depth_tolerance;
      visible[t][p] = tracked[p].z <= depth + tol ? 1 : 0;
    }
  }

  for (size_t t = 0; t < poses.size(); ++t) {
    std::vector<double> vec(size_t(track.dim), 0.0);
    std::vector<uint8_t> valid(points, 1);
    for (size_t p = 0; p < points; ++p) {
      double* dst = vec.data() + p * size_t(track.values_per_point);
      dst[0] = projected[t][p].x;
      dst[1] = projected[t][p].y;
      for (int k = 1; k <= t_slabs; ++k) {
        long newer = long(t) - k + 1;
        long older = long(t) - k;
        if (older < 0) break;  // zero-padded short history
        Vec2d d = projected[size_t(newer)][p] - projected[size_t(older)][p];
        dst[2 * k] = d.x;
        dst[2 * k + 1] = d.y;
      }
      valid[p] = visible[t][p];
    }
    track.frames.push_back(std::move(vec));
    track.point_valid.push_back(std::move(valid));
  }
  return track;
}

}  // namespace dyn::retrieval
