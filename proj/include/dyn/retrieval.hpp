#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dyn/geometry.hpp"
#include "dyn/render.hpp"
#include "dyn/synthdata.hpp"

namespace dyn::retrieval {

enum class DescriptorKind { k3dUv, k2dSparse, k2dDense };

DescriptorKind kind_from_string(const std::string& s);
std::string kind_to_string(DescriptorKind k);

// Per-frame flattened motion descriptors. For the 2D kinds, entries group per
// tracked point (values_per_point each) with a per-point validity flag; the
// 3D kind is always fully valid.
struct DescriptorTrack {
  DescriptorKind kind = DescriptorKind::k3dUv;
  int dim = 0;
  int values_per_point = 0;  // 0 for k3dUv
  std::vector<std::vector<double>> frames;
  std::vector<std::vector<uint8_t>> point_valid;  // empty for k3dUv
};

struct NccResult {
  double score = 0;
  bool degenerate = false;  // constant input or no shared support
};

// Zero-mean normalized cross correlation in [-1, 1].
NccResult ncc(const std::vector<double>& a, const std::vector<double>& b);

// NCC over the entries whose owning points are valid in both frames.
NccResult ncc_masked(const DescriptorTrack& ta, int frame_a, const DescriptorTrack& tb,
                     int frame_b);

struct SimilarityProfile {
  std::vector<double> scores;  // per reference frame
  std::vector<int> peaks;      // local maxima >= 0.5 * global max
};

struct RetrievalResult {
  std::vector<int> top;  // reference frame indices, best first
  SimilarityProfile profile;
};

RetrievalResult retrieve(const DescriptorTrack& query_track, int query_frame,
                         const DescriptorTrack& reference, const std::vector<int>& reference_frames,
                         int k);

// Canonicalized (N, V) UV grids flattened over occupied texels, optionally
// restricted to one chart of the atlas.
DescriptorTrack build_3d_track(const geom::CanonicalBody& body,
                               const std::vector<geom::PoseFrame>& poses, int t_slabs, int uv_res,
                               const geom::UvRect<double>* region = nullptr);

// Projected 2D positions plus T-frame backward-difference trajectories, with
// z-buffer occlusion flags. Sparse tracks the joints, dense a vertex subset.
DescriptorTrack build_2d_baseline(const geom::CanonicalBody& body,
                                  const std::vector<geom::PoseFrame>& poses,
                                  const render::Camera& cam, DescriptorKind mode, int t_slabs,
                                  int dense_stride = 20, double depth_tolerance = 0.05);

}  // namespace dyn::retrieval
