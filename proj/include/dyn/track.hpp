#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dyn/geometry.hpp"
#include "dyn/json_util.hpp"
#include "dyn/render.hpp"

namespace dyn::track {

// Dense IUV observation for one frame plus the pixel-to-vertex
// correspondences derived from it.
struct Observation {
  int w = 0, h = 0;
  std::vector<uint8_t> mask;
  std::vector<int32_t> part;
  std::vector<double> uvmap;  // w*h*2
  struct Corr {
    double px, py;  // observed pixel location (pixel centers)
    int vertex;
  };
  std::vector<Corr> dense_points;
};

struct ObservationNoise {
  double uv_sigma = 0;    // gaussian noise on the observed uv channels
  double dropout = 0;     // correspondence dropout probability
  uint64_t seed = 0;
};

// Derives correspondences from an IUV map through the body's UV-space
// nearest-vertex index; the keypoint location of a matched vertex is its
// exact projection in the observed frame (synthetic observations know the
// observed state). corr_cap subsamples deterministically by stride.
Observation make_observation(int w, int h, const std::vector<uint8_t>& mask,
                             const std::vector<int32_t>& part, const std::vector<double>& uvmap,
                             const std::vector<int32_t>& uv_index, int index_res, int corr_cap,
                             const std::vector<Vec3d>& observed_positions,
                             const geom::WeakPerspective& observed_camera,
                             const ObservationNoise& noise = {});

struct TrackConfig {
  int steps = 140;
  double lr = 0.02;
  double lambda_r = 1.0, lambda_d = 0.1, lambda_t = 0.01;
  double fd_h = 1e-4;      // central-difference step for the render loss
  double fd_floor = 5e-4;  // FD magnitudes below this are rasterization noise
  int corr_cap = 900;
  int index_res = 128;
  bool use_render_loss = true;

  static TrackConfig from_json(const Json& j);
  Json to_json() const;
};

struct TrackState {
  std::vector<geom::PoseFrame> frames;        // optimized theta + camera
  std::vector<geom::PoseFrame> priors;        // theta-bar, C-bar
  std::vector<double> loss_history;           // total loss per step
  std::vector<double> part_disagreement;      // per frame, fraction of pixels
};

// L_f: mean 2D distance between projected correspondences and observations.
double fitting_loss(const geom::CanonicalBody& body, const geom::PoseFrame& frame,
                    const Observation& obs);

// Analytic gradient of L_f w.r.t. theta (3J) and camera (cx, cy, s).
void fitting_loss_grad(const geom::CanonicalBody& body, const geom::PoseFrame& frame,
                       const Observation& obs, std::vector<double>& grad_theta,
                       double grad_cam[3], double* loss_out = nullptr);

// L_r: mean per-pixel L1 between rendered and observed uv on the mask
// intersection; part-id disagreement is reported separately.
double render_loss(const geom::CanonicalBody& body, const geom::PoseFrame& frame,
                   const Observation& obs, double* part_disagreement = nullptr,
                   bool* empty_warning = nullptr);

// L_d: ||theta - prior_theta|| + ||C - prior_C|| (L2 norms).
double prior_loss(const geom::PoseFrame& frame, const geom::PoseFrame& prior);

// L_t for one frame, one-sided at the sequence boundaries.
double temporal_loss(const std::vector<geom::PoseFrame>& frames, size_t t);

struct TrackReport {
  std::vector<double> err_px_mean;  // vs ground truth, when provided
  std::vector<double> err_px_std;
};

TrackState track(const geom::CanonicalBody& body, const std::vector<Observation>& observations,
                 const std::vector<geom::PoseFrame>& priors, const TrackConfig& config,
                 const std::vector<geom::PoseFrame>* gt = nullptr, TrackReport* report = nullptr);

// Per-frame per-vertex 2D projection error vs ground truth.
void projection_report(const geom::CanonicalBody& body, const std::vector<geom::PoseFrame>& pred,
                       const std::vector<geom::PoseFrame>& gt, int img_w, int img_h,
                       TrackReport& out);

}  // namespace dyn::track
