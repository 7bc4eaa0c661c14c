#pragma once

#include <functional>
#include <vector>

#include "dyn/geometry.hpp"
#include "dyn/image.hpp"
#include "dyn/render.hpp"

namespace dyn::metrics {

// Mean local SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// dynamic range 1. Multi-channel images are averaged to gray first.
double ssim(const ImageF& a, const ImageF& b);

// Pluggable frame distance for the temporal-consistency metric.
using FrameDistance = std::function<double(const ImageF&, const ImageF&)>;
FrameDistance one_minus_ssim();
FrameDistance mean_l1();

// Per consecutive pair: | d(s_t, s_{t-1}) - d(g_t, g_{t-1}) |.
std::vector<double> temporal_distance(const std::vector<ImageF>& synth,
                                      const std::vector<ImageF>& gt,
                                      const FrameDistance& base);

// Mean over vertices of the pixel distance between predicted and ground-truth
// projected posed vertices, per frame.
std::vector<double> projection_error(const geom::CanonicalBody& body,
                                     const std::vector<geom::PoseFrame>& pred,
                                     const std::vector<geom::PoseFrame>& gt,
                                     const render::Camera& cam);

struct MetricReport {
  std::vector<double> ssim_per_frame;
  std::vector<double> t_distance;  // length frames-1
  double ssim_mean = 0, ssim_std = 0;
  double t_mean = 0, t_std = 0;
};

MetricReport build_report(const std::vector<ImageF>& synth, const std::vector<ImageF>& gt,
                          const FrameDistance& base);

}  // namespace dyn::metrics
