#include "dyn/metrics.hpp"

#include <cmath>

namespace dyn::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> to_gray(const ImageF& img) {
  std::vector<double> g(size_t(img.w) * size_t(img.h));
  for (size_t i = 0; i < g.size(); ++i) {
    double acc = 0;
    for (int c = 0; c < img.ch; ++c) acc += img.px[i * size_t(img.ch) + size_t(c)];
    g[i] = acc / img.ch;
  }
  return g;
}

const std::vector<double>& gaussian_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(kWindow);
    double sum = 0;
    for (int i = 0; i < kWindow; ++i) {
      double x = i - (kWindow - 1) / 2.0;
      v[size_t(i)] = std::exp(-x * x / (2 * kSigma * kSigma));
      sum += v[size_t(i)];
    }
    for (auto& e : v) e /= sum;
    return v;
  }();
  return k;
}

// separable valid-region filter
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, int& ow, int& oh) {
  const auto& k = gaussian_kernel();
  ow = w - kWindow + 1;
  oh = h - kWindow + 1;
  std::vector<double> rows(size_t(ow) * size_t(h), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWindow; ++i) acc += k[size_t(i)] * img[size_t(y * w + x + i)];
      rows[size_t(y * ow + x)] = acc;
    }
  std::vector<double> out(size_t(ow) * size_t(oh), 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWindow; ++i) acc += k[size_t(i)] * rows[size_t((y + i) * ow + x)];
      out[size_t(y * ow + x)] = acc;
    }
  return out;
}

}  // namespace

double ssim(const ImageF& a, const ImageF& b) {
  require(a.w == b.w && a.h == b.h && a.ch == b.ch, "ssim: image sizes must match");
  require(a.w >= kWindow && a.h >= kWindow, "ssim: image smaller than the 11x11 window");
  auto ga = to_gray(a);
  auto gb = to_gray(b);
  size_t n = ga.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    aa[i] = ga[i] * ga[i];
    bb[i] = gb[i] * gb[i];
    ab[i] = ga[i] * gb[i];
  }
  int ow = 0, oh = 0;
  auto mu_a = filter_valid(ga, a.w, a.h, ow, oh);
  auto mu_b = filter_valid(gb, a.w, a.h, ow, oh);
  auto s_aa = filter_valid(aa, a.w, a.h, ow, oh);
  auto s_bb = filter_valid(bb, a.w, a.h, ow, oh);
  auto s_ab = filter_valid(ab, a.w, a.h, ow, oh);

  double total = 0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    double ma = mu_a[i], mb = mu_b[i];
    double va = s_aa[i] - ma * ma;
    double vb = s_bb[i] - mb * mb;
    double cov = s_ab[i] - ma * mb;
    double val = ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    total += val;
  }
  return total / double(mu_a.size());
}

FrameDistance one_minus_ssim() {
  return [](const ImageF& a, const ImageF& b) { return 1.0 - ssim(a, b); };
}

FrameDistance mean_l1() {
  return [](const ImageF& a, const ImageF& b) {
    require(a.px.size() == b.px.size(), "mean_l1: image sizes must match");
    double acc = 0;
    for (size_t i = 0; i < a.px.size(); ++i) acc += std::abs(double(a.px[i]) - double(b.px[i]));
    return acc / double(a.px.size());
  };
}

std::vector<double> temporal_distance(const std::vector<ImageF>& synth,
                                      const std::vector<ImageF>& gt, const FrameDistance& base) {
  require(synth.size() == gt.size(), "temporal_distance: sequence lengths must match");
  require(synth.size() >= 2, "temporal_distance: need at least two frames");
  std::vector<double> out;
  out.reserve(synth.size() - 1);
  for (size_t t = 1; t < synth.size(); ++t) {
    double ds = base(synth[t], synth[t - 1]);
    double dg = base(gt[t], gt[t - 1]);
    out.push_back(std::abs(ds - dg));
  }
  return out;
}

std::vector<double> projection_error(const geom::CanonicalBody& body,
                                     const std::vector<geom::PoseFrame>& pred,
                                     const std::vector<geom::PoseFrame>& gt,
                                     const render::Camera& cam) {
  require(pred.size() == gt.size(), "projection_error: sequence lengths must match");
  std::vector<double> out;
  out.reserve(pred.size());
  for (size_t t = 0; t < pred.size(); ++t) {
    auto pp = geom::pose_positions(body, pred[t]);
    auto pg = geom::pose_positions(body, gt[t]);
    render::Camera cp = cam, cg = cam;
    cp.cx = pred[t].camera.cx;
    cp.cy = pred[t].camera.cy;
    cp.s = pred[t].camera.s;
    cg.cx = gt[t].camera.cx;
    cg.cy = gt[t].camera.cy;
    cg.s = gt[t].camera.s;
    double acc = 0;
    for (size_t v = 0; v < pp.size(); ++v) {
      Vec2d a = render::project(cp, pp[v]);
      Vec2d b = render::project(cg, pg[v]);
      acc += (a - b).norm();
    }
    out.push_back(acc / double(pp.size()));
  }
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0, 0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / double(v.size()))};
}

}  // namespace

MetricReport build_report(const std::vector<ImageF>& synth, const std::vector<ImageF>& gt,
                          const FrameDistance& base) {
  MetricReport report;
  require(synth.size() == gt.size() && !synth.empty(), "report: sequence lengths must match");
  for (size_t t = 0; t < synth.size(); ++t) report.ssim_per_frame.push_back(ssim(synth[t], gt[t]));
  if (synth.size() >= 2) report.t_distance = temporal_distance(synth, gt, base);
  std::tie(report.ssim_mean, report.ssim_std) = mean_std(report.ssim_per_frame);
  std::tie(report.t_mean, report.t_std) = mean_std(report.t_distance);
  return report;
}

}  // namespace dyn::metrics
