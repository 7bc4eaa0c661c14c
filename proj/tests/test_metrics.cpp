#include <doctest.h>

#include <random>

#include "dyn/metrics.hpp"

using namespace dyn;
using namespace dyn::metrics;

namespace {

ImageF constant_image(int w, int h, float v) {
  ImageF img;
  img.w = w;
  img.h = h;
  img.ch = 1;
  img.px.assign(size_t(w * h), v);
  return img;
}

ImageF random_image(int w, int h, int ch, uint64_t seed) {
  ImageF img;
  img.w = w;
  img.h = h;
  img.ch = ch;
  img.px.resize(size_t(w * h * ch));
  std::mt19937_64 rng(seed);
  for (auto& p : img.px) p = float(double(rng() >> 11) * 0x1p-53);
  return img;
}

}  // namespace

TEST_CASE("ssim self similarity and symmetry") {
  auto a = random_image(32, 24, 3, 5);
  auto b = random_image(32, 24, 3, 6);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(ssim(a, b) < 1.0);
}

TEST_CASE("constant images reproduce the hand-derived ssim value") {
  auto a = constant_image(16, 16, 0.5f);
  auto b = constant_image(16, 16, 0.25f);
  // variance terms collapse to 1: (2*0.125 + 1e-4) / (0.3125 + 1e-4)
  double expect = (2 * 0.125 + 1e-4) / (0.3125 + 1e-4);
  CHECK(std::abs(ssim(a, b) - expect) < 1e-4);
  CHECK(expect == doctest::Approx(0.8001).epsilon(2e-4));
}

TEST_CASE("ssim input validation") {
  auto a = constant_image(16, 16, 0.5f);
  auto b = constant_image(16, 8, 0.5f);
  CHECK_THROWS_AS(ssim(a, b), UsageError);
  auto tiny = constant_image(8, 8, 0.5f);
  CHECK_THROWS_AS(ssim(tiny, tiny), UsageError);
}

TEST_CASE("temporal distance zero cases and hand toy") {
  auto c50 = constant_image(16, 16, 0.50f);
  auto c25 = constant_image(16, 16, 0.25f);

  std::vector<ImageF> gt = {c50, c25, c50};
  CHECK_THROWS_AS(temporal_distance(gt, {c50, c25}, one_minus_ssim()), UsageError);

  // synth == gt -> zero everywhere
  auto zeros = temporal_distance(gt, gt, one_minus_ssim());
  for (double v : zeros) CHECK(v == 0.0);

  // temporally constant synth vs temporally constant gt -> 0
  std::vector<ImageF> flat_a = {c50, c50, c50};
  std::vector<ImageF> flat_b = {c25, c25, c25};
  for (double v : temporal_distance(flat_a, flat_b, one_minus_ssim())) CHECK(v == 0.0);

  // hand-built 3-frame toy with known constant-image ssims
  double d_change = 1.0 - (2 * 0.125 + 1e-4) / (0.3125 + 1e-4);
  std::vector<ImageF> synth = {c50, c25, c25};  // s: change then hold
  std::vector<ImageF> ref = {c50, c50, c25};    // g: hold then change
  auto td = temporal_distance(synth, ref, one_minus_ssim());
  REQUIRE(td.size() == 2);
  CHECK(td[0] == doctest::Approx(d_change).epsilon(1e-12));
  CHECK(td[1] == doctest::Approx(d_change).epsilon(1e-12));
}

TEST_CASE("projection error hand cases") {
  auto body = geom::procedural_body();
  render::Camera cam{32, 32, 50.0, 64, 64};
  std::mt19937_64 rng(3);

  std::vector<geom::PoseFrame> gt;
  for (int t = 0; t < 3; ++t) {
    geom::PoseFrame f;
    f.theta.assign(48, 0.0);
    for (auto& x : f.theta) x = 0.2 * gauss(rng);
    f.beta.assign(2, 0.0);
    f.camera = {32.0, 32.0, 50.0};
    gt.push_back(f);
  }

  auto zero = projection_error(body, gt, gt, cam);
  for (double e : zero) CHECK(e == 0.0);

  // pure camera shift moves every projection equally
  auto pred = gt;
  for (auto& f : pred) {
    f.camera.cx += 3.0;
    f.camera.cy -= 4.0;
  }
  auto err = projection_error(body, pred, gt, cam);
  for (double e : err) CHECK(e == doctest::Approx(5.0).epsilon(1e-12));

  // invariance: the same rigid shift added to both changes nothing
  auto gt2 = gt;
  auto pred2 = pred;
  for (auto& f : gt2) {
    f.camera.cx += 7.0;
    f.camera.cy += 1.0;
  }
  for (auto& f : pred2) {
    f.camera.cx += 7.0;
    f.camera.cy += 1.0;
  }
  auto err2 = projection_error(body, pred2, gt2, cam);
  for (size_t i = 0; i < err.size(); ++i) CHECK(err2[i] == doctest::Approx(err[i]).epsilon(1e-12));
}

TEST_CASE("metric report aggregates") {
  auto a = random_image(24, 24, 3, 1);
  auto b = random_image(24, 24, 3, 2);
  std::vector<ImageF> synth = {a, b, a};
  auto report = build_report(synth, synth, one_minus_ssim());
  CHECK(report.ssim_mean == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.t_mean == 0.0);
  CHECK(report.ssim_per_frame.size() == 3);
  CHECK(report.t_distance.size() == 2);
}
