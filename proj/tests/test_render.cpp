#include <doctest.h>

#include <random>

#include "dyn/render.hpp"

using namespace dyn;
using namespace dyn::geom;
using namespace dyn::render;

namespace {

PoseFrame zero_frame(const CanonicalBody& body) {
  PoseFrame f;
  f.theta.assign(size_t(3 * body.joint_count()), 0.0);
  f.beta.assign(size_t(body.blendshape_count()), 0.0);
  return f;
}

// Independent closest-hit oracle: per pixel, test every triangle with its own
// barycentric formulation and keep the nearest depth; ties keep the lower
// triangle index. Coverage uses the documented texel-center + edge rule.
struct OracleHit {
  bool hit = false;
  double depth = 0;
  int tri = -1;
  double u = 0, v = 0;
  int part = 0;
};

double oracle_edge(Vec2d a, Vec2d b, Vec2d p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

bool oracle_accepts(double e, Vec2d a, Vec2d b) {
  if (e > 0) return true;
  if (e < 0) return false;
  double dy = b.y - a.y, dx = b.x - a.x;
  return dy < 0 || (dy == 0 && dx > 0);
}

OracleHit oracle_pixel(const CanonicalBody& body, const std::vector<Vec3d>& pos, const Camera& cam,
                       int px, int py) {
  OracleHit best;
  Vec2d p{px + 0.5, py + 0.5};
  for (size_t f = 0; f < body.faces.size(); ++f) {
    const auto& face = body.faces[f];
    Vec2d a = project(cam, pos[size_t(face[0])]);
    Vec2d b = project(cam, pos[size_t(face[1])]);
    Vec2d c = project(cam, pos[size_t(face[2])]);
    double za = pos[size_t(face[0])].z, zb = pos[size_t(face[1])].z, zc = pos[size_t(face[2])].z;
    double area = oracle_edge(a, b, c);
    if (area == 0) continue;
    Vec2d b2 = b, c2 = c;
    double zb2 = zb, zc2 = zc;
    bool flipped = area < 0;
    if (flipped) {
      std::swap(b2, c2);
      std::swap(zb2, zc2);
      area = -area;
    }
    double e0 = oracle_edge(b2, c2, p);
    double e1 = oracle_edge(c2, a, p);
    double e2 = oracle_edge(a, b2, p);
    if (!oracle_accepts(e0, b2, c2) || !oracle_accepts(e1, c2, a) || !oracle_accepts(e2, a, b2))
      continue;
    double w0 = e0 / area, w1 = e1 / area, w2 = e2 / area;
    double z = w0 * za + w1 * zb2 + w2 * zc2;
    if (best.hit && !(z < best.depth)) continue;
    best.hit = true;
    best.depth = z;
    best.tri = int(f);
    if (flipped) std::swap(w1, w2);
    const auto& uvc = body.uv_corners[f];
    best.u = w0 * uvc[0].x + w1 * uvc[1].x + w2 * uvc[2].x;
    best.v = w0 * uvc[0].y + w1 * uvc[1].y + w2 * uvc[2].y;
    best.part = body.part_labels[f];
  }
  return best;
}

}  // namespace

TEST_CASE("weak perspective projection hand cases") {
  Camera cam;
  cam.w = cam.h = 16;
  cam.cx = 0;
  cam.cy = 0;
  cam.s = 1;
  auto p = project(cam, {0, 0, 5});
  CHECK(p.x == 0.0);
  CHECK(p.y == 0.0);

  Camera cam2{0.5, -0.5, 2.0, 16, 16};
  auto q = project(cam2, {1, 2, 5});
  CHECK(q.x == doctest::Approx(2.5));
  CHECK(q.y == doctest::Approx(3.5));

  // doubling s doubles offsets from (cx, cy)
  Camera cam3 = cam2;
  cam3.s = 4.0;
  auto r = project(cam3, {1, 2, 5});
  CHECK(r.x - cam3.cx == doctest::Approx(2 * (q.x - cam2.cx)));
  CHECK(r.y - cam3.cy == doctest::Approx(2 * (q.y - cam2.cy)));
}

TEST_CASE("single front-facing triangle renders constant attributes") {
  std::vector<Vec3d> pos = {{-10, -10, 1}, {30, -10, 1}, {-10, 30, 1}};
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}};
  std::vector<int> labels = {3};
  std::vector<double> attrs = {7, 7, 7};  // one channel, constant
  RasterChunk chunk;
  chunk.positions = &pos;
  chunk.faces = &faces;
  chunk.part_labels = &labels;
  chunk.vertex_attrs = &attrs;
  chunk.attr_channels = 1;
  Camera cam{8, 8, 1.0, 16, 16};
  auto frame = rasterize(std::span<const RasterChunk>(&chunk, 1), cam);
  int on = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      size_t pi = frame.pixel(x, y);
      if (!frame.mask[pi]) continue;
      ++on;
      CHECK(frame.part[pi] == 3);
      CHECK(frame.attrs[pi] == doctest::Approx(7.0));
      CHECK(frame.depth[pi] == doctest::Approx(1.0));
    }
  CHECK(on > 100);
}

TEST_CASE("z-buffer keeps the nearer of two overlapping triangles") {
  std::vector<Vec3d> pos = {{-10, -10, 2}, {30, -10, 2}, {-10, 30, 2},
                            {-10, -10, 1}, {30, -10, 1}, {-10, 30, 1}};
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {3, 4, 5}};
  std::vector<int> labels = {1, 2};
  RasterChunk chunk;
  chunk.positions = &pos;
  chunk.faces = &faces;
  chunk.part_labels = &labels;
  Camera cam{8, 8, 1.0, 16, 16};
  auto frame = rasterize(std::span<const RasterChunk>(&chunk, 1), cam);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      size_t pi = frame.pixel(x, y);
      if (!frame.mask[pi]) continue;
      CHECK(frame.part[pi] == 2);  // depth-1 triangle wins
      CHECK(frame.depth[pi] == doctest::Approx(1.0));
    }
}

TEST_CASE("default body IUV matches the brute-force closest-hit oracle on 32x32") {
  auto body = procedural_body();
  std::mt19937_64 rng(12);
  PoseFrame frame = zero_frame(body);
  for (auto& t : frame.theta) t = 0.2 * gauss(rng);
  auto pos = pose_positions(body, frame);
  Camera cam{16, 12, 16.0, 32, 32};
  auto got = rasterize_body(body, pos, cam);

  int hits = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      auto expect = oracle_pixel(body, pos, cam, x, y);
      size_t pi = got.pixel(x, y);
      REQUIRE(bool(got.mask[pi]) == expect.hit);
      if (!expect.hit) continue;
      ++hits;
      // bit-identical attribute selection
      CHECK(got.tri[pi] == expect.tri);
      CHECK(got.depth[pi] == expect.depth);
      CHECK(got.uvmap[2 * pi] == expect.u);
      CHECK(got.uvmap[2 * pi + 1] == expect.v);
      CHECK(got.part[pi] == expect.part);
    }
  CHECK(hits > 100);
}

TEST_CASE("rasterize is deterministic and flags empty projections") {
  auto body = procedural_body();
  auto pos = pose_positions(body, zero_frame(body));
  Camera cam{24, 24, 20.0, 48, 48};
  auto f1 = rasterize_body(body, pos, cam);
  auto f2 = rasterize_body(body, pos, cam);
  CHECK(f1.depth == f2.depth);
  CHECK(f1.uvmap == f2.uvmap);
  CHECK(f1.mask == f2.mask);

  Camera off{3000, 3000, 10.0, 32, 32};
  auto empty = rasterize_body(body, pos, off);
  CHECK(empty.empty_projection);
  for (auto m : empty.mask) CHECK(m == 0);
}

TEST_CASE("transport equals direct sampling at every masked pixel (32x32)") {
  auto body = procedural_body();
  auto pos = pose_positions(body, zero_frame(body));
  Camera cam{16, 16, 14.0, 32, 32};
  auto frame = rasterize_body(body, pos, cam);

  std::vector<double> field(size_t(body.vertex_count()) * 2);
  for (size_t i = 0; i < field.size(); ++i) field[i] = std::sin(0.05 * double(i));
  auto grid = uv::bake(body, field, 2, 64);

  auto feat = transport(grid, frame);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      size_t pi = frame.pixel(x, y);
      if (!frame.mask[pi]) {
        CHECK(feat[2 * pi] == 0.0);
        continue;
      }
      auto direct = uv::sample(grid, Vec2d{frame.uvmap[2 * pi], frame.uvmap[2 * pi + 1]});
      CHECK(feat[2 * pi] == direct.value[0]);
      CHECK(feat[2 * pi + 1] == direct.value[1]);
    }
}

TEST_CASE("pixels with equal IUV receive equal transported features") {
  auto body = procedural_body();
  auto pos = pose_positions(body, zero_frame(body));
  Camera cam{20, 20, 16.0, 40, 40};
  auto frame = rasterize_body(body, pos, cam);
  std::vector<double> field(size_t(body.vertex_count()), 1.25);
  auto grid = uv::bake(body, field, 1, 64);
  auto feat = transport(grid, frame);
  // constant descriptor -> constant transported feature on mask
  for (int i = 0; i < 40 * 40; ++i)
    if (frame.mask[size_t(i)]) CHECK(feat[size_t(i)] == doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("in-plane camera translation shifts transported features") {
  auto body = procedural_body();
  auto pos = pose_positions(body, zero_frame(body));
  Camera cam{16, 16, 14.0, 48, 48};
  Camera shifted = cam;
  shifted.cx += 5;
  shifted.cy += 3;
  std::vector<double> field(size_t(body.vertex_count()));
  for (size_t i = 0; i < field.size(); ++i) field[i] = std::cos(0.02 * double(i));
  auto grid = uv::bake(body, field, 1, 64);

  auto f1 = rasterize_body(body, pos, cam);
  auto f2 = rasterize_body(body, pos, shifted);
  auto t1 = transport(grid, f1);
  auto t2 = transport(grid, f2);
  for (int y = 0; y < 48 - 3; ++y)
    for (int x = 0; x < 48 - 5; ++x) {
      size_t p1 = f1.pixel(x, y);
      size_t p2 = f2.pixel(x + 5, y + 3);
      CHECK(bool(f1.mask[p1]) == bool(f2.mask[p2]));
      if (f1.mask[p1]) CHECK(t1[p1] == doctest::Approx(t2[p2]).epsilon(1e-12));
    }
}

TEST_CASE("relight hand cases") {
  int w = 4, h = 1;
  std::vector<double> app = {0.8, 0.6, 0.4, 0.8, 0.6, 0.4, 0.8, 0.6, 0.4, 0.8, 0.6, 0.4};
  std::vector<uint8_t> mask = {1, 1, 1, 0};
  // n = l everywhere, ambient 0 -> appearance unchanged
  std::vector<double> normals = {0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1};
  auto out = relight(app, normals, mask, w, h, {0, 0, 1}, 0.0);
  for (int i = 0; i < 9; ++i) CHECK(out[size_t(i)] == doctest::Approx(app[size_t(i)]));
  CHECK(out[9] == 0.0);  // off-mask zeroed

  // l perpendicular to n, ambient 0 -> black
  auto dark = relight(app, normals, mask, w, h, {1, 0, 0}, 0.0);
  for (int i = 0; i < 9; ++i) CHECK(dark[size_t(i)] == 0.0);

  // n.l = 0.5, ambient 0.2 -> factor 0.6
  std::vector<double> slanted(12);
  for (int i = 0; i < 4; ++i) {
    slanted[size_t(3 * i)] = std::sqrt(3.0) / 2.0;
    slanted[size_t(3 * i) + 2] = 0.5;
  }
  auto half = relight(app, slanted, mask, w, h, {0, 0, 1}, 0.2);
  for (int i = 0; i < 3; ++i) CHECK(half[size_t(i)] == doctest::Approx(app[size_t(i)] * 0.6));

  bool warned = false;
  relight(app, normals, mask, w, h, {0, 0, 2}, 0.0, &warned);
  CHECK(warned);
}
