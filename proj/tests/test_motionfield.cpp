#include <doctest.h>

#include <map>
#include <random>

#include "dyn/motionfield.hpp"

using namespace dyn;
using namespace dyn::geom;
using namespace dyn::motion;

namespace {

PoseFrame zero_frame(const CanonicalBody& body) {
  PoseFrame f;
  f.theta.assign(size_t(3 * body.joint_count()), 0.0);
  f.beta.assign(size_t(body.blendshape_count()), 0.0);
  return f;
}

// Icosphere for the normals oracle: subdivide an icosahedron, project to the
// unit sphere.
void icosphere(std::vector<Vec3d>& verts, std::vector<std::array<int, 3>>& faces, int levels) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  verts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
           {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v = v.normalized();
  faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
           {5, 11, 4}, {11, 10, 2}, {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
           {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
           {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find({key.first, key.second});
      if (it != midpoint.end()) return it->second;
      Vec3d m = ((verts[size_t(a)] + verts[size_t(b)]) * 0.5).normalized();
      verts.push_back(m);
      int id = int(verts.size()) - 1;
      midpoint[{key.first, key.second}] = id;
      return id;
    };
    std::vector<std::array<int, 3>> next;
    for (auto& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
}

}  // namespace

TEST_CASE("flat quad gets straight-up normals") {
  std::vector<Vec3d> verts = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {0, 2, 3}};
  auto normals = surface_normals(verts, faces);
  for (const auto& n : normals) {
    CHECK(n.x == doctest::Approx(0.0));
    CHECK(n.y == doctest::Approx(0.0));
    CHECK(n.z == doctest::Approx(1.0));
  }
}

TEST_CASE("icosphere normals approximate positions") {
  std::vector<Vec3d> verts;
  std::vector<std::array<int, 3>> faces;
  icosphere(verts, faces, 3);
  auto normals = surface_normals(verts, faces);
  for (size_t v = 0; v < verts.size(); ++v) {
    CHECK(std::abs(normals[v].x - verts[v].x) < 1e-2);
    CHECK(std::abs(normals[v].y - verts[v].y) < 1e-2);
    CHECK(std::abs(normals[v].z - verts[v].z) < 1e-2);
  }
}

TEST_CASE("normals are equivariant to rigid rotation") {
  auto body = procedural_body();
  auto mesh = pose(body, zero_frame(body));
  auto normals = surface_normals(mesh.positions, body.faces);
  Mat3d r = axis_angle_to_matrix(Vec3d{0.4, 0.2, -0.9});
  std::vector<Vec3d> rotated(mesh.positions.size());
  for (size_t v = 0; v < rotated.size(); ++v) rotated[v] = r * mesh.positions[v];
  auto rot_normals = surface_normals(rotated, body.faces);
  for (size_t v = 0; v < normals.size(); v += 31) {
    Vec3d expect = r * normals[v];
    CHECK(std::abs(rot_normals[v].x - expect.x) < 1e-12);
    CHECK(std::abs(rot_normals[v].y - expect.y) < 1e-12);
    CHECK(std::abs(rot_normals[v].z - expect.z) < 1e-12);
  }
}

TEST_CASE("isolated vertex is an error") {
  std::vector<Vec3d> verts = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 5}};
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}};
  CHECK_THROWS_AS(surface_normals(verts, faces), DataError);
}

TEST_CASE("velocities: hand finite differences, static case, zero padding") {
  std::vector<std::vector<Vec3d>> frames;
  for (int t = 0; t < 3; ++t) {
    std::vector<Vec3d> pos = {{0, 0, double(t)}, {1, 0, double(t)}};
    frames.push_back(pos);
  }
  std::vector<const std::vector<Vec3d>*> history;
  for (auto& f : frames) history.push_back(&f);

  auto [slabs, valid] = velocities<double>(history, 10);
  REQUIRE(slabs.size() == 10);
  // slots 1-2 populated with (0,0,1), slots 3-10 zero and unflagged
  for (int k = 0; k < 2; ++k) {
    CHECK(valid[size_t(k)] == 1);
    for (const auto& v : slabs[size_t(k)]) {
      CHECK(v.x == 0.0);
      CHECK(v.y == 0.0);
      CHECK(v.z == doctest::Approx(1.0));
    }
  }
  for (int k = 2; k < 10; ++k) {
    CHECK(valid[size_t(k)] == 0);
    for (const auto& v : slabs[size_t(k)]) CHECK(v.norm() == 0.0);
  }

  // static sequence -> all zeros
  std::vector<std::vector<Vec3d>> still(5, frames[0]);
  std::vector<const std::vector<Vec3d>*> still_hist;
  for (auto& f : still) still_hist.push_back(&f);
  auto [s2, v2] = velocities<double>(still_hist, 4);
  for (const auto& slab : s2)
    for (const auto& v : slab) CHECK(v.norm() == 0.0);

  std::vector<const std::vector<Vec3d>*> empty;
  CHECK_THROWS_AS(velocities<double>(empty, 4), UsageError);
}

TEST_CASE("velocity linearity under displacement scaling") {
  std::mt19937_64 rng(17);
  std::vector<std::vector<Vec3d>> base(4, std::vector<Vec3d>(5));
  for (auto& f : base)
    for (auto& p : f) p = {gauss(rng), gauss(rng), gauss(rng)};
  double a = 2.75;
  std::vector<std::vector<Vec3d>> scaled = base;
  for (size_t t = 1; t < scaled.size(); ++t)
    for (size_t v = 0; v < scaled[t].size(); ++v)
      scaled[t][v] = base[0][v] + (base[t][v] - base[0][v]) * a;

  std::vector<const std::vector<Vec3d>*> h1, h2;
  for (auto& f : base) h1.push_back(&f);
  for (auto& f : scaled) h2.push_back(&f);
  auto [s1, f1] = velocities<double>(h1, 3);
  auto [s2, f2] = velocities<double>(h2, 3);
  for (size_t k = 0; k < s1.size(); ++k)
    for (size_t v = 0; v < s1[k].size(); ++v) {
      CHECK(s2[k][v].x == doctest::Approx(a * s1[k][v].x).epsilon(1e-12));
      CHECK(s2[k][v].y == doctest::Approx(a * s1[k][v].y).epsilon(1e-12));
      CHECK(s2[k][v].z == doctest::Approx(a * s1[k][v].z).epsilon(1e-12));
    }
}

TEST_CASE("canonicalized derivatives are invariant to a constant rigid transform") {
  auto body = procedural_body();
  std::mt19937_64 rng(8);
  const int frames = 6, slabs = 4;

  auto make_frame = [&](int t) {
    PoseFrame f = zero_frame(body);
    for (size_t i = 0; i < f.theta.size(); ++i)
      f.theta[i] = 0.2 * std::sin(0.3 * double(t) + double(i));
    return f;
  };

  Mat3d r = axis_angle_to_matrix(Vec3d{gauss(rng), gauss(rng), gauss(rng)});

  auto run_pipeline = [&](bool rotated) {
    std::vector<std::vector<Vec3d>> positions;
    PosedMesh current;
    for (int t = 0; t < frames; ++t) {
      PoseFrame f = make_frame(t);
      if (rotated) f = with_root_rotation(f, r);
      auto mesh = pose(body, f);
      positions.push_back(mesh.positions);
      if (t == frames - 1) current = mesh;
    }
    std::vector<const std::vector<Vec3d>*> hist;
    for (auto& p : positions) hist.push_back(&p);
    auto normals = surface_normals(positions.back(), body.faces);
    auto [vel, valid] = velocities<double>(hist, slabs);
    return canonicalize(current, normals, vel, valid);
  };

  auto plain = run_pipeline(false);
  auto moved = run_pipeline(true);
  for (size_t v = 0; v < plain.normals.size(); v += 17) {
    CHECK(std::abs(plain.normals[v].x - moved.normals[v].x) < 1e-9);
    CHECK(std::abs(plain.normals[v].y - moved.normals[v].y) < 1e-9);
    CHECK(std::abs(plain.normals[v].z - moved.normals[v].z) < 1e-9);
    CHECK(std::abs(plain.normals[v].norm() - 1.0) < 1e-6);  // unit preserved
  }
  for (size_t k = 0; k < plain.velocities.size(); ++k)
    for (size_t v = 0; v < plain.velocities[k].size(); v += 29) {
      CHECK(std::abs(plain.velocities[k][v].x - moved.velocities[k][v].x) < 1e-9);
      CHECK(std::abs(plain.velocities[k][v].y - moved.velocities[k][v].y) < 1e-9);
      CHECK(std::abs(plain.velocities[k][v].z - moved.velocities[k][v].z) < 1e-9);
    }
}

TEST_CASE("constant world translation cancels in velocities and normals") {
  auto body = procedural_body();
  auto frame = zero_frame(body);
  auto mesh = pose(body, frame);

  std::vector<std::vector<Vec3d>> plain(3, mesh.positions);
  for (size_t t = 0; t < plain.size(); ++t)
    for (auto& p : plain[t]) p.z += 0.01 * double(t);
  std::vector<std::vector<Vec3d>> shifted = plain;
  for (auto& f : shifted)
    for (auto& p : f) p += Vec3d{5, -3, 2};

  std::vector<const std::vector<Vec3d>*> h1, h2;
  for (auto& f : plain) h1.push_back(&f);
  for (auto& f : shifted) h2.push_back(&f);
  auto [s1, v1] = velocities<double>(h1, 2);
  auto [s2, v2] = velocities<double>(h2, 2);
  for (size_t k = 0; k < s1.size(); ++k)
    for (size_t v = 0; v < s1[k].size(); v += 41) {
      CHECK(s1[k][v].x == doctest::Approx(s2[k][v].x).epsilon(1e-12));
      CHECK(s1[k][v].z == doctest::Approx(s2[k][v].z).epsilon(1e-12));
    }
  auto n1 = surface_normals(plain.back(), body.faces);
  auto n2 = surface_normals(shifted.back(), body.faces);
  for (size_t v = 0; v < n1.size(); v += 53) {
    CHECK(n1[v].x == doctest::Approx(n2[v].x).epsilon(1e-12));
    CHECK(n1[v].y == doctest::Approx(n2[v].y).epsilon(1e-12));
  }
}
