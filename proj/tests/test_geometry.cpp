#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "dyn/geometry.hpp"

using namespace dyn;
using namespace dyn::geom;

namespace {

// Minimal 2-joint chain: root at origin, elbow at (1,0,0), one forearm vertex
// fully weighted to the elbow.
CanonicalBody two_joint_chain() {
  CanonicalBody body;
  body.joints.push_back({"root", -1, {0, 0, 0}});
  body.joints.push_back({"elbow", 0, {1, 0, 0}});
  body.vertices.push_back({1.5, 0.5, 0.0});
  body.skin_weights.push_back({{1, 1.0}});
  return body;
}

PoseFrame zero_frame(const CanonicalBody& body) {
  PoseFrame f;
  f.theta.assign(size_t(3 * body.joint_count()), 0.0);
  f.beta.assign(size_t(body.blendshape_count()), 0.0);
  return f;
}

// Mesh validity oracle: per chart shell, every undirected edge is shared by
// exactly two faces with opposite direction, Euler characteristic is 2, and
// the signed volume is positive.
void check_watertight_shells(const CanonicalBody& body) {
  int charts = int(body.charts.size());
  for (int c = 0; c < charts; ++c) {
    std::map<std::pair<int, int>, int> directed;
    std::set<int> used_vertices;
    int face_count = 0;
    double volume6 = 0;
    for (size_t f = 0; f < body.faces.size(); ++f) {
      if (body.face_chart[f] != c) continue;
      ++face_count;
      const auto& face = body.faces[f];
      for (int e = 0; e < 3; ++e) {
        int a = face[size_t(e)], b = face[size_t((e + 1) % 3)];
        ++directed[{a, b}];
        used_vertices.insert(a);
      }
      const Vec3d& p0 = body.vertices[size_t(face[0])];
      const Vec3d& p1 = body.vertices[size_t(face[1])];
      const Vec3d& p2 = body.vertices[size_t(face[2])];
      volume6 += p0.dot(p1.cross(p2));
    }
    REQUIRE(face_count > 0);
    size_t edge_count = 0;
    for (const auto& [edge, count] : directed) {
      CHECK(count == 1);  // each directed edge once => consistent winding
      auto rev = directed.find({edge.second, edge.first});
      REQUIRE(rev != directed.end());
      CHECK(rev->second == 1);
      ++edge_count;
    }
    long v = long(used_vertices.size());
    long e = long(edge_count) / 2;
    long f = face_count;
    CHECK(v - e + f == 2);
    CHECK(volume6 > 0);
  }
}

}  // namespace

TEST_CASE("identity pose reproduces canonical vertices bit-exactly") {
  auto body = procedural_body();
  auto mesh = pose(body, zero_frame(body));
  REQUIRE(mesh.positions.size() == body.vertices.size());
  for (size_t v = 0; v < body.vertices.size(); ++v) {
    CHECK(mesh.positions[v].x == body.vertices[v].x);
    CHECK(mesh.positions[v].y == body.vertices[v].y);
    CHECK(mesh.positions[v].z == body.vertices[v].z);
  }
}

TEST_CASE("rigid root rotation rotates positions and vertex rotations") {
  auto body = procedural_body();
  Mat3d r = axis_angle_to_matrix(Vec3d{0.3, -1.1, 0.55});
  PoseFrame frame = with_root_rotation(zero_frame(body), r);
  auto mesh = pose(body, frame);
  for (size_t v = 0; v < body.vertices.size(); v += 97) {
    Vec3d expect = r * body.vertices[v];
    CHECK(mesh.positions[v].x == doctest::Approx(expect.x).epsilon(1e-12));
    CHECK(mesh.positions[v].y == doctest::Approx(expect.y).epsilon(1e-12));
    CHECK(mesh.positions[v].z == doctest::Approx(expect.z).epsilon(1e-12));
    for (int k = 0; k < 9; ++k)
      CHECK(mesh.vertex_rotations[v].m[size_t(k)] == doctest::Approx(r.m[size_t(k)]).epsilon(1e-9));
  }
}

TEST_CASE("bent elbow matches the hand-composed rigid chain") {
  auto body = two_joint_chain();
  PoseFrame frame = zero_frame(body);
  frame.theta[5] = 1.5707963267948966;  // elbow +90 deg about z
  auto mesh = pose(body, frame);
  // hand evaluation: v - elbow = (0.5, 0.5, 0), Rz(90) -> (-0.5, 0.5, 0),
  // plus elbow back = (0.5, 0.5, 0)
  CHECK(mesh.positions[0].x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mesh.positions[0].y == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mesh.positions[0].z == doctest::Approx(0.0).epsilon(1e-12));

  // inverse_skin on a rotated normal returns the pre-rotation vector
  Mat3d rz = axis_angle_to_matrix(Vec3d{0, 0, 1.5707963267948966});
  Vec3d n{0.2, -0.4, 0.6};
  auto undone = inverse_skin(mesh, {rz * n});
  CHECK(undone[0].x == doctest::Approx(n.x).epsilon(1e-12));
  CHECK(undone[0].y == doctest::Approx(n.y).epsilon(1e-12));
  CHECK(undone[0].z == doctest::Approx(n.z).epsilon(1e-12));
}

TEST_CASE("pose rejects wrong parameter sizes") {
  auto body = two_joint_chain();
  PoseFrame frame = zero_frame(body);
  frame.theta.pop_back();
  CHECK_THROWS_AS(pose(body, frame), UsageError);
}

TEST_CASE("procedural body meets budget, is valid, deterministic, monotone") {
  auto body = procedural_body();
  CHECK(body.joint_count() == 16);
  CHECK(body.vertex_count() >= 1800);
  CHECK(body.vertex_count() <= 2200);
  body.validate();
  check_watertight_shells(body);

  // all six foreground labels present
  std::set<int> labels(body.part_labels.begin(), body.part_labels.end());
  CHECK(labels == std::set<int>{1, 2, 3, 4, 5, 6});

  auto body2 = procedural_body();
  CHECK(body.vertices.size() == body2.vertices.size());
  bool identical = true;
  for (size_t v = 0; v < body.vertices.size(); ++v)
    identical = identical && body.vertices[v].x == body2.vertices[v].x &&
                body.vertices[v].y == body2.vertices[v].y && body.vertices[v].z == body2.vertices[v].z;
  CHECK(identical);

  ProceduralConfig doubled;
  doubled.limb_subdiv = 2;
  auto body3 = procedural_body(doubled);
  CHECK(body3.vertex_count() > body.vertex_count());

  ProceduralConfig tiny;
  tiny.vertex_budget = 10;
  CHECK_THROWS_AS(procedural_body(tiny), UsageError);
}

TEST_CASE("rigid equivariance holds for posed frames") {
  auto body = procedural_body();
  std::mt19937_64 rng(21);
  PoseFrame frame = zero_frame(body);
  for (auto& t : frame.theta) t = 0.25 * gauss(rng);
  frame.beta = {0.4, -0.3};
  auto base = pose(body, frame);

  Mat3d r = axis_angle_to_matrix(Vec3d{gauss(rng), gauss(rng), gauss(rng)});
  auto rotated = pose(body, with_root_rotation(frame, r));
  for (size_t v = 0; v < base.positions.size(); v += 13) {
    Vec3d expect = r * base.positions[v];
    CHECK(std::abs(rotated.positions[v].x - expect.x) < 1e-9);
    CHECK(std::abs(rotated.positions[v].y - expect.y) < 1e-9);
    CHECK(std::abs(rotated.positions[v].z - expect.z) < 1e-9);
  }
}

TEST_CASE("inverse_skin undoes the blended rotation") {
  auto body = procedural_body();
  std::mt19937_64 rng(33);
  PoseFrame frame = zero_frame(body);
  for (auto& t : frame.theta) t = 0.3 * gauss(rng);
  auto mesh = pose(body, frame);
  std::vector<Vec3d> vectors(mesh.positions.size());
  for (auto& v : vectors) v = {gauss(rng), gauss(rng), gauss(rng)};
  std::vector<Vec3d> worn(vectors.size());
  for (size_t i = 0; i < vectors.size(); ++i) worn[i] = mesh.vertex_rotations[i] * vectors[i];
  auto undone = inverse_skin(mesh, worn);
  for (size_t i = 0; i < vectors.size(); i += 11) {
    CHECK(std::abs(undone[i].x - vectors[i].x) < 1e-9);
    CHECK(std::abs(undone[i].y - vectors[i].y) < 1e-9);
    CHECK(std::abs(undone[i].z - vectors[i].z) < 1e-9);
  }
}

TEST_CASE("obj + sidecar round trip preserves the body") {
  auto body = procedural_body();
  auto dir = std::filesystem::temp_directory_path() / "dyn_test_geom";
  std::filesystem::create_directories(dir);
  auto path = dir / "body.obj";
  save_body(path, body);
  auto back = load_body(path);

  REQUIRE(back.vertices.size() == body.vertices.size());
  for (size_t v = 0; v < body.vertices.size(); ++v) {
    CHECK(back.vertices[v].x == body.vertices[v].x);
    CHECK(back.vertices[v].y == body.vertices[v].y);
    CHECK(back.vertices[v].z == body.vertices[v].z);
  }
  REQUIRE(back.skin_weights.size() == body.skin_weights.size());
  for (size_t v = 0; v < body.skin_weights.size(); ++v) {
    double sum = 0;
    for (const auto& in : back.skin_weights[v]) sum += in.weight;
    CHECK(std::abs(sum - 1.0) <= 1e-9);  // partition of unity survives the trip
  }
  CHECK(back.part_labels == body.part_labels);
  CHECK(back.faces == body.faces);
  back.validate();
}
