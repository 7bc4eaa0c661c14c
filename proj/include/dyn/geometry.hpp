#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dyn/error.hpp"
#include "dyn/math.hpp"

namespace dyn::geom {

template <class S>
struct SkinInfluence {
  int joint = -1;
  S weight = 0;
};

template <class S>
struct UvRect {
  Vec2<S> lo, hi;
  bool contains(const Vec2<S>& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
};

// Semantic ids shared across the pipeline (0 is background in image space).
enum PartLabel : int {
  kBackground = 0,
  kTopClothing = 1,
  kBottomClothing = 2,
  kFace = 3,
  kHair = 4,
  kSkin = 5,
  kShoes = 6,
  kNumLabels = 7,
};

template <class S>
struct CanonicalBodyT {
  struct Joint {
    std::string name;
    int parent = -1;  // tree rooted at joint 0 (pelvis)
    Vec3<S> offset;   // rest offset from parent
  };
  struct Chart {
    std::string name;
    UvRect<S> rect;
  };

  std::vector<Vec3<S>> vertices;                    // rest pose, meters
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec2<S>, 3>> uv_corners;   // per face corner, in [0,1]^2
  std::vector<Joint> joints;
  std::vector<std::vector<SkinInfluence<S>>> skin_weights;  // <= 4 per vertex, sum 1
  std::vector<std::vector<Vec3<S>>> blendshapes;            // B fields of m offsets
  std::vector<int> part_labels;                             // per face, 1..6
  std::vector<Chart> charts;
  std::vector<int> face_chart;                              // per face chart index

  int vertex_count() const { return int(vertices.size()); }
  int face_count() const { return int(faces.size()); }
  int joint_count() const { return int(joints.size()); }
  int blendshape_count() const { return int(blendshapes.size()); }

  void validate() const;

  template <class T>
  CanonicalBodyT<T> cast() const;
};

template <class S>
struct WeakPerspectiveT {
  S cx = 0, cy = 0;  // image-plane translation, pixels
  S s = 1;           // scale, pixels per meter (> 0)
};

template <class S>
struct PoseFrameT {
  std::vector<S> theta;  // 3J axis-angle, root included
  std::vector<S> beta;   // B shape coefficients, constant per sequence
  WeakPerspectiveT<S> camera;

  Vec3<S> joint_rotation(int j) const {
    return {theta[size_t(3 * j)], theta[size_t(3 * j + 1)], theta[size_t(3 * j + 2)]};
  }
};

template <class S>
struct PosedMeshT {
  std::vector<Vec3<S>> positions;
  std::vector<Mat3<S>> vertex_rotations;   // blended skinning rotation, orthonormalized
  std::vector<Transform<S>> joint_transforms;  // skinning transforms rest -> posed
};

using CanonicalBody = CanonicalBodyT<double>;
using PoseFrame = PoseFrameT<double>;
using PosedMesh = PosedMeshT<double>;
using WeakPerspective = WeakPerspectiveT<double>;

// --- implementation ---

template <class S>
void CanonicalBodyT<S>::validate() const {
  size_t m = vertices.size();
  require_data(skin_weights.size() == m, "skin weight count != vertex count");
  require_data(uv_corners.size() == faces.size(), "uv corner count != face count");
  require_data(part_labels.size() == faces.size(), "part label count != face count");
  require_data(!joints.empty() && joints[0].parent == -1, "joint 0 must be the root");
  for (size_t j = 1; j < joints.size(); ++j)
    require_data(joints[j].parent >= 0 && joints[j].parent < int(j),
                 "joint parents must form a tree (parent index < child)");
  for (size_t v = 0; v < m; ++v) {
    S sum = 0;
    for (const auto& in : skin_weights[v]) {
      require_data(in.joint >= 0 && in.joint < int(joints.size()), "skin weight joint out of range");
      require_data(in.weight >= S(0), "negative skin weight");
      sum += in.weight;
    }
    require_data(std::abs(double(sum) - 1.0) <= 1e-9, "skin weights must sum to 1");
    require_data(skin_weights[v].size() <= 4, "more than 4 skin influences");
  }
  for (size_t f = 0; f < faces.size(); ++f) {
    for (int c = 0; c < 3; ++c) {
      require_data(faces[f][size_t(c)] >= 0 && faces[f][size_t(c)] < int(m), "face index out of range");
      const auto& uv = uv_corners[f][size_t(c)];
      require_data(uv.x >= S(0) && uv.x <= S(1) && uv.y >= S(0) && uv.y <= S(1),
                   "uv corner outside [0,1]^2");
    }
    require_data(part_labels[f] >= 1 && part_labels[f] <= 6, "part label outside 1..6");
  }
  for (const auto& bs : blendshapes)
    require_data(bs.size() == m, "blendshape size != vertex count");
}

template <class S>
template <class T>
CanonicalBodyT<T> CanonicalBodyT<S>::cast() const {
  CanonicalBodyT<T> out;
  out.vertices.reserve(vertices.size());
  for (const auto& v : vertices) out.vertices.push_back({T(v.x), T(v.y), T(v.z)});
  out.faces = faces;
  out.uv_corners.reserve(uv_corners.size());
  for (const auto& fc : uv_corners)
    out.uv_corners.push_back({Vec2<T>{T(fc[0].x), T(fc[0].y)}, Vec2<T>{T(fc[1].x), T(fc[1].y)},
                              Vec2<T>{T(fc[2].x), T(fc[2].y)}});
  for (const auto& j : joints)
    out.joints.push_back({j.name, j.parent, {T(j.offset.x), T(j.offset.y), T(j.offset.z)}});
  out.skin_weights.resize(skin_weights.size());
  for (size_t v = 0; v < skin_weights.size(); ++v)
    for (const auto& in : skin_weights[v])
      out.skin_weights[v].push_back({in.joint, T(in.weight)});
  out.blendshapes.resize(blendshapes.size());
  for (size_t b = 0; b < blendshapes.size(); ++b) {
    out.blendshapes[b].reserve(blendshapes[b].size());
    for (const auto& d : blendshapes[b]) out.blendshapes[b].push_back({T(d.x), T(d.y), T(d.z)});
  }
  out.part_labels = part_labels;
  for (const auto& c : charts)
    out.charts.push_back({c.name, {{T(c.rect.lo.x), T(c.rect.lo.y)}, {T(c.rect.hi.x), T(c.rect.hi.y)}}});
  out.face_chart = face_chart;
  return out;
}

// Forward kinematics: global transform per joint for the given axis-angle set;
// rest pose uses identity rotations.
template <class S>
std::vector<Transform<S>> forward_kinematics(const CanonicalBodyT<S>& body,
                                             const std::vector<S>* theta) {
  std::vector<Transform<S>> globals(body.joints.size());
  for (size_t j = 0; j < body.joints.size(); ++j) {
    Transform<S> local;
    local.t = body.joints[j].offset;
    if (theta) {
      Vec3<S> aa{(*theta)[3 * j], (*theta)[3 * j + 1], (*theta)[3 * j + 2]};
      local.r = axis_angle_to_matrix(aa);
    }
    int p = body.joints[j].parent;
    globals[j] = p < 0 ? local : globals[size_t(p)] * local;
  }
  return globals;
}

// Skinning transforms M_j mapping rest-pose points to posed points.
template <class S>
std::vector<Transform<S>> skinning_transforms(const CanonicalBodyT<S>& body,
                                              const PoseFrameT<S>& frame) {
  require(frame.theta.size() == size_t(3 * body.joint_count()),
          "pose theta length must be 3*J");
  require(frame.beta.size() == size_t(body.blendshape_count()),
          "pose beta length must match blendshape count");
  auto rest = forward_kinematics<S>(body, nullptr);
  auto posed = forward_kinematics<S>(body, &frame.theta);
  std::vector<Transform<S>> skin(rest.size());
  for (size_t j = 0; j < rest.size(); ++j) skin[j] = posed[j] * rest[j].inverse();
  return skin;
}

template <class S>
std::vector<Vec3<S>> shaped_vertices(const CanonicalBodyT<S>& body, const std::vector<S>& beta) {
  std::vector<Vec3<S>> out = body.vertices;
  for (size_t b = 0; b < body.blendshapes.size(); ++b) {
    S w = beta[b];
    if (w == S(0)) continue;
    for (size_t v = 0; v < out.size(); ++v) out[v] += body.blendshapes[b][v] * w;
  }
  return out;
}

// Blends the affine skinning transform per vertex before applying it: with
// dyadic weights this reproduces the rest pose bit-exactly at theta = 0.
template <class S>
Vec3<S> blend_apply(const std::vector<Transform<S>>& skin,
                    const std::vector<SkinInfluence<S>>& weights, const Vec3<S>& x,
                    Mat3<S>* blended_rotation = nullptr) {
  Mat3<S> r = Mat3<S>::zero();
  Vec3<S> t{0, 0, 0};
  for (const auto& in : weights) {
    const auto& m = skin[size_t(in.joint)];
    r = r + m.r * in.weight;
    t += m.t * in.weight;
  }
  if (blended_rotation) *blended_rotation = r;
  return r * x + t;
}

// Linear blend skinning positions only (fast path, no rotation blending).
template <class S>
std::vector<Vec3<S>> pose_positions(const CanonicalBodyT<S>& body, const PoseFrameT<S>& frame) {
  auto skin = skinning_transforms(body, frame);
  auto shaped = shaped_vertices(body, frame.beta);
  std::vector<Vec3<S>> out(shaped.size());
  for (size_t v = 0; v < shaped.size(); ++v)
    out[v] = blend_apply(skin, body.skin_weights[v], shaped[v]);
  return out;
}

template <class S>
PosedMeshT<S> pose(const CanonicalBodyT<S>& body, const PoseFrameT<S>& frame) {
  auto skin = skinning_transforms(body, frame);
  auto shaped = shaped_vertices(body, frame.beta);
  PosedMeshT<S> mesh;
  mesh.joint_transforms = skin;
  mesh.positions.resize(shaped.size());
  mesh.vertex_rotations.resize(shaped.size());
  for (size_t v = 0; v < shaped.size(); ++v) {
    Mat3<S> blended;
    mesh.positions[v] = blend_apply(skin, body.skin_weights[v], shaped[v], &blended);
    mesh.vertex_rotations[v] = polar_rotation(blended);
  }
  return mesh;
}

// W^-1 for direction-like per-vertex vectors: rotation part only.
template <class S>
std::vector<Vec3<S>> inverse_skin(const PosedMeshT<S>& mesh, const std::vector<Vec3<S>>& vectors) {
  require(vectors.size() == mesh.vertex_rotations.size(),
          "inverse_skin: vector count != vertex count");
  std::vector<Vec3<S>> out(vectors.size());
  for (size_t v = 0; v < vectors.size(); ++v) {
    const Mat3<S>& r = mesh.vertex_rotations[v];
    // orthonormality check, tolerance 1e-6
    S err = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        S dot = r(0, i) * r(0, j) + r(1, i) * r(1, j) + r(2, i) * r(2, j);
        err = std::max(err, std::abs(dot - S(i == j)));
      }
    if (double(err) > 1e-5)
      throw NumericFault("inverse_skin: vertex rotation not orthonormal");
    out[v] = r.transposed_mul(vectors[v]);
  }
  return out;
}

// Compose a world rotation onto the root joint.
template <class S>
PoseFrameT<S> with_root_rotation(const PoseFrameT<S>& frame, const Mat3<S>& r) {
  PoseFrameT<S> out = frame;
  Vec3<S> aa{frame.theta[0], frame.theta[1], frame.theta[2]};
  Vec3<S> combined = matrix_to_axis_angle(r * axis_angle_to_matrix(aa));
  out.theta[0] = combined.x;
  out.theta[1] = combined.y;
  out.theta[2] = combined.z;
  return out;
}

struct ProceduralConfig {
  int vertex_budget = 2000;
  int limb_subdiv = 1;
};

CanonicalBody procedural_body(const ProceduralConfig& config = {});

// OBJ (`v`, `vt`, `f v/vt`) plus JSON sidecar with joints, weights,
// blendshapes, part labels and charts. Sidecar path is obj path + ".json".
void save_body(const std::filesystem::path& obj_path, const CanonicalBody& body);
CanonicalBody load_body(const std::filesystem::path& obj_path);

}  // namespace dyn::geom
