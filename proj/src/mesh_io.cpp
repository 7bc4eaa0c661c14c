#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dyn/geometry.hpp"
#include "dyn/json_util.hpp"

namespace dyn::geom {

namespace {

// Joint ids for the 16-joint skeleton.
enum JointId {
  kPelvis = 0,
  kSpine,
  kChest,
  kHead,
  kLHip,
  kLKnee,
  kLAnkle,
  kRHip,
  kRKnee,
  kRAnkle,
  kLShoulder,
  kLElbow,
  kLWrist,
  kRShoulder,
  kRElbow,
  kRWrist,
  kJointCount
};

struct CapsuleSpec {
  const char* name;
  int ja, jb;              // skinning joints at the two ends
  Vec3d extent;            // used when ja == jb: segment direction from the joint
  double ra, rb;
  int label;               // semantic label; head splits front/back per face
  int seg, tube_rings, cap_rings;
  bool limb;               // participates in limb_subdiv scaling
  bool head;               // face/hair split
};

std::vector<CanonicalBody::Joint> make_skeleton() {
  std::vector<CanonicalBody::Joint> j(kJointCount);
  auto set = [&](int id, const char* name, int parent, Vec3d off) {
    j[size_t(id)] = {name, parent, off};
  };
  set(kPelvis, "pelvis", -1, {0, 0, 0});
  set(kSpine, "spine", kPelvis, {0, 0.15, 0});
  set(kChest, "chest", kSpine, {0, 0.20, 0});
  set(kHead, "head", kChest, {0, 0.26, 0});
  set(kLHip, "l_hip", kPelvis, {0.10, -0.06, 0});
  set(kLKnee, "l_knee", kLHip, {0.01, -0.40, 0});
  set(kLAnkle, "l_ankle", kLKnee, {0, -0.42, 0});
  set(kRHip, "r_hip", kPelvis, {-0.10, -0.06, 0});
  set(kRKnee, "r_knee", kRHip, {-0.01, -0.40, 0});
  set(kRAnkle, "r_ankle", kRKnee, {0, -0.42, 0});
  set(kLShoulder, "l_shoulder", kChest, {0.20, 0.14, 0});
  set(kLElbow, "l_elbow", kLShoulder, {0.27, 0, 0});
  set(kRShoulder, "r_shoulder", kChest, {-0.20, 0.14, 0});
  set(kLWrist, "l_wrist", kLElbow, {0.26, 0, 0});
  set(kRElbow, "r_elbow", kRShoulder, {-0.27, 0, 0});
  set(kRWrist, "r_wrist", kRElbow, {-0.26, 0, 0});
  return j;
}

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

CanonicalBody procedural_body(const ProceduralConfig& config) {
  require(config.limb_subdiv >= 1, "limb_subdiv must be >= 1");
  require(config.vertex_budget >= 300, "vertex budget too small to triangulate the body");
  const double g = std::sqrt(double(config.vertex_budget) / 2000.0);

  const std::vector<CapsuleSpec> specs = {
      {"lower_torso", kPelvis, kSpine, {}, 0.16, 0.15, kBottomClothing, 18, 5, 3, false, false},
      {"upper_torso", kSpine, kChest, {}, 0.15, 0.14, kTopClothing, 18, 5, 3, false, false},
      {"head", kChest, kHead, {}, 0.07, 0.10, kFace, 18, 5, 4, false, true},
      {"l_thigh", kLHip, kLKnee, {}, 0.070, 0.055, kBottomClothing, 14, 5, 3, true, false},
      {"r_thigh", kRHip, kRKnee, {}, 0.070, 0.055, kBottomClothing, 14, 5, 3, true, false},
      {"l_shin", kLKnee, kLAnkle, {}, 0.050, 0.040, kSkin, 14, 5, 3, true, false},
      {"r_shin", kRKnee, kRAnkle, {}, 0.050, 0.040, kSkin, 14, 5, 3, true, false},
      {"l_upper_arm", kLShoulder, kLElbow, {}, 0.045, 0.040, kTopClothing, 14, 4, 3, true, false},
      {"r_upper_arm", kRShoulder, kRElbow, {}, 0.045, 0.040, kTopClothing, 14, 4, 3, true, false},
      {"l_forearm", kLElbow, kLWrist, {}, 0.036, 0.030, kSkin, 14, 4, 3, true, false},
      {"r_forearm", kRElbow, kRWrist, {}, 0.036, 0.030, kSkin, 14, 4, 3, true, false},
      {"l_foot", kLAnkle, kLAnkle, {0, -0.045, -0.16}, 0.046, 0.036, kShoes, 12, 3, 3, false, false},
      {"r_foot", kRAnkle, kRAnkle, {0, -0.045, -0.16}, 0.046, 0.036, kShoes, 12, 3, 3, false, false},
  };

  CanonicalBody body;
  body.joints = make_skeleton();
  auto rest = forward_kinematics<double>(body, nullptr);

  // 4x4 atlas grid, one chart per capsule; the margin keeps the k=2 seam
  // dilation of neighbouring charts from touching at 64x64 and above.
  const double cell = 0.25, margin = 0.045;

  for (size_t ci = 0; ci < specs.size(); ++ci) {
    const auto& sp = specs[ci];
    int seg = std::max(6, int(std::lround(sp.seg * g))) * (sp.limb ? config.limb_subdiv : 1);
    int tube = std::max(2, int(std::lround(sp.tube_rings * g)));
    int cap = std::max(2, int(std::lround(sp.cap_rings * g)));

    Vec3d a = rest[size_t(sp.ja)].t;
    Vec3d b = sp.ja == sp.jb ? a + sp.extent : rest[size_t(sp.jb)].t;
    Vec3d axis = b - a;
    double len = axis.norm();
    Vec3d u = axis * (1.0 / len);
    Vec3d ref = std::abs(u.y) < 0.9 ? Vec3d{0, 1, 0} : Vec3d{0, 0, 1};
    Vec3d e1 = u.cross(ref).normalized();
    Vec3d e2 = u.cross(e1);

    UvRect<double> rect{{(ci % 4) * cell + margin, (ci / 4) * cell + margin},
                        {(ci % 4) * cell + cell - margin, (ci / 4) * cell + cell - margin}};
    int chart_id = int(body.charts.size());
    body.charts.push_back({sp.name, rect});

    // Ring ladder: pole_a, cap_a rings (1..cap), tube rings (1..tube),
    // cap_b rings (1..cap-1), pole_b. Ring cap_a[cap] is the tube start.
    int base = body.vertex_count();
    struct RingInfo {
      int first;  // vertex index of ring start (or pole index, count==1)
      int count;
      double q;  // axial texture coordinate
    };
    std::vector<RingInfo> rings;
    std::vector<double> vert_phi;  // per local vertex, angle / (2 pi)

    const double arc_a = sp.ra * 1.5707963267948966;
    const double arc_b = sp.rb * 1.5707963267948966;
    const double total_arc = arc_a + len + arc_b;
    auto push_vertex = [&](const Vec3d& p, double phi01) {
      body.vertices.push_back(p);
      vert_phi.push_back(phi01);
    };

    push_vertex(a - u * sp.ra, 0.0);
    rings.push_back({base, 1, 0.0});
    for (int j = 1; j <= cap; ++j) {
      double psi = (1.5707963267948966 * j) / cap;
      double q = (arc_a * std::sin(psi)) / total_arc;
      int first = body.vertex_count();
      for (int k = 0; k < seg; ++k) {
        double phi = 2.0 * 3.141592653589793 * k / seg;
        Vec3d radial = e1 * std::cos(phi) + e2 * std::sin(phi);
        push_vertex(a + (radial * std::sin(psi) - u * std::cos(psi)) * sp.ra, double(k) / seg);
      }
      rings.push_back({first, seg, q});
    }
    for (int t = 1; t <= tube; ++t) {
      double f = double(t) / tube;
      double r = sp.ra + (sp.rb - sp.ra) * f;
      double q = (arc_a + len * f) / total_arc;
      int first = body.vertex_count();
      for (int k = 0; k < seg; ++k) {
        double phi = 2.0 * 3.141592653589793 * k / seg;
        Vec3d radial = e1 * std::cos(phi) + e2 * std::sin(phi);
        push_vertex(a + u * (len * f) + radial * r, double(k) / seg);
      }
      rings.push_back({first, seg, q});
    }
    for (int j = 1; j < cap; ++j) {
      double psi = (1.5707963267948966 * j) / cap;
      double q = (arc_a + len + arc_b * std::sin(psi)) / total_arc;
      int first = body.vertex_count();
      for (int k = 0; k < seg; ++k) {
        double phi = 2.0 * 3.141592653589793 * k / seg;
        Vec3d radial = e1 * std::cos(phi) + e2 * std::sin(phi);
        push_vertex(b + (radial * std::cos(psi) + u * std::sin(psi)) * sp.rb, double(k) / seg);
      }
      rings.push_back({first, seg, q});
    }
    push_vertex(b + u * sp.rb, 0.0);
    rings.push_back({body.vertex_count() - 1, 1, 1.0});

    // Faces with per-corner unwrapped uv; the seam column continues to u=1.
    auto emit = [&](int v0, int v1, int v2, double u0, double u1v, double u2, double q0, double q1,
                    double q2, int label) {
      double mx = std::max({u0, u1v, u2});
      if (mx - std::min({u0, u1v, u2}) > 0.5) {
        if (mx - u0 > 0.5) u0 += 1.0;
        if (mx - u1v > 0.5) u1v += 1.0;
        if (mx - u2 > 0.5) u2 += 1.0;
      }
      auto map = [&](double uu, double qq) -> Vec2d {
        return {rect.lo.x + uu * (rect.hi.x - rect.lo.x), rect.lo.y + qq * (rect.hi.y - rect.lo.y)};
      };
      body.faces.push_back({v0, v1, v2});
      body.uv_corners.push_back({map(u0, q0), map(u1v, q1), map(u2, q2)});
      body.part_labels.push_back(label);
      body.face_chart.push_back(chart_id);
    };
    auto face_label = [&](int v0, int v1, int v2) {
      if (!sp.head) return sp.label;
      // hair covers the back of the head and the crown; the face looks at -z
      Vec3d c = (body.vertices[size_t(v0)] + body.vertices[size_t(v1)] +
                 body.vertices[size_t(v2)]) * (1.0 / 3.0);
      bool crown = c.y > b.y + 0.45 * sp.rb;
      return (c.z > 0.0 || crown) ? int(kHair) : int(kFace);
    };
    for (size_t r = 0; r + 1 < rings.size(); ++r) {
      const auto& lo = rings[r];
      const auto& hi = rings[r + 1];
      if (lo.count == 1) {  // bottom pole fan
        for (int k = 0; k < seg; ++k) {
          int k1 = (k + 1) % seg;
          int va = lo.first, vb = hi.first + k, vc = hi.first + k1;
          double ub = double(k) / seg, uc = k1 == 0 ? 1.0 : double(k1) / seg;
          emit(va, vc, vb, (ub + uc) * 0.5, uc, ub, lo.q, hi.q, hi.q, face_label(va, vc, vb));
        }
      } else if (hi.count == 1) {  // top pole fan
        for (int k = 0; k < seg; ++k) {
          int k1 = (k + 1) % seg;
          int va = lo.first + k, vb = lo.first + k1, vc = hi.first;
          double ua = double(k) / seg, ub = k1 == 0 ? 1.0 : double(k1) / seg;
          emit(va, vb, vc, ua, ub, (ua + ub) * 0.5, lo.q, lo.q, hi.q, face_label(va, vb, vc));
        }
      } else {
        for (int k = 0; k < seg; ++k) {
          int k1 = (k + 1) % seg;
          int a0 = lo.first + k, a1 = lo.first + k1;
          int b0 = hi.first + k, b1 = hi.first + k1;
          double ua = double(k) / seg, ub = k1 == 0 ? 1.0 : double(k1) / seg;
          emit(a0, a1, b1, ua, ub, ub, lo.q, lo.q, hi.q, face_label(a0, a1, b1));
          emit(a0, b1, b0, ua, ub, ua, lo.q, hi.q, hi.q, face_label(a0, b1, b0));
        }
      }
    }

    // Skin weights: rigid at the capsule ends, smooth blend in the middle.
    for (int v = base; v < body.vertex_count(); ++v) {
      const Vec3d& p = body.vertices[size_t(v)];
      std::vector<SkinInfluence<double>> w;
      if (sp.ja == sp.jb) {
        w.push_back({sp.ja, 1.0});
      } else {
        double d = (p - a).dot(u) / len;
        // dyadic weights: the partition of unity is exact in doubles
        double wb = std::round(smoothstep01((d - 0.35) / 0.30) * 1024.0) / 1024.0;
        if (wb <= 0.0)
          w.push_back({sp.ja, 1.0});
        else if (wb >= 1.0)
          w.push_back({sp.jb, 1.0});
        else {
          w.push_back({sp.ja, 1.0 - wb});
          w.push_back({sp.jb, wb});
        }
      }
      body.skin_weights.push_back(std::move(w));
    }
  }

  // Two blendshapes: radial girth and vertical stature.
  body.blendshapes.assign(2, std::vector<Vec3d>(size_t(body.vertex_count()), Vec3d{0, 0, 0}));
  {
    // Recover a radial direction per vertex from the nearest skinning joint.
    auto rest_globals = forward_kinematics<double>(body, nullptr);
    for (int v = 0; v < body.vertex_count(); ++v) {
      const Vec3d& p = body.vertices[size_t(v)];
      const auto& infl = body.skin_weights[size_t(v)];
      Vec3d anchor{0, 0, 0};
      for (const auto& in : infl) anchor += rest_globals[size_t(in.joint)].t * in.weight;
      Vec3d radial = p - anchor;
      radial.y = 0;  // keep girth horizontal
      body.blendshapes[0][size_t(v)] = radial.normalized() * 0.02;
      body.blendshapes[1][size_t(v)] = {0, 0.05 * p.y, 0};
    }
  }

  body.validate();
  return body;
}

void save_body(const std::filesystem::path& obj_path, const CanonicalBody& body) {
  std::ofstream f(obj_path);
  require_data(f.good(), "cannot open for write: " + obj_path.string());
  char buf[160];
  for (const auto& v : body.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    f << buf;
  }
  for (const auto& fc : body.uv_corners)
    for (const auto& uv : fc) {
      std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", uv.x, uv.y);
      f << buf;
    }
  for (size_t i = 0; i < body.faces.size(); ++i) {
    const auto& face = body.faces[i];
    f << "f " << face[0] + 1 << "/" << 3 * i + 1 << " " << face[1] + 1 << "/" << 3 * i + 2 << " "
      << face[2] + 1 << "/" << 3 * i + 3 << "\n";
  }
  require_data(f.good(), "write failed: " + obj_path.string());

  Json side;
  Json joints = Json::array();
  for (const auto& j : body.joints)
    joints.push_back({{"name", j.name},
                      {"parent", j.parent},
                      {"offset", {j.offset.x, j.offset.y, j.offset.z}}});
  side["joints"] = joints;
  Json weights = Json::array();
  for (const auto& per_vertex : body.skin_weights) {
    Json w = Json::array();
    for (const auto& in : per_vertex) w.push_back({{"j", in.joint}, {"w", in.weight}});
    weights.push_back(w);
  }
  side["weights"] = weights;
  Json shapes = Json::array();
  for (const auto& bs : body.blendshapes) {
    Json flat = Json::array();
    for (const auto& d : bs) {
      flat.push_back(d.x);
      flat.push_back(d.y);
      flat.push_back(d.z);
    }
    shapes.push_back(flat);
  }
  side["blendshapes"] = shapes;
  side["part_labels"] = body.part_labels;
  Json charts = Json::array();
  for (const auto& c : body.charts)
    charts.push_back({{"name", c.name},
                      {"lo", {c.rect.lo.x, c.rect.lo.y}},
                      {"hi", {c.rect.hi.x, c.rect.hi.y}}});
  side["charts"] = charts;
  side["face_chart"] = body.face_chart;
  save_json(obj_path.string() + ".json", side);
}

CanonicalBody load_body(const std::filesystem::path& obj_path) {
  std::ifstream f(obj_path);
  require_data(f.good(), "cannot open: " + obj_path.string());
  CanonicalBody body;
  std::vector<Vec2d> vts;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3d v;
      ss >> v.x >> v.y >> v.z;
      body.vertices.push_back(v);
    } else if (tag == "vt") {
      Vec2d uv;
      ss >> uv.x >> uv.y;
      vts.push_back(uv);
    } else if (tag == "f") {
      std::array<int, 3> vi{};
      std::array<Vec2d, 3> uv{};
      for (int c = 0; c < 3; ++c) {
        std::string tok;
        ss >> tok;
        size_t slash = tok.find('/');
        require_data(slash != std::string::npos, "obj face must use v/vt records");
        int v = std::stoi(tok.substr(0, slash)) - 1;
        int t = std::stoi(tok.substr(slash + 1)) - 1;
        require_data(t >= 0 && t < int(vts.size()), "obj vt index out of range");
        vi[size_t(c)] = v;
        uv[size_t(c)] = vts[size_t(t)];
      }
      body.faces.push_back(vi);
      body.uv_corners.push_back(uv);
    }
  }

  Json side = load_json(obj_path.string() + ".json");
  for (const auto& j : side.at("joints")) {
    CanonicalBody::Joint joint;
    joint.name = j.at("name").get<std::string>();
    joint.parent = j.at("parent").get<int>();
    auto off = j.at("offset");
    joint.offset = {off.at(0).get<double>(), off.at(1).get<double>(), off.at(2).get<double>()};
    body.joints.push_back(joint);
  }
  for (const auto& per_vertex : side.at("weights")) {
    std::vector<SkinInfluence<double>> w;
    for (const auto& in : per_vertex)
      w.push_back({in.at("j").get<int>(), in.at("w").get<double>()});
    body.skin_weights.push_back(std::move(w));
  }
  for (const auto& bs : side.at("blendshapes")) {
    std::vector<Vec3d> field;
    require_data(bs.size() % 3 == 0, "blendshape array length must be 3*m");
    for (size_t i = 0; i + 2 < bs.size(); i += 3)
      field.push_back({bs.at(i).get<double>(), bs.at(i + 1).get<double>(), bs.at(i + 2).get<double>()});
    body.blendshapes.push_back(std::move(field));
  }
  body.part_labels = side.at("part_labels").get<std::vector<int>>();
  if (side.contains("charts")) {
    for (const auto& c : side.at("charts")) {
      CanonicalBody::Chart chart;
      chart.name = c.at("name").get<std::string>();
      chart.rect.lo = {c.at("lo").at(0).get<double>(), c.at("lo").at(1).get<double>()};
      chart.rect.hi = {c.at("hi").at(0).get<double>(), c.at("hi").at(1).get<double>()};
      body.charts.push_back(chart);
    }
    body.face_chart = side.at("face_chart").get<std::vector<int>>();
  }
  body.validate();
  return body;
}

}  // namespace dyn::geom
