#include "dyn/synthdata.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dyn/motionfield.hpp"
#include "dyn/tensor_io.hpp"
#include "dyn/image.hpp"

namespace dyn::synth {

namespace {

constexpr double kTau = 6.283185307179586477;

int joint_index_by_name(const geom::CanonicalBody& body, const std::string& name) {
  for (int j = 0; j < body.joint_count(); ++j)
    if (body.joints[size_t(j)].name == name) return j;
  throw UsageError("script references unknown joint: " + name);
}

}  // namespace

std::vector<double> MotionScript::theta_at(int joint_count, double t) const {
  std::vector<double> theta(size_t(3 * joint_count), 0.0);
  for (const auto& ch : channels) {
    double angle = ch.amp * std::sin(kTau * ch.freq * t + ch.phase);
    Vec3d aa = ch.axis.normalized() * angle;
    theta[size_t(3 * ch.joint)] += aa.x;
    theta[size_t(3 * ch.joint) + 1] += aa.y;
    theta[size_t(3 * ch.joint) + 2] += aa.z;
  }
  return theta;
}

MotionScript script_from_json(const Json& j, int joint_count) {
  MotionScript script;
  script.frames = json_get<int>(j, "frames");
  script.fps = json_get_or<double>(j, "fps", 24.0);
  require(script.frames >= 1, "script frames must be >= 1");
  if (j.contains("preset")) {
    std::string preset = j.at("preset").get<std::string>();
    double rate = json_get_or<double>(j, "rate", 1.0);
    double phase = json_get_or<double>(j, "phase", 0.0);
    if (preset == "turn") {
      double period = json_get_or<double>(j, "period", 24.0);
      double amp = json_get_or<double>(j, "amp", 1.0471975511965976);
      MotionScript p = turn_script(script.frames, period, amp);
      p.fps = script.fps;
      return p;
    }
    if (preset == "swing") {
      MotionScript p = swing_script(script.frames, rate, phase);
      p.fps = script.fps;
      return p;
    }
    throw UsageError("unknown script preset: " + preset);
  }
  for (const auto& cj : j.at("channels")) {
    ScriptChannel ch;
    ch.joint = cj.at("joint").get<int>();
    require(ch.joint >= 0 && ch.joint < joint_count, "script channel joint out of range");
    auto ax = cj.at("axis");
    ch.axis = {ax.at(0).get<double>(), ax.at(1).get<double>(), ax.at(2).get<double>()};
    ch.amp = cj.at("amp").get<double>();
    ch.freq = cj.at("freq").get<double>();
    ch.phase = json_get_or<double>(cj, "phase", 0.0);
    script.channels.push_back(ch);
  }
  return script;
}

MotionScript turn_script(int frames, double period, double amp_rad) {
  MotionScript s;
  s.frames = frames;
  s.channels.push_back({0, {0, 1, 0}, amp_rad, 1.0 / period, 0.0});
  return s;
}

MotionScript swing_script(int frames, double rate, double phase) {
  MotionScript s;
  s.frames = frames;
  const double f = rate / 36.0;  // base cycle of 36 frames at rate 1
  // arms swing in opposition, elbows follow, legs counter, slight torso sway
  s.channels.push_back({10, {0, 0, 1}, 0.55, f, phase});            // l_shoulder
  s.channels.push_back({13, {0, 0, 1}, 0.55, f, phase + 3.14159});  // r_shoulder
  s.channels.push_back({11, {0, 0, 1}, 0.35, f, phase + 0.6});      // l_elbow
  s.channels.push_back({14, {0, 0, 1}, 0.35, f, phase + 3.74159});  // r_elbow
  s.channels.push_back({4, {1, 0, 0}, 0.30, f, phase + 3.14159});   // l_hip
  s.channels.push_back({7, {1, 0, 0}, 0.30, f, phase});             // r_hip
  s.channels.push_back({5, {1, 0, 0}, 0.25, f, phase + 1.2});       // l_knee
  s.channels.push_back({8, {1, 0, 0}, 0.25, f, phase + 4.34159});   // r_knee
  s.channels.push_back({1, {0, 0, 1}, 0.10, f, phase + 1.57});      // spine sway
  s.channels.push_back({0, {0, 1, 0}, 0.18, f * 0.5, phase});       // slow root yaw
  return s;
}

void GarmentProxy::validate() const {
  double damp = damping();
  require(k > 0, "garment stiffness must be > 0");
  require(damp > 0 && damp * damp <= 4.0 * k + 1e-9,
          "garment damping must satisfy 0 < c^2 <= 4k");
  require(ring >= 3 && rows >= 1, "garment needs ring >= 3 and rows >= 1");
  require(substeps >= 4, "garment integration needs substeps >= 4");
}

Sequence simulate(const geom::CanonicalBody& body, const MotionScript& script,
                  const GarmentProxy& garment) {
  garment.validate();
  Sequence seq;

  // skirt topology: (rows+1) rings of `ring` vertices, quads between rows
  for (int r = 0; r < garment.rows; ++r)
    for (int k = 0; k < garment.ring; ++k) {
      int k1 = (k + 1) % garment.ring;
      int a0 = r * garment.ring + k, a1 = r * garment.ring + k1;
      int b0 = (r + 1) * garment.ring + k, b1 = (r + 1) * garment.ring + k1;
      seq.skirt_faces.push_back({a0, a1, b1});
      seq.skirt_faces.push_back({a0, b1, b0});
    }

  // rest rings in pelvis space
  std::vector<Vec3d> waist_rest(size_t(garment.ring)), hem_rest(size_t(garment.ring));
  for (int k = 0; k < garment.ring; ++k) {
    double a = kTau * k / garment.ring;
    waist_rest[size_t(k)] = {garment.waist_radius * std::cos(a), garment.waist_y,
                             garment.waist_radius * std::sin(a)};
    hem_rest[size_t(k)] = {garment.hem_radius * std::cos(a), garment.hem_y,
                           garment.hem_radius * std::sin(a)};
  }

  std::vector<Vec3d> hem_pos = hem_rest;  // world state of the free hem
  std::vector<Vec3d> hem_vel(size_t(garment.ring), Vec3d{0, 0, 0});
  const double dt = 1.0 / (script.fps * garment.substeps);
  const double c = garment.damping();

  std::vector<Vec3d> prev_body;
  std::vector<Vec3d> prev_skirt;
  for (int t = 0; t < script.frames; ++t) {
    SimFrame frame;
    frame.pose.theta = script.theta_at(body.joint_count(), double(t));
    frame.pose.beta.assign(size_t(body.blendshape_count()), 0.0);

    auto skin = geom::skinning_transforms(body, frame.pose);
    frame.body_positions = geom::pose_positions(body, frame.pose);
    const Transform<double>& pelvis = skin[0];

    std::vector<Vec3d> waist(size_t(garment.ring)), target(size_t(garment.ring));
    for (int k = 0; k < garment.ring; ++k) {
      waist[size_t(k)] = pelvis.apply(waist_rest[size_t(k)]);
      target[size_t(k)] = pelvis.apply(hem_rest[size_t(k)]);
    }

    if (t == 0) {
      hem_pos = target;  // start settled
      std::fill(hem_vel.begin(), hem_vel.end(), Vec3d{0, 0, 0});
    } else {
      for (int step = 0; step < garment.substeps; ++step)
        for (int k = 0; k < garment.ring; ++k) {
          spring_substep(hem_pos[size_t(k)], hem_vel[size_t(k)], target[size_t(k)], garment.k, c, dt);
          if (!std::isfinite(hem_pos[size_t(k)].x + hem_pos[size_t(k)].y + hem_pos[size_t(k)].z))
            throw NumericFault("garment simulation diverged at frame " + std::to_string(t) +
                               " (k=" + std::to_string(garment.k) + ", c=" + std::to_string(c) + ")");
        }
    }
    frame.hem_targets = target;

    frame.skirt_positions.resize(size_t(garment.mesh_vertex_count()));
    for (int r = 0; r <= garment.rows; ++r) {
      double f = double(r) / garment.rows;
      for (int k = 0; k < garment.ring; ++k) {
        Vec3d p = waist[size_t(k)] * (1.0 - f) + hem_pos[size_t(k)] * f;
        frame.skirt_positions[size_t(r * garment.ring + k)] = p;
      }
    }

    frame.body_velocity.assign(frame.body_positions.size(), Vec3d{0, 0, 0});
    frame.skirt_velocity.assign(frame.skirt_positions.size(), Vec3d{0, 0, 0});
    if (t > 0) {
      for (size_t v = 0; v < frame.body_positions.size(); ++v)
        frame.body_velocity[v] = frame.body_positions[v] - prev_body[v];
      for (size_t v = 0; v < frame.skirt_positions.size(); ++v)
        frame.skirt_velocity[v] = frame.skirt_positions[v] - prev_skirt[v];
    }
    prev_body = frame.body_positions;
    prev_skirt = frame.skirt_positions;
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

Vec3d base_albedo(int label) {
  switch (label) {
    case geom::kTopClothing: return {0.20, 0.35, 0.75};
    case geom::kBottomClothing: return {0.75, 0.20, 0.25};
    case geom::kFace: return {0.85, 0.65, 0.50};
    case geom::kHair: return {0.25, 0.16, 0.10};
    case geom::kSkin: return {0.80, 0.60, 0.45};
    case geom::kShoes: return {0.15, 0.13, 0.12};
    default: return {0, 0, 0};
  }
}

namespace {

// per-vertex semantic label from the first incident face
std::vector<int> vertex_labels(const geom::CanonicalBody& body) {
  std::vector<int> labels(size_t(body.vertex_count()), geom::kSkin);
  std::vector<uint8_t> seen(size_t(body.vertex_count()), 0);
  for (size_t f = 0; f < body.faces.size(); ++f)
    for (int c = 0; c < 3; ++c) {
      int v = body.faces[f][size_t(c)];
      if (!seen[size_t(v)]) {
        labels[size_t(v)] = body.part_labels[f];
        seen[size_t(v)] = 1;
      }
    }
  return labels;
}

// chart-local u coordinate per vertex (first corner instance)
std::vector<double> vertex_band_param(const geom::CanonicalBody& body) {
  std::vector<double> param(size_t(body.vertex_count()), 0.0);
  std::vector<uint8_t> seen(size_t(body.vertex_count()), 0);
  for (size_t f = 0; f < body.faces.size(); ++f) {
    const auto& chart = body.charts[size_t(body.face_chart[f])];
    for (int c = 0; c < 3; ++c) {
      int v = body.faces[f][size_t(c)];
      if (seen[size_t(v)]) continue;
      double width = chart.rect.hi.x - chart.rect.lo.x;
      param[size_t(v)] = (body.uv_corners[f][size_t(c)].x - chart.rect.lo.x) / width;
      seen[size_t(v)] = 1;
    }
  }
  return param;
}

std::vector<double> shade_vertices(const std::vector<Vec3d>& positions,
                                   const std::vector<Vec3d>& normals,
                                   const std::vector<Vec3d>& velocity,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& band_param,
                                   const GarmentProxy& garment) {
  // 6 channels: albedo + wrinkles (3), geometric normal (3)
  std::vector<double> attrs(positions.size() * 6);
  for (size_t v = 0; v < positions.size(); ++v) {
    Vec3d n = normals[v];
    Vec3d vel = velocity[v];
    Vec3d tangential = vel - n * vel.dot(n);
    double amp = std::min(0.5, garment.wrinkle_gain * tangential.norm());
    double band = std::sin(kTau * garment.wrinkle_freq * band_param[v]);
    Vec3d albedo = base_albedo(labels[v]);
    double wrinkle = amp * band;
    attrs[6 * v] = std::clamp(albedo.x + 0.30 * wrinkle, 0.0, 1.0);
    attrs[6 * v + 1] = std::clamp(albedo.y + 0.30 * wrinkle, 0.0, 1.0);
    attrs[6 * v + 2] = std::clamp(albedo.z + 0.30 * wrinkle, 0.0, 1.0);
    attrs[6 * v + 3] = n.x;
    attrs[6 * v + 4] = n.y;
    attrs[6 * v + 5] = n.z;
  }
  return attrs;
}

GtMaps finish_maps(const render::RenderedFrame& dressed, const render::RenderedFrame& body_only) {
  GtMaps gt;
  gt.w = dressed.w;
  gt.h = dressed.h;
  size_t n = size_t(gt.w) * size_t(gt.h);
  gt.appearance.assign(n * 3, 0.0);
  gt.semantics.assign(n, 0);
  gt.normals.assign(n * 3, 0.0);
  gt.depth = dressed.depth;
  gt.mask = dressed.mask;
  gt.part.assign(n, 0);
  gt.body_uv.assign(n * 2, 0.0);
  gt.body_mask = body_only.mask;
  for (size_t i = 0; i < n; ++i) {
    if (dressed.mask[i]) {
      for (int c = 0; c < 3; ++c) gt.appearance[3 * i + size_t(c)] = dressed.attrs[6 * i + size_t(c)];
      Vec3d nrm{dressed.attrs[6 * i + 3], dressed.attrs[6 * i + 4], dressed.attrs[6 * i + 5]};
      nrm = nrm.normalized();
      gt.normals[3 * i] = nrm.x;
      gt.normals[3 * i + 1] = nrm.y;
      gt.normals[3 * i + 2] = nrm.z;
      gt.semantics[i] = dressed.part[i];
    }
    if (body_only.mask[i]) {
      gt.part[i] = body_only.part[i];
      gt.body_uv[2 * i] = body_only.uvmap[2 * i];
      gt.body_uv[2 * i + 1] = body_only.uvmap[2 * i + 1];
    }
  }
  return gt;
}

}  // namespace

GtMaps shade(const geom::CanonicalBody& body, const Sequence& seq, size_t frame_index,
             const GarmentProxy& garment, const render::Camera& cam, uint64_t) {
  const SimFrame& frame = seq.frames[frame_index];
  auto body_normals = motion::surface_normals(frame.body_positions, body.faces);
  auto skirt_normals = motion::surface_normals(frame.skirt_positions, seq.skirt_faces);

  auto labels = vertex_labels(body);
  auto band = vertex_band_param(body);
  auto body_attrs =
      shade_vertices(frame.body_positions, body_normals, frame.body_velocity, labels, band, garment);

  std::vector<int> skirt_labels(frame.skirt_positions.size(), geom::kBottomClothing);
  std::vector<double> skirt_band(frame.skirt_positions.size());
  for (size_t v = 0; v < frame.skirt_positions.size(); ++v)
    skirt_band[v] = double(v % size_t(garment.ring)) / garment.ring;
  auto skirt_attrs = shade_vertices(frame.skirt_positions, skirt_normals, frame.skirt_velocity,
                                    skirt_labels, skirt_band, garment);

  std::vector<int> skirt_face_labels(seq.skirt_faces.size(), geom::kBottomClothing);

  render::RasterChunk chunks[2];
  chunks[0].positions = &frame.body_positions;
  chunks[0].faces = &body.faces;
  chunks[0].uv_corners = &body.uv_corners;
  chunks[0].part_labels = &body.part_labels;
  chunks[0].vertex_attrs = &body_attrs;
  chunks[0].attr_channels = 6;
  chunks[0].closed = true;
  chunks[1].positions = &frame.skirt_positions;
  chunks[1].faces = &seq.skirt_faces;
  chunks[1].part_labels = &skirt_face_labels;
  chunks[1].vertex_attrs = &skirt_attrs;
  chunks[1].attr_channels = 6;

  auto dressed = render::rasterize(std::span<const render::RasterChunk>(chunks, 2), cam);
  auto body_only = render::rasterize_body(body, frame.body_positions, cam);
  return finish_maps(dressed, body_only);
}

GtMaps shade_bare_body(const geom::CanonicalBody& body, const std::vector<Vec3d>& positions,
                       const render::Camera& cam) {
  auto normals = motion::surface_normals(positions, body.faces);
  auto labels = vertex_labels(body);
  std::vector<double> attrs(positions.size() * 6);
  for (size_t v = 0; v < positions.size(); ++v) {
    Vec3d albedo = base_albedo(labels[v]);
    attrs[6 * v] = albedo.x;
    attrs[6 * v + 1] = albedo.y;
    attrs[6 * v + 2] = albedo.z;
    attrs[6 * v + 3] = normals[v].x;
    attrs[6 * v + 4] = normals[v].y;
    attrs[6 * v + 5] = normals[v].z;
  }
  auto rendered = render::rasterize_body(body, positions, cam, &attrs, 6);
  return finish_maps(rendered, rendered);
}

// ---- dataset io ----

DatasetConfig DatasetConfig::from_json(const Json& j) {
  DatasetConfig c;
  c.body.vertex_budget = json_get_or<int>(j, "vertex_budget", 2000);
  c.body.limb_subdiv = json_get_or<int>(j, "limb_subdiv", 1);
  c.img_res = json_get_or<int>(j, "img_res", 64);
  c.uv_res = json_get_or<int>(j, "uv_res", 64);
  c.t_slabs = json_get_or<int>(j, "T", 10);
  c.cam_scale = json_get_or<double>(j, "cam_scale", -1.0);
  c.cam_cx = json_get_or<double>(j, "cam_cx", -1.0);
  c.cam_cy = json_get_or<double>(j, "cam_cy", -1.0);
  c.fps = json_get_or<double>(j, "fps", 24.0);
  c.seed = json_get_or<uint64_t>(j, "seed", 7);
  if (j.contains("garment")) {
    const Json& g = j.at("garment");
    c.garment.ring = json_get_or<int>(g, "ring", c.garment.ring);
    c.garment.rows = json_get_or<int>(g, "rows", c.garment.rows);
    c.garment.k = json_get_or<double>(g, "k", c.garment.k);
    c.garment.c = json_get_or<double>(g, "c", c.garment.c);
    c.garment.wrinkle_gain = json_get_or<double>(g, "wrinkle_gain", c.garment.wrinkle_gain);
    c.garment.wrinkle_freq = json_get_or<double>(g, "wrinkle_freq", c.garment.wrinkle_freq);
    c.garment.hem_radius = json_get_or<double>(g, "hem_radius", c.garment.hem_radius);
    c.garment.hem_y = json_get_or<double>(g, "hem_y", c.garment.hem_y);
    c.garment.substeps = json_get_or<int>(g, "substeps", c.garment.substeps);
  }
  require(j.contains("segments") && j.at("segments").is_array() && !j.at("segments").empty(),
          "dataset config needs a non-empty segments array");
  for (const auto& s : j.at("segments")) {
    SegmentSpec seg;
    seg.name = json_get<std::string>(s, "name");
    seg.split = json_get<std::string>(s, "split");
    require(seg.split == "train" || seg.split == "val", "segment split must be train or val");
    require(s.contains("script"), "segment needs a script");
    seg.script = s.at("script");
    c.segments.push_back(seg);
  }
  return c;
}

Json DatasetConfig::to_json() const {
  Json j;
  j["vertex_budget"] = body.vertex_budget;
  j["limb_subdiv"] = body.limb_subdiv;
  j["img_res"] = img_res;
  j["uv_res"] = uv_res;
  j["T"] = t_slabs;
  j["cam_scale"] = cam_scale;
  j["cam_cx"] = cam_cx;
  j["cam_cy"] = cam_cy;
  j["fps"] = fps;
  j["seed"] = seed;
  j["garment"] = {{"ring", garment.ring},
                  {"rows", garment.rows},
                  {"k", garment.k},
                  {"c", garment.c},
                  {"wrinkle_gain", garment.wrinkle_gain},
                  {"wrinkle_freq", garment.wrinkle_freq},
                  {"hem_radius", garment.hem_radius},
                  {"hem_y", garment.hem_y},
                  {"substeps", garment.substeps}};
  Json segs = Json::array();
  for (const auto& s : segments)
    segs.push_back({{"name", s.name}, {"split", s.split}, {"script", s.script}});
  j["segments"] = segs;
  return j;
}

render::Camera DatasetConfig::camera() const {
  render::Camera cam;
  cam.w = cam.h = img_res;
  // the default body spans about 1.7 m vertically, centred near y = -0.13
  cam.s = cam_scale > 0 ? cam_scale : img_res / 1.8;
  cam.cx = cam_cx >= 0 ? cam_cx : img_res / 2.0;
  cam.cy = cam_cy >= 0 ? cam_cy : img_res / 2.0 + 0.13 * cam.s;
  return cam;
}

namespace {

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

TensorBlob pack_frame(const GtMaps& gt) {
  int w = gt.w, h = gt.h;
  size_t n = size_t(w) * size_t(h);
  std::vector<float> data(size_t(kFrameChannels) * n, 0.f);
  auto plane = [&](int c) { return data.data() + size_t(c) * n; };
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      plane(kChanAppearance + c)[i] = float(gt.appearance[3 * i + size_t(c)]);
      plane(kChanNormals + c)[i] = float(gt.normals[3 * i + size_t(c)]);
    }
    plane(kChanSemantics)[i] = float(gt.semantics[i]);
    plane(kChanPart)[i] = float(gt.part[i]);
    plane(kChanU)[i] = float(gt.body_uv[2 * i]);
    plane(kChanV)[i] = float(gt.body_uv[2 * i + 1]);
    plane(kChanDepth)[i] = std::isfinite(gt.depth[i]) ? float(gt.depth[i]) : 1e30f;
    plane(kChanMask)[i] = float(gt.mask[i]);
    plane(kChanBodyMask)[i] = float(gt.body_mask[i]);
  }
  return TensorBlob::from_f32({uint32_t(kFrameChannels), uint32_t(h), uint32_t(w)}, data);
}

GtMaps unpack_frame(const TensorBlob& blob) {
  require_data(blob.dims.size() == 3 && blob.dims[0] == kFrameChannels,
               "frame tensor has wrong channel count");
  GtMaps gt;
  gt.h = int(blob.dims[1]);
  gt.w = int(blob.dims[2]);
  size_t n = size_t(gt.w) * size_t(gt.h);
  const float* data = blob.as_f32();
  auto plane = [&](int c) { return data + size_t(c) * n; };
  gt.appearance.resize(n * 3);
  gt.normals.resize(n * 3);
  gt.semantics.resize(n);
  gt.part.resize(n);
  gt.body_uv.resize(n * 2);
  gt.depth.resize(n);
  gt.mask.resize(n);
  gt.body_mask.resize(n);
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      gt.appearance[3 * i + size_t(c)] = plane(kChanAppearance + c)[i];
      gt.normals[3 * i + size_t(c)] = plane(kChanNormals + c)[i];
    }
    gt.semantics[i] = int32_t(std::lround(plane(kChanSemantics)[i]));
    gt.part[i] = int32_t(std::lround(plane(kChanPart)[i]));
    gt.body_uv[2 * i] = plane(kChanU)[i];
    gt.body_uv[2 * i + 1] = plane(kChanV)[i];
    gt.depth[i] = plane(kChanDepth)[i] >= 1e29f ? std::numeric_limits<double>::infinity()
                                                : double(plane(kChanDepth)[i]);
    gt.mask[i] = plane(kChanMask)[i] > 0.5f;
    gt.body_mask[i] = plane(kChanBodyMask)[i] > 0.5f;
  }
  return gt;
}

ImageU8 appearance_png(const GtMaps& gt) {
  ImageF img;
  img.w = gt.w;
  img.h = gt.h;
  img.ch = 3;
  img.px.resize(size_t(gt.w) * size_t(gt.h) * 3);
  // flip rows so +y (up in world) is up in the exported image
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < gt.w; ++x)
      for (int c = 0; c < 3; ++c)
        img.px[size_t(((gt.h - 1 - y) * gt.w + x) * 3 + c)] =
            float(gt.appearance[size_t((y * gt.w + x) * 3 + c)]);
  return to_u8(img);
}

}  // namespace

DatasetIndex export_dataset(const DatasetConfig& config, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "frames");
  fs::create_directories(tmp / "gt");

  auto body = geom::procedural_body(config.body);
  geom::save_body(tmp / "body.obj", body);
  render::Camera cam = config.camera();

  DatasetIndex index;
  index.config = config;

  std::ofstream params(tmp / "gt" / "params.csv");
  params << "frame";
  for (int i = 0; i < 3 * body.joint_count(); ++i) params << ",theta" << i;
  for (int b = 0; b < body.blendshape_count(); ++b) params << ",beta" << b;
  params << ",cx,cy,s\n";

  int frame_id = 0;
  for (const auto& seg_spec : config.segments) {
    MotionScript script = script_from_json(seg_spec.script, body.joint_count());
    script.fps = config.fps;
    auto seq = simulate(body, script, config.garment);
    DatasetIndex::Segment seg;
    seg.name = seg_spec.name;
    seg.split = seg_spec.split;
    seg.begin = frame_id;
    for (size_t t = 0; t < seq.frames.size(); ++t) {
      auto gt = shade(body, seq, t, config.garment, cam, config.seed);
      write_tnsr(tmp / "frames" / (frame_name(frame_id) + ".tnsr"), pack_frame(gt));
      png_write(tmp / "frames" / (frame_name(frame_id) + ".png"), appearance_png(gt));

      const auto& pose = seq.frames[t].pose;
      params << frame_id;
      char buf[32];
      for (double v : pose.theta) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        params << buf;
      }
      for (double v : pose.beta) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        params << buf;
      }
      std::snprintf(buf, sizeof buf, ",%.17g", cam.cx);
      params << buf;
      std::snprintf(buf, sizeof buf, ",%.17g", cam.cy);
      params << buf;
      std::snprintf(buf, sizeof buf, ",%.17g", cam.s);
      params << buf << "\n";
      ++frame_id;
    }
    seg.end = frame_id;
    index.segments.push_back(seg);
  }
  params.close();
  index.frame_count = frame_id;
  index.config_hash = hash_hex(canonical_hash(config.to_json()));

  Json manifest;
  manifest["frame_count"] = index.frame_count;
  manifest["config"] = config.to_json();
  manifest["config_hash"] = index.config_hash;
  manifest["seed"] = config.seed;
  Json segs = Json::array();
  for (const auto& s : index.segments)
    segs.push_back({{"name", s.name}, {"split", s.split}, {"begin", s.begin}, {"end", s.end}});
  manifest["segments"] = segs;
  manifest["camera"] = {{"cx", cam.cx}, {"cy", cam.cy}, {"s", cam.s}, {"w", cam.w}, {"h", cam.h}};
  save_json(tmp / "manifest.json", manifest);

  fs::remove_all(dir);
  fs::rename(tmp, dir);  // atomic publish
  return index;
}

std::vector<int> Dataset::frames_of_split(const std::string& split) const {
  std::vector<int> out;
  for (const auto& seg : index.segments)
    if (seg.split == split)
      for (int f = seg.begin; f < seg.end; ++f) out.push_back(f);
  return out;
}

const DatasetIndex::Segment& Dataset::segment_of(int frame) const {
  for (const auto& seg : index.segments)
    if (frame >= seg.begin && frame < seg.end) return seg;
  throw DataError("frame outside every segment: " + std::to_string(frame));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  Json manifest = load_json(dir / "manifest.json");
  ds.index.config = DatasetConfig::from_json(manifest.at("config"));
  ds.index.config_hash = manifest.at("config_hash").get<std::string>();
  ds.index.frame_count = manifest.at("frame_count").get<int>();
  for (const auto& s : manifest.at("segments"))
    ds.index.segments.push_back({s.at("name").get<std::string>(), s.at("split").get<std::string>(),
                                 s.at("begin").get<int>(), s.at("end").get<int>()});
  ds.body = geom::load_body(dir / "body.obj");
  ds.camera = ds.index.config.camera();

  std::ifstream params(dir / "gt" / "params.csv");
  require_data(params.good(), "dataset missing gt/params.csv");
  std::string header;
  std::getline(params, header);

  ds.frames.resize(size_t(ds.index.frame_count));
  for (int f = 0; f < ds.index.frame_count; ++f) {
    std::string line;
    require_data(bool(std::getline(params, line)), "params.csv shorter than frame count");
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    LoadedFrame& frame = ds.frames[size_t(f)];
    for (int i = 0; i < 3 * ds.body.joint_count(); ++i) {
      std::getline(ss, cell, ',');
      frame.pose.theta.push_back(std::stod(cell));
    }
    for (int b = 0; b < ds.body.blendshape_count(); ++b) {
      std::getline(ss, cell, ',');
      frame.pose.beta.push_back(std::stod(cell));
    }
    std::getline(ss, cell, ',');
    frame.pose.camera.cx = std::stod(cell);
    std::getline(ss, cell, ',');
    frame.pose.camera.cy = std::stod(cell);
    std::getline(ss, cell, ',');
    frame.pose.camera.s = std::stod(cell);
    frame.gt = unpack_frame(read_tnsr(dir / "frames" / (frame_name(f) + ".tnsr")));
  }
  return ds;
}

}  // namespace dyn::synth
