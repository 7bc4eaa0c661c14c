#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dyn/geometry.hpp"
#include "dyn/json_util.hpp"
#include "dyn/render.hpp"

namespace dyn::synth {

// One sinusoidal angle channel; channels on the same joint add in axis-angle.
struct ScriptChannel {
  int joint = 0;
  Vec3d axis{0, 1, 0};
  double amp = 0;    // radians
  double freq = 0;   // cycles per frame
  double phase = 0;  // radians
};

struct MotionScript {
  std::vector<ScriptChannel> channels;
  int frames = 60;
  double fps = 24.0;

  std::vector<double> theta_at(int joint_count, double t) const;
};

MotionScript script_from_json(const Json& j, int joint_count);

// Named generators used by tests and the default dataset configs.
MotionScript turn_script(int frames, double period, double amp_rad);
MotionScript swing_script(int frames, double rate, double phase);

// Mass-spring skirt hem, mass 1 per vertex. Hem vertices are free; the waist
// ring rides rigidly on the pelvis. 0 < c^2 <= 4k; c defaults to critical.
struct GarmentProxy {
  int ring = 24;
  int rows = 4;  // mesh rows between waist and hem
  double waist_radius = 0.19, waist_y = -0.04;
  double hem_radius = 0.34, hem_y = -0.56;
  double k = 140.0;
  double c = -1.0;  // < 0 -> 2*sqrt(k)
  double wrinkle_gain = 14.0;  // amplitude per unit tangential speed (m/frame)
  double wrinkle_freq = 6.0;
  int substeps = 8;

  double damping() const { return c < 0 ? 2.0 * std::sqrt(k) : c; }
  void validate() const;

  int mesh_vertex_count() const { return (rows + 1) * ring; }
};

// Semi-implicit Euler substep of the unit-mass spring x'' = k (target - x) - c x'.
inline void spring_substep(Vec3d& pos, Vec3d& vel, const Vec3d& target, double k, double c,
                           double dt) {
  Vec3d acc = (target - pos) * k - vel * c;
  vel += acc * dt;
  pos += vel * dt;
}

// Per-frame simulation output.
struct SimFrame {
  geom::PoseFrame pose;
  std::vector<Vec3d> body_positions;
  std::vector<Vec3d> body_velocity;     // world, meters/frame, zeros at t=0
  std::vector<Vec3d> skirt_positions;   // (rows+1) x ring
  std::vector<Vec3d> skirt_velocity;    // same layout, meters/frame
  std::vector<Vec3d> hem_targets;       // skinned attachment points of the hem ring
};

struct Sequence {
  std::vector<SimFrame> frames;
  std::vector<std::array<int, 3>> skirt_faces;  // fixed topology
};

Sequence simulate(const geom::CanonicalBody& body, const MotionScript& script,
                  const GarmentProxy& garment);

// Ground-truth per-frame maps.
struct GtMaps {
  int w = 0, h = 0;
  std::vector<double> appearance;  // w*h*3 in [0,1]
  std::vector<int32_t> semantics;  // w*h labels 0..6
  std::vector<double> normals;     // w*h*3 unit on mask
  std::vector<double> depth;
  std::vector<uint8_t> mask;
  std::vector<int32_t> part;       // body-only part id (garment occludes to 2)
  std::vector<double> body_uv;     // w*h*2, body-only IUV uv channels
  std::vector<uint8_t> body_mask;  // body-only mask (undressed)
};

// Base albedo per semantic label (index 0 unused).
Vec3d base_albedo(int label);

// Shades one simulated frame: albedo plus speed-scaled wrinkle bands,
// semantics from part labels with the skirt mapped to bottom clothing,
// normals from geometry.
GtMaps shade(const geom::CanonicalBody& body, const Sequence& seq, size_t frame_index,
             const GarmentProxy& garment, const render::Camera& cam, uint64_t seed);

// Bare-body render used to bootstrap the recurrent decoders: base albedo and
// geometric normals of the undressed body, no wrinkles, no garment.
GtMaps shade_bare_body(const geom::CanonicalBody& body, const std::vector<Vec3d>& positions,
                       const render::Camera& cam);

// ---- dataset on disk ----

struct SegmentSpec {
  std::string name;
  std::string split;  // "train" | "val"
  Json script;        // per-segment script config
};

struct DatasetConfig {
  geom::ProceduralConfig body;
  GarmentProxy garment;
  int img_res = 64;
  int uv_res = 64;
  int t_slabs = 10;
  double cam_scale = -1;            // pixels per meter; <= 0 picks a framing fit
  double cam_cx = -1, cam_cy = -1;  // < 0 -> auto centering
  double fps = 24.0;
  std::vector<SegmentSpec> segments;
  uint64_t seed = 7;

  static DatasetConfig from_json(const Json& j);
  Json to_json() const;
  render::Camera camera() const;
};

struct DatasetIndex {
  struct Segment {
    std::string name, split;
    int begin = 0, end = 0;  // frame range [begin, end)
  };
  DatasetConfig config;
  std::vector<Segment> segments;
  int frame_count = 0;
  std::string config_hash;
};

// Writes manifest + per-frame png/tnsr + gt params csv + body files.
DatasetIndex export_dataset(const DatasetConfig& config, const std::filesystem::path& dir);

// In-memory dataset view used by training, tracking and retrieval.
struct LoadedFrame {
  geom::PoseFrame pose;
  GtMaps gt;
};

struct Dataset {
  DatasetIndex index;
  geom::CanonicalBody body;
  std::vector<LoadedFrame> frames;
  render::Camera camera;

  std::vector<int> frames_of_split(const std::string& split) const;
  const DatasetIndex::Segment& segment_of(int frame) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

// Channel order of frames/NNNNNN.tnsr, one f32 [C,H,W] tensor per frame.
enum FrameChannel : int {
  kChanAppearance = 0,  // 3 channels
  kChanSemantics = 3,
  kChanNormals = 4,     // 3 channels
  kChanPart = 7,
  kChanU = 8,
  kChanV = 9,
  kChanDepth = 10,
  kChanMask = 11,
  kChanBodyMask = 12,
  kFrameChannels = 13,
};

}  // namespace dyn::synth
