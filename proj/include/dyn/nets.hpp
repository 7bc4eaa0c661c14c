#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dyn/autodiff.hpp"
#include "dyn/json_util.hpp"
#include "dyn/metrics.hpp"
#include "dyn/motionfield.hpp"
#include "dyn/synthdata.hpp"
#include "dyn/tensor_io.hpp"
#include "dyn/uvbake.hpp"

namespace dyn::nets {

struct Ablation {
  bool no_velocity = false;  // zero the V channels of the descriptor input
  bool no_shape = false;     // bypass the shape decoder, drop L_s
  bool no_normal = false;    // drop the normal head supervision and recurrence
};

struct NetConfig {
  int uv_res = 64, img_res = 64;
  int t_slabs = 10;
  int d = 16;       // descriptor width
  int labels = 7;   // semantic classes incl. background
  int enc_width = 8, shape_width = 8, app_width = 8;
  bool occupancy_channel = true;
  double lambda_s = 10.0, lambda_n = 1.0;
  double lr = 1e-3;
  int steps = 2000;
  uint64_t seed = 1;
  int checkpoint_every = 1000;
  int log_every = 1;
  bool teacher_forcing = true;
  std::string precision = "f32";
  Ablation ablation;

  int desc_input_channels() const { return 3 + 3 * t_slabs + (occupancy_channel ? 1 : 0); }

  static NetConfig from_json(const Json& j);
  Json to_json() const;
};

// Parameter indices of one encoder-decoder block with skip connection:
// 1x1 -> C-BLK(k4 s2) -> conv3 -> D-BLK(k4 s2) -> concat skip -> 1x1 head.
struct UNetIds {
  int pre_w = -1, pre_b = -1;
  int down_w = -1, down_b = -1;
  int mid_w = -1, mid_b = -1;
  int up_w = -1, up_b = -1;
  int head_w = -1, head_b = -1;
};

template <class S>
UNetIds make_unet(ad::ParamStore<S>& store, const std::string& prefix, int in_ch, int width,
                  int out_ch, std::mt19937_64& rng) {
  auto he = [&rng](ad::Shape shape, int fan_in) {
    std::vector<S> v(size_t(ad::numel(shape)));
    S stddev = S(std::sqrt(2.0 / fan_in));
    for (auto& x : v) x = S(gauss(rng)) * stddev;
    return v;
  };
  auto zeros = [](int n) { return std::vector<S>(size_t(n), S(0)); };
  UNetIds ids;
  int w = width;
  ids.pre_w = store.add(prefix + ".pre.w", {w, in_ch, 1, 1}, he({w, in_ch, 1, 1}, in_ch));
  ids.pre_b = store.add(prefix + ".pre.b", {w}, zeros(w));
  ids.down_w = store.add(prefix + ".down.w", {2 * w, w, 4, 4}, he({2 * w, w, 4, 4}, w * 16));
  ids.down_b = store.add(prefix + ".down.b", {2 * w}, zeros(2 * w));
  ids.mid_w = store.add(prefix + ".mid.w", {2 * w, 2 * w, 3, 3}, he({2 * w, 2 * w, 3, 3}, 2 * w * 9));
  ids.mid_b = store.add(prefix + ".mid.b", {2 * w}, zeros(2 * w));
  // transposed conv weights are [IC, OC, KH, KW]
  ids.up_w = store.add(prefix + ".up.w", {2 * w, w, 4, 4}, he({2 * w, w, 4, 4}, 2 * w * 16));
  ids.up_b = store.add(prefix + ".up.b", {w}, zeros(w));
  ids.head_w = store.add(prefix + ".head.w", {out_ch, 2 * w, 1, 1}, he({out_ch, 2 * w, 1, 1}, 2 * w));
  ids.head_b = store.add(prefix + ".head.b", {out_ch}, zeros(out_ch));
  return ids;
}

template <class S>
int unet_forward(ad::Tape<S>& t, const std::vector<int>& bound, const UNetIds& ids, int input) {
  int pre = t.leaky_relu(t.conv2d(input, bound[size_t(ids.pre_w)], bound[size_t(ids.pre_b)], 1, 0));
  int down = t.leaky_relu(t.conv2d(pre, bound[size_t(ids.down_w)], bound[size_t(ids.down_b)], 2, 1));
  int mid = t.leaky_relu(t.conv2d(down, bound[size_t(ids.mid_w)], bound[size_t(ids.mid_b)], 1, 1));
  int up = t.leaky_relu(
      t.transposed_conv2d(mid, bound[size_t(ids.up_w)], bound[size_t(ids.up_b)], 2, 1));
  int cat = t.concat({up, pre}, 1);
  return t.conv2d(cat, bound[size_t(ids.head_w)], bound[size_t(ids.head_b)], 1, 0);
}

// Everything the nets need from one dataset frame, resolution-ready.
template <class S>
struct FrameBundle {
  std::vector<S> desc_input;     // [C_in, uv, uv]
  std::vector<S> occupancy;      // [uv*uv] 1/0 (post dilation)
  render::GatherTable gather;
  std::vector<S> gt_app;         // [3,H,W] planes
  std::vector<S> gt_norm;        // [3,H,W]
  std::vector<int32_t> gt_sem;   // [H*W]
  std::vector<S> gt_fg;          // [H*W]
  std::vector<S> boot_sem;       // [L,H,W] one-hot bare body
  std::vector<S> boot_app;       // [3,H,W]
  std::vector<S> boot_norm;      // [3,H,W]
  std::vector<S> boot_fg;        // [H*W]
  int segment = 0;
};

template <class S>
struct Model {
  NetConfig cfg;
  ad::ParamStore<S> params;
  UNetIds enc, shape, app;

  static Model init(const NetConfig& cfg) {
    Model m;
    m.cfg = cfg;
    std::mt19937_64 rng(cfg.seed);
    m.enc = make_unet<S>(m.params, "enc", cfg.desc_input_channels(), cfg.enc_width, cfg.d, rng);
    m.shape = make_unet<S>(m.params, "shape", cfg.d + cfg.labels, cfg.shape_width, cfg.labels, rng);
    m.app = make_unet<S>(m.params, "app", cfg.d + cfg.labels + 6, cfg.app_width, 6, rng);
    m.params.init_adam(S(cfg.lr));
    return m;
  }
};

// Node ids produced by one forward pass.
struct ForwardNodes {
  int f3d = -1;
  int shape_logits = -1, shape_probs = -1;
  int a_hat = -1, n_hat = -1;
  int loss = -1, la = -1, ls = -1, ln = -1;
};

// Recurrent inputs for the current frame (host buffers, [C,H,W] planes).
template <class S>
struct PrevMaps {
  std::vector<S> sem;   // [L,H,W] probabilities or one-hot
  std::vector<S> app;   // [3,H,W]
  std::vector<S> norm;  // [3,H,W]
};

// la_mask_override freezes the L_a weighting (3*H*W): the mask is a
// piecewise-constant function of the shape prediction, so finite-difference
// probes of the loss need it pinned to stay on one smooth piece.
template <class S>
ForwardNodes forward_frame(ad::Tape<S>& t, const Model<S>& model, const std::vector<int>& bound,
                           const FrameBundle<S>& fb, const PrevMaps<S>& prev, bool with_loss,
                           const std::vector<S>* la_mask_override = nullptr,
                           std::vector<S>* la_mask_out = nullptr) {
  const NetConfig& cfg = model.cfg;
  int uv = cfg.uv_res, hw = cfg.img_res;
  ForwardNodes out;

  std::vector<S> input = fb.desc_input;
  if (cfg.ablation.no_velocity) {
    size_t texels = size_t(uv) * size_t(uv);
    std::fill(input.begin() + 3 * long(texels), input.begin() + long(3 + 3 * cfg.t_slabs) * long(texels),
              S(0));
  }
  int grid_in = t.leaf({1, cfg.desc_input_channels(), uv, uv}, std::move(input), false);
  int enc_out = unet_forward(t, bound, model.enc, grid_in);
  int occ = t.leaf({1, 1, uv, uv}, fb.occupancy, false);
  out.f3d = t.mul(enc_out, occ);  // zero outside occupancy
  int fhat = t.uv_gather(out.f3d, fb.gather, hw, hw);

  int sem_in;
  if (cfg.ablation.no_shape) {
    sem_in = t.leaf({1, cfg.labels, hw, hw}, fb.boot_sem, false);
    out.shape_probs = sem_in;
  } else {
    int s_prev = t.leaf({1, cfg.labels, hw, hw}, prev.sem, false);
    int shape_in = t.concat({fhat, s_prev}, 1);
    out.shape_logits = unet_forward(t, bound, model.shape, shape_in);
    out.shape_probs = t.softmax(out.shape_logits, 1);
    sem_in = out.shape_probs;
  }

  int a_prev = t.leaf({1, 3, hw, hw}, prev.app, false);
  int n_prev = t.leaf({1, 3, hw, hw}, prev.norm, false);
  int app_in = t.concat({fhat, sem_in, a_prev, n_prev}, 1);
  int app_out = unet_forward(t, bound, model.app, app_in);
  out.a_hat = t.sigmoid(t.slice(app_out, 1, 0, 3));
  out.n_hat = t.unit_normalize(t.tanh_op(t.slice(app_out, 1, 3, 3)));

  if (with_loss) {
    // L_a mask: gt foreground union predicted foreground
    size_t n = size_t(hw) * size_t(hw);
    std::vector<S> mask3(3 * n);
    if (la_mask_override) {
      mask3 = *la_mask_override;
    } else {
      const auto& probs = t.value(out.shape_probs);
      for (size_t i = 0; i < n; ++i) {
        S on = fb.gt_fg[i];
        if (on == S(0) && !cfg.ablation.no_shape) {
          // predicted foreground: argmax over classes != background
          int best = 0;
          S bestv = probs[i];
          for (int c = 1; c < cfg.labels; ++c) {
            S v = probs[size_t(c) * n + i];
            if (v > bestv) {
              bestv = v;
              best = c;
            }
          }
          on = best != 0 ? S(1) : S(0);
        } else if (on == S(0) && cfg.ablation.no_shape) {
          on = fb.boot_fg[i];
        }
        mask3[i] = mask3[n + i] = mask3[2 * n + i] = on;
      }
    }
    if (la_mask_out) *la_mask_out = mask3;
    int mask_leaf = t.leaf({1, 3, hw, hw}, std::move(mask3), false);
    int gt_app = t.leaf({1, 3, hw, hw}, fb.gt_app, false);
    out.la = t.l1(out.a_hat, gt_app, mask_leaf);
    int total = out.la;
    if (!cfg.ablation.no_shape) {
      out.ls = t.cross_entropy(out.shape_logits, fb.gt_sem);
      total = t.add(total, t.scale(out.ls, S(cfg.lambda_s)));
    }
    if (!cfg.ablation.no_normal) {
      std::vector<S> fg3(3 * n);
      for (size_t i = 0; i < n; ++i) fg3[i] = fg3[n + i] = fg3[2 * n + i] = fb.gt_fg[i];
      int fg_leaf = t.leaf({1, 3, hw, hw}, std::move(fg3), false);
      int gt_norm = t.leaf({1, 3, hw, hw}, fb.gt_norm, false);
      out.ln = t.l1(out.n_hat, gt_norm, fg_leaf);
      total = t.add(total, t.scale(out.ln, S(cfg.lambda_n)));
    }
    out.loss = total;
  }
  return out;
}

// ---- dataset preparation ----

namespace detail {

template <class S>
void fill_descriptor_planes(const uv::UvGrid& grid, const NetConfig& cfg, FrameBundle<S>& fb) {
  int uv = cfg.uv_res;
  int cin = cfg.desc_input_channels();
  fb.desc_input.assign(size_t(cin) * size_t(uv) * size_t(uv), S(0));
  fb.occupancy.assign(size_t(uv) * size_t(uv), S(0));
  for (int y = 0; y < uv; ++y)
    for (int x = 0; x < uv; ++x) {
      const double* texel = grid.texel(x, y);
      size_t ti = size_t(y) * size_t(uv) + size_t(x);
      for (int c = 0; c < cin; ++c)
        fb.desc_input[size_t(c) * size_t(uv) * size_t(uv) + ti] = S(texel[c]);
      fb.occupancy[ti] = grid.occupied(x, y) ? S(1) : S(0);
    }
}

template <class S>
void fill_bootstrap(const synth::GtMaps& bare, const NetConfig& cfg, FrameBundle<S>& fb) {
  size_t pix = size_t(cfg.img_res) * size_t(cfg.img_res);
  fb.boot_sem.assign(size_t(cfg.labels) * pix, S(0));
  fb.boot_app.resize(3 * pix);
  fb.boot_norm.resize(3 * pix);
  fb.boot_fg.resize(pix);
  for (size_t i = 0; i < pix; ++i) {
    fb.boot_sem[size_t(bare.semantics[i]) * pix + i] = S(1);
    for (int c = 0; c < 3; ++c) {
      fb.boot_app[size_t(c) * pix + i] = S(bare.appearance[3 * i + size_t(c)]);
      fb.boot_norm[size_t(c) * pix + i] = S(bare.normals[3 * i + size_t(c)]);
    }
    fb.boot_fg[i] = bare.mask[i] ? S(1) : S(0);
  }
}

}  // namespace detail

// Model inputs for one frame given only a pose window (oldest to newest,
// current frame last). Ground-truth planes stay empty; rollouts never read
// them.
template <class S>
FrameBundle<S> make_pose_bundle(const geom::CanonicalBody& body,
                                const std::vector<geom::PoseFrame>& window,
                                const render::Camera& cam, const NetConfig& cfg) {
  require(!window.empty(), "make_pose_bundle: empty pose window");
  FrameBundle<S> fb;
  std::vector<std::vector<Vec3d>> positions;
  positions.reserve(window.size());
  for (size_t i = 0; i + 1 < window.size(); ++i)
    positions.push_back(geom::pose_positions(body, window[i]));
  auto current = geom::pose(body, window.back());
  positions.push_back(current.positions);

  std::vector<const std::vector<Vec3d>*> hist;
  for (auto& p : positions) hist.push_back(&p);
  auto normals = motion::surface_normals(current.positions, body.faces);
  auto [slabs, valid] = motion::velocities<double>(hist, cfg.t_slabs);
  auto canon = motion::canonicalize(current, normals, slabs, valid);
  auto grid = uv::bake_descriptor_input(body, canon, cfg.uv_res, cfg.occupancy_channel);
  detail::fill_descriptor_planes(grid, cfg, fb);

  auto iuv = render::rasterize_body(body, current.positions, cam);
  fb.gather = render::build_gather_table(iuv, grid.occupancy, cfg.uv_res, cfg.uv_res);
  detail::fill_bootstrap(synth::shade_bare_body(body, current.positions, cam), cfg, fb);
  fb.segment = 0;
  return fb;
}

template <class S>
std::vector<FrameBundle<S>> prepare_bundles(const synth::Dataset& ds, const NetConfig& cfg) {
  const auto& body = ds.body;
  int uv = cfg.uv_res, hw = cfg.img_res;
  size_t pix = size_t(hw) * size_t(hw);
  require(ds.frames.size() >= 1, "dataset has no frames");
  require(ds.camera.w == hw && ds.camera.h == hw, "net img_res must match dataset resolution");

  // posed meshes once per frame
  std::vector<geom::PosedMesh> meshes;
  meshes.reserve(ds.frames.size());
  for (const auto& f : ds.frames) meshes.push_back(geom::pose(body, f.pose));

  std::vector<FrameBundle<S>> bundles(ds.frames.size());
  for (size_t t = 0; t < ds.frames.size(); ++t) {
    const auto& seg = ds.segment_of(int(t));
    FrameBundle<S>& fb = bundles[t];
    fb.segment = seg.begin;

    // descriptor input: canonicalized normals + velocity history inside segment
    std::vector<const std::vector<Vec3d>*> hist;
    for (int q = std::max(seg.begin, int(t) - cfg.t_slabs); q <= int(t); ++q)
      hist.push_back(&meshes[size_t(q)].positions);
    auto normals = motion::surface_normals(meshes[t].positions, body.faces);
    auto [slabs, valid] = motion::velocities<double>(hist, cfg.t_slabs);
    auto canon = motion::canonicalize(meshes[t], normals, slabs, valid);
    auto grid = uv::bake_descriptor_input(body, canon, uv, cfg.occupancy_channel);
    detail::fill_descriptor_planes(grid, cfg, fb);

    // gather table from the stored body IUV
    const auto& gt = ds.frames[t].gt;
    render::RenderedFrame iuv;
    iuv.w = hw;
    iuv.h = hw;
    iuv.mask = gt.body_mask;
    iuv.uvmap = gt.body_uv;
    fb.gather = render::build_gather_table(iuv, grid.occupancy, uv, uv);

    // ground truth planes
    fb.gt_app.resize(3 * pix);
    fb.gt_norm.resize(3 * pix);
    fb.gt_sem.resize(pix);
    fb.gt_fg.resize(pix);
    for (size_t i = 0; i < pix; ++i) {
      for (int c = 0; c < 3; ++c) {
        fb.gt_app[size_t(c) * pix + i] = S(gt.appearance[3 * i + size_t(c)]);
        fb.gt_norm[size_t(c) * pix + i] = S(gt.normals[3 * i + size_t(c)]);
      }
      fb.gt_sem[i] = gt.semantics[i];
      fb.gt_fg[i] = gt.mask[i] ? S(1) : S(0);
    }

    // bare-body bootstrap maps
    detail::fill_bootstrap(synth::shade_bare_body(body, meshes[t].positions, ds.camera), cfg, fb);
  }
  return bundles;
}

// teacher-forced recurrent inputs for frame t
template <class S>
PrevMaps<S> teacher_inputs(const std::vector<FrameBundle<S>>& bundles, int t, int labels, int hw) {
  const FrameBundle<S>& fb = bundles[size_t(t)];
  PrevMaps<S> prev;
  if (t == fb.segment) {
    prev.sem = fb.boot_sem;
    prev.app = fb.boot_app;
    prev.norm = fb.boot_norm;
    return prev;
  }
  const FrameBundle<S>& pb = bundles[size_t(t - 1)];
  size_t pix = size_t(hw) * size_t(hw);
  prev.sem.assign(size_t(labels) * pix, S(0));
  for (size_t i = 0; i < pix; ++i) prev.sem[size_t(pb.gt_sem[i]) * pix + i] = S(1);
  prev.app = pb.gt_app;
  prev.norm = pb.gt_norm;
  return prev;
}

// ---- training ----

struct StepLog {
  int step = 0;
  double loss = 0, la = 0, ls = 0, ln = 0;
};

struct TrainResult {
  std::vector<StepLog> logs;
  std::filesystem::path final_checkpoint;
};

template <class S>
void save_checkpoint(const std::filesystem::path& dir, const Model<S>& model, int step);

template <class S>
Model<S> load_checkpoint(const std::filesystem::path& dir, Json* meta = nullptr);

template <class S>
TrainResult train(Model<S>& model, const synth::Dataset& ds,
                  const std::vector<FrameBundle<S>>& bundles,
                  const std::filesystem::path& out_dir);

// ---- inference ----

template <class S>
struct RolloutFrame {
  std::vector<S> app;    // [3,H,W]
  std::vector<S> norm;   // [3,H,W]
  std::vector<S> sem;    // [L,H,W] probabilities
  std::vector<int32_t> labels;  // argmax per pixel
  std::vector<uint8_t> pred_fg;
};

// Free-running autoregressive rollout over the given frames (within one
// segment ordering); re-bootstraps from the bare body every `reset_every`
// frames (0 = never).
template <class S>
std::vector<RolloutFrame<S>> rollout(const Model<S>& model,
                                     const std::vector<FrameBundle<S>>& bundles,
                                     const std::vector<int>& frames, int reset_every = 16);

struct EvalResult {
  double masked_l1 = 0;      // La-style foreground L1 vs GT
  double ssim = 0;           // on foreground-masked composites
  double fg_iou = 0;         // predicted vs GT foreground
  double bootstrap_l1 = 0;   // same L1 for the bare-body bootstrap baseline
};

template <class S>
EvalResult evaluate(const Model<S>& model, const std::vector<FrameBundle<S>>& bundles,
                    const std::vector<int>& frames, int reset_every = 16);

// ---- template implementations ----

template <class S>
void save_checkpoint(const std::filesystem::path& dir, const Model<S>& model, int step) {
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  std::vector<S> flat;
  Json params = Json::array();
  for (size_t i = 0; i < model.params.values.size(); ++i) {
    Json p;
    p["name"] = model.params.names[i];
    p["shape"] = model.params.shapes[i];
    p["offset"] = flat.size();
    params.push_back(p);
    flat.insert(flat.end(), model.params.values[i].begin(), model.params.values[i].end());
  }
  if constexpr (std::is_same_v<S, float>)
    write_tnsr(tmp / "params.tnsr", TensorBlob::from_f32({uint32_t(flat.size())}, flat));
  else
    write_tnsr(tmp / "params.tnsr", TensorBlob::from_f64({uint32_t(flat.size())}, flat));

  Json index;
  index["format"] = "dyn-checkpoint-v1";
  index["dtype"] = std::is_same_v<S, float> ? "f32" : "f64";
  index["step"] = step;
  index["seed"] = model.cfg.seed;
  index["config"] = model.cfg.to_json();
  index["params"] = params;
  save_json(tmp / "index.json", index);

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

template <class S>
Model<S> load_checkpoint(const std::filesystem::path& dir, Json* meta) {
  Json index = load_json(dir / "index.json");
  require_data(index.value("format", "") == "dyn-checkpoint-v1", "unknown checkpoint format");
  std::string want = std::is_same_v<S, float> ? "f32" : "f64";
  require_data(index.value("dtype", "") == want, "checkpoint dtype mismatch, expected " + want);
  NetConfig cfg = NetConfig::from_json(index.at("config"));
  Model<S> model = Model<S>::init(cfg);

  TensorBlob blob = read_tnsr(dir / "params.tnsr");
  std::vector<S> flat;
  if constexpr (std::is_same_v<S, float>)
    flat = blob.to_f32_vector();
  else
    flat = blob.to_f64_vector();

  const Json& params = index.at("params");
  require_data(params.size() == model.params.values.size(), "checkpoint parameter count mismatch");
  for (size_t i = 0; i < model.params.values.size(); ++i) {
    const Json& p = params.at(i);
    require_data(p.at("name").get<std::string>() == model.params.names[i],
                 "checkpoint parameter name mismatch at index " + std::to_string(i));
    size_t offset = p.at("offset").get<size_t>();
    size_t count = model.params.values[i].size();
    require_data(offset + count <= flat.size(), "checkpoint payload too short");
    std::copy(flat.begin() + long(offset), flat.begin() + long(offset + count),
              model.params.values[i].begin());
  }
  if (meta) *meta = index;
  return model;
}

template <class S>
TrainResult train(Model<S>& model, const synth::Dataset& ds,
                  const std::vector<FrameBundle<S>>& bundles,
                  const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const NetConfig& cfg = model.cfg;
  fs::create_directories(out_dir);
  auto train_frames = ds.frames_of_split("train");
  require(!train_frames.empty(), "train: dataset has no train split frames");

  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);
  TrainResult result;
  std::ofstream csv(out_dir / "metrics.csv");
  csv << "step,loss,L_a,L_s,L_n\n";
  fs::path last_good;

  size_t walk = 0;  // for free-running training order
  PrevMaps<S> carried;
  int carried_from = -1;

  for (int step = 0; step < cfg.steps; ++step) {
    int t;
    if (cfg.teacher_forcing) {
      t = train_frames[rng() % train_frames.size()];
    } else {
      t = train_frames[walk % train_frames.size()];
      walk++;
    }
    const FrameBundle<S>& fb = bundles[size_t(t)];

    ad::Tape<S> tape;
    auto bound = model.params.bind(tape);
    PrevMaps<S> prev;
    if (cfg.teacher_forcing || t == fb.segment || carried_from != t - 1)
      prev = teacher_inputs(bundles, t, cfg.labels, cfg.img_res);
    else
      prev = carried;
    if (t == fb.segment) prev = teacher_inputs(bundles, t, cfg.labels, cfg.img_res);

    auto nodes = forward_frame(tape, model, bound, fb, prev, true);
    double loss = double(tape.value(nodes.loss)[0]);
    if (!std::isfinite(loss)) {
      std::string hint = last_good.empty() ? "no checkpoint written yet"
                                           : "last good checkpoint: " + last_good.string();
      throw NumericFault("train: NaN loss at step " + std::to_string(step) + "; " + hint);
    }
    tape.backward(nodes.loss);
    model.params.adam_step(tape, bound);

    if (!cfg.teacher_forcing) {
      size_t pix = size_t(cfg.img_res) * size_t(cfg.img_res);
      carried.sem = cfg.ablation.no_shape ? fb.boot_sem : tape.value(nodes.shape_probs);
      carried.app = tape.value(nodes.a_hat);
      carried.norm = cfg.ablation.no_normal ? fb.boot_norm : tape.value(nodes.n_hat);
      carried_from = t;
      (void)pix;
    }

    StepLog log;
    log.step = step;
    log.loss = loss;
    log.la = double(tape.value(nodes.la)[0]);
    log.ls = nodes.ls >= 0 ? double(tape.value(nodes.ls)[0]) : 0.0;
    log.ln = nodes.ln >= 0 ? double(tape.value(nodes.ln)[0]) : 0.0;
    result.logs.push_back(log);
    if (step % cfg.log_every == 0 || step == cfg.steps - 1) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", step, log.loss, log.la, log.ls,
                    log.ln);
      csv << buf;
    }

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      fs::path ck = out_dir / ("checkpoint-" + std::to_string(step + 1));
      save_checkpoint(ck, model, step + 1);
      last_good = ck;
    }
  }
  result.final_checkpoint = out_dir / "checkpoint-final";
  save_checkpoint(result.final_checkpoint, model, cfg.steps);
  return result;
}

template <class S>
std::vector<RolloutFrame<S>> rollout(const Model<S>& model,
                                     const std::vector<FrameBundle<S>>& bundles,
                                     const std::vector<int>& frames, int reset_every) {
  const NetConfig& cfg = model.cfg;
  size_t pix = size_t(cfg.img_res) * size_t(cfg.img_res);
  std::vector<RolloutFrame<S>> out;
  out.reserve(frames.size());
  PrevMaps<S> prev;
  int prev_frame = -2;
  int since_reset = 0;

  for (size_t idx = 0; idx < frames.size(); ++idx) {
    int t = frames[idx];
    const FrameBundle<S>& fb = bundles[size_t(t)];
    bool reset = idx == 0 || t != prev_frame + 1 || t == fb.segment ||
                 (reset_every > 0 && since_reset >= reset_every);
    if (reset) {
      prev.sem = fb.boot_sem;
      prev.app = fb.boot_app;
      prev.norm = fb.boot_norm;
      since_reset = 0;
    }

    ad::Tape<S> tape;
    auto bound = model.params.bind(tape);
    auto nodes = forward_frame(tape, model, bound, fb, prev, false);

    RolloutFrame<S> rf;
    rf.app = tape.value(nodes.a_hat);
    rf.norm = cfg.ablation.no_normal ? fb.boot_norm : tape.value(nodes.n_hat);
    rf.sem = cfg.ablation.no_shape ? fb.boot_sem : tape.value(nodes.shape_probs);
    rf.labels.assign(pix, 0);
    rf.pred_fg.assign(pix, 0);
    for (size_t i = 0; i < pix; ++i) {
      int best = 0;
      S bestv = rf.sem[i];
      for (int c = 1; c < cfg.labels; ++c) {
        S v = rf.sem[size_t(c) * pix + i];
        if (v > bestv) {
          bestv = v;
          best = c;
        }
      }
      rf.labels[i] = best;
      rf.pred_fg[i] = best != 0;
    }

    prev.sem = rf.sem;
    prev.app = rf.app;
    prev.norm = rf.norm;
    prev_frame = t;
    ++since_reset;
    out.push_back(std::move(rf));
  }
  return out;
}

namespace detail {

template <class S>
double masked_l1_host(const std::vector<S>& pred, const std::vector<S>& gt,
                      const std::vector<S>& weights1ch, size_t pix) {
  double num = 0, den = 0;
  for (size_t i = 0; i < pix; ++i) {
    double w = double(weights1ch[i]);
    if (w == 0) continue;
    for (int c = 0; c < 3; ++c)
      num += w * std::abs(double(pred[size_t(c) * pix + i]) - double(gt[size_t(c) * pix + i]));
    den += 3 * w;
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace detail

template <class S>
EvalResult evaluate(const Model<S>& model, const std::vector<FrameBundle<S>>& bundles,
                    const std::vector<int>& frames, int reset_every) {
  const NetConfig& cfg = model.cfg;
  size_t pix = size_t(cfg.img_res) * size_t(cfg.img_res);
  auto rolled = rollout(model, bundles, frames, reset_every);

  EvalResult res;
  double ssim_acc = 0;
  double iou_acc = 0;
  double l1_acc = 0, boot_acc = 0;
  for (size_t idx = 0; idx < frames.size(); ++idx) {
    const FrameBundle<S>& fb = bundles[size_t(frames[idx])];
    const RolloutFrame<S>& rf = rolled[idx];

    std::vector<S> weights(pix);
    std::vector<S> bootw(pix);
    double inter = 0, uni = 0;
    for (size_t i = 0; i < pix; ++i) {
      bool gt_on = fb.gt_fg[i] != S(0);
      bool pred_on = rf.pred_fg[i] != 0;
      weights[i] = (gt_on || pred_on) ? S(1) : S(0);
      bootw[i] = (gt_on || fb.boot_fg[i] != S(0)) ? S(1) : S(0);
      inter += (gt_on && pred_on) ? 1 : 0;
      uni += (gt_on || pred_on) ? 1 : 0;
    }
    l1_acc += detail::masked_l1_host(rf.app, fb.gt_app, weights, pix);
    boot_acc += detail::masked_l1_host(fb.boot_app, fb.gt_app, bootw, pix);
    iou_acc += uni > 0 ? inter / uni : 1.0;

    ImageF pred_img, gt_img;
    pred_img.w = pred_img.h = cfg.img_res;
    pred_img.ch = 3;
    pred_img.px.resize(pix * 3);
    gt_img = pred_img;
    for (size_t i = 0; i < pix; ++i)
      for (int c = 0; c < 3; ++c) {
        pred_img.px[i * 3 + size_t(c)] =
            rf.pred_fg[i] ? float(rf.app[size_t(c) * pix + i]) : 0.f;
        gt_img.px[i * 3 + size_t(c)] =
            fb.gt_fg[i] != S(0) ? float(fb.gt_app[size_t(c) * pix + i]) : 0.f;
      }
    ssim_acc += metrics::ssim(pred_img, gt_img);
  }
  double n = double(frames.size());
  res.masked_l1 = l1_acc / n;
  res.bootstrap_l1 = boot_acc / n;
  res.ssim = ssim_acc / n;
  res.fg_iou = iou_acc / n;
  return res;
}

}  // namespace dyn::nets
