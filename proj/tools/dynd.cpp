#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dyn/metrics.hpp"
#include "dyn/nets.hpp"
#include "dyn/retrieval.hpp"
#include "dyn/runio.hpp"
#include "dyn/synthdata.hpp"
#include "dyn/track.hpp"

namespace fs = std::filesystem;
using namespace dyn;

namespace {

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

// "a:b" -> [a, b)
std::pair<int, int> parse_range(const std::string& s, int max_end) {
  size_t colon = s.find(':');
  require(colon != std::string::npos, "range must look like a:b, got " + s);
  int a = std::stoi(s.substr(0, colon));
  int b = std::stoi(s.substr(colon + 1));
  require(a >= 0 && b > a && b <= max_end, "range " + s + " out of bounds (max " +
                                               std::to_string(max_end) + ")");
  return {a, b};
}

ImageU8 flip_rows_to_u8(const std::vector<float>& planes, int hw, bool signed_range,
                        const std::vector<uint8_t>* mask = nullptr) {
  ImageF img;
  img.w = img.h = hw;
  img.ch = 3;
  img.px.resize(size_t(hw) * size_t(hw) * 3);
  size_t pix = size_t(hw) * size_t(hw);
  for (int y = 0; y < hw; ++y)
    for (int x = 0; x < hw; ++x) {
      size_t src = size_t(y) * size_t(hw) + size_t(x);
      size_t dst = size_t(hw - 1 - y) * size_t(hw) + size_t(x);
      for (int c = 0; c < 3; ++c) {
        float v = planes[size_t(c) * pix + src];
        if (mask && !(*mask)[src]) v = signed_range ? -1.f : 0.f;
        img.px[dst * 3 + size_t(c)] = v;
      }
    }
  return signed_range ? signed_to_u8(img) : to_u8(img);
}

std::vector<geom::PoseFrame> load_params_csv(const fs::path& path, int joint_count,
                                             int blendshape_count) {
  std::ifstream f(path);
  require_data(f.good(), "cannot open params csv: " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::vector<geom::PoseFrame> frames;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    geom::PoseFrame frame;
    for (int i = 0; i < 3 * joint_count; ++i) {
      require_data(bool(std::getline(ss, cell, ',')), "params csv row too short");
      frame.theta.push_back(std::stod(cell));
    }
    for (int b = 0; b < blendshape_count; ++b) {
      require_data(bool(std::getline(ss, cell, ',')), "params csv row too short");
      frame.beta.push_back(std::stod(cell));
    }
    std::getline(ss, cell, ',');
    frame.camera.cx = std::stod(cell);
    std::getline(ss, cell, ',');
    frame.camera.cy = std::stod(cell);
    std::getline(ss, cell, ',');
    frame.camera.s = std::stod(cell);
    frames.push_back(std::move(frame));
  }
  return frames;
}

void write_params_csv(const fs::path& path, const std::vector<geom::PoseFrame>& frames) {
  std::ofstream f(path);
  require_data(f.good(), "cannot write " + path.string());
  f << "frame";
  if (!frames.empty()) {
    for (size_t i = 0; i < frames[0].theta.size(); ++i) f << ",theta" << i;
    for (size_t b = 0; b < frames[0].beta.size(); ++b) f << ",beta" << b;
  }
  f << ",cx,cy,s\n";
  char buf[32];
  for (size_t t = 0; t < frames.size(); ++t) {
    f << t;
    for (double v : frames[t].theta) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      f << buf;
    }
    for (double v : frames[t].beta) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      f << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g", frames[t].camera.cx);
    f << buf;
    std::snprintf(buf, sizeof buf, ",%.17g", frames[t].camera.cy);
    f << buf;
    std::snprintf(buf, sizeof buf, ",%.17g", frames[t].camera.s);
    f << buf << "\n";
  }
}

void write_profile_svg(const fs::path& path, const std::vector<double>& scores,
                       const std::vector<int>& peaks) {
  const int w = 640, h = 240, margin = 24;
  std::ofstream f(path);
  require_data(f.good(), "cannot write " + path.string());
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  f << "<rect width='" << w << "' height='" << h << "' fill='white'/>\n";
  auto xm = [&](size_t i) {
    return margin + double(i) * (w - 2 * margin) / std::max<size_t>(1, scores.size() - 1);
  };
  auto ym = [&](double s) { return h - margin - (s + 1.0) * 0.5 * (h - 2 * margin); };
  f << "<line x1='" << margin << "' y1='" << ym(0) << "' x2='" << w - margin << "' y2='" << ym(0)
    << "' stroke='#cccccc'/>\n";
  f << "<polyline fill='none' stroke='#2255cc' stroke-width='1.5' points='";
  for (size_t i = 0; i < scores.size(); ++i) f << xm(i) << "," << ym(scores[i]) << " ";
  f << "'/>\n";
  for (int p : peaks)
    f << "<circle cx='" << xm(size_t(p)) << "' cy='" << ym(scores[size_t(p)])
      << "' r='3' fill='#cc3322'/>\n";
  f << "</svg>\n";
}

// rollout over dataset frames and dump predictions
template <class S>
void dump_rollout(const nets::Model<S>& model, const std::vector<nets::FrameBundle<S>>& bundles,
                  const std::vector<int>& frames, const fs::path& out) {
  fs::create_directories(out / "pred");
  auto rolled = nets::rollout(model, bundles, frames, 16);
  int hw = model.cfg.img_res;
  size_t pix = size_t(hw) * size_t(hw);
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& rf = rolled[i];
    std::vector<float> packed(7 * pix);
    for (size_t p = 0; p < pix; ++p) {
      for (int c = 0; c < 3; ++c) {
        packed[size_t(c) * pix + p] = float(rf.app[size_t(c) * pix + p]);
        packed[size_t(3 + c) * pix + p] = float(rf.norm[size_t(c) * pix + p]);
      }
      packed[6 * pix + p] = rf.pred_fg[p] ? 1.f : 0.f;
    }
    write_tnsr(out / "pred" / (frame_name(frames[i]) + ".tnsr"),
               TensorBlob::from_f32({7, uint32_t(hw), uint32_t(hw)}, packed));
    std::vector<float> app(rf.app.begin(), rf.app.end());
    std::vector<uint8_t> fg(rf.pred_fg.begin(), rf.pred_fg.end());
    png_write(out / "pred" / (frame_name(frames[i]) + ".png"),
              flip_rows_to_u8(app, hw, false, &fg));
    std::vector<float> nrm(rf.norm.begin(), rf.norm.end());
    png_write(out / "pred" / (frame_name(frames[i]) + "_normal.png"),
              flip_rows_to_u8(nrm, hw, true, &fg));
  }
}

struct CommonArgs {
  std::string out;
  std::string config;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_synth(const CommonArgs& common) {
  Json cfg_json = load_json(common.config);
  if (common.seed_set) cfg_json["seed"] = common.seed;
  auto cfg = synth::DatasetConfig::from_json(cfg_json);
  auto t0 = std::chrono::steady_clock::now();
  OutputLock lock(common.out);
  auto index = synth::export_dataset(cfg, fs::path(common.out) / "dataset");
  RunManifest m;
  m.command = "synth";
  m.config_hash = hash_hex(canonical_hash(cfg.to_json()));
  m.seed = cfg.seed;
  m.inputs = {common.config};
  m.outputs = {(fs::path(common.out) / "dataset").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  std::cout << "synth: " << index.frame_count << " frames, config " << index.config_hash << "\n";
  return 0;
}

int run_descriptor(const CommonArgs& common, const std::string& data, const std::string& ckpt) {
  auto t0 = std::chrono::steady_clock::now();
  auto ds = synth::load_dataset(data);
  OutputLock lock(common.out);
  fs::path out(common.out);
  fs::create_directories(out / "desc");

  nets::NetConfig ncfg;
  ncfg.uv_res = ds.index.config.uv_res;
  ncfg.img_res = ds.index.config.img_res;
  ncfg.t_slabs = ds.index.config.t_slabs;
  std::optional<nets::Model<float>> model;
  if (!ckpt.empty()) {
    model = nets::load_checkpoint<float>(ckpt);
    ncfg = model->cfg;
    fs::create_directories(out / "f3d");
  }
  auto bundles = nets::prepare_bundles<float>(ds, ncfg);
  int uv = ncfg.uv_res;
  for (size_t t = 0; t < bundles.size(); ++t) {
    write_tnsr(out / "desc" / (frame_name(int(t)) + ".tnsr"),
               TensorBlob::from_f32({uint32_t(ncfg.desc_input_channels()), uint32_t(uv),
                                     uint32_t(uv)},
                                    bundles[t].desc_input));
    if (model) {
      ad::Tape<float> tape;
      auto bound = model->params.bind(tape);
      auto nodes = nets::forward_frame(tape, *model, bound, bundles[t],
                                       nets::teacher_inputs(bundles, int(t), ncfg.labels,
                                                            ncfg.img_res),
                                       false);
      write_tnsr(out / "f3d" / (frame_name(int(t)) + ".tnsr"),
                 TensorBlob::from_f32({uint32_t(ncfg.d), uint32_t(uv), uint32_t(uv)},
                                      tape.value(nodes.f3d)));
    }
  }
  // shared occupancy channel of the atlas
  std::vector<uint8_t> occ(bundles[0].occupancy.size());
  for (size_t i = 0; i < occ.size(); ++i) occ[i] = bundles[0].occupancy[i] != 0 ? 1 : 0;
  write_tnsr(out / "occupancy.tnsr", TensorBlob::from_u8({uint32_t(uv), uint32_t(uv)}, occ));

  RunManifest m;
  m.command = "descriptor";
  m.config_hash = ds.index.config_hash;
  m.seed = ds.index.config.seed;
  m.inputs = {data, ckpt};
  m.outputs = {(out / "desc").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  std::cout << "descriptor: " << bundles.size() << " frames\n";
  return 0;
}

int run_retrieve(const CommonArgs& common, const std::string& data, const std::string& kind_str,
                 const std::string& query_range, const std::string& ref_range, int k,
                 const std::string& part, int profile_query) {
  auto t0 = std::chrono::steady_clock::now();
  auto ds = synth::load_dataset(data);
  OutputLock lock(common.out);
  fs::path out(common.out);

  auto kind = retrieval::kind_from_string(kind_str);
  auto [q0, q1] = parse_range(query_range, ds.index.frame_count);
  auto [r0, r1] = parse_range(ref_range, ds.index.frame_count);

  std::vector<geom::PoseFrame> poses;
  for (const auto& f : ds.frames) poses.push_back(f.pose);

  const geom::UvRect<double>* region = nullptr;
  for (const auto& chart : ds.body.charts)
    if (chart.name == part) region = &chart.rect;
  require(part.empty() || region != nullptr, "unknown body part chart: " + part);
  require(part.empty() || kind == retrieval::DescriptorKind::k3dUv,
          "--part applies to the 3d-uv descriptor only");

  retrieval::DescriptorTrack track;
  if (kind == retrieval::DescriptorKind::k3dUv)
    track = retrieval::build_3d_track(ds.body, poses, ds.index.config.t_slabs,
                                      ds.index.config.uv_res, region);
  else
    track = retrieval::build_2d_baseline(ds.body, poses, ds.camera, kind,
                                         ds.index.config.t_slabs);

  std::vector<int> refs;
  for (int f = r0; f < r1; ++f) refs.push_back(f);

  std::ofstream csv(out / "scores.csv");
  csv << "query,rank,ref,score\n";
  for (int q = q0; q < q1; ++q) {
    auto res = retrieval::retrieve(track, q, track, refs, k);
    for (size_t rank = 0; rank < res.top.size(); ++rank) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%d,%zu,%d,%.9g\n", q, rank,
                    res.top[rank],
                    res.profile.scores[size_t(std::find(refs.begin(), refs.end(), res.top[rank]) -
                                              refs.begin())]);
      csv << buf;
    }
    if (q == profile_query) {
      write_profile_svg(out / "profile.svg", res.profile.scores, res.profile.peaks);
      // strip: query frame + top-k retrieved appearance patches
      int hw = ds.camera.w;
      std::vector<int> strip_frames = {q};
      for (int tf : res.top) strip_frames.push_back(tf);
      ImageU8 strip;
      strip.w = hw * int(strip_frames.size());
      strip.h = hw;
      strip.ch = 3;
      strip.px.assign(size_t(strip.w) * size_t(strip.h) * 3, 255);
      for (size_t si = 0; si < strip_frames.size(); ++si) {
        const auto& gt = ds.frames[size_t(strip_frames[si])].gt;
        for (int y = 0; y < hw; ++y)
          for (int x = 0; x < hw; ++x) {
            size_t src = size_t(y) * size_t(hw) + size_t(x);
            size_t dst = (size_t(hw - 1 - y) * size_t(strip.w) + si * size_t(hw) + size_t(x)) * 3;
            for (int c = 0; c < 3; ++c)
              strip.px[dst + size_t(c)] =
                  uint8_t(std::lround(std::clamp(gt.appearance[3 * src + size_t(c)], 0.0, 1.0) * 255));
          }
      }
      png_write(out / "strip.png", strip);
    }
  }

  RunManifest m;
  m.command = "retrieve";
  m.config_hash = ds.index.config_hash;
  m.seed = ds.index.config.seed;
  m.inputs = {data};
  m.outputs = {(out / "scores.csv").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  return 0;
}

int run_train(const CommonArgs& common, const std::string& data) {
  auto t0 = std::chrono::steady_clock::now();
  Json cfg_json = load_json(common.config);
  if (common.seed_set) cfg_json["seed"] = common.seed;
  auto cfg = nets::NetConfig::from_json(cfg_json);
  auto ds = synth::load_dataset(data);
  require(cfg.img_res == ds.index.config.img_res, "train img_res must match the dataset");
  OutputLock lock(common.out);
  fs::path out(common.out);

  if (cfg.precision == "f64") {
    auto model = nets::Model<double>::init(cfg);
    auto bundles = nets::prepare_bundles<double>(ds, cfg);
    nets::train(model, ds, bundles, out);
  } else {
    auto model = nets::Model<float>::init(cfg);
    auto bundles = nets::prepare_bundles<float>(ds, cfg);
    nets::train(model, ds, bundles, out);
  }

  RunManifest m;
  m.command = "train";
  m.config_hash = hash_hex(canonical_hash(cfg.to_json()));
  m.seed = cfg.seed;
  m.inputs = {common.config, data};
  m.outputs = {(out / "checkpoint-final").string(), (out / "metrics.csv").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  std::cout << "train: done, checkpoint-final written\n";
  return 0;
}

int run_render(const CommonArgs& common, const std::string& data, const std::string& ckpt,
               const std::string& frames_range, int orbit, int orbit_frame,
               const std::string& retarget) {
  auto t0 = std::chrono::steady_clock::now();
  auto ds = synth::load_dataset(data);
  OutputLock lock(common.out);
  fs::path out(common.out);
  fs::create_directories(out);

  require(!ckpt.empty(), "render needs --checkpoint (model inference)");
  auto model = nets::load_checkpoint<float>(ckpt);
  require(model.cfg.img_res == ds.camera.w, "checkpoint resolution must match the dataset");

  std::vector<geom::PoseFrame> poses;
  if (!retarget.empty()) {
    poses = load_params_csv(retarget, ds.body.joint_count(), ds.body.blendshape_count());
  } else {
    for (const auto& f : ds.frames) poses.push_back(f.pose);
  }

  if (orbit > 0) {
    // bullet time: freeze the pose window ending at orbit_frame, sweep the
    // root rotation in 360/orbit steps
    require(orbit_frame >= 0 && orbit_frame < int(poses.size()), "orbit frame out of range");
    int begin = std::max(0, orbit_frame - model.cfg.t_slabs);
    std::vector<geom::PoseFrame> window(poses.begin() + begin, poses.begin() + orbit_frame + 1);
    fs::create_directories(out / "pred");
    for (int k = 0; k < orbit; ++k) {
      double angle = 2.0 * 3.14159265358979323846 * k / orbit;
      Mat3d rot = axis_angle_to_matrix(Vec3d{0, angle, 0});
      std::vector<geom::PoseFrame> turned;
      for (const auto& f : window) turned.push_back(geom::with_root_rotation(f, rot));
      auto fb = nets::make_pose_bundle<float>(ds.body, turned, ds.camera, model.cfg);
      std::vector<nets::FrameBundle<float>> one = {fb};
      auto rolled = nets::rollout(model, one, {0}, 0);
      int hw = model.cfg.img_res;
      std::vector<float> app(rolled[0].app.begin(), rolled[0].app.end());
      std::vector<uint8_t> fg(rolled[0].pred_fg.begin(), rolled[0].pred_fg.end());
      png_write(out / "pred" / ("orbit_" + frame_name(k) + ".png"),
                flip_rows_to_u8(app, hw, false, &fg));
    }
  } else if (!retarget.empty()) {
    fs::create_directories(out / "pred");
    std::vector<nets::FrameBundle<float>> bundles;
    for (size_t t = 0; t < poses.size(); ++t) {
      int begin = std::max(0, int(t) - model.cfg.t_slabs);
      std::vector<geom::PoseFrame> window(poses.begin() + begin, poses.begin() + long(t) + 1);
      bundles.push_back(nets::make_pose_bundle<float>(ds.body, window, ds.camera, model.cfg));
      bundles.back().segment = 0;
    }
    for (size_t t = 1; t < bundles.size(); ++t) bundles[t].segment = -1;  // one contiguous take
    std::vector<int> idx(poses.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    dump_rollout(model, bundles, idx, out);
  } else {
    auto [f0, f1] = frames_range.empty()
                        ? std::pair<int, int>(0, ds.index.frame_count)
                        : parse_range(frames_range, ds.index.frame_count);
    auto bundles = nets::prepare_bundles<float>(ds, model.cfg);
    std::vector<int> idx;
    for (int f = f0; f < f1; ++f) idx.push_back(f);
    dump_rollout(model, bundles, idx, out);
  }

  RunManifest m;
  m.command = "render";
  m.config_hash = ds.index.config_hash;
  m.seed = model.cfg.seed;
  m.inputs = {data, ckpt, retarget};
  m.outputs = {(out / "pred").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  return 0;
}

int run_track(const CommonArgs& common, const std::string& obs_dir, double prior_sigma,
              bool prior_temporal, double noise_sigma, double dropout) {
  auto t0 = std::chrono::steady_clock::now();
  auto ds = synth::load_dataset(obs_dir);
  OutputLock lock(common.out);
  fs::path out(common.out);

  track::TrackConfig cfg;
  if (!common.config.empty()) cfg = track::TrackConfig::from_json(load_json(common.config));

  auto uv_index = uv::bake_vertex_index(ds.body, cfg.index_res);
  std::vector<track::Observation> observations;
  std::vector<geom::PoseFrame> gt;
  std::mt19937_64 rng(common.seed_set ? common.seed : 17);
  for (size_t t = 0; t < ds.frames.size(); ++t) {
    const auto& frame = ds.frames[t];
    gt.push_back(frame.pose);
    const auto& maps = frame.gt;
    track::ObservationNoise noise;
    noise.uv_sigma = noise_sigma;
    noise.dropout = dropout;
    noise.seed = rng();
    auto positions = geom::pose_positions(ds.body, frame.pose);
    observations.push_back(track::make_observation(maps.w, maps.h, maps.body_mask, maps.part,
                                                   maps.body_uv, uv_index, cfg.index_res,
                                                   cfg.corr_cap, positions, frame.pose.camera,
                                                   noise));
  }

  auto priors = gt;
  for (auto& f : priors)
    for (auto& th : f.theta) th += prior_sigma * gauss(rng);
  (void)prior_temporal;  // iid per frame: already temporally incoherent

  track::TrackReport report;
  auto state = track::track(ds.body, observations, priors, cfg, &gt, &report);

  write_params_csv(out / "params.csv", state.frames);
  std::ofstream err(out / "error.csv");
  err << "frame,err_px_mean,err_px_std\n";
  for (size_t t = 0; t < report.err_px_mean.size(); ++t) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", t, report.err_px_mean[t],
                  report.err_px_std[t]);
    err << buf;
  }
  Json summary;
  summary["loss_first"] = state.loss_history.front();
  summary["loss_last"] = state.loss_history.back();
  save_json(out / "summary.json", summary);

  RunManifest m;
  m.command = "track";
  m.config_hash = hash_hex(canonical_hash(cfg.to_json()));
  m.seed = common.seed_set ? common.seed : 17;
  m.inputs = {obs_dir};
  m.outputs = {(out / "params.csv").string(), (out / "error.csv").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  return 0;
}

int run_metrics(const CommonArgs& common, const std::string& dir_a, const std::string& dir_b) {
  auto t0 = std::chrono::steady_clock::now();
  OutputLock lock(common.out);
  fs::path out(common.out);

  // match png frames by filename
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir_a))
    if (entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<ImageF> a, b;
  for (const auto& n : names) {
    fs::path pb = fs::path(dir_b) / n;
    if (!fs::exists(pb)) continue;
    a.push_back(to_f32(png_read(fs::path(dir_a) / n)));
    b.push_back(to_f32(png_read(pb)));
  }
  require_data(!a.empty(), "metrics: no matching png frames between the two directories");

  auto report = metrics::build_report(a, b, metrics::one_minus_ssim());
  std::ofstream csv(out / "metrics.csv");
  csv << "frame,ssim,tD\n";
  for (size_t i = 0; i < report.ssim_per_frame.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i, report.ssim_per_frame[i],
                  i > 0 ? report.t_distance[i - 1] : 0.0);
    csv << buf;
  }
  Json agg;
  agg["ssim_mean"] = report.ssim_mean;
  agg["ssim_std"] = report.ssim_std;
  agg["tD_mean"] = report.t_mean;
  agg["tD_std"] = report.t_std;
  agg["frames"] = a.size();
  save_json(out / "aggregate.json", agg);

  RunManifest m;
  m.command = "metrics";
  m.config_hash = "";
  m.seed = 0;
  m.inputs = {dir_a, dir_b};
  m.outputs = {(out / "metrics.csv").string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  std::cout << "metrics: ssim_mean " << report.ssim_mean << " tD_mean " << report.t_mean << "\n";
  return 0;
}

int run_relight(const CommonArgs& common, const std::string& run_dir, const std::string& light_str,
                double ambient) {
  auto t0 = std::chrono::steady_clock::now();
  OutputLock lock(common.out);
  fs::path out(common.out);
  fs::create_directories(out);

  Vec3d light{0, 0, 1};
  {
    std::istringstream ss(light_str);
    std::string cell;
    std::getline(ss, cell, ',');
    light.x = std::stod(cell);
    std::getline(ss, cell, ',');
    light.y = std::stod(cell);
    require(bool(std::getline(ss, cell, ',')), "--light must be x,y,z");
    light.z = std::stod(cell);
  }

  fs::path pred = fs::path(run_dir) / "pred";
  require_data(fs::exists(pred), "relight: no pred/ directory under " + run_dir);
  int produced = 0;
  for (const auto& entry : fs::directory_iterator(pred)) {
    if (entry.path().extension() != ".tnsr") continue;
    auto blob = read_tnsr(entry.path());
    require_data(blob.dims.size() == 3 && blob.dims[0] == 7, "relight: expected 7-channel pred tensor");
    int hw = int(blob.dims[1]);
    size_t pix = size_t(hw) * size_t(hw);
    auto data = blob.to_f64_vector();
    std::vector<double> app(3 * pix), nrm(3 * pix);
    std::vector<uint8_t> mask(pix);
    for (size_t p = 0; p < pix; ++p) {
      for (int c = 0; c < 3; ++c) {
        app[3 * p + size_t(c)] = data[size_t(c) * pix + p];
        nrm[3 * p + size_t(c)] = data[size_t(3 + c) * pix + p];
      }
      mask[p] = data[6 * pix + p] > 0.5 ? 1 : 0;
    }
    auto lit = render::relight(app, nrm, mask, hw, hw, light, ambient);
    std::vector<float> planes(3 * pix, 0.f);
    for (size_t p = 0; p < pix; ++p)
      for (int c = 0; c < 3; ++c) planes[size_t(c) * pix + p] = float(lit[3 * p + size_t(c)]);
    std::vector<uint8_t> m8(mask.begin(), mask.end());
    png_write(out / entry.path().filename().replace_extension(".png"),
              flip_rows_to_u8(planes, hw, false, &m8));
    ++produced;
  }
  require_data(produced > 0, "relight: no pred tensors found");

  RunManifest m;
  m.command = "relight";
  m.config_hash = "";
  m.seed = 0;
  m.inputs = {run_dir};
  m.outputs = {out.string()};
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(common.out, m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion-dependent human rendering toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data, ckpt, kind = "3d-uv", query_range, ref_range, part, frames_range, retarget;
  std::string obs_dir, dir_a, dir_b, run_dir, light_str = "0,0,1";
  int topk = 2, profile_query = -1, orbit = 0, orbit_frame = 0;
  double ambient = 0.2, prior_sigma = 0.0, noise_sigma = 0.0, dropout = 0.0;
  bool prior_temporal = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    cmd->add_option("--out", common.out, "output directory")->required();
    auto* seed_opt = cmd->add_option("--seed", common.seed, "seed override");
    cmd->callback([&common, seed_opt] { common.seed_set = seed_opt->count() > 0; });
    if (needs_config)
      cmd->add_option("--config", common.config, "json config file")->required();
    else
      cmd->add_option("--config", common.config, "json config file");
  };

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth_cmd, true);

  auto* desc_cmd = app.add_subcommand("descriptor", "bake per-frame motion descriptors");
  add_common(desc_cmd, false);
  desc_cmd->add_option("--data", data, "dataset directory")->required();
  desc_cmd->add_option("--checkpoint", ckpt, "also emit learned f3d grids");

  auto* ret_cmd = app.add_subcommand("retrieve", "NCC nearest-neighbour retrieval");
  add_common(ret_cmd, false);
  ret_cmd->add_option("--data", data, "dataset directory")->required();
  ret_cmd->add_option("--kind", kind, "3d-uv | 2d-sparse | 2d-dense");
  ret_cmd->add_option("--query", query_range, "query frame range a:b")->required();
  ret_cmd->add_option("--reference", ref_range, "reference frame range a:b")->required();
  ret_cmd->add_option("-k,--topk", topk, "retrieved frames per query");
  ret_cmd->add_option("--part", part, "restrict to one chart (3d-uv)");
  ret_cmd->add_option("--profile-query", profile_query, "emit profile.svg and strip.png for this query");

  auto* train_cmd = app.add_subcommand("train", "train the rendering pipeline");
  add_common(train_cmd, true);
  train_cmd->add_option("--data", data, "dataset directory")->required();

  auto* render_cmd = app.add_subcommand("render", "run model inference");
  add_common(render_cmd, false);
  render_cmd->add_option("--data", data, "dataset directory")->required();
  render_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  render_cmd->add_option("--frames", frames_range, "frame range a:b, default all");
  render_cmd->add_option("--orbit", orbit, "bullet-time: N frames at k*360/N degrees");
  render_cmd->add_option("--frame", orbit_frame, "frame to orbit around");
  render_cmd->add_option("--retarget", retarget, "drive with another params.csv (motion transfer)");

  auto* track_cmd = app.add_subcommand("track", "model-based pose tracking");
  add_common(track_cmd, false);
  track_cmd->add_option("--obs", obs_dir, "observation dataset directory")->required();
  track_cmd->add_option("--prior-sigma", prior_sigma, "per-joint gaussian prior noise (rad)");
  track_cmd->add_flag("--prior-temporal", prior_temporal, "note: prior noise is iid per frame");
  track_cmd->add_option("--noise-sigma", noise_sigma, "uv observation noise");
  track_cmd->add_option("--dropout", dropout, "correspondence dropout probability");

  auto* metrics_cmd = app.add_subcommand("metrics", "SSIM and temporal distance between frame dirs");
  add_common(metrics_cmd, false);
  metrics_cmd->add_option("--a", dir_a, "first frame directory")->required();
  metrics_cmd->add_option("--b", dir_b, "second frame directory")->required();

  auto* relight_cmd = app.add_subcommand("relight", "relight rendered predictions");
  add_common(relight_cmd, false);
  relight_cmd->add_option("--run", run_dir, "render output directory")->required();
  relight_cmd->add_option("--light", light_str, "light direction x,y,z");
  relight_cmd->add_option("--ambient", ambient, "ambient term in [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(common);
    if (desc_cmd->parsed()) return run_descriptor(common, data, ckpt);
    if (ret_cmd->parsed())
      return run_retrieve(common, data, kind, query_range, ref_range, topk, part, profile_query);
    if (train_cmd->parsed()) return run_train(common, data);
    if (render_cmd->parsed())
      return run_render(common, data, ckpt, frames_range, orbit, orbit_frame, retarget);
    if (track_cmd->parsed())
      return run_track(common, obs_dir, prior_sigma, prior_temporal, noise_sigma, dropout);
    if (metrics_cmd->parsed()) return run_metrics(common, dir_a, dir_b);
    if (relight_cmd->parsed()) return run_relight(common, run_dir, light_str, ambient);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
