#include "dyn/track.hpp"

#include <cmath>
#include <random>

#include "dyn/uvbake.hpp"

namespace dyn::track {

namespace {

// Per-frame machinery for the analytic L_f jacobian. For joint c and
// component k, d(G_j)/d(theta_ck) = M_ck * G_j for every descendant j, with
// M_ck = [A | -A p], A = P dR R_c^T P^T, (P, p) the pre-rotation global of c.
struct PoseJacobian {
  const geom::CanonicalBody* body;
  std::vector<Transform<double>> skin;     // skinning transforms per joint
  std::vector<Mat3<double>> a;             // J*3 linear parts
  std::vector<Vec3d> b;                    // J*3 translation columns
  std::vector<std::vector<int>> ancestors; // ancestor chain (self first)

  PoseJacobian(const geom::CanonicalBody& body_, const geom::PoseFrame& frame) : body(&body_) {
    const auto& joints = body_.joints;
    size_t j_count = joints.size();
    std::vector<Transform<double>> pre(j_count), posed(j_count);
    std::vector<Mat3<double>> local_rot(j_count);
    for (size_t j = 0; j < j_count; ++j) {
      Transform<double> offset = Transform<double>::translation(joints[j].offset);
      int parent = joints[j].parent;
      pre[j] = parent < 0 ? offset : posed[size_t(parent)] * offset;
      local_rot[j] = axis_angle_to_matrix(frame.joint_rotation(int(j)));
      posed[j] = pre[j] * Transform<double>{local_rot[j], {0, 0, 0}};
    }
    auto rest = geom::forward_kinematics<double>(body_, nullptr);
    skin.resize(j_count);
    for (size_t j = 0; j < j_count; ++j) skin[j] = posed[j] * rest[j].inverse();

    a.resize(j_count * 3);
    b.resize(j_count * 3);
    for (size_t c = 0; c < j_count; ++c) {
      Vec3d aa = frame.joint_rotation(int(c));
      const Mat3<double>& p = pre[c].r;
      Mat3<double> pt = p.transposed();
      Mat3<double> rct = local_rot[c].transposed();
      for (int k = 0; k < 3; ++k) {
        Mat3<double> dr = axis_angle_jacobian(aa, k, local_rot[c]);
        Mat3<double> lin = p * dr * rct * pt;
        a[c * 3 + size_t(k)] = lin;
        b[c * 3 + size_t(k)] = (lin * pre[c].t) * -1.0;
      }
    }
    ancestors.resize(j_count);
    for (size_t j = 0; j < j_count; ++j) {
      int cur = int(j);
      while (cur >= 0) {
        ancestors[j].push_back(cur);
        cur = joints[size_t(cur)].parent;
      }
    }
  }

  // d(position of vertex v)/d(theta_ck) for all (c, k), accumulated sparsely:
  // emit(c, k, dX) for ancestors of the vertex's influencing joints.
  template <class Emit>
  void vertex_jacobian(int v, const Vec3d& shaped, Emit&& emit) const {
    // subtree accumulators: acc_c = sum over influences j in subtree(c)
    // of w * skin_j(shaped), homogeneous weight sum in w_acc
    struct Acc {
      Vec3d p{0, 0, 0};
      double w = 0;
      bool used = false;
    };
    thread_local std::vector<Acc> acc;
    acc.assign(body->joints.size(), Acc{});
    for (const auto& in : body->skin_weights[size_t(v)]) {
      Vec3d q = skin[size_t(in.joint)].apply(shaped) * in.weight;
      for (int c : ancestors[size_t(in.joint)]) {
        acc[size_t(c)].p += q;
        acc[size_t(c)].w += in.weight;
        acc[size_t(c)].used = true;
      }
    }
    for (size_t c = 0; c < acc.size(); ++c) {
      if (!acc[c].used) continue;
      for (int k = 0; k < 3; ++k) {
        const Mat3<double>& lin = a[c * 3 + size_t(k)];
        Vec3d dx = lin * acc[c].p + b[c * 3 + size_t(k)] * acc[c].w;
        emit(int(c), k, dx);
      }
    }
  }
};

render::Camera obs_camera(const geom::PoseFrame& frame, const Observation& obs) {
  render::Camera cam;
  cam.w = obs.w;
  cam.h = obs.h;
  cam.cx = frame.camera.cx;
  cam.cy = frame.camera.cy;
  cam.s = frame.camera.s;
  return cam;
}

}  // namespace

Observation make_observation(int w, int h, const std::vector<uint8_t>& mask,
                             const std::vector<int32_t>& part, const std::vector<double>& uvmap,
                             const std::vector<int32_t>& uv_index, int index_res, int corr_cap,
                             const std::vector<Vec3d>& observed_positions,
                             const geom::WeakPerspective& observed_camera,
                             const ObservationNoise& noise) {
  Observation obs;
  obs.w = w;
  obs.h = h;
  obs.mask = mask;
  obs.part = part;
  obs.uvmap = uvmap;
  std::mt19937_64 rng(noise.seed);
  render::Camera ocam{observed_camera.cx, observed_camera.cy, observed_camera.s, w, h};

  if (noise.uv_sigma > 0) {
    for (size_t i = 0; i < obs.uvmap.size(); ++i) {
      size_t pi = i / 2;
      if (!obs.mask[pi]) continue;
      obs.uvmap[i] = std::clamp(obs.uvmap[i] + noise.uv_sigma * gauss(rng), 0.0, 1.0);
    }
  }

  // deterministic stride subsampling of masked pixels
  int masked = 0;
  for (uint8_t m : mask) masked += m ? 1 : 0;
  int stride = corr_cap > 0 ? std::max(1, masked / corr_cap) : 1;
  int seen = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t pi = size_t(y) * size_t(w) + size_t(x);
      if (!mask[pi]) continue;
      if (seen++ % stride != 0) continue;
      if (noise.dropout > 0 && double(rng() >> 11) * 0x1p-53 < noise.dropout) continue;
      double u = obs.uvmap[2 * pi], v = obs.uvmap[2 * pi + 1];
      int tx = std::clamp(int(u * index_res), 0, index_res - 1);
      int ty = std::clamp(int(v * index_res), 0, index_res - 1);
      int vertex = uv_index[size_t(ty) * size_t(index_res) + size_t(tx)];
      if (vertex < 0) {
        for (int dy = -1; dy <= 1 && vertex < 0; ++dy)
          for (int dx = -1; dx <= 1 && vertex < 0; ++dx) {
            int nx = std::clamp(tx + dx, 0, index_res - 1);
            int ny = std::clamp(ty + dy, 0, index_res - 1);
            vertex = uv_index[size_t(ny) * size_t(index_res) + size_t(nx)];
          }
      }
      if (vertex < 0) continue;
      Vec2d kp = render::project(ocam, observed_positions[size_t(vertex)]);
      obs.dense_points.push_back({kp.x, kp.y, vertex});
    }
  return obs;
}

double fitting_loss(const geom::CanonicalBody& body, const geom::PoseFrame& frame,
                    const Observation& obs) {
  if (obs.dense_points.empty()) return 0.0;
  auto positions = geom::pose_positions(body, frame);
  render::Camera cam = obs_camera(frame, obs);
  double acc = 0;
  for (const auto& corr : obs.dense_points) {
    Vec2d p = render::project(cam, positions[size_t(corr.vertex)]);
    acc += std::hypot(p.x - corr.px, p.y - corr.py);
  }
  return acc / double(obs.dense_points.size());
}

void fitting_loss_grad(const geom::CanonicalBody& body, const geom::PoseFrame& frame,
                       const Observation& obs, std::vector<double>& grad_theta, double grad_cam[3],
                       double* loss_out) {
  grad_theta.assign(frame.theta.size(), 0.0);
  grad_cam[0] = grad_cam[1] = grad_cam[2] = 0.0;
  if (loss_out) *loss_out = 0.0;
  if (obs.dense_points.empty()) return;

  PoseJacobian jac(body, frame);
  auto shaped = geom::shaped_vertices(body, frame.beta);
  render::Camera cam = obs_camera(frame, obs);
  const double inv_n = 1.0 / double(obs.dense_points.size());
  double loss = 0;

  for (const auto& corr : obs.dense_points) {
    const Vec3d& xs = shaped[size_t(corr.vertex)];
    Mat3<double> blended;
    Vec3d pos = geom::blend_apply(jac.skin, body.skin_weights[size_t(corr.vertex)], xs, &blended);
    Vec2d proj = render::project(cam, pos);
    double rx = proj.x - corr.px, ry = proj.y - corr.py;
    double norm = std::hypot(rx, ry);
    loss += norm;
    if (norm <= 0) continue;  // subgradient 0 at the optimum
    double gx = rx / norm * inv_n, gy = ry / norm * inv_n;

    grad_cam[0] += gx;
    grad_cam[1] += gy;
    grad_cam[2] += gx * pos.x + gy * pos.y;
    jac.vertex_jacobian(corr.vertex, xs, [&](int c, int k, const Vec3d& dx) {
      grad_theta[size_t(3 * c + k)] += cam.s * (gx * dx.x + gy * dx.y);
    });
  }
  if (loss_out) *loss_out = loss * inv_n;
}

double render_loss(const geom::CanonicalBody& body, const geom::PoseFrame& frame,
                   const Observation& obs, double* part_disagreement, bool* empty_warning) {
  auto positions = geom::pose_positions(body, frame);
  render::Camera cam = obs_camera(frame, obs);
  auto rendered = render::rasterize_body(body, positions, cam);
  double acc = 0;
  long inter = 0, part_diff = 0;
  for (size_t i = 0; i < rendered.mask.size(); ++i) {
    if (!rendered.mask[i] || !obs.mask[i]) continue;
    ++inter;
    acc += std::abs(rendered.uvmap[2 * i] - obs.uvmap[2 * i]) +
           std::abs(rendered.uvmap[2 * i + 1] - obs.uvmap[2 * i + 1]);
    part_diff += rendered.part[i] != obs.part[i] ? 1 : 0;
  }
  if (empty_warning) *empty_warning = inter == 0;
  if (part_disagreement) *part_disagreement = inter > 0 ? double(part_diff) / double(inter) : 0.0;
  return inter > 0 ? acc / (2.0 * double(inter)) : 0.0;
}

double prior_loss(const geom::PoseFrame& frame, const geom::PoseFrame& prior) {
  double t2 = 0;
  for (size_t i = 0; i < frame.theta.size(); ++i) {
    double d = frame.theta[i] - prior.theta[i];
    t2 += d * d;
  }
  double dx = frame.camera.cx - prior.camera.cx;
  double dy = frame.camera.cy - prior.camera.cy;
  double ds = frame.camera.s - prior.camera.s;
  return std::sqrt(t2) + std::sqrt(dx * dx + dy * dy + ds * ds);
}

namespace {

double param_dist(const geom::PoseFrame& a, const geom::PoseFrame& b, bool camera) {
  if (camera) {
    double dx = a.camera.cx - b.camera.cx;
    double dy = a.camera.cy - b.camera.cy;
    double ds = a.camera.s - b.camera.s;
    return std::sqrt(dx * dx + dy * dy + ds * ds);
  }
  double acc = 0;
  for (size_t i = 0; i < a.theta.size(); ++i) {
    double d = a.theta[i] - b.theta[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

double temporal_loss(const std::vector<geom::PoseFrame>& frames, size_t t) {
  if (frames.size() <= 1) return 0.0;
  double acc = 0;
  if (t > 0) acc += param_dist(frames[t], frames[t - 1], false) + param_dist(frames[t], frames[t - 1], true);
  if (t + 1 < frames.size())
    acc += param_dist(frames[t], frames[t + 1], false) + param_dist(frames[t], frames[t + 1], true);
  return acc;
}

namespace {

// gradient of || p_t - p_u || accumulated into both frames
void norm_grad(const std::vector<double>& pt, const std::vector<double>& pu, double scale,
               std::vector<double>& gt, std::vector<double>& gu) {
  double n2 = 0;
  for (size_t i = 0; i < pt.size(); ++i) {
    double d = pt[i] - pu[i];
    n2 += d * d;
  }
  double n = std::sqrt(n2);
  if (n <= 0) return;
  for (size_t i = 0; i < pt.size(); ++i) {
    double g = scale * (pt[i] - pu[i]) / n;
    gt[i] += g;
    gu[i] -= g;
  }
}

std::vector<double> pack(const geom::PoseFrame& f) {
  std::vector<double> p = f.theta;
  p.push_back(f.camera.cx);
  p.push_back(f.camera.cy);
  p.push_back(f.camera.s);
  return p;
}

void unpack(const std::vector<double>& p, geom::PoseFrame& f) {
  size_t n = f.theta.size();
  std::copy(p.begin(), p.begin() + long(n), f.theta.begin());
  f.camera.cx = p[n];
  f.camera.cy = p[n + 1];
  f.camera.s = p[n + 2];
}

}  // namespace

TrackState track(const geom::CanonicalBody& body, const std::vector<Observation>& observations,
                 const std::vector<geom::PoseFrame>& priors, const TrackConfig& config,
                 const std::vector<geom::PoseFrame>* gt, TrackReport* report) {
  require(observations.size() == priors.size() && !priors.empty(),
          "track: observations and priors must align");
  size_t frames = priors.size();
  size_t theta_n = priors[0].theta.size();
  size_t pp = theta_n + 3;  // params per frame

  TrackState state;
  state.frames = priors;  // init = priors
  state.priors = priors;
  state.part_disagreement.assign(frames, 0.0);

  // Adam state over the joint parameter vector
  std::vector<double> m(frames * pp, 0.0), v(frames * pp, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double initial_loss = -1;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<double> grad(frames * pp, 0.0);
    double total = 0;

    for (size_t t = 0; t < frames; ++t) {
      geom::PoseFrame& frame = state.frames[t];
      // L_f analytic
      std::vector<double> gtheta;
      double gcam[3];
      double lf = 0;
      fitting_loss_grad(body, frame, observations[t], gtheta, gcam, &lf);
      total += lf;
      for (size_t i = 0; i < theta_n; ++i) grad[t * pp + i] += gtheta[i];
      grad[t * pp + theta_n] += gcam[0];
      grad[t * pp + theta_n + 1] += gcam[1];
      grad[t * pp + theta_n + 2] += gcam[2];

      // L_d analytic
      double ld = prior_loss(frame, state.priors[t]);
      total += config.lambda_d * ld;
      {
        double t2 = 0, c2 = 0;
        std::vector<double> dtheta(theta_n);
        for (size_t i = 0; i < theta_n; ++i) {
          dtheta[i] = frame.theta[i] - state.priors[t].theta[i];
          t2 += dtheta[i] * dtheta[i];
        }
        double dc[3] = {frame.camera.cx - state.priors[t].camera.cx,
                        frame.camera.cy - state.priors[t].camera.cy,
                        frame.camera.s - state.priors[t].camera.s};
        c2 = dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2];
        if (t2 > 0) {
          double inv = config.lambda_d / std::sqrt(t2);
          for (size_t i = 0; i < theta_n; ++i) grad[t * pp + i] += inv * dtheta[i];
        }
        if (c2 > 0) {
          double inv = config.lambda_d / std::sqrt(c2);
          for (int i = 0; i < 3; ++i) grad[t * pp + theta_n + size_t(i)] += inv * dc[i];
        }
      }

      // L_r by central finite differences over this frame's parameters
      if (config.use_render_loss) {
        double part_dis = 0;
        double lr_val = render_loss(body, frame, observations[t], &part_dis);
        state.part_disagreement[t] = part_dis;
        total += config.lambda_r * lr_val;
        std::vector<double> p = pack(frame);
        geom::PoseFrame probe = frame;
        for (size_t i = 0; i < pp; ++i) {
          double keep = p[i];
          p[i] = keep + config.fd_h;
          unpack(p, probe);
          double up = render_loss(body, probe, observations[t]);
          p[i] = keep - config.fd_h;
          unpack(p, probe);
          double down = render_loss(body, probe, observations[t]);
          p[i] = keep;
          double fd = (up - down) / (2 * config.fd_h);
          if (std::abs(fd) >= config.fd_floor) grad[t * pp + i] += config.lambda_r * fd;
        }
        unpack(p, probe);
      }
    }

    // L_t analytic, couples neighbours; the per-frame sum double counts pairs
    for (size_t t = 0; t < frames; ++t) {
      total += config.lambda_t * temporal_loss(state.frames, t);
      for (int dir = -1; dir <= 1; dir += 2) {
        long u = long(t) + dir;
        if (u < 0 || u >= long(frames)) continue;
        std::vector<double> gt_buf(theta_n, 0.0), gu_buf(theta_n, 0.0);
        norm_grad(state.frames[t].theta, state.frames[size_t(u)].theta, config.lambda_t, gt_buf,
                  gu_buf);
        for (size_t i = 0; i < theta_n; ++i) {
          grad[t * pp + i] += gt_buf[i];
          grad[size_t(u) * pp + i] += gu_buf[i];
        }
        std::vector<double> ct = {state.frames[t].camera.cx, state.frames[t].camera.cy,
                                  state.frames[t].camera.s};
        std::vector<double> cu = {state.frames[size_t(u)].camera.cx,
                                  state.frames[size_t(u)].camera.cy,
                                  state.frames[size_t(u)].camera.s};
        std::vector<double> g1(3, 0.0), g2(3, 0.0);
        norm_grad(ct, cu, config.lambda_t, g1, g2);
        for (int i = 0; i < 3; ++i) {
          grad[t * pp + theta_n + size_t(i)] += g1[size_t(i)];
          grad[size_t(u) * pp + theta_n + size_t(i)] += g2[size_t(i)];
        }
      }
    }

    state.loss_history.push_back(total);
    if (initial_loss < 0) initial_loss = total;
    if (total > 10.0 * initial_loss && initial_loss > 0)
      throw NumericFault("track: diverged, loss " + std::to_string(total) + " vs initial " +
                         std::to_string(initial_loss));

    // joint Adam step
    double bc1 = 1.0 - std::pow(beta1, step + 1);
    double bc2 = 1.0 - std::pow(beta2, step + 1);
    for (size_t t = 0; t < frames; ++t) {
      std::vector<double> p = pack(state.frames[t]);
      for (size_t i = 0; i < pp; ++i) {
        size_t gi = t * pp + i;
        double g = grad[gi];
        if (!std::isfinite(g)) throw NumericFault("track: NaN gradient");
        m[gi] = beta1 * m[gi] + (1 - beta1) * g;
        v[gi] = beta2 * v[gi] + (1 - beta2) * g * g;
        double mh = m[gi] / bc1, vh = v[gi] / bc2;
        p[i] -= config.lr * mh / (std::sqrt(vh) + eps);
      }
      unpack(p, state.frames[t]);
    }
  }

  if (gt && report) projection_report(body, state.frames, *gt, observations[0].w, observations[0].h, *report);
  return state;
}

void projection_report(const geom::CanonicalBody& body, const std::vector<geom::PoseFrame>& pred,
                       const std::vector<geom::PoseFrame>& gt, int img_w, int img_h,
                       TrackReport& out) {
  require(pred.size() == gt.size(), "projection_report: sequence length mismatch");
  out.err_px_mean.clear();
  out.err_px_std.clear();
  for (size_t t = 0; t < pred.size(); ++t) {
    auto pp = geom::pose_positions(body, pred[t]);
    auto pg = geom::pose_positions(body, gt[t]);
    render::Camera cp{pred[t].camera.cx, pred[t].camera.cy, pred[t].camera.s, img_w, img_h};
    render::Camera cg{gt[t].camera.cx, gt[t].camera.cy, gt[t].camera.s, img_w, img_h};
    double mean = 0;
    std::vector<double> errs(pp.size());
    for (size_t v = 0; v < pp.size(); ++v) {
      Vec2d a = render::project(cp, pp[v]);
      Vec2d b = render::project(cg, pg[v]);
      errs[v] = (a - b).norm();
      mean += errs[v];
    }
    mean /= double(pp.size());
    double var = 0;
    for (double e : errs) var += (e - mean) * (e - mean);
    out.err_px_mean.push_back(mean);
    out.err_px_std.push_back(std::sqrt(var / double(pp.size())));
  }
}

TrackConfig TrackConfig::from_json(const Json& j) {
  TrackConfig c;
  c.steps = json_get_or<int>(j, "steps", c.steps);
  c.lr = json_get_or<double>(j, "lr", c.lr);
  c.lambda_r = json_get_or<double>(j, "lambda_r", c.lambda_r);
  c.lambda_d = json_get_or<double>(j, "lambda_d", c.lambda_d);
  c.lambda_t = json_get_or<double>(j, "lambda_t", c.lambda_t);
  c.fd_h = json_get_or<double>(j, "fd_h", c.fd_h);
  c.fd_floor = json_get_or<double>(j, "fd_floor", c.fd_floor);
  c.corr_cap = json_get_or<int>(j, "corr_cap", c.corr_cap);
  c.index_res = json_get_or<int>(j, "index_res", c.index_res);
  c.use_render_loss = json_get_or<bool>(j, "use_render_loss", c.use_render_loss);
  return c;
}

Json TrackConfig::to_json() const {
  Json j;
  j["steps"] = steps;
  j["lr"] = lr;
  j["lambda_r"] = lambda_r;
  j["lambda_d"] = lambda_d;
  j["lambda_t"] = lambda_t;
  j["fd_h"] = fd_h;
  j["fd_floor"] = fd_floor;
  j["corr_cap"] = corr_cap;
  j["index_res"] = index_res;
  j["use_render_loss"] = use_render_loss;
  return j;
}

}  // namespace dyn::track
