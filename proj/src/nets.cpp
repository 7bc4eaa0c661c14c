#include "dyn/nets.hpp"

namespace dyn::nets {

NetConfig NetConfig::from_json(const Json& j) {
  NetConfig c;
  c.uv_res = json_get_or<int>(j, "uv_res", 64);
  c.img_res = json_get_or<int>(j, "img_res", 64);
  c.t_slabs = json_get_or<int>(j, "T", 10);
  c.d = json_get_or<int>(j, "d", 16);
  c.labels = json_get_or<int>(j, "labels", 7);
  c.enc_width = json_get_or<int>(j, "enc_width", 8);
  c.shape_width = json_get_or<int>(j, "shape_width", 8);
  c.app_width = json_get_or<int>(j, "app_width", 8);
  c.occupancy_channel = json_get_or<bool>(j, "occupancy_channel", true);
  c.lambda_s = json_get_or<double>(j, "lambda_s", 10.0);
  c.lambda_n = json_get_or<double>(j, "lambda_n", 1.0);
  c.lr = json_get_or<double>(j, "lr", 1e-3);
  c.steps = json_get_or<int>(j, "steps", 2000);
  c.seed = json_get_or<uint64_t>(j, "seed", 1);
  c.checkpoint_every = json_get_or<int>(j, "checkpoint_every", 1000);
  c.log_every = json_get_or<int>(j, "log_every", 1);
  c.teacher_forcing = json_get_or<bool>(j, "teacher_forcing", true);
  c.precision = json_get_or<std::string>(j, "precision", "f32");
  require(c.precision == "f32" || c.precision == "f64", "precision must be f32 or f64");
  if (j.contains("ablation")) {
    const Json& a = j.at("ablation");
    c.ablation.no_velocity = json_get_or<bool>(a, "no_velocity", false);
    c.ablation.no_shape = json_get_or<bool>(a, "no_shape", false);
    c.ablation.no_normal = json_get_or<bool>(a, "no_normal", false);
  }
  require(c.labels == 7, "the shape decoder is defined for 7 semantic classes");
  require(c.uv_res >= 8 && c.img_res >= 8, "resolutions must be >= 8");
  return c;
}

Json NetConfig::to_json() const {
  Json j;
  j["uv_res"] = uv_res;
  j["img_res"] = img_res;
  j["T"] = t_slabs;
  j["d"] = d;
  j["labels"] = labels;
  j["enc_width"] = enc_width;
  j["shape_width"] = shape_width;
  j["app_width"] = app_width;
  j["occupancy_channel"] = occupancy_channel;
  j["lambda_s"] = lambda_s;
  j["lambda_n"] = lambda_n;
  j["lr"] = lr;
  j["steps"] = steps;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["teacher_forcing"] = teacher_forcing;
  j["precision"] = precision;
  j["ablation"] = {{"no_velocity", ablation.no_velocity},
                   {"no_shape", ablation.no_shape},
                   {"no_normal", ablation.no_normal}};
  return j;
}

}  // namespace dyn::nets
