#include "fovea/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fovea::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_ll(const std::string& s, long long& out) {
  try {
    size_t used = 0;
    out = std::stoll(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

bool parse_double(const std::string& s, double& out) {
  try {
    size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string fmt_float(float v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string fmt_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

using IntRef = std::function<int&(PipelineConfig&)>;
using DoubleRef = std::function<double&(PipelineConfig&)>;
using FloatRef = std::function<float&(PipelineConfig&)>;
using BoolRef = std::function<bool&(PipelineConfig&)>;
using U64Ref = std::function<std::uint64_t&(PipelineConfig&)>;
using IntsRef = std::function<std::vector<int>&(PipelineConfig&)>;

KeyBinding bind_int(std::string key, std::string doc, IntRef ref) {
  KeyBinding b{std::move(key), "integer", std::move(doc), nullptr, nullptr};
  b.format = [ref](const PipelineConfig& c) {
    return std::to_string(ref(const_cast<PipelineConfig&>(c)));
  };
  b.assign = [ref](PipelineConfig& c, const std::string& v) {
    long long x = 0;
    if (!parse_ll(v, x)) return false;
    ref(c) = static_cast<int>(x);
    return true;
  };
  return b;
}

KeyBinding bind_u64(std::string key, std::string doc, U64Ref ref) {
  KeyBinding b{std::move(key), "integer", std::move(doc), nullptr, nullptr};
  b.format = [ref](const PipelineConfig& c) {
    return std::to_string(ref(const_cast<PipelineConfig&>(c)));
  };
  b.assign = [ref](PipelineConfig& c, const std::string& v) {
    long long x = 0;
    if (!parse_ll(v, x) || x < 0) return false;
    ref(c) = static_cast<std::uint64_t>(x);
    return true;
  };
  return b;
}

KeyBinding bind_double(std::string key, std::string doc, DoubleRef ref) {
  KeyBinding b{std::move(key), "number", std::move(doc), nullptr, nullptr};
  b.format = [ref](const PipelineConfig& c) {
    return fmt_double(ref(const_cast<PipelineConfig&>(c)));
  };
  b.assign = [ref](PipelineConfig& c, const std::string& v) {
    double x = 0;
    if (!parse_double(v, x)) return false;
    ref(c) = x;
    return true;
  };
  return b;
}

KeyBinding bind_float(std::string key, std::string doc, FloatRef ref) {
  KeyBinding b{std::move(key), "number", std::move(doc), nullptr, nullptr};
  b.format = [ref](const PipelineConfig& c) {
    return fmt_float(ref(const_cast<PipelineConfig&>(c)));
  };
  b.assign = [ref](PipelineConfig& c, const std::string& v) {
    double x = 0;
    if (!parse_double(v, x)) return false;
    ref(c) = static_cast<float>(x);
    return true;
  };
  return b;
}

KeyBinding bind_bool(std::string key, std::string doc, BoolRef ref) {
  KeyBinding b{std::move(key), "boolean", std::move(doc), nullptr, nullptr};
  b.format = [ref](const PipelineConfig& c) {
    return ref(const_cast<PipelineConfig&>(c)) ? "true" : "false";
  };
  b.assign = [ref](PipelineConfig& c, const std::string& v) {
    if (v == "true" || v == "1")
      ref(c) = true;
    else if (v == "false" || v == "0")
      ref(c) = false;
    else
      return false;
    return true;
  };
  return b;
}

KeyBinding bind_ints(std::string key, std::string doc, IntsRef ref) {
  KeyBinding b{std::move(key), "integer list", std::move(doc), nullptr, nullptr};
  b.format = [ref](const PipelineConfig& c) {
    return fmt_ints(ref(const_cast<PipelineConfig&>(c)));
  };
  b.assign = [ref](PipelineConfig& c, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
      long long x = 0;
      if (!parse_ll(trim(part), x)) return false;
      out.push_back(static_cast<int>(x));
    }
    if (out.empty()) return false;
    ref(c) = out;
    return true;
  };
  return b;
}

std::vector<KeyBinding> make_bindings() {
  std::vector<KeyBinding> b;
  b.push_back(bind_int("geometry.full_w", "full camera frame width, px",
                       [](PipelineConfig& c) -> int& { return c.geom.full_w; }));
  b.push_back(bind_int("geometry.full_h", "full camera frame height, px",
                       [](PipelineConfig& c) -> int& { return c.geom.full_h; }));
  b.push_back(bind_int("geometry.periph_w", "peripheral (downsampled) width, px",
                       [](PipelineConfig& c) -> int& { return c.geom.periph_w; }));
  b.push_back(bind_int("geometry.periph_h", "peripheral (downsampled) height, px",
                       [](PipelineConfig& c) -> int& { return c.geom.periph_h; }));
  b.push_back(bind_int("geometry.fovea_w", "foveal crop width, px",
                       [](PipelineConfig& c) -> int& { return c.geom.fovea_w; }));
  b.push_back(bind_int("geometry.fovea_h", "foveal crop height, px",
                       [](PipelineConfig& c) -> int& { return c.geom.fovea_h; }));

  b.push_back(bind_double("sim.region_x_min", "eye placement region, x low, m",
                          [](PipelineConfig& c) -> double& { return c.sim.region_x_min; }));
  b.push_back(bind_double("sim.region_x_max", "eye placement region, x high, m",
                          [](PipelineConfig& c) -> double& { return c.sim.region_x_max; }));
  b.push_back(bind_double("sim.region_y_min", "eye placement region, y low, m",
                          [](PipelineConfig& c) -> double& { return c.sim.region_y_min; }));
  b.push_back(bind_double("sim.region_y_max", "eye placement region, y high, m",
                          [](PipelineConfig& c) -> double& { return c.sim.region_y_max; }));
  b.push_back(bind_double("sim.eye_height", "needle eye height over the table, m",
                          [](PipelineConfig& c) -> double& { return c.sim.eye_height; }));
  b.push_back(bind_double("sim.thread_radius", "thread radius, m",
                          [](PipelineConfig& c) -> double& { return c.sim.thread_radius; }));
  b.push_back(bind_double("sim.eye_radius", "needle eye radius, m",
                          [](PipelineConfig& c) -> double& { return c.sim.eye_radius; }));
  b.push_back(bind_double("sim.miss_band", "near-miss annulus width, m",
                          [](PipelineConfig& c) -> double& { return c.sim.miss_band; }));
  b.push_back(bind_double("sim.pass_margin", "tip travel past the eye plane for success, m",
                          [](PipelineConfig& c) -> double& { return c.sim.pass_margin; }));
  b.push_back(bind_int("sim.thread_links", "thread chain link count",
                       [](PipelineConfig& c) -> int& { return c.sim.thread_links; }));
  b.push_back(bind_double("sim.seg_len", "thread link length, m",
                          [](PipelineConfig& c) -> double& { return c.sim.seg_len; }));
  b.push_back(bind_double("sim.grasp_radius", "gripper catch radius, m",
                          [](PipelineConfig& c) -> double& { return c.sim.grasp_radius; }));
  b.push_back(bind_double("sim.max_step", "per-step position delta bound, m",
                          [](PipelineConfig& c) -> double& { return c.sim.max_step; }));
  b.push_back(bind_double("sim.max_yaw_step", "per-step yaw delta bound, rad",
                          [](PipelineConfig& c) -> double& { return c.sim.max_yaw_step; }));
  b.push_back(bind_double("sim.fall_step", "free thread settling speed, m/step",
                          [](PipelineConfig& c) -> double& { return c.sim.fall_step; }));
  b.push_back(bind_double("sim.lift_height", "eef height that counts as picked, m",
                          [](PipelineConfig& c) -> double& { return c.sim.lift_height; }));
  b.push_back(bind_double("sim.ws_x_min", "workspace box, x low, m",
                          [](PipelineConfig& c) -> double& { return c.sim.ws_x_min; }));
  b.push_back(bind_double("sim.ws_x_max", "workspace box, x high, m",
                          [](PipelineConfig& c) -> double& { return c.sim.ws_x_max; }));
  b.push_back(bind_double("sim.ws_y_min", "workspace box, y low, m",
                          [](PipelineConfig& c) -> double& { return c.sim.ws_y_min; }));
  b.push_back(bind_double("sim.ws_y_max", "workspace box, y high, m",
                          [](PipelineConfig& c) -> double& { return c.sim.ws_y_max; }));
  b.push_back(bind_double("sim.ws_z_min", "workspace box, z low, m",
                          [](PipelineConfig& c) -> double& { return c.sim.ws_z_min; }));
  b.push_back(bind_double("sim.ws_z_max", "workspace box, z high, m",
                          [](PipelineConfig& c) -> double& { return c.sim.ws_z_max; }));
  b.push_back(bind_int("sim.max_steps", "hard step cap per episode",
                       [](PipelineConfig& c) -> int& { return c.sim.max_steps; }));
  b.push_back(bind_double("sim.cam_cx", "camera principal point x, px",
                          [](PipelineConfig& c) -> double& { return c.cam.cx; }));
  b.push_back(bind_double("sim.cam_cy", "camera principal point y, px",
                          [](PipelineConfig& c) -> double& { return c.cam.cy; }));
  b.push_back(bind_double("sim.cam_scale", "camera scale, px per m",
                          [](PipelineConfig& c) -> double& { return c.cam.scale; }));
  b.push_back(bind_double("sim.cam_baseline", "stereo baseline, m",
                          [](PipelineConfig& c) -> double& { return c.cam.baseline; }));
  b.push_back(bind_double("sim.cam_height", "camera height over the table, m",
                          [](PipelineConfig& c) -> double& { return c.cam.cam_height; }));

  b.push_back(bind_double("oracle.fail_prob", "deliberate miss probability per insertion",
                          [](PipelineConfig& c) -> double& { return c.oracle.fail_prob; }));
  b.push_back(bind_double("oracle.fast_step", "reaching step length, m",
                          [](PipelineConfig& c) -> double& { return c.oracle.fast_step; }));
  b.push_back(bind_double("oracle.fast_step_sd", "reaching step length spread, m",
                          [](PipelineConfig& c) -> double& { return c.oracle.fast_step_sd; }));
  b.push_back(bind_double("oracle.slow_step", "fine-homing step length, m",
                          [](PipelineConfig& c) -> double& { return c.oracle.slow_step; }));
  b.push_back(bind_double("oracle.slow_step_sd", "fine-homing step length spread, m",
                          [](PipelineConfig& c) -> double& { return c.oracle.slow_step_sd; }));
  b.push_back(bind_double("oracle.recover_step", "retreat step length, m",
                          [](PipelineConfig& c) -> double& { return c.oracle.recover_step; }));
  b.push_back(bind_double("oracle.gaze_noise_px", "gaze annotation jitter, px",
                          [](PipelineConfig& c) -> double& { return c.oracle.gaze_noise_px; }));
  b.push_back(bind_double("oracle.act_noise", "per-axis actuation jitter, m",
                          [](PipelineConfig& c) -> double& { return c.oracle.act_noise; }));
  b.push_back(bind_int("oracle.max_retries", "recoveries allowed after the first miss",
                       [](PipelineConfig& c) -> int& { return c.oracle.max_retries; }));

  b.push_back(bind_ints("arch.periph_channels", "peripheral conv channels",
                        [](PipelineConfig& c) -> std::vector<int>& { return c.arch.periph_channels; }));
  b.push_back(bind_ints("arch.periph_strides", "peripheral conv strides",
                        [](PipelineConfig& c) -> std::vector<int>& { return c.arch.periph_strides; }));
  b.push_back(bind_bool("arch.periph_spatial_softmax", "keypoint head on the peripheral trunk",
                        [](PipelineConfig& c) -> bool& { return c.arch.periph_spatial_softmax; }));
  b.push_back(bind_ints("arch.foveal_channels", "foveal conv channels (pool after each)",
                        [](PipelineConfig& c) -> std::vector<int>& { return c.arch.foveal_channels; }));
  b.push_back(bind_int("arch.fc_width", "fully connected layer width",
                       [](PipelineConfig& c) -> int& { return c.arch.fc_width; }));
  b.push_back(bind_int("arch.fc_depth_action", "fc layers in the action nets",
                       [](PipelineConfig& c) -> int& { return c.arch.fc_depth_action; }));
  b.push_back(bind_int("arch.fc_depth_other", "fc layers in the other nets",
                       [](PipelineConfig& c) -> int& { return c.arch.fc_depth_other; }));
  b.push_back(bind_int("arch.mdn_k", "mixture components in the gaze head",
                       [](PipelineConfig& c) -> int& { return c.arch.mdn_k; }));

  b.push_back(bind_float("train.lr", "learning rate",
                         [](PipelineConfig& c) -> float& { return c.train.lr; }));
  b.push_back(bind_int("train.batch", "batch size",
                       [](PipelineConfig& c) -> int& { return c.train.batch; }));
  b.push_back(bind_int("train.epochs", "training epochs per component",
                       [](PipelineConfig& c) -> int& { return c.train.epochs; }));
  b.push_back(bind_int("train.samples_per_epoch", "per-epoch subsample cap, <=0 for a full pass",
                       [](PipelineConfig& c) -> int& { return c.train.samples_per_epoch; }));
  b.push_back(bind_int("train.val_samples", "validation subset cap, <=0 for all",
                       [](PipelineConfig& c) -> int& { return c.train.val_samples; }));
  b.push_back(bind_bool("train.l2_only_action", "restrict the L1+L2 action loss to plain L2",
                        [](PipelineConfig& c) -> bool& { return c.train.l2_only_action; }));
  b.push_back(bind_float("train.bn_momentum", "batchnorm running-stat momentum",
                         [](PipelineConfig& c) -> float& { return c.train.bn_momentum; }));
  b.push_back(bind_double("train.split_ratio", "train fraction of the episode split",
                          [](PipelineConfig& c) -> double& { return c.split_ratio; }));
  b.push_back(bind_u64("train.split_seed", "episode split shuffle seed",
                       [](PipelineConfig& c) -> std::uint64_t& { return c.split_seed; }));

  b.push_back(bind_int("eval.n_trials", "trials per evaluation",
                       [](PipelineConfig& c) -> int& { return c.n_trials; }));
  b.push_back(bind_u64("eval.trial_seed_base", "seed of trial 0; trial i adds i",
                       [](PipelineConfig& c) -> std::uint64_t& { return c.trial_seed_base; }));
  b.push_back(bind_u64("eval.bundle_seed", "weight init seed for trained bundles",
                       [](PipelineConfig& c) -> std::uint64_t& { return c.bundle_seed; }));
  b.push_back(bind_int("eval.max_steps", "controller step cap per trial",
                       [](PipelineConfig& c) -> int& { return c.ctrl_max_steps; }));
  b.push_back(bind_int("eval.success_grace", "steps allowed after the threading event",
                       [](PipelineConfig& c) -> int& { return c.success_grace; }));
  b.push_back(bind_int("eval.hist_bins", "speed histogram bins in the gmm report",
                       [](PipelineConfig& c) -> int& { return c.hist_bins; }));

  b.push_back(bind_u64("seed", "base rng seed; the --seed flag overrides it",
                       [](PipelineConfig& c) -> std::uint64_t& { return c.seed; }));
  return b;
}

}  // namespace

const std::vector<KeyBinding>& key_bindings() {
  static const std::vector<KeyBinding> bindings = make_bindings();
  return bindings;
}

void apply_text(PipelineConfig& cfg, const std::string& text, const std::string& origin) {
  PipelineConfig staged = cfg;
  std::vector<std::string> unknown, bad;
  std::vector<int> malformed;

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      malformed.push_back(lineno);
      continue;
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const KeyBinding* binding = nullptr;
    for (const KeyBinding& b : key_bindings())
      if (b.key == key) {
        binding = &b;
        break;
      }
    if (!binding) {
      unknown.push_back(key);
      continue;
    }
    if (!binding->assign(staged, value))
      bad.push_back(key + "='" + value + "' (" + binding->kind + " expected)");
  }

  if (!unknown.empty() || !bad.empty() || !malformed.empty()) {
    std::ostringstream os;
    os << "config '" << origin << "':";
    const char* sep = "";
    if (!unknown.empty()) {
      os << " unknown keys: ";
      for (size_t i = 0; i < unknown.size(); ++i) os << (i ? ", " : "") << unknown[i];
      sep = ";";
    }
    if (!bad.empty()) {
      os << sep << " bad values: ";
      for (size_t i = 0; i < bad.size(); ++i) os << (i ? ", " : "") << bad[i];
      sep = ";";
    }
    if (!malformed.empty()) {
      os << sep << " malformed lines (no '='): ";
      for (size_t i = 0; i < malformed.size(); ++i) os << (i ? ", " : "") << malformed[i];
    }
    throw std::runtime_error(os.str());
  }
  cfg = staged;
}

void apply_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(cfg, ss.str(), path);
}

void finalize(PipelineConfig& cfg) {
  cfg.cam.width = cfg.geom.full_w;
  cfg.cam.height = cfg.geom.full_h;
}

std::string help_text() {
  const PipelineConfig defaults;
  std::ostringstream os;
  os << "Config file keys (one `key = value` per line, # starts a comment):\n";
  for (const KeyBinding& b : key_bindings())
    os << "  " << b.key << " = " << b.format(defaults) << "\n      " << b.doc << " (" << b.kind
       << ")\n";
  os << "\nEnvironment:\n  FOVEA_OUT_ROOT  relative --out paths are created under this directory\n";
  return os.str();
}

std::string dump(const PipelineConfig& cfg) {
  std::ostringstream os;
  for (const KeyBinding& b : key_bindings()) os << b.key << " = " << b.format(cfg) << "\n";
  return os.str();
}

}  // namespace fovea::config
