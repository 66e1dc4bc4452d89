#include "fovea/models/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fovea::models {

namespace {

const char* kCompNames[kCompCount] = {"fast",    "slow", "recovery",       "gripper",
                                      "failure", "gaze", "recovery_steps", "speed"};

GazeSide side_from_vars(const MdnParams& p, int k) {
  GazeSide s;
  s.weights.resize(static_cast<size_t>(k));
  s.means.resize(static_cast<size_t>(k));
  s.sigmas.resize(static_cast<size_t>(k));
  s.rhos.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    s.weights[static_cast<size_t>(j)] = p.weights->value[j];
    s.means[static_cast<size_t>(j)] = {static_cast<double>(p.means->value[j]),
                                       static_cast<double>(p.means->value[k + j])};
    s.sigmas[static_cast<size_t>(j)] = {static_cast<double>(p.sigmas->value[j]),
                                        static_cast<double>(p.sigmas->value[k + j])};
    s.rhos[static_cast<size_t>(j)] = p.rhos->value[j];
  }
  return s;
}

int max_weight_component(const GazeSide& s) {
  int best = 0;
  for (size_t j = 1; j < s.weights.size(); ++j)
    if (s.weights[j] > s.weights[best]) best = static_cast<int>(j);
  return best;
}

nlohmann::json options_json(const BundleOptions& o) {
  return {{"fast_input", routing_name(o.fast_input)},
          {"slow_input", routing_name(o.slow_input)},
          {"foveal_from_gaze", o.foveal_from_gaze},
          {"mono", o.mono},
          {"merge_slow_recovery", o.merge_slow_recovery},
          {"action_separation", o.action_separation},
          {"use_step_predictor", o.use_step_predictor}};
}

BundleOptions options_from_json(const nlohmann::json& j) {
  BundleOptions o;
  o.fast_input = routing_from_name(j.at("fast_input").get<std::string>());
  o.slow_input = routing_from_name(j.at("slow_input").get<std::string>());
  o.foveal_from_gaze = j.at("foveal_from_gaze").get<bool>();
  o.mono = j.at("mono").get<bool>();
  o.merge_slow_recovery = j.at("merge_slow_recovery").get<bool>();
  o.action_separation = j.at("action_separation").get<bool>();
  o.use_step_predictor = j.at("use_step_predictor").get<bool>();
  return o;
}

}  // namespace

std::string comp_name(Comp c) { return kCompNames[static_cast<size_t>(c)]; }

Comp comp_from_name(const std::string& name) {
  for (int i = 0; i < kCompCount; ++i)
    if (name == kCompNames[i]) return static_cast<Comp>(i);
  throw std::invalid_argument("unknown component '" + name + "'");
}

std::string routing_name(InputRouting r) {
  switch (r) {
    case InputRouting::kPeripheral: return "peripheral";
    case InputRouting::kFoveal: return "foveal";
    case InputRouting::kBoth: return "both";
  }
  throw std::logic_error("bad routing");
}

InputRouting routing_from_name(const std::string& name) {
  if (name == "peripheral") return InputRouting::kPeripheral;
  if (name == "foveal") return InputRouting::kFoveal;
  if (name == "both") return InputRouting::kBoth;
  throw std::invalid_argument("unknown input routing '" + name + "'");
}

std::vector<NetSpec> bundle_specs(const ArchConfig& arch, const BundleOptions& opt) {
  auto route = [](InputRouting r, NetSpec& s) {
    s.use_periph = r != InputRouting::kFoveal;
    s.use_foveal = r != InputRouting::kPeripheral;
  };
  std::vector<NetSpec> specs(kCompCount);
  NetSpec& fast = specs[static_cast<size_t>(Comp::kFast)];
  fast = {"fast", false, false, 4, arch.fc_depth_action, HeadKind::kRegression};
  route(opt.fast_input, fast);
  NetSpec& slow = specs[static_cast<size_t>(Comp::kSlow)];
  slow = {"slow", false, false, 4, arch.fc_depth_action, HeadKind::kRegression};
  route(opt.slow_input, slow);
  specs[static_cast<size_t>(Comp::kRecovery)] =
      {"recovery", false, true, 4, arch.fc_depth_action, HeadKind::kRegression};
  specs[static_cast<size_t>(Comp::kGripper)] =
      {"gripper", false, true, 2, arch.fc_depth_other, HeadKind::kClassifier};
  specs[static_cast<size_t>(Comp::kFailure)] =
      {"failure", false, true, 2, arch.fc_depth_other, HeadKind::kClassifier};
  specs[static_cast<size_t>(Comp::kGaze)] =
      {"gaze", true, false, 12 * arch.mdn_k, arch.fc_depth_other, HeadKind::kMdn};
  specs[static_cast<size_t>(Comp::kRecoverySteps)] =
      {"recovery_steps", false, true, 1, arch.fc_depth_other, HeadKind::kRegression};
  specs[static_cast<size_t>(Comp::kSpeed)] =
      {"speed", false, true, 2, arch.fc_depth_other, HeadKind::kClassifier};
  return specs;
}

std::vector<Comp> required_components(const BundleOptions& opt) {
  std::vector<Comp> need{Comp::kSlow, Comp::kGripper, Comp::kFailure};
  if (opt.action_separation) {
    need.push_back(Comp::kFast);
    need.push_back(Comp::kSpeed);
  }
  if (!opt.merge_slow_recovery) need.push_back(Comp::kRecovery);
  if (opt.foveal_from_gaze) need.push_back(Comp::kGaze);
  if (opt.use_step_predictor) need.push_back(Comp::kRecoverySteps);
  return need;
}

PolicyBundle::PolicyBundle(ArchConfig arch, FrameGeom geom, BundleOptions opt, std::uint64_t seed)
    : arch_(std::move(arch)), geom_(geom), opt_(opt), seed_(seed) {
  Rng root(seed);
  for (const NetSpec& spec : bundle_specs(arch_, opt_)) {
    Rng rng = root.fork(spec.name);
    nets_.push_back(std::make_unique<Network>(spec, arch_, geom_.periph_h, geom_.periph_w,
                                              foveal_h(), foveal_w(), rng));
  }
}

Network& PolicyBundle::net(Comp c) { return *nets_[static_cast<size_t>(c)]; }
const Network& PolicyBundle::net(Comp c) const { return *nets_[static_cast<size_t>(c)]; }

long PolicyBundle::param_count() const {
  long n = 0;
  for (const auto& p : nets_) n += p->param_count();
  return n;
}

int PolicyBundle::foveal_h() const { return opt_.foveal_from_gaze ? geom_.fovea_h : geom_.periph_h; }
int PolicyBundle::foveal_w() const { return opt_.foveal_from_gaze ? geom_.fovea_w : geom_.periph_w; }

namespace {
void expect_single(const Tensor<float>& t, const char* where) {
  if (t.rank() != 4 || t.dim(0) != 1)
    throw std::invalid_argument(std::string(where) + ": inference takes one sample, got " +
                                t.shape_str());
}
}  // namespace

GazeMixture PolicyBundle::infer_gaze_mixture(const Tensor<float>& peripheral) {
  expect_single(peripheral, "infer_gaze");
  Network& g = net(Comp::kGaze);
  ag::NoGrad<float> guard(g.graph());
  auto raw = g.forward(&peripheral, nullptr, ag::Mode::kEval);
  GazeMixture mix;
  mix.left = side_from_vars(mdn_side(raw, arch_.mdn_k, 0), arch_.mdn_k);
  mix.right = side_from_vars(mdn_side(raw, arch_.mdn_k, 1), arch_.mdn_k);
  return mix;
}

PolicyBundle::GazePair PolicyBundle::infer_gaze(const Tensor<float>& peripheral) {
  GazeMixture mix = infer_gaze_mixture(peripheral);
  auto to_px = [&](const GazeSide& s) {
    const int j = max_weight_component(s);
    GazePoint p;
    p.x = std::clamp(s.means[static_cast<size_t>(j)][0] * geom_.full_w, 0.0,
                     static_cast<double>(geom_.full_w - 1));
    p.y = std::clamp(s.means[static_cast<size_t>(j)][1] * geom_.full_h, 0.0,
                     static_cast<double>(geom_.full_h - 1));
    return p;
  };
  return {to_px(mix.left), to_px(mix.right)};
}

PolicyBundle::GazePair PolicyBundle::sample_gaze(const Tensor<float>& peripheral, Rng& rng) {
  GazeMixture mix = infer_gaze_mixture(peripheral);
  auto draw = [&](const GazeSide& s) {
    double u = rng.uniform();
    size_t j = 0;
    for (; j + 1 < s.weights.size(); ++j) {
      if (u < s.weights[j]) break;
      u -= s.weights[j];
    }
    const double sx = s.sigmas[j][0], sy = s.sigmas[j][1], r = s.rhos[j];
    const double z1 = rng.normal(), z2 = rng.normal();
    GazePoint p;
    p.x = s.means[j][0] + sx * z1;
    p.y = s.means[j][1] + sy * (r * z1 + std::sqrt(1 - r * r) * z2);
    p.x = std::clamp(p.x * geom_.full_w, 0.0, static_cast<double>(geom_.full_w - 1));
    p.y = std::clamp(p.y * geom_.full_h, 0.0, static_cast<double>(geom_.full_h - 1));
    return p;
  };
  return {draw(mix.left), draw(mix.right)};
}

PolicyBundle::ActionDelta PolicyBundle::infer_action(Comp which, const Tensor<float>* periph,
                                                     const Tensor<float>* foveal,
                                                     const ActionLimits& limits) {
  if (which != Comp::kFast && which != Comp::kSlow && which != Comp::kRecovery)
    throw std::invalid_argument("infer_action: '" + comp_name(which) + "' is not an action net");
  if (periph) expect_single(*periph, "infer_action");
  if (foveal) expect_single(*foveal, "infer_action");
  Network& n = net(which);
  ag::NoGrad<float> guard(n.graph());
  auto raw = n.forward(periph, foveal, ag::Mode::kEval);
  const auto& st = n.stats();
  ActionDelta a;
  for (int i = 0; i < 3; ++i)
    a.dpos[i] = static_cast<double>(st.out_mean[i]) +
                static_cast<double>(st.out_std[i]) * static_cast<double>(raw->value[i]);
  a.dyaw = static_cast<double>(st.out_mean[3]) +
           static_cast<double>(st.out_std[3]) * static_cast<double>(raw->value[3]);
  const double norm = a.dpos.norm();
  if (norm > limits.max_step) a.dpos *= limits.max_step / norm;
  a.dyaw = std::clamp(a.dyaw, -limits.max_yaw_step, limits.max_yaw_step);
  return a;
}

int PolicyBundle::classify(Comp which, const Tensor<float>& foveal) {
  if (which != Comp::kGripper && which != Comp::kFailure && which != Comp::kSpeed)
    throw std::invalid_argument("classify: '" + comp_name(which) + "' is not a classifier");
  expect_single(foveal, "classify");
  Network& n = net(which);
  ag::NoGrad<float> guard(n.graph());
  auto raw = n.forward(nullptr, &foveal, ag::Mode::kEval);
  if (!raw->value.all_finite()) return -1;  // caller treats this as an inference fault
  int best = 0;
  for (int j = 1; j < n.spec().out_dim; ++j)
    if (raw->value[j] > raw->value[best]) best = j;
  return best;
}

int PolicyBundle::predict_recovery_steps(const Tensor<float>& foveal) {
  expect_single(foveal, "predict_recovery_steps");
  Network& n = net(Comp::kRecoverySteps);
  ag::NoGrad<float> guard(n.graph());
  auto raw = n.forward(nullptr, &foveal, ag::Mode::kEval);
  const double steps = std::round(10.0 * static_cast<double>(raw->value[0]));
  if (!std::isfinite(steps)) return -1;  // caller treats this as an inference fault
  return static_cast<int>(std::clamp(steps, 0.0, 100.0));
}

bool PolicyBundle::fully_trained() const {
  for (Comp c : required_components(opt_))
    if (!is_trained(c)) return false;
  return true;
}

void PolicyBundle::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["format"] = 1;
  meta["seed"] = seed_;
  meta["arch"] = {{"periph_channels", arch_.periph_channels},
                  {"periph_strides", arch_.periph_strides},
                  {"periph_spatial_softmax", arch_.periph_spatial_softmax},
                  {"foveal_channels", arch_.foveal_channels},
                  {"fc_width", arch_.fc_width},
                  {"fc_depth_action", arch_.fc_depth_action},
                  {"fc_depth_other", arch_.fc_depth_other},
                  {"mdn_k", arch_.mdn_k}};
  meta["geometry"] = {{"full_w", geom_.full_w},     {"full_h", geom_.full_h},
                      {"periph_w", geom_.periph_w}, {"periph_h", geom_.periph_h},
                      {"fovea_w", geom_.fovea_w},   {"fovea_h", geom_.fovea_h}};
  meta["options"] = options_json(opt_);
  auto trained = nlohmann::ordered_json::array();
  for (Comp c : kAllComps)
    if (is_trained(c)) trained.push_back(comp_name(c));
  meta["trained"] = std::move(trained);
  {
    std::ofstream f(dir + "/bundle.json", std::ios::trunc);
    if (!f) throw std::runtime_error("bundle save: cannot open " + dir + "/bundle.json");
    f << meta.dump(2) << "\n";
  }
  for (Comp c : kAllComps) {
    const std::string base = dir + "/" + comp_name(c);
    save_weights(base + ".json", base + ".bin", net(c).export_tensors());
  }
}

PolicyBundle PolicyBundle::load(const std::string& dir) {
  std::ifstream f(dir + "/bundle.json");
  if (!f) throw std::runtime_error("bundle load: cannot open " + dir + "/bundle.json");
  nlohmann::json meta = nlohmann::json::parse(f);
  if (meta.value("format", 0) != 1)
    throw std::runtime_error("bundle load: unsupported format in " + dir);
  ArchConfig arch;
  const auto& a = meta.at("arch");
  arch.periph_channels = a.at("periph_channels").get<std::vector<int>>();
  arch.periph_strides = a.at("periph_strides").get<std::vector<int>>();
  arch.periph_spatial_softmax = a.at("periph_spatial_softmax").get<bool>();
  arch.foveal_channels = a.at("foveal_channels").get<std::vector<int>>();
  arch.fc_width = a.at("fc_width").get<int>();
  arch.fc_depth_action = a.at("fc_depth_action").get<int>();
  arch.fc_depth_other = a.at("fc_depth_other").get<int>();
  arch.mdn_k = a.at("mdn_k").get<int>();
  FrameGeom geom;
  const auto& g = meta.at("geometry");
  geom.full_w = g.at("full_w").get<int>();
  geom.full_h = g.at("full_h").get<int>();
  geom.periph_w = g.at("periph_w").get<int>();
  geom.periph_h = g.at("periph_h").get<int>();
  geom.fovea_w = g.at("fovea_w").get<int>();
  geom.fovea_h = g.at("fovea_h").get<int>();
  PolicyBundle b(arch, geom, options_from_json(meta.at("options")),
                 meta.at("seed").get<std::uint64_t>());
  for (Comp c : kAllComps) {
    const std::string base = dir + "/" + comp_name(c);
    b.net(c).import_tensors(load_weights(base + ".json", base + ".bin"));
  }
  for (const auto& name : meta.at("trained"))
    b.mark_trained(comp_from_name(name.get<std::string>()));
  return b;
}

}  // namespace fovea::models
