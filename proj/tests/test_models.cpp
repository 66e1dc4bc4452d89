#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include "fovea/models/train.hpp"
#include "fovea/oracle/dataset.hpp"
#include "fovea/segment/gmm.hpp"
#include "fovea/vision/foveation.hpp"

using namespace fovea;
using namespace fovea::models;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() {
    path = fs::temp_directory_path() / ("fovea_models_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

ArchConfig tiny_arch() {
  ArchConfig a;
  a.periph_channels = {4, 4};
  a.periph_strides = {2, 2};
  a.foveal_channels = {4, 4};
  a.fc_width = 16;
  a.fc_depth_action = 2;
  a.fc_depth_other = 1;
  a.mdn_k = 2;
  return a;
}

FrameGeom tiny_geom() {
  FrameGeom g;
  g.full_w = 32;
  g.full_h = 24;
  g.periph_w = 16;
  g.periph_h = 12;
  g.fovea_w = 8;
  g.fovea_h = 8;
  return g;
}

/// Independent parameter arithmetic: 3x3 convs with bias, FC layers with
/// weight, bias, and two batch-norm vectors, then the output layer.
long conv_stack_params(const std::vector<int>& chans) {
  long n = 0;
  int in = 6;
  for (int c : chans) {
    n += static_cast<long>(c) * in * 9 + c;
    in = c;
  }
  return n;
}

long fc_stack_params(int in, int width, int depth, int out) {
  long n = 0;
  for (int i = 0; i < depth; ++i) {
    n += static_cast<long>(in) * width + 3L * width;
    in = width;
  }
  return n + static_cast<long>(in) * out + out;
}

int strided_dim(int in, int s) { return (in - 1) / s + 1; }

int periph_feat_oracle(const ArchConfig& a, int h, int w) {
  for (int s : a.periph_strides) {
    h = strided_dim(h, s);
    w = strided_dim(w, s);
  }
  if (a.periph_spatial_softmax) return 2 * a.periph_channels.back();
  return a.periph_channels.back() * h * w;
}

int foveal_feat_oracle(const ArchConfig& a, int h, int w) {
  for (size_t i = 0; i < a.foveal_channels.size(); ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return a.foveal_channels.back() * h * w;
}

long spec_params_oracle(const ArchConfig& a, const NetSpec& s, const FrameGeom& g, int fh, int fw) {
  long n = 0;
  int feat = 0;
  if (s.use_periph) {
    n += conv_stack_params(a.periph_channels);
    feat += periph_feat_oracle(a, g.periph_h, g.periph_w);
  }
  if (s.use_foveal) {
    n += conv_stack_params(a.foveal_channels);
    feat += foveal_feat_oracle(a, fh, fw);
  }
  return n + fc_stack_params(feat, a.fc_width, s.fc_depth, s.out_dim);
}

/// Packed u8 planes scaled exactly like the runtime tensor packers.
Tensor<float> one_input(const std::vector<std::uint8_t>& px, int h, int w) {
  Tensor<float> t({1, 6, h, w});
  REQUIRE(static_cast<long>(px.size()) == t.size());
  for (long j = 0; j < t.size(); ++j) t[j] = (1.0f / 255.0f) * static_cast<float>(px[j]);
  return t;
}

Tensor<float> periph_input(const FeatureCache& c, int id) {
  return one_input(c.steps[static_cast<size_t>(id)].periph, c.periph_h, c.periph_w);
}

Tensor<float> foveal_input(const FeatureCache& c, int id) {
  return one_input(c.steps[static_cast<size_t>(id)].foveal, c.fovea_h, c.fovea_w);
}

/// Dim texture plus a bright block whose position tracks the tag, so both
/// location-sensitive and appearance-sensitive features separate the tags.
CachedStep pattern_step(const FrameGeom& g, int tag, int episode) {
  CachedStep s;
  s.periph.resize(static_cast<size_t>(6) * g.periph_h * g.periph_w);
  s.foveal.resize(static_cast<size_t>(6) * g.fovea_h * g.fovea_w);
  for (size_t j = 0; j < s.periph.size(); ++j)
    s.periph[j] = static_cast<std::uint8_t>((j * 7 + static_cast<size_t>(tag) * 13 + 11) % 64);
  for (size_t j = 0; j < s.foveal.size(); ++j)
    s.foveal[j] = static_cast<std::uint8_t>((j * 53 + static_cast<size_t>(tag) * 139 + 5) % 256);
  const int bx = (3 + 9 * tag) % (g.periph_w - 3);
  const int by = (2 + 5 * tag) % (g.periph_h - 3);
  for (int c = 0; c < 6; ++c)
    for (int dy = 0; dy < 3; ++dy)
      for (int dx = 0; dx < 3; ++dx)
        s.periph[(static_cast<size_t>(c) * g.periph_h + by + dy) * g.periph_w + bx + dx] = 250;
  s.episode = episode;
  return s;
}

FeatureCache empty_cache(const FrameGeom& g, int episodes) {
  FeatureCache c;
  c.full_w = g.full_w;
  c.full_h = g.full_h;
  c.periph_w = g.periph_w;
  c.periph_h = g.periph_h;
  c.fovea_w = g.fovea_w;
  c.fovea_h = g.fovea_h;
  c.episode_count = episodes;
  return c;
}

/// Nominal-looking synthetic steps: half slow, half fast, gripper closed on
/// odd steps, no failures or recoveries.
FeatureCache nominal_cache(const FrameGeom& g, int episodes, int steps_per_ep) {
  FeatureCache c = empty_cache(g, episodes);
  int tag = 0;
  for (int e = 0; e < episodes; ++e)
    for (int t = 0; t < steps_per_ep; ++t) {
      CachedStep s = pattern_step(g, tag, e);
      s.action = {0.001f * static_cast<float>(t % 5), -0.002f, 0.0005f * static_cast<float>(e),
                  0.01f * static_cast<float>(t % 3)};
      s.grip_cmd = t % 2;
      s.gaze = {4.f + t, 3.f, 5.f + t, 3.5f};
      s.speed = t % 2;
      c.steps.push_back(std::move(s));
      ++tag;
    }
  return c;
}

std::vector<std::uint8_t> side_channels(const std::vector<std::uint8_t>& planes, int side, int hw) {
  auto begin = planes.begin() + static_cast<long>(side) * 3 * hw;
  return {begin, begin + 3 * hw};
}

}  // namespace

TEST_CASE("bundle specs route inputs per the wiring options") {
  ArchConfig a = tiny_arch();
  BundleOptions opt;
  auto specs = bundle_specs(a, opt);
  REQUIRE(specs.size() == static_cast<size_t>(kCompCount));

  auto spec = [&](Comp c) -> const NetSpec& { return specs[static_cast<size_t>(c)]; };
  CHECK(spec(Comp::kFast).use_periph);
  CHECK_FALSE(spec(Comp::kFast).use_foveal);
  CHECK(spec(Comp::kFast).fc_depth == a.fc_depth_action);
  CHECK(spec(Comp::kFast).out_dim == 4);
  CHECK_FALSE(spec(Comp::kSlow).use_periph);
  CHECK(spec(Comp::kSlow).use_foveal);
  CHECK(spec(Comp::kRecovery).use_foveal);
  CHECK(spec(Comp::kGripper).out_dim == 2);
  CHECK(spec(Comp::kGripper).kind == HeadKind::kClassifier);
  CHECK(spec(Comp::kGripper).fc_depth == a.fc_depth_other);
  CHECK(spec(Comp::kFailure).use_foveal);
  CHECK(spec(Comp::kGaze).use_periph);
  CHECK_FALSE(spec(Comp::kGaze).use_foveal);
  CHECK(spec(Comp::kGaze).kind == HeadKind::kMdn);
  CHECK(spec(Comp::kGaze).out_dim == 12 * a.mdn_k);
  CHECK(spec(Comp::kRecoverySteps).out_dim == 1);
  CHECK(spec(Comp::kSpeed).kind == HeadKind::kClassifier);

  BundleOptions swapped;
  swapped.fast_input = InputRouting::kBoth;
  swapped.slow_input = InputRouting::kPeripheral;
  auto specs2 = bundle_specs(a, swapped);
  CHECK(specs2[static_cast<size_t>(Comp::kFast)].use_periph);
  CHECK(specs2[static_cast<size_t>(Comp::kFast)].use_foveal);
  CHECK(specs2[static_cast<size_t>(Comp::kSlow)].use_periph);
  CHECK_FALSE(specs2[static_cast<size_t>(Comp::kSlow)].use_foveal);
}

TEST_CASE("required components follow the wiring options") {
  auto has = [](const std::vector<Comp>& v, Comp c) {
    return std::find(v.begin(), v.end(), c) != v.end();
  };
  BundleOptions opt;
  auto need = required_components(opt);
  CHECK(need.size() == 8);
  for (Comp c : kAllComps) CHECK(has(need, c));

  opt.action_separation = false;
  opt.merge_slow_recovery = true;
  opt.foveal_from_gaze = false;
  opt.use_step_predictor = false;
  need = required_components(opt);
  CHECK(need.size() == 3);
  CHECK(has(need, Comp::kSlow));
  CHECK(has(need, Comp::kGripper));
  CHECK(has(need, Comp::kFailure));
  CHECK_FALSE(has(need, Comp::kFast));
  CHECK_FALSE(has(need, Comp::kRecovery));
  CHECK_FALSE(has(need, Comp::kGaze));
}

TEST_CASE("component and routing names round-trip") {
  for (Comp c : kAllComps) CHECK(comp_from_name(comp_name(c)) == c);
  CHECK(comp_name(Comp::kRecoverySteps) == "recovery_steps");
  CHECK_THROWS_AS(comp_from_name("turbo"), std::invalid_argument);
  for (InputRouting r : {InputRouting::kPeripheral, InputRouting::kFoveal, InputRouting::kBoth})
    CHECK(routing_from_name(routing_name(r)) == r);
  CHECK_THROWS_AS(routing_from_name("sideways"), std::invalid_argument);
}

TEST_CASE("conv plans and parameter counts match hand arithmetic") {
  ArchConfig a;  // production defaults
  auto pp = periph_plan(a, 36, 64);
  REQUIRE(pp.size() == 3);
  CHECK(pp[0].out_h == 18);
  CHECK(pp[0].out_w == 32);
  CHECK(pp[1].out_h == 9);
  CHECK(pp[1].out_w == 16);
  CHECK(pp[2].out_h == 9);
  CHECK(pp[2].out_w == 16);
  CHECK(periph_feature_dim(a, 36, 64) == 32);

  auto fp = foveal_plan(a, 24, 28);
  REQUIRE(fp.size() == 3);
  CHECK(fp[0].in_h == 24);
  CHECK(fp[1].in_h == 12);
  CHECK(fp[1].in_w == 14);
  CHECK(fp[2].in_h == 6);
  CHECK(fp[2].in_w == 7);
  CHECK(foveal_feature_dim(a, 24, 28) == 32 * 3 * 4);

  ArchConfig t = tiny_arch();
  Rng rng(3);
  // periph-only classifier: convs 220+148, ssmax feat 8, fc 176, out 34
  Network pc({"pc", true, false, 2, 1, HeadKind::kClassifier}, t, 12, 16, 8, 8, rng);
  CHECK(pc.param_count() == 578);
  // foveal action net: convs 220+148, feat 16, two fc layers 304 each, out 68
  Network fa({"fa", false, true, 4, 2, HeadKind::kRegression}, t, 12, 16, 8, 8, rng);
  CHECK(fa.param_count() == 1044);
  // both trunks: 736 conv, feat 24, fc 432+304, out 68
  Network bt({"bt", true, true, 4, 2, HeadKind::kRegression}, t, 12, 16, 8, 8, rng);
  CHECK(bt.param_count() == 1540);

  PolicyBundle bundle(t, tiny_geom(), BundleOptions{}, 77);
  long want = 0;
  for (const NetSpec& s : bundle_specs(t, BundleOptions{}))
    want += spec_params_oracle(t, s, tiny_geom(), bundle.foveal_h(), bundle.foveal_w());
  CHECK(bundle.param_count() == want);
}

TEST_CASE("bad architectures are rejected with specifics") {
  ArchConfig a = tiny_arch();
  a.periph_channels = {4, 0};
  CHECK_THROWS_WITH_AS(validate_arch(a, 12, 16, 8, 8), doctest::Contains("zero-channel"),
                       std::invalid_argument);
  a = tiny_arch();
  a.periph_strides = {2};
  CHECK_THROWS_WITH_AS(validate_arch(a, 12, 16, 8, 8), doctest::Contains("stride count"),
                       std::invalid_argument);
  a = tiny_arch();
  a.periph_strides = {2, 0};
  CHECK_THROWS_AS(validate_arch(a, 12, 16, 8, 8), std::invalid_argument);
  a = tiny_arch();
  a.fc_width = 0;
  CHECK_THROWS_AS(validate_arch(a, 12, 16, 8, 8), std::invalid_argument);
  a = tiny_arch();
  a.mdn_k = 0;
  CHECK_THROWS_AS(validate_arch(a, 12, 16, 8, 8), std::invalid_argument);
  a = tiny_arch();
  CHECK_THROWS_WITH_AS(validate_arch(a, 4, 4, 8, 8), doctest::Contains("spatial softmax"),
                       std::invalid_argument);
  a.periph_spatial_softmax = false;  // same grid is fine when flattened
  validate_arch(a, 4, 4, 8, 8);

  Rng rng(1);
  CHECK_THROWS_WITH_AS(Network({"n", false, false, 2, 1, HeadKind::kClassifier}, tiny_arch(), 12,
                               16, 8, 8, rng),
                       doctest::Contains("consumes no input"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(Network({"n", true, false, 0, 1, HeadKind::kClassifier}, tiny_arch(), 12,
                               16, 8, 8, rng),
                       doctest::Contains("out_dim"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(Network({"n", true, false, 10, 1, HeadKind::kMdn}, tiny_arch(), 12, 16, 8,
                               8, rng),
                       doctest::Contains("12*K"), std::invalid_argument);
}

TEST_CASE("forward rejects missing, surplus, and misshapen inputs") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 5);
  Tensor<float> periph({1, 6, 12, 16});
  Tensor<float> foveal({1, 6, 8, 8});

  Network& grip = bundle.net(Comp::kGripper);  // foveal-only
  CHECK_THROWS_WITH_AS(grip.forward(&periph, &foveal, ag::Mode::kEval),
                       doctest::Contains("does not consume peripheral"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(grip.forward(nullptr, nullptr, ag::Mode::kEval),
                       doctest::Contains("requires foveal"), std::invalid_argument);
  Tensor<float> wrong({1, 6, 8, 9});
  CHECK_THROWS_WITH_AS(grip.forward(nullptr, &wrong, ag::Mode::kEval),
                       doctest::Contains("[N,6,8,8]"), std::invalid_argument);
  Tensor<float> rank3({6, 8, 8});
  CHECK_THROWS_AS(grip.forward(nullptr, &rank3, ag::Mode::kEval), std::invalid_argument);
  // the peripheral tensor must not sneak into the foveal slot
  CHECK_THROWS_AS(grip.forward(nullptr, &periph, ag::Mode::kEval), std::invalid_argument);

  BundleOptions both;
  both.fast_input = InputRouting::kBoth;
  PolicyBundle b2(tiny_arch(), tiny_geom(), both, 5);
  Tensor<float> foveal2({2, 6, 8, 8});
  CHECK_THROWS_WITH_AS(b2.net(Comp::kFast).forward(&periph, &foveal2, ag::Mode::kEval),
                       doctest::Contains("batch sizes disagree"), std::invalid_argument);

  Tensor<float> batch2({2, 6, 8, 8});
  CHECK_THROWS_WITH_AS(bundle.classify(Comp::kGripper, batch2), doctest::Contains("one sample"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(bundle.predict_recovery_steps(rank3), doctest::Contains("one sample"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      bundle.infer_action(Comp::kSlow, nullptr, &batch2, PolicyBundle::ActionLimits{}),
      doctest::Contains("one sample"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(bundle.infer_action(Comp::kGripper, nullptr, &foveal,
                                           PolicyBundle::ActionLimits{}),
                       doctest::Contains("not an action net"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(bundle.classify(Comp::kGaze, foveal), doctest::Contains("not a classifier"),
                       std::invalid_argument);
}

TEST_CASE("gazeless wiring feeds the peripheral image to the foveal trunk") {
  BundleOptions opt;
  opt.foveal_from_gaze = false;
  FrameGeom g = tiny_geom();
  PolicyBundle bundle(tiny_arch(), g, opt, 2);
  CHECK(bundle.foveal_h() == g.periph_h);
  CHECK(bundle.foveal_w() == g.periph_w);
  Tensor<float> periph_sized({1, 6, 12, 16});
  auto out = bundle.net(Comp::kSlow).forward(nullptr, &periph_sized, ag::Mode::kEval);
  CHECK(out->value.dim(1) == 4);
  Tensor<float> crop_sized({1, 6, 8, 8});
  CHECK_THROWS_AS(bundle.net(Comp::kSlow).forward(nullptr, &crop_sized, ag::Mode::kEval),
                  std::invalid_argument);
}

TEST_CASE("mixture head layout carves the raw columns correctly") {
  const int k = 2;
  ag::Graph<float> g;
  Tensor<float> t({1, 24});
  for (long i = 0; i < 24; ++i) t[i] = 0.08f * static_cast<float>(i) - 0.5f;
  auto raw = g.constant(t);
  for (int side = 0; side < 2; ++side) {
    MdnParams p = mdn_side(raw, k, side);
    const int base = side * 12;
    const double e0 = std::exp(static_cast<double>(t[base])),
                 e1 = std::exp(static_cast<double>(t[base + 1]));
    CHECK(p.weights->value[0] == Approx(e0 / (e0 + e1)));
    CHECK(p.weights->value[1] == Approx(e1 / (e0 + e1)));
    for (int j = 0; j < 2 * k; ++j) {
      CHECK(p.means->value[j] == t[base + k + j]);
      CHECK(p.sigmas->value[j] ==
            Approx(std::exp(static_cast<double>(t[base + 3 * k + j])) + 1e-6));
    }
    for (int j = 0; j < k; ++j)
      CHECK(p.rhos->value[j] == Approx(0.99 * std::tanh(static_cast<double>(t[base + 5 * k + j]))));
  }
}

TEST_CASE("a zeroed action net emits the zero action and clamps engage on a biased one") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 8);
  Network& slow = bundle.net(Comp::kSlow);
  for (auto& p : slow.params()) p->value.array().setZero();
  Tensor<float> foveal({1, 6, 8, 8}, 0.4f);
  PolicyBundle::ActionLimits lim;
  auto a = bundle.infer_action(Comp::kSlow, nullptr, &foveal, lim);
  CHECK(a.dpos.norm() == 0.0);
  CHECK(a.dyaw == 0.0);

  auto bias = slow.graph().find_param("out.b");
  bias->value[0] = 1000.f;
  bias->value[3] = -7.f;
  a = bundle.infer_action(Comp::kSlow, nullptr, &foveal, lim);
  CHECK(a.dpos.norm() == Approx(lim.max_step));
  CHECK(a.dpos.x() == Approx(lim.max_step));
  CHECK(a.dyaw == -lim.max_yaw_step);

  // output statistics rescale the raw head values before the clamp
  bias->value[0] = 1.f;
  bias->value[3] = 0.f;
  slow.stats().out_mean[0] = 0.001f;
  slow.stats().out_std[0] = 0.002f;
  a = bundle.infer_action(Comp::kSlow, nullptr, &foveal, lim);
  CHECK(a.dpos.x() == Approx(0.003).epsilon(1e-6));
}

TEST_CASE("classifier ties resolve to the lower class index") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 8);
  for (auto& p : bundle.net(Comp::kGripper).params()) p->value.array().setZero();
  Tensor<float> foveal({1, 6, 8, 8}, 0.2f);
  CHECK(bundle.classify(Comp::kGripper, foveal) == 0);
  bundle.net(Comp::kGripper).graph().find_param("out.b")->value[1] = 0.1f;
  CHECK(bundle.classify(Comp::kGripper, foveal) == 1);
}

TEST_CASE("recovery step prediction rounds and clamps") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 8);
  Network& net = bundle.net(Comp::kRecoverySteps);
  for (auto& p : net.params()) p->value.array().setZero();
  Tensor<float> foveal({1, 6, 8, 8}, 0.6f);
  auto bias = net.graph().find_param("out.b");
  bias->value[0] = 0.73f;
  CHECK(bundle.predict_recovery_steps(foveal) == 7);
  bias->value[0] = -5.f;
  CHECK(bundle.predict_recovery_steps(foveal) == 0);
  bias->value[0] = 50.f;
  CHECK(bundle.predict_recovery_steps(foveal) == 100);
}

TEST_CASE("a constant-head gaze net reads off the max-weight mean") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 8);
  Network& gaze = bundle.net(Comp::kGaze);
  for (auto& p : gaze.params()) p->value.array().setZero();
  auto bias = gaze.graph().find_param("out.b");
  // left: component 0 dominates, mean (0.25, 0.75)
  bias->value[0] = 2.f;
  bias->value[2] = 0.25f;
  bias->value[3] = 0.9f;
  bias->value[4] = 0.75f;
  bias->value[5] = 0.1f;
  // right: component 1 dominates, mean outside the frame on both axes
  bias->value[13] = 3.f;
  bias->value[14] = 0.1f;
  bias->value[15] = 1.5f;
  bias->value[16] = 0.2f;
  bias->value[17] = -0.3f;

  Tensor<float> periph({1, 6, 12, 16}, 0.3f);
  auto mix = bundle.infer_gaze_mixture(periph);
  const double e2 = std::exp(2.0);
  CHECK(mix.left.weights[0] == Approx(e2 / (e2 + 1.0)));
  CHECK(mix.left.weights[0] + mix.left.weights[1] == Approx(1.0));
  CHECK(mix.right.weights[1] > mix.right.weights[0]);

  auto g = bundle.infer_gaze(periph);
  CHECK(g.left.x == 8.0);    // 0.25 * 32
  CHECK(g.left.y == 18.0);   // 0.75 * 24
  CHECK(g.right.x == 31.0);  // clamped to the last column
  CHECK(g.right.y == 0.0);   // clamped to the first row
}

TEST_CASE("gaze sampling is deterministic and collapses with tiny sigma") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 8);
  Network& gaze = bundle.net(Comp::kGaze);
  for (auto& p : gaze.params()) p->value.array().setZero();
  auto bias = gaze.graph().find_param("out.b");
  bias->value[0] = 20.f;  // left locks onto component 0
  bias->value[2] = 0.5f;
  bias->value[4] = 0.5f;
  bias->value[13] = 20.f;  // right locks onto component 1
  bias->value[15] = 0.25f;
  bias->value[17] = 0.25f;
  for (int j : {6, 7, 8, 9, 18, 19, 20, 21}) bias->value[j] = -14.f;

  Tensor<float> periph({1, 6, 12, 16}, 0.5f);
  Rng r1(99), r2(99);
  auto s1 = bundle.sample_gaze(periph, r1);
  auto s2 = bundle.sample_gaze(periph, r2);
  CHECK(s1.left.x == s2.left.x);
  CHECK(s1.left.y == s2.left.y);
  CHECK(s1.right.x == s2.right.x);
  CHECK(s1.right.y == s2.right.y);
  CHECK(s1.left.x == Approx(16.0).epsilon(1e-3));
  CHECK(s1.left.y == Approx(12.0).epsilon(1e-3));
  CHECK(s1.right.x == Approx(8.0).epsilon(1e-3));
  CHECK(s1.right.y == Approx(6.0).epsilon(1e-3));
}

TEST_CASE("untrained gaze inference stays finite and inside the frame") {
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 11);
  Rng rng(4);
  Tensor<float> periph({1, 6, 12, 16});
  for (long i = 0; i < periph.size(); ++i) periph[i] = static_cast<float>(rng.uniform());
  auto g = bundle.infer_gaze(periph);
  CHECK(std::isfinite(g.left.x));
  CHECK(std::isfinite(g.right.y));
  CHECK(g.left.x >= 0.0);
  CHECK(g.left.x <= 31.0);
  CHECK(g.left.y >= 0.0);
  CHECK(g.left.y <= 23.0);
}

TEST_CASE("feature caches from the reader and from memory agree") {
  TmpDir dir;
  sim::CameraModel cam;
  cam.width = 64;
  cam.height = 36;
  cam.cx = 32;
  cam.cy = 27.5;
  cam.scale = 225;
  oracle::OracleConfig oc;
  oc.fail_prob = 0.6;
  sim::SimConfig sc;
  std::vector<oracle::EpisodeRecord> eps;
  for (int i = 0; i < 2; ++i) eps.push_back(oracle::generate_episode(40u + i, oc, sc, cam));
  oracle::write_dataset(eps, dir.str(), cam.width, cam.height);

  FrameGeom g;
  g.full_w = 64;
  g.full_h = 36;
  g.periph_w = 32;
  g.periph_h = 18;
  g.fovea_w = 14;
  g.fovea_h = 12;
  const double threshold = 0.005;

  oracle::DatasetReader reader(dir.str());
  FeatureCache from_reader = build_feature_cache(reader, g, threshold, false);
  FeatureCache from_memory = build_feature_cache(eps, g, threshold, false);

  REQUIRE(from_reader.steps.size() == from_memory.steps.size());
  CHECK(from_reader.episode_count == 2);
  for (size_t i = 0; i < from_reader.steps.size(); ++i) {
    const CachedStep& a = from_reader.steps[i];
    const CachedStep& b = from_memory.steps[i];
    CHECK(a.periph == b.periph);
    CHECK(a.foveal == b.foveal);
    CHECK(a.action == b.action);
    CHECK(a.gaze == b.gaze);
    CHECK(a.grip_cmd == b.grip_cmd);
    CHECK(a.failure == b.failure);
    CHECK(a.recovery_remaining == b.recovery_remaining);
    CHECK(a.speed == b.speed);
    CHECK(a.episode == b.episode);
  }

  SUBCASE("cached planes reproduce the runtime tensors bit for bit") {
    Image left, right;
    reader.load_frames(0, 0, left, right);
    const CachedStep& s = from_reader.steps[0];
    Tensor<float> periph = make_peripheral(left, right, g);
    REQUIRE(periph.size() == static_cast<long>(s.periph.size()));
    bool periph_ok = true;
    for (long j = 0; j < periph.size(); ++j)
      periph_ok = periph_ok &&
                  periph[j] == (1.0f / 255.0f) * static_cast<float>(s.periph[static_cast<size_t>(j)]);
    CHECK(periph_ok);
    const auto& rec = reader.episode(0).steps[0];
    Tensor<float> fov = make_foveal(left, right, rec.gaze_l, rec.gaze_r, g);
    bool fov_ok = true;
    for (long j = 0; j < fov.size(); ++j)
      fov_ok = fov_ok &&
               fov[j] == (1.0f / 255.0f) * static_cast<float>(s.foveal[static_cast<size_t>(j)]);
    CHECK(fov_ok);
  }

  SUBCASE("mono duplicates the left frame into the right channels") {
    FeatureCache mono = build_feature_cache(eps, g, threshold, true);
    const int phw = g.periph_h * g.periph_w;
    const int fhw = g.fovea_h * g.fovea_w;
    for (const CachedStep& s : mono.steps) {
      CHECK(side_channels(s.periph, 0, phw) == side_channels(s.periph, 1, phw));
      CHECK(side_channels(s.foveal, 0, fhw) == side_channels(s.foveal, 1, fhw));
    }
    CHECK(mono.mono);
  }

  SUBCASE("bad inputs are rejected with diagnostics") {
    CHECK_THROWS_WITH_AS(build_feature_cache(eps, g, std::nan(""), false),
                         doctest::Contains("finite"), std::invalid_argument);
    FrameGeom wrong = g;
    wrong.full_w = 128;
    wrong.full_h = 72;
    CHECK_THROWS_WITH_AS(build_feature_cache(eps, wrong, threshold, false),
                         doctest::Contains("geometry expects"), std::invalid_argument);
    std::vector<oracle::EpisodeRecord> bare = eps;
    for (auto& ep : bare)
      for (auto& st : ep.steps) st.obs = {};
    CHECK_THROWS_WITH_AS(build_feature_cache(bare, g, threshold, false),
                         doctest::Contains("carries no frames"), std::invalid_argument);
  }
}

TEST_CASE("filter selections match a hand enumeration across wirings") {
  FrameGeom g = tiny_geom();
  FeatureCache c = empty_cache(g, 2);
  auto add = [&](bool failure, int rec, int speed) {
    CachedStep s = pattern_step(g, static_cast<int>(c.steps.size()), 0);
    s.failure = failure;
    s.recovery_remaining = rec;
    s.speed = speed;
    c.steps.push_back(std::move(s));
  };
  add(false, 0, 1);  // 0: nominal fast
  add(false, 0, 0);  // 1: nominal slow
  add(true, 0, 1);   // 2: failure
  add(false, 3, 0);  // 3: recovery
  add(true, 0, 0);   // 4: failure

  using V = std::vector<int>;
  const V all{0, 1, 2, 3, 4};
  BundleOptions opt;
  CHECK(filter_steps(c, Comp::kFast, {0}, opt) == V{0});
  CHECK(filter_steps(c, Comp::kSlow, {0}, opt) == V{1});
  CHECK(filter_steps(c, Comp::kRecovery, {0}, opt) == V{3});
  CHECK(filter_steps(c, Comp::kRecoverySteps, {0}, opt) == V{3});
  CHECK(filter_steps(c, Comp::kGripper, {0}, opt) == V{0, 1, 3});
  CHECK(filter_steps(c, Comp::kSpeed, {0}, opt) == V{0, 1, 3});
  CHECK(filter_steps(c, Comp::kFailure, {0}, opt) == all);
  CHECK(filter_steps(c, Comp::kGaze, {0}, opt) == all);

  BundleOptions merged;
  merged.merge_slow_recovery = true;
  CHECK(filter_steps(c, Comp::kSlow, {0}, merged) == V{1, 3});

  BundleOptions joined;
  joined.action_separation = false;
  CHECK(filter_steps(c, Comp::kSlow, {0}, joined) == V{0, 1});

  BundleOptions both = merged;
  both.action_separation = false;
  CHECK(filter_steps(c, Comp::kSlow, {0}, both) == V{0, 1, 3});

  CHECK(filter_steps(c, Comp::kGaze, {1}, opt).empty());
  CHECK(filter_steps(c, Comp::kGaze, {}, opt).empty());
  CHECK_THROWS_AS(filter_steps(c, Comp::kGaze, {5}, opt), std::out_of_range);
}

TEST_CASE("training rejects a component whose filter selects nothing") {
  FeatureCache c = nominal_cache(tiny_geom(), 2, 6);
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train_component(bundle, Comp::kRecovery, c, {0}, {1}, cfg),
                       doctest::Contains("filter 'recovery steps' selected 0 training samples"),
                       std::runtime_error);

  // recovery data exists only in the training episodes, so validation is empty
  FeatureCache c2 = c;
  for (int t = 0; t < 2; ++t) {
    CachedStep s = pattern_step(tiny_geom(), 90 + t, 0);
    s.recovery_remaining = 2 - t;
    c2.steps.push_back(std::move(s));
  }
  CHECK_THROWS_WITH_AS(train_component(bundle, Comp::kRecovery, c2, {0}, {1}, cfg),
                       doctest::Contains("0 validation samples"), std::runtime_error);
}

TEST_CASE("single-class labels produce a warning, not a crash") {
  FeatureCache c = nominal_cache(tiny_geom(), 2, 6);
  for (auto& s : c.steps) s.grip_cmd = 0;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 4;
  {
    PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 3);
    auto res = train_component(bundle, Comp::kGripper, c, {0}, {1}, cfg);
    CHECK(res.warning.find("single-class") != std::string::npos);
    CHECK(bundle.is_trained(Comp::kGripper));
  }
  {
    // no failure steps at all: the balanced sampler falls back and warns
    PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 3);
    auto res = train_component(bundle, Comp::kFailure, c, {0}, {1}, cfg);
    CHECK(res.warning.find("single-class") != std::string::npos);
  }
}

TEST_CASE("two distinct samples can be fit exactly by an action net") {
  FrameGeom g = tiny_geom();
  FeatureCache c = empty_cache(g, 4);
  const std::array<float, 4> act_a{0.010f, -0.004f, 0.002f, 0.08f};
  const std::array<float, 4> act_b{-0.006f, 0.012f, -0.001f, -0.12f};
  for (int e = 0; e < 4; ++e) {
    CachedStep s = pattern_step(g, e % 2, e);
    s.action = e % 2 == 0 ? act_a : act_b;
    s.speed = 0;
    c.steps.push_back(std::move(s));
  }

  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 21);
  TrainConfig cfg;
  cfg.lr = 0.02f;
  cfg.batch = 2;
  cfg.epochs = 400;
  cfg.samples_per_epoch = 0;
  cfg.val_samples = 0;
  cfg.l2_only_action = true;
  cfg.seed = 6;
  auto res = train_component(bundle, Comp::kSlow, c, {0, 1}, {2, 3}, cfg);
  CHECK(res.best_val < res.val_curve[0]);

  PolicyBundle::ActionLimits lim;
  for (int e = 0; e < 2; ++e) {
    Tensor<float> fov = foveal_input(c, e);
    auto a = bundle.infer_action(Comp::kSlow, nullptr, &fov, lim);
    const auto& want = e == 0 ? act_a : act_b;
    CHECK(std::abs(a.dpos.x() - want[0]) < 1e-3);
    CHECK(std::abs(a.dpos.y() - want[1]) < 1e-3);
    CHECK(std::abs(a.dpos.z() - want[2]) < 1e-3);
    CHECK(std::abs(a.dyaw - want[3]) < 1e-3);
  }
}

TEST_CASE("two distinct samples can be separated by a classifier") {
  FrameGeom g = tiny_geom();
  FeatureCache c = empty_cache(g, 4);
  for (int e = 0; e < 4; ++e) {
    CachedStep s = pattern_step(g, e % 2, e);
    s.grip_cmd = e % 2;
    c.steps.push_back(std::move(s));
  }
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 22);
  TrainConfig cfg;
  cfg.lr = 0.02f;
  cfg.batch = 2;
  cfg.epochs = 150;
  cfg.samples_per_epoch = 0;
  cfg.val_samples = 0;
  cfg.seed = 6;
  train_component(bundle, Comp::kGripper, c, {0, 1}, {2, 3}, cfg);
  Tensor<float> f0 = foveal_input(c, 0), f1 = foveal_input(c, 1);
  CHECK(bundle.classify(Comp::kGripper, f0) == 0);
  CHECK(bundle.classify(Comp::kGripper, f1) == 1);
}

TEST_CASE("two distinct samples can be pinned by the gaze mixture") {
  FrameGeom g = tiny_geom();
  FeatureCache c = empty_cache(g, 4);
  const std::array<float, 4> gz_a{5.f, 3.f, 8.f, 6.f};
  const std::array<float, 4> gz_b{25.f, 15.f, 20.f, 9.f};
  for (int e = 0; e < 4; ++e) {
    CachedStep s = pattern_step(g, e % 2, e);
    s.gaze = e % 2 == 0 ? gz_a : gz_b;
    c.steps.push_back(std::move(s));
  }
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 23);
  TrainConfig cfg;
  cfg.lr = 0.02f;
  cfg.batch = 2;
  cfg.epochs = 500;
  cfg.samples_per_epoch = 0;
  cfg.val_samples = 0;
  cfg.seed = 6;
  auto res = train_component(bundle, Comp::kGaze, c, {0, 1}, {2, 3}, cfg);
  CHECK(res.best_val < res.val_curve[0]);

  for (int e = 0; e < 2; ++e) {
    Tensor<float> periph = periph_input(c, e);
    auto p = bundle.infer_gaze(periph);
    const auto& want = e == 0 ? gz_a : gz_b;
    CHECK(std::abs(p.left.x - want[0]) < 2.0);
    CHECK(std::abs(p.left.y - want[1]) < 2.0);
    CHECK(std::abs(p.right.x - want[2]) < 2.0);
    CHECK(std::abs(p.right.y - want[3]) < 2.0);
  }
}

TEST_CASE("training is bitwise deterministic in the seed") {
  FeatureCache c = nominal_cache(tiny_geom(), 3, 8);
  TrainConfig cfg;
  cfg.lr = 0.005f;
  cfg.batch = 4;
  cfg.epochs = 3;
  cfg.seed = 17;

  auto run = [&](std::uint64_t bundle_seed) {
    PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, bundle_seed);
    auto res = train_component(bundle, Comp::kSlow, c, {0, 1}, {2}, cfg);
    return std::make_pair(bundle.net(Comp::kSlow).export_tensors(), res);
  };
  auto [wa, ra] = run(7);
  auto [wb, rb] = run(7);
  REQUIRE(wa.size() == wb.size());
  for (size_t i = 0; i < wa.size(); ++i) {
    CHECK(wa[i].first == wb[i].first);
    REQUIRE(wa[i].second.size() == wb[i].second.size());
    bool same = true;
    for (long j = 0; j < wa[i].second.size(); ++j)
      same = same && wa[i].second[j] == wb[i].second[j];
    CHECK(same);
  }
  CHECK(ra.val_curve == rb.val_curve);
  CHECK(ra.train_curve == rb.train_curve);

  auto [wc, rc] = run(8);
  bool all_same = true;
  for (size_t i = 0; i < wa.size() && all_same; ++i)
    for (long j = 0; j < wa[i].second.size() && all_same; ++j)
      all_same = wa[i].second[j] == wc[i].second[j];
  CHECK_FALSE(all_same);
}

TEST_CASE("the kept checkpoint is the validation minimum") {
  FeatureCache c = nominal_cache(tiny_geom(), 3, 8);
  PolicyBundle bundle(tiny_arch(), tiny_geom(), BundleOptions{}, 31);
  TrainConfig cfg;
  cfg.lr = 0.01f;
  cfg.batch = 4;
  cfg.epochs = 4;
  cfg.seed = 2;
  auto res = train_component(bundle, Comp::kSlow, c, {0, 1}, {2}, cfg);
  REQUIRE(res.val_curve.size() == 5);
  REQUIRE(res.train_curve.size() == 4);
  const double lo = *std::min_element(res.val_curve.begin(), res.val_curve.end());
  CHECK(res.best_val == lo);
  CHECK(res.val_curve[static_cast<size_t>(res.best_epoch)] == res.best_val);

  // re-evaluating the restored weights reproduces the kept validation loss
  TrainConfig probe = cfg;
  probe.epochs = 0;
  auto again = train_component(bundle, Comp::kSlow, c, {0, 1}, {2}, probe);
  REQUIRE(again.val_curve.size() == 1);
  CHECK(again.val_curve[0] == res.best_val);
}

TEST_CASE("curve files list the untrained row first") {
  TmpDir dir;
  TrainResult res;
  res.train_curve = {0.5, 0.25};
  res.val_curve = {0.9, 0.45, 0.3};
  const std::string path = dir.str() + "/curve.csv";
  write_curve_csv(path, res);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,train_loss,val_loss");
  std::getline(f, line);
  CHECK(line.rfind("0,nan,0.9", 0) == 0);
  int rows = 1;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("save and load round-trip every tensor and the trained marks") {
  TmpDir dir;
  FeatureCache c = nominal_cache(tiny_geom(), 3, 8);
  BundleOptions opt;
  opt.mono = true;
  opt.fast_input = InputRouting::kBoth;
  PolicyBundle bundle(tiny_arch(), tiny_geom(), opt, 41);
  TrainConfig cfg;
  cfg.lr = 0.01f;
  cfg.batch = 4;
  cfg.epochs = 2;
  cfg.seed = 13;
  train_component(bundle, Comp::kSlow, c, {0, 1}, {2}, cfg);
  train_component(bundle, Comp::kGripper, c, {0, 1}, {2}, cfg);
  bundle.save(dir.str());

  PolicyBundle loaded = PolicyBundle::load(dir.str());
  CHECK(loaded.seed() == 41);
  CHECK(loaded.options().mono);
  CHECK(loaded.options().fast_input == InputRouting::kBoth);
  CHECK(loaded.geom().full_w == 32);
  CHECK(loaded.is_trained(Comp::kSlow));
  CHECK(loaded.is_trained(Comp::kGripper));
  CHECK_FALSE(loaded.is_trained(Comp::kFast));
  CHECK_FALSE(loaded.fully_trained());

  for (Comp comp : kAllComps) {
    auto a = bundle.net(comp).export_tensors();
    auto b = loaded.net(comp).export_tensors();
    REQUIRE(a.size() == b.size());
    bool same = true;
    for (size_t i = 0; i < a.size(); ++i) {
      same = same && a[i].first == b[i].first && a[i].second.same_shape(b[i].second);
      for (long j = 0; same && j < a[i].second.size(); ++j)
        same = a[i].second[j] == b[i].second[j];
    }
    CHECK(same);
  }

  Tensor<float> fov = foveal_input(c, 5);
  PolicyBundle::ActionLimits lim;
  auto want = bundle.infer_action(Comp::kSlow, nullptr, &fov, lim);
  auto got = loaded.infer_action(Comp::kSlow, nullptr, &fov, lim);
  CHECK(want.dpos.x() == got.dpos.x());
  CHECK(want.dpos.y() == got.dpos.y());
  CHECK(want.dpos.z() == got.dpos.z());
  CHECK(want.dyaw == got.dyaw);
  CHECK(bundle.classify(Comp::kGripper, fov) == loaded.classify(Comp::kGripper, fov));

  CHECK_THROWS_AS(PolicyBundle::load(dir.str() + "/missing"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Demonstration-data fixture shared by the slow training checks below.

namespace {

struct OracleFixture {
  FeatureCache cache;
  std::vector<int> train_eps, val_eps;
  double threshold = 0;
};

const OracleFixture& oracle_fixture() {
  static OracleFixture* fx = [] {
    auto* f = new OracleFixture;
    TmpDir dir;
    sim::SimConfig sc;
    sim::CameraModel cam;
    oracle::OracleConfig oc;
    oc.fail_prob = 0.45;
    const int n = 30;
    {
      oracle::DatasetWriter w(dir.str(), cam.width, cam.height);
      for (int i = 0; i < n; ++i)
        w.add_episode(oracle::generate_episode(300u + static_cast<unsigned>(i), oc, sc, cam));
      w.finalize();
    }
    oracle::DatasetReader reader(dir.str());
    std::tie(f->train_eps, f->val_eps) = oracle::split_train_val(n, 0.8, 77);
    std::vector<segment::SpeedSample> speeds;
    for (int e : f->train_eps) {
      auto s = segment::episode_speeds(reader.episode(e), e);
      speeds.insert(speeds.end(), s.begin(), s.end());
    }
    f->threshold = segment::fit_gmm2(speeds).threshold;
    f->cache = build_feature_cache(reader, FrameGeom{}, f->threshold, false);
    return f;
  }();
  return *fx;
}

TrainConfig fixture_config(int epochs, int samples) {
  TrainConfig cfg;
  cfg.lr = 1e-3f;
  cfg.batch = 64;
  cfg.epochs = epochs;
  cfg.samples_per_epoch = samples;
  cfg.val_samples = 1024;
  cfg.seed = 5;
  return cfg;
}

struct Accuracy {
  double plain = 0;
  double balanced = 0;
};

Accuracy holdout_accuracy(PolicyBundle& bundle, Comp comp, const OracleFixture& fx) {
  auto ids = filter_steps(fx.cache, comp, fx.val_eps, bundle.options());
  std::array<long, 2> hit{}, count{};
  for (int id : ids) {
    const CachedStep& s = fx.cache.steps[static_cast<size_t>(id)];
    const int want = comp == Comp::kGripper ? s.grip_cmd
                     : comp == Comp::kFailure ? (s.failure ? 1 : 0)
                                              : s.speed;
    Tensor<float> fov = foveal_input(fx.cache, id);
    const int got = bundle.classify(comp, fov);
    ++count[static_cast<size_t>(want)];
    if (got == want) ++hit[static_cast<size_t>(want)];
  }
  Accuracy acc;
  const long total = count[0] + count[1];
  acc.plain = total > 0 ? static_cast<double>(hit[0] + hit[1]) / static_cast<double>(total) : 0.0;
  int classes = 0;
  for (int k = 0; k < 2; ++k)
    if (count[static_cast<size_t>(k)] > 0) {
      acc.balanced += static_cast<double>(hit[static_cast<size_t>(k)]) /
                      static_cast<double>(count[static_cast<size_t>(k)]);
      ++classes;
    }
  acc.balanced /= classes > 0 ? classes : 1;
  return acc;
}

}  // namespace

TEST_CASE("demonstration fixture carries every label the bundle needs") {
  const OracleFixture& fx = oracle_fixture();
  CHECK(fx.cache.episode_count == 30);
  CHECK(fx.cache.steps.size() > 1500);
  CHECK(fx.threshold > 0.002);
  CHECK(fx.threshold < 0.010);
  int failures = 0, recoveries = 0, fast = 0, closed = 0;
  for (const auto& s : fx.cache.steps) {
    failures += s.failure ? 1 : 0;
    recoveries += s.recovery_remaining > 0 ? 1 : 0;
    fast += s.speed;
    closed += s.grip_cmd;
  }
  CHECK(failures > 20);
  CHECK(recoveries > 100);
  CHECK(fast > 300);
  CHECK(closed > 300);
}

TEST_CASE("the failure detector reaches holdout accuracy on demonstrations") {
  const OracleFixture& fx = oracle_fixture();
  PolicyBundle bundle(ArchConfig{}, FrameGeom{}, BundleOptions{}, 1234);
  auto res = train_component(bundle, Comp::kFailure, fx.cache, fx.train_eps, fx.val_eps,
                             fixture_config(8, 2048));
  CHECK(res.warning.empty());
  Accuracy acc = holdout_accuracy(bundle, Comp::kFailure, fx);
  CHECK(acc.plain >= 0.88);
  CHECK(acc.balanced >= 0.70);
}

TEST_CASE("the speed classifier reaches holdout accuracy on demonstrations") {
  const OracleFixture& fx = oracle_fixture();
  PolicyBundle bundle(ArchConfig{}, FrameGeom{}, BundleOptions{}, 1234);
  auto res = train_component(bundle, Comp::kSpeed, fx.cache, fx.train_eps, fx.val_eps,
                             fixture_config(8, 2048));
  CHECK(res.warning.empty());
  Accuracy acc = holdout_accuracy(bundle, Comp::kSpeed, fx);
  CHECK(acc.plain >= 0.85);
}

TEST_CASE("the gaze mixture localizes the demonstrated gaze") {
  const OracleFixture& fx = oracle_fixture();
  PolicyBundle bundle(ArchConfig{}, FrameGeom{}, BundleOptions{}, 1234);
  auto res = train_component(bundle, Comp::kGaze, fx.cache, fx.train_eps, fx.val_eps,
                             fixture_config(8, 2048));
  CHECK(res.best_val < res.val_curve[0]);

  auto ids = filter_steps(fx.cache, Comp::kGaze, fx.val_eps, bundle.options());
  std::array<std::vector<double>, 4> err;
  for (size_t i = 0; i < ids.size(); i += 3) {
    const CachedStep& s = fx.cache.steps[static_cast<size_t>(ids[i])];
    Tensor<float> periph = periph_input(fx.cache, ids[i]);
    auto p = bundle.infer_gaze(periph);
    err[0].push_back(std::abs(p.left.x - s.gaze[0]));
    err[1].push_back(std::abs(p.left.y - s.gaze[1]));
    err[2].push_back(std::abs(p.right.x - s.gaze[2]));
    err[3].push_back(std::abs(p.right.y - s.gaze[3]));
  }
  for (auto& e : err) {
    REQUIRE(!e.empty());
    std::sort(e.begin(), e.end());
    CHECK(e[e.size() / 2] <= 14.0);
  }
}

TEST_CASE("the recovery length regression improves on holdout") {
  const OracleFixture& fx = oracle_fixture();
  PolicyBundle bundle(ArchConfig{}, FrameGeom{}, BundleOptions{}, 1234);
  auto res = train_component(bundle, Comp::kRecoverySteps, fx.cache, fx.train_eps, fx.val_eps,
                             fixture_config(4, 1024));
  CHECK(res.best_val < res.val_curve[0]);
  auto ids = filter_steps(fx.cache, Comp::kRecoverySteps, fx.val_eps, bundle.options());
  REQUIRE(!ids.empty());
  Tensor<float> fov = foveal_input(fx.cache, ids[0]);
  const int steps = bundle.predict_recovery_steps(fov);
  CHECK(steps >= 0);
  CHECK(steps <= 100);
}
