#include "fovea/models/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "fovea/core/optim.hpp"
#include "fovea/segment/gmm.hpp"
#include "fovea/vision/image.hpp"

namespace fovea::models {

namespace {

void pack_planes(const Image& left, const Image& right, std::vector<std::uint8_t>& out) {
  const int w = left.w, h = left.h;
  out.resize(static_cast<size_t>(6) * w * h);
  for (int side = 0; side < 2; ++side) {
    const Image& im = side == 0 ? left : right;
    for (int c = 0; c < 3; ++c) {
      std::uint8_t* dst = out.data() + (static_cast<size_t>(side) * 3 + c) * w * h;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) dst[static_cast<size_t>(y) * w + x] = im.at(x, y, c);
    }
  }
}

void cache_step(const oracle::StepRecord& st, const FrameGeom& geom, bool mono, int episode,
                FeatureCache& cache) {
  const Image& left = st.obs.left;
  const Image& right = mono ? st.obs.left : st.obs.right;
  if (left.w != geom.full_w || left.h != geom.full_h)
    throw std::invalid_argument("feature cache: frame is " + std::to_string(left.w) + "x" +
                                std::to_string(left.h) + ", geometry expects " +
                                std::to_string(geom.full_w) + "x" + std::to_string(geom.full_h));
  const GazePoint gaze_r = mono ? st.gaze_l : st.gaze_r;
  CachedStep out;
  pack_planes(resize_area(left, geom.periph_w, geom.periph_h),
              resize_area(right, geom.periph_w, geom.periph_h), out.periph);
  pack_planes(crop_at(left, st.gaze_l, geom.fovea_w, geom.fovea_h),
              crop_at(right, gaze_r, geom.fovea_w, geom.fovea_h), out.foveal);
  out.action = {static_cast<float>(st.action.dpos.x()), static_cast<float>(st.action.dpos.y()),
                static_cast<float>(st.action.dpos.z()), static_cast<float>(st.action.dyaw)};
  out.grip_cmd = st.action.gripper_cmd == sim::GripperCmd::kClose ? 1 : 0;
  out.gaze = {static_cast<float>(st.gaze_l.x), static_cast<float>(st.gaze_l.y),
              static_cast<float>(gaze_r.x), static_cast<float>(gaze_r.y)};
  out.failure = st.labels.is_failure_state;
  out.recovery_remaining = st.labels.recovery_steps_remaining;
  if (st.labels.speed_class == oracle::SpeedClass::kUnset)
    throw std::logic_error("feature cache: step missed speed labeling");
  out.speed = st.labels.speed_class == oracle::SpeedClass::kFast ? 1 : 0;
  out.episode = episode;
  cache.steps.push_back(std::move(out));
}

FeatureCache make_cache_shell(const FrameGeom& geom, double threshold, bool mono) {
  if (!std::isfinite(threshold))
    throw std::invalid_argument("feature cache: speed threshold must be finite");
  FeatureCache cache;
  cache.full_w = geom.full_w;
  cache.full_h = geom.full_h;
  cache.periph_w = geom.periph_w;
  cache.periph_h = geom.periph_h;
  cache.fovea_w = geom.fovea_w;
  cache.fovea_h = geom.fovea_h;
  cache.mono = mono;
  return cache;
}

/// Cycles a shuffled pool, reshuffling on wrap.
class PoolSampler {
 public:
  PoolSampler(std::vector<int> pool, Rng rng) : pool_(std::move(pool)), rng_(rng) { shuffle(); }
  int next() {
    if (pos_ == pool_.size()) {
      shuffle();
      pos_ = 0;
    }
    return pool_[pos_++];
  }

 private:
  void shuffle() {
    for (size_t i = pool_.size(); i > 1; --i)
      std::swap(pool_[i - 1], pool_[static_cast<size_t>(rng_.uniform_int(static_cast<int>(i)))]);
  }
  std::vector<int> pool_;
  Rng rng_;
  size_t pos_ = 0;
};

void shuffle_ints(std::vector<int>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
}

// same scaling expression as pack_stereo_chw so cached planes reproduce the
// runtime tensors bit for bit
constexpr float kU8Scale = 1.0f / 255.0f;

// Without a gaze-placed crop, the foveal stream is the peripheral frame
// itself, so gazeless wirings source both inputs from the same planes.
void fill_inputs(const FeatureCache& cache, const std::vector<int>& ids, const NetSpec& spec,
                 bool foveal_from_periph, Tensor<float>* periph, Tensor<float>* foveal) {
  const int n = static_cast<int>(ids.size());
  if (spec.use_periph) {
    *periph = Tensor<float>({n, 6, cache.periph_h, cache.periph_w});
    const long plane = static_cast<long>(6) * cache.periph_h * cache.periph_w;
    for (int i = 0; i < n; ++i) {
      const auto& src = cache.steps[static_cast<size_t>(ids[static_cast<size_t>(i)])].periph;
      float* dst = periph->data() + i * plane;
      for (long j = 0; j < plane; ++j) dst[j] = kU8Scale * static_cast<float>(src[static_cast<size_t>(j)]);
    }
  }
  if (spec.use_foveal) {
    const int h = foveal_from_periph ? cache.periph_h : cache.fovea_h;
    const int w = foveal_from_periph ? cache.periph_w : cache.fovea_w;
    *foveal = Tensor<float>({n, 6, h, w});
    const long plane = static_cast<long>(6) * h * w;
    for (int i = 0; i < n; ++i) {
      const CachedStep& step = cache.steps[static_cast<size_t>(ids[static_cast<size_t>(i)])];
      const auto& src = foveal_from_periph ? step.periph : step.foveal;
      float* dst = foveal->data() + i * plane;
      for (long j = 0; j < plane; ++j) dst[j] = kU8Scale * static_cast<float>(src[static_cast<size_t>(j)]);
    }
  }
}

ag::Var<float> component_loss(Network& net, Comp comp, const FeatureCache& cache,
                              const std::vector<int>& ids, ag::Mode mode, bool l2_only,
                              bool foveal_from_periph) {
  Tensor<float> periph, foveal;
  fill_inputs(cache, ids, net.spec(), foveal_from_periph, &periph, &foveal);
  auto out = net.forward(net.spec().use_periph ? &periph : nullptr,
                         net.spec().use_foveal ? &foveal : nullptr, mode);
  const int n = static_cast<int>(ids.size());
  ag::Graph<float>& g = net.graph();

  switch (comp) {
    case Comp::kFast:
    case Comp::kSlow:
    case Comp::kRecovery: {
      const auto& st = net.stats();
      Tensor<float> target({n, 4});
      for (int i = 0; i < n; ++i) {
        const auto& a = cache.steps[static_cast<size_t>(ids[static_cast<size_t>(i)])].action;
        for (int d = 0; d < 4; ++d)
          target[static_cast<long>(i) * 4 + d] = (a[static_cast<size_t>(d)] - st.out_mean[d]) / st.out_std[d];
      }
      auto t = g.constant(std::move(target));
      return l2_only ? ag::mse_loss(out, t) : ag::l1l2_loss(out, t);
    }
    case Comp::kGripper:
    case Comp::kFailure:
    case Comp::kSpeed: {
      std::vector<int> labels(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const auto& s = cache.steps[static_cast<size_t>(ids[static_cast<size_t>(i)])];
        labels[static_cast<size_t>(i)] =
            comp == Comp::kGripper ? s.grip_cmd : (comp == Comp::kFailure ? (s.failure ? 1 : 0) : s.speed);
      }
      return ag::softmax_xent(out, labels);
    }
    case Comp::kRecoverySteps: {
      Tensor<float> target({n, 1});
      for (int i = 0; i < n; ++i)
        target[i] = static_cast<float>(
                        cache.steps[static_cast<size_t>(ids[static_cast<size_t>(i)])].recovery_remaining) /
                    10.f;
      return ag::mse_loss(out, g.constant(std::move(target)));
    }
    case Comp::kGaze: {
      const int k = net.arch().mdn_k;
      Tensor<float> tl({n, 2}), tr({n, 2});
      for (int i = 0; i < n; ++i) {
        const auto& gz = cache.steps[static_cast<size_t>(ids[static_cast<size_t>(i)])].gaze;
        tl[static_cast<long>(i) * 2] = gz[0] / static_cast<float>(cache.full_w);
        tl[static_cast<long>(i) * 2 + 1] = gz[1] / static_cast<float>(cache.full_h);
        tr[static_cast<long>(i) * 2] = gz[2] / static_cast<float>(cache.full_w);
        tr[static_cast<long>(i) * 2 + 1] = gz[3] / static_cast<float>(cache.full_h);
      }
      MdnParams left = mdn_side(out, k, 0), right = mdn_side(out, k, 1);
      auto nll_l = ag::mdn_nll(left.weights, left.means, left.sigmas, left.rhos,
                               g.constant(std::move(tl)));
      auto nll_r = ag::mdn_nll(right.weights, right.means, right.sigmas, right.rhos,
                               g.constant(std::move(tr)));
      return ag::scale(ag::add(nll_l, nll_r), 0.5f);
    }
  }
  throw std::logic_error("component_loss: unreachable");
}

void set_component_stats(Network& net, Comp comp, const FeatureCache& cache,
                         const std::vector<int>& ids, bool foveal_from_periph) {
  auto channel_stats = [&](bool periph, Tensor<float>& mean, Tensor<float>& std) {
    const bool from_periph = periph || foveal_from_periph;
    const int h = from_periph ? cache.periph_h : cache.fovea_h;
    const int w = from_periph ? cache.periph_w : cache.fovea_w;
    const long plane = static_cast<long>(h) * w;
    std::array<double, 6> sum{}, sq{};
    for (int id : ids) {
      const auto& px = from_periph ? cache.steps[static_cast<size_t>(id)].periph
                                   : cache.steps[static_cast<size_t>(id)].foveal;
      for (int c = 0; c < 6; ++c) {
        const std::uint8_t* p = px.data() + static_cast<size_t>(c) * plane;
        for (long j = 0; j < plane; ++j) {
          const double v = static_cast<double>(p[j]) / 255.0;
          sum[static_cast<size_t>(c)] += v;
          sq[static_cast<size_t>(c)] += v * v;
        }
      }
    }
    const double count = static_cast<double>(ids.size()) * static_cast<double>(plane);
    for (int c = 0; c < 6; ++c) {
      const double m = sum[static_cast<size_t>(c)] / count;
      const double var = std::max(0.0, sq[static_cast<size_t>(c)] / count - m * m);
      mean[c] = static_cast<float>(m);
      std[c] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
    }
  };
  auto& st = net.stats();
  if (net.spec().use_periph) channel_stats(true, st.periph_mean, st.periph_std);
  if (net.spec().use_foveal) channel_stats(false, st.foveal_mean, st.foveal_std);

  if (comp == Comp::kFast || comp == Comp::kSlow || comp == Comp::kRecovery) {
    std::array<double, 4> sum{}, sq{};
    for (int id : ids)
      for (int d = 0; d < 4; ++d) {
        const double v = cache.steps[static_cast<size_t>(id)].action[static_cast<size_t>(d)];
        sum[static_cast<size_t>(d)] += v;
        sq[static_cast<size_t>(d)] += v * v;
      }
    const double count = static_cast<double>(ids.size());
    for (int d = 0; d < 4; ++d) {
      const double m = sum[static_cast<size_t>(d)] / count;
      const double sd = std::sqrt(std::max(0.0, sq[static_cast<size_t>(d)] / count - m * m));
      st.out_mean[d] = static_cast<float>(m);
      st.out_std[d] = sd < 1e-8 ? 1.f : static_cast<float>(sd);
    }
  }
}

}  // namespace

FeatureCache build_feature_cache(oracle::DatasetReader& reader, const FrameGeom& geom,
                                 double speed_threshold, bool mono) {
  FeatureCache cache = make_cache_shell(geom, speed_threshold, mono);
  cache.episode_count = reader.episode_count();
  for (int e = 0; e < reader.episode_count(); ++e) {
    oracle::EpisodeRecord ep = reader.episode(e);
    segment::label_episode(ep, speed_threshold);
    for (size_t t = 0; t < ep.steps.size(); ++t) {
      reader.load_frames(e, static_cast<int>(t), ep.steps[t].obs.left, ep.steps[t].obs.right);
      cache_step(ep.steps[t], geom, mono, e, cache);
      ep.steps[t].obs = {};  // keep no more than one step's frames alive
    }
  }
  return cache;
}

FeatureCache build_feature_cache(const std::vector<oracle::EpisodeRecord>& episodes,
                                 const FrameGeom& geom, double speed_threshold, bool mono) {
  FeatureCache cache = make_cache_shell(geom, speed_threshold, mono);
  cache.episode_count = static_cast<int>(episodes.size());
  for (size_t e = 0; e < episodes.size(); ++e) {
    oracle::EpisodeRecord ep = episodes[e];
    segment::label_episode(ep, speed_threshold);
    for (const auto& st : ep.steps) {
      if (st.obs.left.w == 0)
        throw std::invalid_argument("feature cache: episode carries no frames");
      cache_step(st, geom, mono, static_cast<int>(e), cache);
    }
  }
  return cache;
}

std::vector<int> filter_steps(const FeatureCache& cache, Comp comp,
                              const std::vector<int>& episodes, const BundleOptions& opt) {
  std::vector<char> mask(static_cast<size_t>(cache.episode_count), 0);
  for (int e : episodes) {
    if (e < 0 || e >= cache.episode_count)
      throw std::out_of_range("filter_steps: episode index out of range");
    mask[static_cast<size_t>(e)] = 1;
  }
  std::vector<int> out;
  for (size_t i = 0; i < cache.steps.size(); ++i) {
    const CachedStep& s = cache.steps[i];
    if (!mask[static_cast<size_t>(s.episode)]) continue;
    bool take = false;
    switch (comp) {
      case Comp::kFast:
        take = !s.failure && s.recovery_remaining == 0 && s.speed == 1;
        break;
      case Comp::kSlow:
        if (s.failure) break;
        if (opt.merge_slow_recovery && s.recovery_remaining > 0) {
          take = true;
        } else if (s.recovery_remaining == 0) {
          take = !opt.action_separation || s.speed == 0;
        }
        break;
      case Comp::kRecovery:
        take = s.recovery_remaining > 0;
        break;
      case Comp::kGripper:
        take = !s.failure;
        break;
      case Comp::kFailure:
      case Comp::kGaze:
        take = true;
        break;
      case Comp::kRecoverySteps:
        take = s.recovery_remaining > 0;
        break;
      case Comp::kSpeed:
        take = !s.failure;
        break;
    }
    if (take) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::string filter_description(Comp comp, const BundleOptions& opt) {
  switch (comp) {
    case Comp::kFast:
      return "fast-labeled steps outside failure and recovery";
    case Comp::kSlow:
      if (!opt.action_separation)
        return opt.merge_slow_recovery ? "all non-failure steps"
                                       : "all steps outside failure and recovery";
      return opt.merge_slow_recovery ? "slow-labeled and recovery steps outside failure"
                                     : "slow-labeled steps outside failure and recovery";
    case Comp::kRecovery:
    case Comp::kRecoverySteps:
      return "recovery steps";
    case Comp::kGripper:
    case Comp::kSpeed:
      return "non-failure steps";
    case Comp::kFailure:
    case Comp::kGaze:
      return "all steps";
  }
  return "?";
}

TrainResult train_component(PolicyBundle& bundle, Comp comp, const FeatureCache& cache,
                            const std::vector<int>& train_eps, const std::vector<int>& val_eps,
                            const TrainConfig& cfg) {
  const BundleOptions& opt = bundle.options();
  std::vector<int> train_ids = filter_steps(cache, comp, train_eps, opt);
  if (train_ids.size() < 2)
    throw std::runtime_error("train " + comp_name(comp) + ": filter '" +
                             filter_description(comp, opt) + "' selected " +
                             std::to_string(train_ids.size()) + " training samples");
  std::vector<int> val_ids = filter_steps(cache, comp, val_eps, opt);
  if (val_ids.empty())
    throw std::runtime_error("train " + comp_name(comp) + ": filter '" +
                             filter_description(comp, opt) + "' selected 0 validation samples");

  Network& net = bundle.net(comp);
  net.set_bn_momentum(cfg.bn_momentum);
  const bool foveal_from_periph = !opt.foveal_from_gaze;
  set_component_stats(net, comp, cache, train_ids, foveal_from_periph);

  TrainResult res;
  const bool classifier = net.spec().kind == HeadKind::kClassifier;
  if (classifier) {
    std::set<int> classes;
    for (int id : train_ids) {
      const CachedStep& s = cache.steps[static_cast<size_t>(id)];
      classes.insert(comp == Comp::kGripper ? s.grip_cmd
                                            : (comp == Comp::kFailure ? (s.failure ? 1 : 0) : s.speed));
    }
    if (classes.size() < 2)
      res.warning = "component '" + comp_name(comp) + "': training labels are single-class";
  }

  Rng rng = Rng(cfg.seed).fork("train").fork(comp_name(comp));

  std::vector<int> val_fix = val_ids;
  {
    Rng vr = rng.fork("val");
    shuffle_ints(val_fix, vr);
    if (cfg.val_samples > 0 && static_cast<int>(val_fix.size()) > cfg.val_samples)
      val_fix.resize(static_cast<size_t>(cfg.val_samples));
  }
  auto eval_val = [&]() {
    ag::NoGrad<float> guard(net.graph());
    double sum = 0;
    size_t done = 0;
    while (done < val_fix.size()) {
      const size_t take = std::min<size_t>(256, val_fix.size() - done);
      std::vector<int> chunk(val_fix.begin() + static_cast<long>(done),
                             val_fix.begin() + static_cast<long>(done + take));
      auto loss = component_loss(net, comp, cache, chunk, ag::Mode::kEval, cfg.l2_only_action,
                                 foveal_from_periph);
      sum += static_cast<double>(loss->value[0]) * static_cast<double>(take);
      done += take;
    }
    return sum / static_cast<double>(val_fix.size());
  };

  // the failure detector sees skewed labels, so its batches draw the two
  // classes evenly
  bool balanced = comp == Comp::kFailure;
  std::vector<int> pos, neg;
  if (balanced) {
    for (int id : train_ids)
      (cache.steps[static_cast<size_t>(id)].failure ? pos : neg).push_back(id);
    if (pos.empty() || neg.empty()) {
      balanced = false;
      if (res.warning.empty())
        res.warning = "component '" + comp_name(comp) + "': training labels are single-class";
    }
  }
  PoolSampler pos_pool(balanced ? pos : std::vector<int>{1}, rng.fork("pos"));
  PoolSampler neg_pool(balanced ? neg : std::vector<int>{1}, rng.fork("neg"));

  RAdam<float> radam({cfg.lr});
  Network::Snapshot best = net.snapshot();
  res.best_val = eval_val();
  res.val_curve.push_back(res.best_val);
  res.best_epoch = 0;

  const int cap = cfg.samples_per_epoch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> plan;
    if (balanced) {
      int want = cap > 0 ? cap : static_cast<int>(train_ids.size());
      want = std::max(want, cfg.batch);
      plan.reserve(static_cast<size_t>(want));
      for (int i = 0; i < want; ++i)
        plan.push_back(i % 2 == 0 ? pos_pool.next() : neg_pool.next());
    } else {
      plan = train_ids;
      Rng er = rng.fork("epoch" + std::to_string(epoch));
      shuffle_ints(plan, er);
      if (cap > 0 && static_cast<int>(plan.size()) > cap) plan.resize(static_cast<size_t>(cap));
    }

    double sum = 0;
    int batches = 0;
    for (size_t off = 0; off + 2 <= plan.size(); off += static_cast<size_t>(cfg.batch)) {
      const size_t take = std::min<size_t>(static_cast<size_t>(cfg.batch), plan.size() - off);
      if (take < 2) break;  // batch norm needs at least two samples
      std::vector<int> chunk(plan.begin() + static_cast<long>(off),
                             plan.begin() + static_cast<long>(off + take));
      auto loss = component_loss(net, comp, cache, chunk, ag::Mode::kTrain, cfg.l2_only_action,
                                 foveal_from_periph);
      net.graph().backward(loss);
      radam.step(net.params());
      net.graph().zero_grad();
      net.graph().clear_tape();
      sum += loss->value[0];
      ++batches;
    }
    res.train_curve.push_back(batches > 0 ? sum / batches : 0.0);

    const double v = eval_val();
    res.val_curve.push_back(v);
    if (v < res.best_val) {
      res.best_val = v;
      res.best_epoch = epoch;
      best = net.snapshot();
    }
  }

  net.restore(best);
  bundle.mark_trained(comp);
  return res;
}

void write_curve_csv(const std::string& path, const TrainResult& result) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("curve csv: cannot open " + path);
  f << "epoch,train_loss,val_loss\n";
  for (size_t e = 0; e < result.val_curve.size(); ++e) {
    f << e << ",";
    if (e == 0)
      f << "nan";
    else
      f << result.train_curve[e - 1];
    f << "," << result.val_curve[e] << "\n";
  }
}

}  // namespace fovea::models
