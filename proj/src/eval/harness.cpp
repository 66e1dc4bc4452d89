#include "fovea/eval/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "fovea/eval/stats.hpp"
#include "fovea/oracle/dataset.hpp"
#include "fovea/segment/gmm.hpp"

namespace fovea::eval {

using models::BundleOptions;
using models::Comp;
using models::PolicyBundle;

EvalSummary evaluate(const TrialRunner& runner, int n_trials, std::uint64_t seed_base) {
  if (n_trials < 0) throw std::invalid_argument("evaluate: negative trial count");
  EvalSummary s;
  s.n_trials = n_trials;
  for (int i = 0; i < n_trials; ++i) {
    control::TrialReport r = runner(seed_base + static_cast<std::uint64_t>(i));
    s.picks += r.picked ? 1 : 0;
    s.threads += r.threaded ? 1 : 0;
    s.infra_failures += r.infra_failure ? 1 : 0;
    s.total_steps += r.steps;
    if (r.recoveries_attempted > 0) {
      ++s.trials_with_recovery;
      if (r.recoveries_succeeded > 0) ++s.recovered_successes;
    }
    s.trials.push_back(std::move(r));
  }
  if (n_trials > 0) {
    s.pick_rate = static_cast<double>(s.picks) / n_trials;
    s.thread_rate = static_cast<double>(s.threads) / n_trials;
    s.mean_steps = static_cast<double>(s.total_steps) / n_trials;
  }
  if (s.trials_with_recovery > 0)
    s.recovery_success_rate = static_cast<double>(s.recovered_successes) / s.trials_with_recovery;
  return s;
}

EvalSummary evaluate(PolicyBundle& bundle, const sim::CameraModel& cam,
                     const sim::SimConfig& sim_cfg, int n_trials, std::uint64_t seed_base,
                     const control::ControllerConfig& ctrl) {
  control::BundlePolicy policy(bundle, {sim_cfg.max_step, sim_cfg.max_yaw_step});
  return evaluate(
      [&](std::uint64_t seed) {
        return control::run_trial(policy, bundle.options(), bundle.geom(), cam, sim_cfg, seed,
                                  ctrl);
      },
      n_trials, seed_base);
}

nlohmann::json summary_json(const EvalSummary& s) {
  nlohmann::json trials = nlohmann::json::array();
  for (const control::TrialReport& t : s.trials)
    trials.push_back({{"seed", t.seed},
                      {"picked", t.picked},
                      {"threaded", t.threaded},
                      {"infra_failure", t.infra_failure},
                      {"steps", t.steps},
                      {"recoveries_attempted", t.recoveries_attempted},
                      {"recoveries_succeeded", t.recoveries_succeeded}});
  return {{"n_trials", s.n_trials},
          {"picks", s.picks},
          {"threads", s.threads},
          {"infra_failures", s.infra_failures},
          {"pick_rate", s.pick_rate},
          {"thread_rate", s.thread_rate},
          {"mean_steps", s.mean_steps},
          {"trials_with_recovery", s.trials_with_recovery},
          {"recovered_successes", s.recovered_successes},
          {"recovery_success_rate", s.recovery_success_rate},
          {"trials", trials}};
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

GazeErrorReport gaze_error_report(PolicyBundle& bundle, const models::FeatureCache& cache,
                                  const std::vector<int>& episodes) {
  const FrameGeom& g = bundle.geom();
  if (cache.periph_w != g.periph_w || cache.periph_h != g.periph_h ||
      cache.full_w != g.full_w || cache.full_h != g.full_h)
    throw std::invalid_argument("gaze report: cache geometry does not match the bundle");

  std::unordered_set<int> keep(episodes.begin(), episodes.end());
  std::vector<double> lx, ly, rx, ry;
  Tensor<float> periph({1, 6, cache.periph_h, cache.periph_w});
  constexpr float kU8Scale = 1.0f / 255.0f;
  for (const models::CachedStep& st : cache.steps) {
    if (!keep.count(st.episode)) continue;
    float* d = periph.data();
    for (size_t j = 0; j < st.periph.size(); ++j)
      d[j] = kU8Scale * static_cast<float>(st.periph[j]);
    PolicyBundle::GazePair p = bundle.infer_gaze(periph);
    lx.push_back(std::abs(p.left.x - st.gaze[0]) / cache.full_w * 100);
    ly.push_back(std::abs(p.left.y - st.gaze[1]) / cache.full_h * 100);
    rx.push_back(std::abs(p.right.x - st.gaze[2]) / cache.full_w * 100);
    ry.push_back(std::abs(p.right.y - st.gaze[3]) / cache.full_h * 100);
  }
  GazeErrorReport rep;
  rep.n = static_cast<int>(lx.size());
  rep.left_x = median(std::move(lx));
  rep.left_y = median(std::move(ly));
  rep.right_x = median(std::move(rx));
  rep.right_y = median(std::move(ry));
  return rep;
}

std::string gaze_error_csv(const GazeErrorReport& r) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "side,axis,median_percent,n\n";
  os << "left,x," << r.left_x << ',' << r.n << '\n';
  os << "left,y," << r.left_y << ',' << r.n << '\n';
  os << "right,x," << r.right_x << ',' << r.n << '\n';
  os << "right,y," << r.right_y << ',' << r.n << '\n';
  return os.str();
}

namespace {

bool parse_bool(const std::string& key, const std::string& val) {
  if (val == "1" || val == "true") return true;
  if (val == "0" || val == "false") return false;
  throw std::invalid_argument("override " + key + ": expected a boolean, got '" + val + "'");
}

int parse_int(const std::string& key, const std::string& val) {
  size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(val, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != val.size() || val.empty())
    throw std::invalid_argument("override " + key + ": expected an integer, got '" + val + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& val) {
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(val, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != val.size() || val.empty())
    throw std::invalid_argument("override " + key + ": expected a number, got '" + val + "'");
  return v;
}

const std::vector<std::string>& threshold_rules() {
  static const std::vector<std::string> kRules = {"intersection", "mu1", "mu1_plus_sigma1",
                                                  "mu2_minus_half_sigma2", "mu2"};
  return kRules;
}

double threshold_from_rule(const segment::GmmFit& fit, const VariantPlan& plan) {
  const std::string& r = plan.threshold_rule;
  if (r == "fixed") return plan.fixed_threshold;
  if (r == "intersection") return fit.threshold;
  if (r == "mu1") return fit.mu1;
  if (r == "mu1_plus_sigma1") return fit.mu1 + fit.sigma1;
  if (r == "mu2_minus_half_sigma2") return fit.mu2 - fit.sigma2 / 2;
  if (r == "mu2") return fit.mu2;
  throw std::logic_error("unreachable threshold rule '" + r + "'");
}

}  // namespace

VariantPlan resolve_overrides(const AblationSpec& spec, const FrameGeom& base_geom) {
  VariantPlan plan;
  plan.geom = base_geom;
  for (const auto& [key, val] : spec.overrides) {
    if (key == "bundle.fast_input")
      plan.options.fast_input = models::routing_from_name(val);
    else if (key == "bundle.slow_input")
      plan.options.slow_input = models::routing_from_name(val);
    else if (key == "bundle.foveal_from_gaze")
      plan.options.foveal_from_gaze = parse_bool(key, val);
    else if (key == "bundle.mono")
      plan.options.mono = parse_bool(key, val);
    else if (key == "bundle.merge_slow_recovery")
      plan.options.merge_slow_recovery = parse_bool(key, val);
    else if (key == "bundle.action_separation")
      plan.options.action_separation = parse_bool(key, val);
    else if (key == "bundle.use_step_predictor")
      plan.options.use_step_predictor = parse_bool(key, val);
    else if (key == "segment.threshold_rule") {
      const auto& rules = threshold_rules();
      if (std::find(rules.begin(), rules.end(), val) == rules.end())
        throw std::invalid_argument("override segment.threshold_rule: unknown rule '" + val + "'");
      plan.threshold_rule = val;
    } else if (key == "segment.threshold") {
      plan.fixed_threshold = parse_double(key, val);
      plan.threshold_rule = "fixed";
    } else if (key == "geometry.periph_w")
      plan.geom.periph_w = parse_int(key, val);
    else if (key == "geometry.periph_h")
      plan.geom.periph_h = parse_int(key, val);
    else if (key == "geometry.fovea_w")
      plan.geom.fovea_w = parse_int(key, val);
    else if (key == "geometry.fovea_h")
      plan.geom.fovea_h = parse_int(key, val);
    else
      throw std::invalid_argument("variant '" + spec.name + "': unknown override key '" + key +
                                  "'");
  }
  return plan;
}

VariantResult run_variant(const AblationSpec& spec, const std::string& dataset_dir,
                          const AblationConfig& cfg) {
  VariantPlan plan = resolve_overrides(spec, cfg.geom);

  oracle::DatasetReader reader(dataset_dir);
  if (reader.meta().image_w != plan.geom.full_w || reader.meta().image_h != plan.geom.full_h)
    throw std::invalid_argument("variant '" + spec.name + "': dataset frames are " +
                                std::to_string(reader.meta().image_w) + "x" +
                                std::to_string(reader.meta().image_h) +
                                " but the geometry expects " + std::to_string(plan.geom.full_w) +
                                "x" + std::to_string(plan.geom.full_h));

  auto [train_eps, val_eps] =
      oracle::split_train_val(reader.episode_count(), cfg.split_ratio, cfg.split_seed);

  std::vector<segment::SpeedSample> samples;
  for (int e : train_eps) {
    auto s = segment::episode_speeds(reader.episode(e), e);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  segment::GmmFit fit = segment::fit_gmm2(samples);

  VariantResult res;
  res.name = spec.name;
  res.plan = plan;
  res.threshold = threshold_from_rule(fit, plan);

  models::FeatureCache cache =
      models::build_feature_cache(reader, plan.geom, res.threshold, plan.options.mono);
  PolicyBundle bundle(cfg.arch, plan.geom, plan.options, cfg.bundle_seed);
  for (Comp c : models::required_components(plan.options))
    models::train_component(bundle, c, cache, train_eps, val_eps, cfg.train);

  res.eval = evaluate(bundle, cfg.cam, cfg.sim, cfg.n_trials, cfg.trial_seed_base, cfg.ctrl);
  return res;
}

std::vector<VariantResult> run_ablation(const std::vector<AblationSpec>& suite,
                                        const std::string& dataset_dir,
                                        const AblationConfig& cfg) {
  for (const AblationSpec& s : suite) resolve_overrides(s, cfg.geom);

  std::vector<VariantResult> rows;
  for (const AblationSpec& s : suite) rows.push_back(run_variant(s, dataset_dir, cfg));
  for (VariantResult& row : rows) {
    ChiSquareResult pp = chi_square_2x2(row.eval.picks, row.eval.n_trials, rows[0].eval.picks,
                                        rows[0].eval.n_trials);
    ChiSquareResult pt = chi_square_2x2(row.eval.threads, row.eval.n_trials, rows[0].eval.threads,
                                        rows[0].eval.n_trials);
    row.p_pick = pp.p_value;
    row.p_thread = pt.p_value;
    row.p_degenerate = pp.degenerate || pt.degenerate;
  }
  return rows;
}

std::vector<AblationSpec> threshold_suite() {
  std::vector<AblationSpec> suite;
  for (const std::string& rule : threshold_rules())
    suite.push_back({"thr_" + rule, {{"segment.threshold_rule", rule}}});
  return suite;
}

std::vector<AblationSpec> standard_suite() {
  std::vector<AblationSpec> suite = {
      {"proposed", {}},
      {"no_gaze", {{"bundle.foveal_from_gaze", "0"}}},
      {"no_separation", {{"bundle.action_separation", "0"}}},
      {"merged", {{"bundle.merge_slow_recovery", "1"}}},
      {"mono", {{"bundle.mono", "1"}}},
      {"no_step_predictor", {{"bundle.use_step_predictor", "0"}}},
      {"fast_foveal", {{"bundle.fast_input", "foveal"}}},
      {"fast_both", {{"bundle.fast_input", "both"}}},
      {"slow_peripheral", {{"bundle.slow_input", "peripheral"}}},
      {"slow_both", {{"bundle.slow_input", "both"}}},
      {"half_res", {{"geometry.periph_w", "32"}, {"geometry.periph_h", "18"}}},
  };
  for (AblationSpec& s : threshold_suite()) suite.push_back(std::move(s));
  return suite;
}

std::string ablation_csv(const std::vector<VariantResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "name,fast_input,slow_input,foveal_from_gaze,mono,merge_slow_recovery,action_separation,"
        "use_step_predictor,periph_w,periph_h,fovea_w,fovea_h,threshold_rule,threshold,n_trials,"
        "picks,threads,pick_rate,thread_rate,mean_steps,infra_failures,trials_with_recovery,"
        "recovered_successes,p_pick,p_thread\n";
  for (const VariantResult& r : rows) {
    const BundleOptions& o = r.plan.options;
    os << r.name << ',' << models::routing_name(o.fast_input) << ','
       << models::routing_name(o.slow_input) << ',' << int(o.foveal_from_gaze) << ','
       << int(o.mono) << ',' << int(o.merge_slow_recovery) << ',' << int(o.action_separation)
       << ',' << int(o.use_step_predictor) << ',' << r.plan.geom.periph_w << ','
       << r.plan.geom.periph_h << ',' << r.plan.geom.fovea_w << ',' << r.plan.geom.fovea_h << ','
       << r.plan.threshold_rule << ',' << r.threshold << ',' << r.eval.n_trials << ','
       << r.eval.picks << ',' << r.eval.threads << ',' << r.eval.pick_rate << ','
       << r.eval.thread_rate << ',' << r.eval.mean_steps << ',' << r.eval.infra_failures << ','
       << r.eval.trials_with_recovery << ',' << r.eval.recovered_successes << ',' << r.p_pick
       << ',' << r.p_thread << '\n';
  }
  return os.str();
}

nlohmann::json ablation_json(const std::vector<VariantResult>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const VariantResult& r : rows) {
    const BundleOptions& o = r.plan.options;
    arr.push_back({{"name", r.name},
                   {"fast_input", models::routing_name(o.fast_input)},
                   {"slow_input", models::routing_name(o.slow_input)},
                   {"foveal_from_gaze", o.foveal_from_gaze},
                   {"mono", o.mono},
                   {"merge_slow_recovery", o.merge_slow_recovery},
                   {"action_separation", o.action_separation},
                   {"use_step_predictor", o.use_step_predictor},
                   {"periph_w", r.plan.geom.periph_w},
                   {"periph_h", r.plan.geom.periph_h},
                   {"fovea_w", r.plan.geom.fovea_w},
                   {"fovea_h", r.plan.geom.fovea_h},
                   {"threshold_rule", r.plan.threshold_rule},
                   {"threshold", r.threshold},
                   {"p_pick", r.p_pick},
                   {"p_thread", r.p_thread},
                   {"p_degenerate", r.p_degenerate},
                   {"eval", summary_json(r.eval)}});
  }
  return arr;
}

}  // namespace fovea::eval
