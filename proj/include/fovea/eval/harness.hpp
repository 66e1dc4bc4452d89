#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fovea/control/controller.hpp"
#include "fovea/models/bundle.hpp"
#include "fovea/models/train.hpp"
#include "fovea/sim/render.hpp"
#include "fovea/sim/world.hpp"

namespace fovea::eval {

struct EvalSummary {
  int n_trials = 0;
  int picks = 0;
  int threads = 0;
  int infra_failures = 0;
  long long total_steps = 0;
  double pick_rate = 0;
  double thread_rate = 0;
  double mean_steps = 0;
  int trials_with_recovery = 0;   // at least one detector-armed countdown
  int recovered_successes = 0;    // of those, trials that went on to thread
  double recovery_success_rate = 0;
  std::vector<control::TrialReport> trials;
};

using TrialRunner = std::function<control::TrialReport(std::uint64_t)>;

/// Trials run on seeds seed_base, seed_base+1, ...; rates are exact counts
/// over n_trials.
EvalSummary evaluate(const TrialRunner& runner, int n_trials, std::uint64_t seed_base);
EvalSummary evaluate(models::PolicyBundle& bundle, const sim::CameraModel& cam,
                     const sim::SimConfig& sim_cfg, int n_trials = 50,
                     std::uint64_t seed_base = 1000, const control::ControllerConfig& ctrl = {});

nlohmann::json summary_json(const EvalSummary& s);

struct GazeErrorReport {
  double left_x = 0, left_y = 0;  // median |error| as percent of the frame extent
  double right_x = 0, right_y = 0;
  int n = 0;
};

/// Gaze medians over the cached steps of the given episodes, horizontal
/// errors normalized by frame width and vertical by height.
GazeErrorReport gaze_error_report(models::PolicyBundle& bundle, const models::FeatureCache& cache,
                                  const std::vector<int>& episodes);

std::string gaze_error_csv(const GazeErrorReport& r);

struct AblationSpec {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// Overrides resolved against the baseline, before any data is touched.
struct VariantPlan {
  models::BundleOptions options;
  FrameGeom geom;
  std::string threshold_rule = "intersection";
  double fixed_threshold = std::numeric_limits<double>::quiet_NaN();
};

/// Validates every override key and value; throws on the first unknown.
VariantPlan resolve_overrides(const AblationSpec& spec, const FrameGeom& base_geom);

struct VariantResult {
  std::string name;
  VariantPlan plan;
  double threshold = 0;
  EvalSummary eval;
  double p_pick = 1;    // vs the suite's first row
  double p_thread = 1;
  bool p_degenerate = false;
};

struct AblationConfig {
  models::ArchConfig arch;
  FrameGeom geom;
  sim::CameraModel cam;
  sim::SimConfig sim;
  models::TrainConfig train;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 17;
  std::uint64_t bundle_seed = 99;
  int n_trials = 50;
  std::uint64_t trial_seed_base = 1000;
  control::ControllerConfig ctrl;
};

/// Fits the speed threshold on the train split, trains every component the
/// wiring consults, and evaluates on the shared trial seeds.
VariantResult run_variant(const AblationSpec& spec, const std::string& dataset_dir,
                          const AblationConfig& cfg);

/// Whole suite against one dataset; every variant sees the same splits,
/// training seed, and trial seeds, and the first row is the reference the
/// p-value columns compare against. All overrides are validated before any
/// training starts.
std::vector<VariantResult> run_ablation(const std::vector<AblationSpec>& suite,
                                        const std::string& dataset_dir,
                                        const AblationConfig& cfg);

/// The five speed-threshold candidates as single-override variants.
std::vector<AblationSpec> threshold_suite();

/// Wiring and routing variants plus the threshold sweep, proposed first.
std::vector<AblationSpec> standard_suite();

std::string ablation_csv(const std::vector<VariantResult>& rows);
nlohmann::json ablation_json(const std::vector<VariantResult>& rows);

}  // namespace fovea::eval
