#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "fovea/sim/render.hpp"
#include "fovea/sim/world.hpp"
#include "fovea/vision/image.hpp"

namespace fovea::oracle {

enum class Phase { kReach, kGrasp, kTransport, kInsert, kFailure, kRecovery };
enum class SpeedClass { kUnset, kSlow, kFast };
enum class Outcome { kSuccess, kFail };

const char* phase_name(Phase p);
Phase phase_from_name(const std::string& name);

struct StereoObservation {
  Image left, right;
};

struct StepLabels {
  bool is_failure_state = false;
  int recovery_steps_remaining = 0;
  SpeedClass speed_class = SpeedClass::kUnset;
};

struct StepRecord {
  StereoObservation obs;
  sim::ActionCommand action;  // executed command, actuation jitter included
  GazePoint gaze_l, gaze_r;
  Phase phase = Phase::kReach;
  StepLabels labels;
  sim::EventSet events;  // raised while this step's action was applied
  Eigen::Vector3d eef_before{0, 0, 0};
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  Outcome outcome = Outcome::kFail;
  std::vector<StepRecord> steps;
  Eigen::Vector3d final_eef{0, 0, 0};
  int insert_attempts = 0;
  int miss_events = 0;
};

struct OracleConfig {
  double fail_prob = 0.364;   // per insertion attempt
  double fast_step = 0.010;   // commanded step length, meters
  double fast_step_sd = 0.0025;
  double slow_step = 0.002;
  double slow_step_sd = 0.0005;
  double recover_step = 0.0026;
  double gaze_noise_px = 1.5;
  double act_noise = 0.0002;  // per-axis actuation jitter, meters
  int max_retries = 6;        // recoveries allowed after the first miss
};

/// Scripted demonstration: reach the thread fast, grasp and lift slow,
/// transport fast, insert slow. Each insertion attempt deliberately misses
/// with probability fail_prob, pushes on for a few steps, then retreats to
/// the staging pose (annotated recovery) and retries.
EpisodeRecord generate_episode(std::uint64_t seed, const OracleConfig& cfg,
                               const sim::SimConfig& sim_cfg, const sim::CameraModel& cam);

/// Rebuilds the per-step labels from the recorded phases: failure flags on
/// failure-phase steps, countdowns over each recovery segment.
void annotate(EpisodeRecord& ep);

}  // namespace fovea::oracle
