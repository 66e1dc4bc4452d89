#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fovea/models/bundle.hpp"
#include "fovea/sim/render.hpp"
#include "fovea/sim/world.hpp"
#include "fovea/vision/foveation.hpp"

namespace fovea::control {

enum class Branch { kFast, kSlow, kRecovery };
char branch_letter(Branch b);
Branch branch_from_letter(char c);

/// Loop state the trial advances: elapsed steps, recovery steps remaining,
/// whether the task has registered success, and the branch taken last.
struct ControllerState {
  int step = 0;
  int count = 0;
  bool succeed = false;
  Branch last_branch = Branch::kSlow;
};

/// One executed step: the branch that produced the command, the gaze the
/// foveae were cut at, the command itself, and the events it raised.
struct TraceStep {
  int step = 0;
  Branch branch = Branch::kSlow;
  GazePoint gaze_l{0, 0}, gaze_r{0, 0};
  sim::ActionCommand cmd;
  sim::EventSet events;
};

struct TrialReport {
  std::uint64_t seed = 0;
  bool picked = false;
  bool threaded = false;
  bool infra_failure = false;  // aborted on a non-finite inference output
  int steps = 0;
  int recoveries_attempted = 0;  // detector-triggered countdown assignments
  int recoveries_succeeded = 0;  // 1 when one of them preceded the threading
  std::vector<TraceStep> trace;
};

/// Per-step queries the trial loop consults. The bundle-backed
/// implementation forwards to the trained networks; tests substitute
/// scripted stubs. Discrete queries report an inference fault as -1;
/// continuous outputs report one by going non-finite.
class PolicyInterface {
 public:
  virtual ~PolicyInterface() = default;
  virtual models::PolicyBundle::GazePair gaze(const Tensor<float>& peripheral) = 0;
  virtual int gripper(const Tensor<float>& foveal) = 0;
  virtual int failure(const Tensor<float>& foveal) = 0;
  virtual int fast(const Tensor<float>& foveal) = 0;
  virtual int recovery_steps(const Tensor<float>& foveal) = 0;
  virtual models::PolicyBundle::ActionDelta action(models::Comp which,
                                                   const Tensor<float>& peripheral,
                                                   const Tensor<float>& foveal) = 0;
};

/// Routes each query to the matching network, feeding action nets whichever
/// trunks their spec consumes.
class BundlePolicy : public PolicyInterface {
 public:
  /// Throws if any component the wiring consults is still untrained.
  BundlePolicy(models::PolicyBundle& bundle, models::PolicyBundle::ActionLimits limits);

  models::PolicyBundle::GazePair gaze(const Tensor<float>& peripheral) override;
  int gripper(const Tensor<float>& foveal) override;
  int failure(const Tensor<float>& foveal) override;
  int fast(const Tensor<float>& foveal) override;
  int recovery_steps(const Tensor<float>& foveal) override;
  models::PolicyBundle::ActionDelta action(models::Comp which, const Tensor<float>& peripheral,
                                           const Tensor<float>& foveal) override;

 private:
  models::PolicyBundle& bundle_;
  models::PolicyBundle::ActionLimits limits_;
};

struct ControllerConfig {
  int max_steps = 500;
  /// Steps allowed between the threading event and strict success before the
  /// trial gives up; covers the tip still short of the pass margin.
  int success_grace = 5;
};

/// One seeded trial. Per step: render stereo, build the peripheral tensor,
/// predict gaze and cut the foveae (the peripheral tensor doubles as the
/// foveal input when gaze cropping is off), pick the branch, execute, and
/// latch success from the task check. Recovery runs whenever the countdown
/// is positive; the detector can only re-arm it at zero. Any inference
/// fault aborts the trial as an infrastructure failure.
TrialReport run_trial(PolicyInterface& policy, const models::BundleOptions& opt,
                      const FrameGeom& geom, const sim::CameraModel& cam,
                      const sim::SimConfig& sim_cfg, std::uint64_t seed,
                      const ControllerConfig& ctrl = {});

/// Bundle-backed trial with action limits taken from the sim config.
TrialReport run_trial(models::PolicyBundle& bundle, const sim::CameraModel& cam,
                      const sim::SimConfig& sim_cfg, std::uint64_t seed,
                      const ControllerConfig& ctrl = {});

/// Header line plus one line per step: step, branch, gaze, action, gripper,
/// events. Doubles carry 17 significant digits so parsing restores them
/// bit for bit.
std::string format_trace(const TrialReport& report);
TrialReport parse_trace(const std::string& text);

/// Re-runs the recorded commands from the seed and checks every event set
/// and the final outcome against the record.
bool replay_matches(const TrialReport& report, const sim::SimConfig& sim_cfg,
                    std::string* why = nullptr);

}  // namespace fovea::control
