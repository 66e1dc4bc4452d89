#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fovea/models/arch.hpp"
#include "fovea/vision/foveation.hpp"

namespace fovea::models {

/// The eight trained components. Action nets output (dpos, dyaw); the
/// gripper, failure, and speed nets are binary classifiers; the gaze net
/// is a two-sided mixture density head; the steps net regresses how long a
/// recovery should run.
enum class Comp {
  kFast,
  kSlow,
  kRecovery,
  kGripper,
  kFailure,
  kGaze,
  kRecoverySteps,
  kSpeed,
};
inline constexpr int kCompCount = 8;
inline constexpr std::array<Comp, kCompCount> kAllComps = {
    Comp::kFast,    Comp::kSlow, Comp::kRecovery,      Comp::kGripper,
    Comp::kFailure, Comp::kGaze, Comp::kRecoverySteps, Comp::kSpeed,
};

std::string comp_name(Comp c);
Comp comp_from_name(const std::string& name);

enum class InputRouting { kPeripheral, kFoveal, kBoth };
std::string routing_name(InputRouting r);
InputRouting routing_from_name(const std::string& name);

/// Bundle-level wiring switches. The study variants (no gaze, merged
/// recovery, single action network, mono vision, routing swaps) all reduce
/// to these flags; training filters and the controller both honor them.
struct BundleOptions {
  InputRouting fast_input = InputRouting::kPeripheral;
  InputRouting slow_input = InputRouting::kFoveal;
  bool foveal_from_gaze = true;  // false: the foveal tensor is the peripheral image itself
  bool mono = false;             // right channels duplicate the left frame
  bool merge_slow_recovery = false;
  bool action_separation = true;  // false: the slow net handles every non-recovery step
  bool use_step_predictor = true;
};

/// Specs for all eight networks under the given wiring.
std::vector<NetSpec> bundle_specs(const ArchConfig& arch, const BundleOptions& opt);

/// Components the controller consults under the given wiring.
std::vector<Comp> required_components(const BundleOptions& opt);

/// Mixture over normalized [0,1]^2 gaze positions, one side per eye.
struct GazeSide {
  std::vector<double> weights;
  std::vector<std::array<double, 2>> means;
  std::vector<std::array<double, 2>> sigmas;
  std::vector<double> rhos;
};
struct GazeMixture {
  GazeSide left, right;
};

class PolicyBundle {
 public:
  PolicyBundle(ArchConfig arch, FrameGeom geom, BundleOptions opt, std::uint64_t seed);

  Network& net(Comp c);
  const Network& net(Comp c) const;
  const ArchConfig& arch() const { return arch_; }
  const FrameGeom& geom() const { return geom_; }
  const BundleOptions& options() const { return opt_; }
  std::uint64_t seed() const { return seed_; }
  long param_count() const;

  /// Effective input dims of the foveal trunk (the peripheral dims when
  /// gaze cropping is disabled).
  int foveal_h() const;
  int foveal_w() const;

  struct GazePair {
    GazePoint left, right;
  };
  GazeMixture infer_gaze_mixture(const Tensor<float>& peripheral);
  /// Max-weight component mean per side, mapped to pixels and clamped into
  /// the frame.
  GazePair infer_gaze(const Tensor<float>& peripheral);
  /// Random draw from the mixture instead of the mode.
  GazePair sample_gaze(const Tensor<float>& peripheral, Rng& rng);

  struct ActionDelta {
    Eigen::Vector3d dpos = Eigen::Vector3d::Zero();
    double dyaw = 0;
  };
  struct ActionLimits {
    double max_step = 0.02;
    double max_yaw_step = 0.2;
  };
  /// Denormalized head output with dpos norm-clamped to max_step and dyaw
  /// clamped to the yaw bound. Non-finite head outputs pass through for
  /// the caller to detect.
  ActionDelta infer_action(Comp which, const Tensor<float>* periph, const Tensor<float>* foveal,
                           const ActionLimits& limits);

  /// Argmax class; ties resolve to the lower index. Non-finite logits
  /// return -1 for the caller to treat as an inference fault.
  int classify(Comp which, const Tensor<float>& foveal);
  /// round(10 * raw), clamped into [0, 100].
  int predict_recovery_steps(const Tensor<float>& foveal);

  void mark_trained(Comp c) { trained_[static_cast<size_t>(c)] = true; }
  bool is_trained(Comp c) const { return trained_[static_cast<size_t>(c)]; }
  /// Every component the wiring requires is trained.
  bool fully_trained() const;

  void save(const std::string& dir) const;
  static PolicyBundle load(const std::string& dir);

 private:
  ArchConfig arch_;
  FrameGeom geom_;
  BundleOptions opt_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Network>> nets_;
  std::array<bool, kCompCount> trained_{};
};

}  // namespace fovea::models
