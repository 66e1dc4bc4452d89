#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace fovea::sim {

enum class Task { kThreading, kBolt };
enum class Gripper { kOpen, kClosed };
enum class GripperCmd { kOpen, kClose };

struct SimConfig {
  // placement region for the needle eye, 9 cm x 9 cm
  double region_x_min = -0.045, region_x_max = 0.045;
  double region_y_min = 0.02, region_y_max = 0.11;
  double eye_height = 0.06;

  double thread_radius = 0.002;
  double eye_radius = 0.003;   // 1.5x thread radius
  double miss_band = 0.012;    // 4x eye radius
  double pass_margin = 0.002;  // one thread radius past the eye plane

  int thread_links = 12;
  double seg_len = 0.006;

  double grasp_radius = 0.006;
  double max_step = 0.02;      // |dpos| bound, meters/step
  double max_yaw_step = 0.2;   // radians/step
  double fall_step = 0.005;    // free thread settles toward the table
  double lift_height = 0.03;   // eef height that counts as picked

  // workspace box, 20 x 20 x 15 cm over the table region
  double ws_x_min = -0.10, ws_x_max = 0.10;
  double ws_y_min = -0.04, ws_y_max = 0.16;
  double ws_z_min = 0.0, ws_z_max = 0.15;

  int max_steps = 500;
};

struct NeedleEye {
  Eigen::Vector3d center{0, 0, 0};
  Eigen::Vector3d normal{0, -1, 0};  // faces the robot; insertion travels +y
  double radius = 0.003;
};

struct EefPose {
  Eigen::Vector3d pos{0, 0, 0};
  double yaw = 0;
};

struct ActionCommand {
  Eigen::Vector3d dpos{0, 0, 0};
  double dyaw = 0;
  GripperCmd gripper_cmd = GripperCmd::kOpen;
};

struct EventSet {
  bool clamped = false;
  bool picked = false;
  bool threaded = false;
  bool missed = false;
  bool dropped = false;
};

struct WorldState {
  EefPose eef;
  Gripper gripper = Gripper::kOpen;
  std::vector<Eigen::Vector3d> thread;  // tip first
  double grasp_back = 0.006;            // arclength from tip to the pinch point
  NeedleEye eye;
  Task task = Task::kThreading;
  Eigen::Vector3d bolt{0, 0, 0};
  bool bolt_grasped = false;
  std::uint64_t rng_state = 0;
  int step_index = 0;
  bool thread_grasped = false;
  bool threaded = false;
  bool missed_this_pass = false;
  bool picked_latched = false;
};

enum class Progress { kInProgress, kPicked, kSuccess };

/// Seeded initial state: eye placed uniformly over the placement region,
/// thread laid on the table with a randomized tip-to-pinch offset.
WorldState reset(std::uint64_t seed, Task task, const SimConfig& cfg);

/// Advances one step in place. Out-of-range motion is clamped (flagged in
/// the event set), the thread follows the gripper as an inextensible chain,
/// and eye-plane crossings raise threaded/missed events.
EventSet step(WorldState& state, const ActionCommand& action, const SimConfig& cfg);

Progress check_success(const WorldState& state, const SimConfig& cfg);

/// Chain point at the given arclength from the tip (clamped to the ends).
Eigen::Vector3d thread_point_at(const WorldState& state, double arc, const SimConfig& cfg);

/// World position of the point the closed gripper pinches.
Eigen::Vector3d pinch_point(const WorldState& state);

/// Unit vector the pinched thread tip extends along (+y at yaw 0).
Eigen::Vector3d tip_forward(double yaw);

/// Largest relative segment-length drift from the configured length.
double max_segment_drift(const WorldState& state, const SimConfig& cfg);

}  // namespace fovea::sim
