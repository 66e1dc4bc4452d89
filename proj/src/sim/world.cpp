#include "fovea/sim/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fovea/core/rng.hpp"

namespace fovea::sim {

namespace {

Eigen::Vector3d clamp_box(const Eigen::Vector3d& p, const SimConfig& c, bool& hit) {
  Eigen::Vector3d q(std::clamp(p.x(), c.ws_x_min, c.ws_x_max),
                    std::clamp(p.y(), c.ws_y_min, c.ws_y_max),
                    std::clamp(p.z(), c.ws_z_min, c.ws_z_max));
  if ((q - p).squaredNorm() > 0) hit = true;
  return q;
}

/// Place `p` exactly seg away from `anchor`, pulled along the direction of
/// the desired position `want`, with the table (z >= 0) respected without
/// stretching the segment. Points already in place are left untouched so a
/// resting chain is bit-stable.
Eigen::Vector3d follow(const Eigen::Vector3d& anchor, const Eigen::Vector3d& want, double seg,
                       const Eigen::Vector3d& fallback_dir) {
  const Eigen::Vector3d d = want - anchor;
  const double dist = d.norm();
  if (want.z() >= 0 && std::abs(dist - seg) < 1e-12) return want;
  Eigen::Vector3d dir = dist > 1e-12 ? Eigen::Vector3d(d / dist) : fallback_dir;
  Eigen::Vector3d cand = anchor + dir * seg;
  if (cand.z() >= 0) return cand;
  // resolve on the table: keep the full segment length with z pinned to 0
  const double horiz = std::sqrt(std::max(0.0, seg * seg - anchor.z() * anchor.z()));
  Eigen::Vector2d h(d.x(), d.y());
  const double hn = h.norm();
  Eigen::Vector2d hdir = hn > 1e-12 ? Eigen::Vector2d(h / hn)
                                    : Eigen::Vector2d(fallback_dir.x(), fallback_dir.y());
  return {anchor.x() + hdir.x() * horiz, anchor.y() + hdir.y() * horiz, 0.0};
}

void update_thread(WorldState& s, const SimConfig& cfg) {
  if (s.thread.empty()) return;
  const int n = static_cast<int>(s.thread.size());
  if (s.thread_grasped) {
    const Eigen::Vector3d fwd = tip_forward(s.eef.yaw);
    // pinched stretch [tip .. grasp_back] rides rigidly on the gripper
    for (int i = 0; i < n; ++i) {
      const double arc = i * cfg.seg_len;
      if (arc <= s.grasp_back + 1e-12) {
        s.thread[static_cast<size_t>(i)] = s.eef.pos + fwd * (s.grasp_back - arc);
      } else {
        s.thread[static_cast<size_t>(i)] =
            follow(s.thread[static_cast<size_t>(i - 1)], s.thread[static_cast<size_t>(i)],
                   cfg.seg_len, -fwd);
      }
    }
  } else {
    // free thread settles: tip falls, the rest follows without stretching
    Eigen::Vector3d tip = s.thread[0];
    tip.z() = std::max(0.0, tip.z() - cfg.fall_step);
    s.thread[0] = tip;
    for (int i = 1; i < n; ++i) {
      Eigen::Vector3d want = s.thread[static_cast<size_t>(i)];
      want.z() = std::max(0.0, want.z() - cfg.fall_step);
      s.thread[static_cast<size_t>(i)] = follow(s.thread[static_cast<size_t>(i - 1)], want,
                                                cfg.seg_len, {0, -1, 0});
    }
  }
}

}  // namespace

Eigen::Vector3d tip_forward(double yaw) { return {std::sin(yaw), std::cos(yaw), 0.0}; }

Eigen::Vector3d thread_point_at(const WorldState& s, double arc, const SimConfig& cfg) {
  if (s.thread.empty()) throw std::logic_error("thread_point_at: no thread in this task");
  const int n = static_cast<int>(s.thread.size());
  const double a = std::clamp(arc, 0.0, (n - 1) * cfg.seg_len);
  const int i = std::min(static_cast<int>(a / cfg.seg_len), n - 2);
  const double t = a / cfg.seg_len - i;
  return s.thread[static_cast<size_t>(i)] * (1.0 - t) + s.thread[static_cast<size_t>(i + 1)] * t;
}

Eigen::Vector3d pinch_point(const WorldState& s) { return s.eef.pos; }

WorldState reset(std::uint64_t seed, Task task, const SimConfig& cfg) {
  Rng rng(seed ^ (task == Task::kBolt ? 0xB017ull : 0ull));
  WorldState s;
  s.task = task;
  s.eef.pos = {rng.uniform(-0.01, 0.01), -0.02, 0.07};
  s.eef.yaw = 0;
  s.gripper = Gripper::kOpen;
  s.eye.center = {rng.uniform(cfg.region_x_min, cfg.region_x_max),
                  rng.uniform(cfg.region_y_min, cfg.region_y_max), cfg.eye_height};
  s.eye.normal = {0, -1, 0};
  s.eye.radius = cfg.eye_radius;

  if (task == Task::kThreading) {
    const double tip_x = rng.uniform(-0.05, 0.05);
    const double tip_y = rng.uniform(-0.025, 0.005);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double base_ang = rng.uniform(-0.3, 0.3);
    s.thread.resize(static_cast<size_t>(cfg.thread_links));
    s.thread[0] = {tip_x, tip_y, 0.0};
    for (int i = 1; i < cfg.thread_links; ++i) {
      const double a = base_ang + rng.uniform(-0.2, 0.2);
      const Eigen::Vector3d dir(side * std::cos(a), -0.4 * std::sin(a), 0.0);
      s.thread[static_cast<size_t>(i)] =
          s.thread[static_cast<size_t>(i - 1)] - dir.normalized() * cfg.seg_len;
    }
    s.grasp_back = rng.uniform(0.003, 0.012);
  } else {
    s.bolt = {rng.uniform(cfg.region_x_min, cfg.region_x_max),
              rng.uniform(cfg.region_y_min, cfg.region_y_max), 0.006};
  }
  s.rng_state = rng.state();
  return s;
}

EventSet step(WorldState& s, const ActionCommand& action, const SimConfig& cfg) {
  if (s.step_index >= cfg.max_steps)
    throw std::logic_error("step: episode already at the step cap");
  EventSet ev;

  Eigen::Vector3d dpos = action.dpos;
  if (!dpos.allFinite() || !std::isfinite(action.dyaw))
    throw std::invalid_argument("step: non-finite action");
  const double mag = dpos.norm();
  if (mag > cfg.max_step) {
    dpos *= cfg.max_step / mag;
    ev.clamped = true;
  }
  double dyaw = std::clamp(action.dyaw, -cfg.max_yaw_step, cfg.max_yaw_step);
  if (dyaw != action.dyaw) ev.clamped = true;

  const Eigen::Vector3d tip_before =
      s.thread.empty() ? Eigen::Vector3d::Zero() : s.thread[0];

  bool box_hit = false;
  s.eef.pos = clamp_box(s.eef.pos + dpos, cfg, box_hit);
  if (box_hit) ev.clamped = true;
  s.eef.yaw += dyaw;

  if (action.gripper_cmd == GripperCmd::kClose) {
    if (s.gripper == Gripper::kOpen) {
      s.gripper = Gripper::kClosed;
      if (s.task == Task::kThreading && !s.thread_grasped &&
          (s.eef.pos - thread_point_at(s, s.grasp_back, cfg)).norm() <= cfg.grasp_radius)
        s.thread_grasped = true;
      if (s.task == Task::kBolt && !s.bolt_grasped &&
          (s.eef.pos - s.bolt).norm() <= cfg.grasp_radius)
        s.bolt_grasped = true;
    }
  } else if (s.gripper == Gripper::kClosed) {
    s.gripper = Gripper::kOpen;
    if (s.thread_grasped) {
      s.thread_grasped = false;
      ev.dropped = true;
    }
    if (s.bolt_grasped) {
      s.bolt_grasped = false;
      s.bolt.z() = 0.006;
      ev.dropped = true;
    }
  }

  if (s.task == Task::kThreading) {
    update_thread(s, cfg);
  } else if (s.bolt_grasped) {
    s.bolt = s.eef.pos;
  }

  if (s.task == Task::kThreading && s.thread_grasped) {
    const Eigen::Vector3d tip_after = s.thread[0];
    const double ye = s.eye.center.y();
    const double b = tip_before.y() - ye, a = tip_after.y() - ye;
    if (!s.threaded && b < 0 && a >= 0) {
      const double t = -b / (a - b);
      const Eigen::Vector3d cross = tip_before + t * (tip_after - tip_before);
      const double r = std::hypot(cross.x() - s.eye.center.x(), cross.z() - s.eye.center.z());
      if (r <= s.eye.radius) {
        s.threaded = true;
        ev.threaded = true;
      } else if (r <= cfg.miss_band) {
        s.missed_this_pass = true;
        ev.missed = true;
      }
    } else if (b >= 0 && a < 0) {
      s.missed_this_pass = false;  // retreated back through the plane
    }
  }

  if ((s.thread_grasped || s.bolt_grasped) && s.eef.pos.z() >= cfg.lift_height &&
      !s.picked_latched) {
    s.picked_latched = true;
    ev.picked = true;
  }

  ++s.step_index;
  return ev;
}

Progress check_success(const WorldState& s, const SimConfig& cfg) {
  if (s.task == Task::kBolt)
    return s.bolt_grasped && s.picked_latched ? Progress::kSuccess : Progress::kInProgress;
  if (s.threaded && !s.thread.empty() &&
      s.thread[0].y() > s.eye.center.y() + cfg.pass_margin)
    return Progress::kSuccess;
  if (s.picked_latched) return Progress::kPicked;
  return Progress::kInProgress;
}

double max_segment_drift(const WorldState& s, const SimConfig& cfg) {
  double worst = 0;
  for (size_t i = 1; i < s.thread.size(); ++i) {
    const double len = (s.thread[i] - s.thread[i - 1]).norm();
    worst = std::max(worst, std::abs(len - cfg.seg_len) / cfg.seg_len);
  }
  return worst;
}

}  // namespace fovea::sim
