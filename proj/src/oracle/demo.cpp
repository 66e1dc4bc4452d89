#include "fovea/oracle/demo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fovea/core/rng.hpp"

namespace fovea::oracle {

namespace {

enum class GraspStage { kApproach, kClose, kSettle, kLift };

double positive_normal(Rng& rng, double mean, double sd) {
  for (int k = 0; k < 10; ++k) {
    const double v = rng.normal(mean, sd);
    if (v > 0) return v;
  }
  return mean;
}

Eigen::Vector3d toward(const Eigen::Vector3d& from, const Eigen::Vector3d& to, double speed) {
  const Eigen::Vector3d d = to - from;
  const double dist = d.norm();
  if (dist < 1e-12) return Eigen::Vector3d::Zero();
  return d * (std::min(speed, dist) / dist);
}

GazePoint noisy_gaze(const Eigen::Vector3d& target, const sim::CameraModel& cam, sim::Side side,
                     Rng& rng, double noise_px) {
  const sim::Pixel p = sim::project(target, cam, side);
  return {std::clamp(p.u + rng.normal(0, noise_px), 0.0, cam.width - 1.0),
          std::clamp(p.v + rng.normal(0, noise_px), 0.0, cam.height - 1.0)};
}

void validate(const OracleConfig& cfg) {
  if (cfg.fail_prob < 0 || cfg.fail_prob > 1)
    throw std::invalid_argument("oracle: fail_prob must lie in [0, 1]");
  if (cfg.fast_step <= 0 || cfg.slow_step <= 0 || cfg.recover_step <= 0 ||
      cfg.fast_step_sd <= 0 || cfg.slow_step_sd <= 0)
    throw std::invalid_argument("oracle: step scales must be positive");
  if (cfg.gaze_noise_px < 0 || cfg.act_noise < 0)
    throw std::invalid_argument("oracle: noise levels must be nonnegative");
  if (cfg.max_retries < 0) throw std::invalid_argument("oracle: max_retries must be nonnegative");
}

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kReach: return "reach";
    case Phase::kGrasp: return "grasp";
    case Phase::kTransport: return "transport";
    case Phase::kInsert: return "insert";
    case Phase::kFailure: return "failure";
    case Phase::kRecovery: return "recovery";
  }
  return "?";
}

Phase phase_from_name(const std::string& name) {
  for (Phase p : {Phase::kReach, Phase::kGrasp, Phase::kTransport, Phase::kInsert, Phase::kFailure,
                  Phase::kRecovery})
    if (name == phase_name(p)) return p;
  throw std::invalid_argument("unknown phase name: " + name);
}

EpisodeRecord generate_episode(std::uint64_t seed, const OracleConfig& cfg,
                               const sim::SimConfig& sim_cfg, const sim::CameraModel& cam) {
  validate(cfg);
  sim::WorldState s = sim::reset(seed, sim::Task::kThreading, sim_cfg);
  Rng rng = Rng(seed).fork("oracle");

  EpisodeRecord ep;
  ep.seed = seed;

  Phase phase = Phase::kReach;
  GraspStage grasp_stage = GraspStage::kApproach;
  int settle_left = 0;
  int failure_left = 0;
  int retries_left = cfg.max_retries;
  Eigen::Vector3d aim = s.eye.center;

  const Eigen::Vector3d staging_tip = s.eye.center + Eigen::Vector3d(0, -0.03, 0);
  const Eigen::Vector3d staging_eef = staging_tip - Eigen::Vector3d(0, s.grasp_back, 0);
  const double lift_z = 0.018;

  auto begin_attempt = [&] {
    phase = Phase::kInsert;
    ++ep.insert_attempts;
    aim = s.eye.center;
    if (rng.uniform() < cfg.fail_prob) {
      const double ang = rng.uniform(0, 2 * 3.14159265358979323846);
      const double rho = rng.uniform(s.eye.radius + 0.002, sim_cfg.miss_band - 0.002);
      aim += Eigen::Vector3d(rho * std::cos(ang), 0, rho * std::sin(ang));
    }
  };

  bool done = false;
  while (!done && s.step_index < sim_cfg.max_steps) {
    // phase transitions judged on the current state
    switch (phase) {
      case Phase::kReach: {
        const Eigen::Vector3d hover =
            sim::thread_point_at(s, s.grasp_back, sim_cfg) + Eigen::Vector3d(0, 0, 0.010);
        if ((s.eef.pos - hover).norm() < 0.004) {
          phase = Phase::kGrasp;
          grasp_stage = GraspStage::kApproach;
        }
        break;
      }
      case Phase::kGrasp:
        if (grasp_stage == GraspStage::kApproach &&
            (s.eef.pos - sim::thread_point_at(s, s.grasp_back, sim_cfg)).norm() <= 0.0012)
          grasp_stage = GraspStage::kClose;
        else if (grasp_stage == GraspStage::kSettle && settle_left == 0)
          grasp_stage = GraspStage::kLift;
        else if (grasp_stage == GraspStage::kLift && s.thread_grasped && s.eef.pos.z() >= lift_z)
          phase = Phase::kTransport;
        break;
      case Phase::kTransport:
        if ((s.eef.pos - staging_eef).norm() < 0.002) begin_attempt();
        break;
      case Phase::kInsert:
      case Phase::kFailure:
      case Phase::kRecovery:
        break;  // these advance on events below
    }

    // command for the current phase
    sim::ActionCommand a;
    a.gripper_cmd = sim::GripperCmd::kClose;
    switch (phase) {
      case Phase::kReach: {
        const Eigen::Vector3d hover =
            sim::thread_point_at(s, s.grasp_back, sim_cfg) + Eigen::Vector3d(0, 0, 0.010);
        a.dpos = toward(s.eef.pos, hover, positive_normal(rng, cfg.fast_step, cfg.fast_step_sd));
        a.gripper_cmd = sim::GripperCmd::kOpen;
        break;
      }
      case Phase::kGrasp:
        switch (grasp_stage) {
          case GraspStage::kApproach:
            a.dpos = toward(s.eef.pos, sim::thread_point_at(s, s.grasp_back, sim_cfg),
                            positive_normal(rng, cfg.slow_step, cfg.slow_step_sd));
            a.gripper_cmd = sim::GripperCmd::kOpen;
            break;
          case GraspStage::kClose:
            grasp_stage = GraspStage::kSettle;
            settle_left = 2;
            break;
          case GraspStage::kSettle:
            --settle_left;
            break;
          case GraspStage::kLift:
            a.dpos = toward(s.eef.pos, {s.eef.pos.x(), s.eef.pos.y(), lift_z + 0.002},
                            positive_normal(rng, cfg.slow_step, cfg.slow_step_sd));
            break;
        }
        break;
      case Phase::kTransport:
        a.dpos =
            toward(s.eef.pos, staging_eef, positive_normal(rng, cfg.fast_step, cfg.fast_step_sd));
        break;
      case Phase::kInsert:
      case Phase::kFailure: {
        const Eigen::Vector3d goal_eef =
            aim + Eigen::Vector3d(0, sim_cfg.pass_margin + 0.004 - s.grasp_back, 0);
        a.dpos = toward(s.eef.pos, goal_eef, positive_normal(rng, cfg.slow_step, cfg.slow_step_sd));
        break;
      }
      case Phase::kRecovery:
        a.dpos = toward(s.eef.pos, staging_eef, positive_normal(rng, cfg.recover_step, 0.0004));
        break;
    }
    a.dpos += Eigen::Vector3d(rng.normal(0, cfg.act_noise), rng.normal(0, cfg.act_noise),
                              rng.normal(0, cfg.act_noise));

    // record the observation/action pair, then act
    StepRecord rec;
    sim::render_stereo(s, cam, rec.obs.left, rec.obs.right);
    const Eigen::Vector3d attention = (phase == Phase::kReach || phase == Phase::kGrasp)
                                          ? sim::thread_point_at(s, s.grasp_back, sim_cfg)
                                          : s.eye.center;
    rec.gaze_l = noisy_gaze(attention, cam, sim::Side::kLeft, rng, cfg.gaze_noise_px);
    rec.gaze_r = noisy_gaze(attention, cam, sim::Side::kRight, rng, cfg.gaze_noise_px);
    rec.action = a;
    rec.phase = phase;
    rec.eef_before = s.eef.pos;
    rec.events = sim::step(s, a, sim_cfg);
    ep.steps.push_back(std::move(rec));
    const sim::EventSet& ev = ep.steps.back().events;

    if (ev.missed) ++ep.miss_events;

    switch (phase) {
      case Phase::kInsert:
        if (sim::check_success(s, sim_cfg) == sim::Progress::kSuccess) {
          ep.outcome = Outcome::kSuccess;
          done = true;
        } else if (ev.missed) {
          phase = Phase::kFailure;
          failure_left = 2 + rng.uniform_int(3);
        }
        break;
      case Phase::kFailure:
        if (--failure_left <= 0) {
          if (retries_left > 0) {
            --retries_left;
            phase = Phase::kRecovery;
          } else {
            done = true;  // out of retries, give up
          }
        }
        break;
      case Phase::kRecovery:
        if ((s.eef.pos - staging_eef).norm() < 0.002) begin_attempt();
        break;
      default:
        break;
    }
  }

  ep.final_eef = s.eef.pos;
  annotate(ep);
  return ep;
}

void annotate(EpisodeRecord& ep) {
  for (auto& st : ep.steps) {
    st.labels.is_failure_state = st.phase == Phase::kFailure;
    st.labels.recovery_steps_remaining = 0;
  }
  size_t i = 0;
  while (i < ep.steps.size()) {
    if (ep.steps[i].phase != Phase::kRecovery) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < ep.steps.size() && ep.steps[j].phase == Phase::kRecovery) ++j;
    for (size_t k = i; k < j; ++k)
      ep.steps[k].labels.recovery_steps_remaining = static_cast<int>(j - k);
    i = j;
  }
}

}  // namespace fovea::oracle
