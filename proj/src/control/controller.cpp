#include "fovea/control/controller.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace fovea::control {

using models::Comp;
using models::PolicyBundle;

char branch_letter(Branch b) {
  switch (b) {
    case Branch::kFast: return 'F';
    case Branch::kSlow: return 'S';
    case Branch::kRecovery: return 'R';
  }
  return '?';
}

Branch branch_from_letter(char c) {
  switch (c) {
    case 'F': return Branch::kFast;
    case 'S': return Branch::kSlow;
    case 'R': return Branch::kRecovery;
  }
  throw std::invalid_argument(std::string("unknown branch letter '") + c + "'");
}

BundlePolicy::BundlePolicy(PolicyBundle& bundle, PolicyBundle::ActionLimits limits)
    : bundle_(bundle), limits_(limits) {
  if (!bundle.fully_trained()) {
    std::string missing;
    for (Comp c : models::required_components(bundle.options()))
      if (!bundle.is_trained(c)) missing += (missing.empty() ? "" : ", ") + models::comp_name(c);
    throw std::logic_error("policy: untrained components: " + missing);
  }
}

PolicyBundle::GazePair BundlePolicy::gaze(const Tensor<float>& peripheral) {
  return bundle_.infer_gaze(peripheral);
}

int BundlePolicy::gripper(const Tensor<float>& foveal) {
  return bundle_.classify(Comp::kGripper, foveal);
}

int BundlePolicy::failure(const Tensor<float>& foveal) {
  return bundle_.classify(Comp::kFailure, foveal);
}

int BundlePolicy::fast(const Tensor<float>& foveal) {
  return bundle_.classify(Comp::kSpeed, foveal);
}

int BundlePolicy::recovery_steps(const Tensor<float>& foveal) {
  return bundle_.predict_recovery_steps(foveal);
}

PolicyBundle::ActionDelta BundlePolicy::action(Comp which, const Tensor<float>& peripheral,
                                               const Tensor<float>& foveal) {
  const models::NetSpec& spec = bundle_.net(which).spec();
  return bundle_.infer_action(which, spec.use_periph ? &peripheral : nullptr,
                              spec.use_foveal ? &foveal : nullptr, limits_);
}

namespace {

bool finite_gaze(const GazePoint& g) { return std::isfinite(g.x) && std::isfinite(g.y); }

bool finite_action(const PolicyBundle::ActionDelta& a) {
  return a.dpos.allFinite() && std::isfinite(a.dyaw);
}

}  // namespace

TrialReport run_trial(PolicyInterface& policy, const models::BundleOptions& opt,
                      const FrameGeom& geom, const sim::CameraModel& cam,
                      const sim::SimConfig& sim_cfg, std::uint64_t seed,
                      const ControllerConfig& ctrl) {
  if (geom.full_w != cam.width || geom.full_h != cam.height)
    throw std::invalid_argument("run_trial: camera renders " + std::to_string(cam.width) + "x" +
                                std::to_string(cam.height) + " but the geometry expects " +
                                std::to_string(geom.full_w) + "x" + std::to_string(geom.full_h));

  TrialReport rep;
  rep.seed = seed;
  sim::WorldState world = sim::reset(seed, sim::Task::kThreading, sim_cfg);
  ControllerState cs;
  Image left, right;
  int first_thread_step = -1;
  bool recovered_before_thread = false;

  auto abort_infra = [&]() {
    rep.infra_failure = true;
    rep.steps = static_cast<int>(rep.trace.size());
    rep.picked = world.picked_latched;
    return rep;
  };

  while (cs.step < ctrl.max_steps && !cs.succeed) {
    sim::render_stereo(world, cam, left, right);
    if (opt.mono) right = left;

    Tensor<float> periph =
        make_peripheral(left, right, geom).reshaped({1, 6, geom.periph_h, geom.periph_w});
    GazePoint g_l{0, 0}, g_r{0, 0};
    Tensor<float> foveal;
    if (opt.foveal_from_gaze) {
      PolicyBundle::GazePair g = policy.gaze(periph);
      if (!finite_gaze(g.left) || !finite_gaze(g.right)) return abort_infra();
      g_l = g.left;
      g_r = opt.mono ? g.left : g.right;
      foveal = make_foveal(left, right, g_l, g_r, geom)
                   .reshaped({1, 6, geom.fovea_h, geom.fovea_w});
    } else {
      foveal = periph;
    }

    const int grip = policy.gripper(foveal);
    if (grip < 0) return abort_infra();

    const int fired = policy.failure(foveal);
    if (fired < 0) return abort_infra();
    if (fired == 1 && cs.count == 0) {
      const int assigned = opt.use_step_predictor ? policy.recovery_steps(foveal) : 1;
      if (assigned < 0) return abort_infra();
      cs.count = std::min(assigned, 100);
      if (cs.count > 0) {
        ++rep.recoveries_attempted;
        if (first_thread_step < 0) recovered_before_thread = true;
      }
    }

    int is_fast = 0;
    if (opt.action_separation) {
      is_fast = policy.fast(foveal);
      if (is_fast < 0) return abort_infra();
    }

    Branch branch;
    PolicyBundle::ActionDelta act;
    if (is_fast == 1) {
      branch = Branch::kFast;
      act = policy.action(Comp::kFast, periph, foveal);
    } else if (cs.count > 0) {
      branch = Branch::kRecovery;
      act = policy.action(opt.merge_slow_recovery ? Comp::kSlow : Comp::kRecovery, periph, foveal);
      --cs.count;
    } else {
      branch = Branch::kSlow;
      act = policy.action(Comp::kSlow, periph, foveal);
    }
    if (!finite_action(act)) return abort_infra();
    cs.last_branch = branch;

    sim::ActionCommand cmd;
    cmd.dpos = act.dpos;
    cmd.dyaw = act.dyaw;
    cmd.gripper_cmd = grip == 1 ? sim::GripperCmd::kClose : sim::GripperCmd::kOpen;
    sim::EventSet ev = sim::step(world, cmd, sim_cfg);

    TraceStep ts;
    ts.step = cs.step;
    ts.branch = branch;
    ts.gaze_l = g_l;
    ts.gaze_r = g_r;
    ts.cmd = cmd;
    ts.events = ev;
    rep.trace.push_back(ts);
    ++cs.step;

    if (ev.threaded && first_thread_step < 0) first_thread_step = cs.step;
    if (sim::check_success(world, sim_cfg) == sim::Progress::kSuccess)
      cs.succeed = true;
    else if (first_thread_step >= 0 && cs.step - first_thread_step >= ctrl.success_grace)
      break;
  }

  rep.steps = cs.step;
  rep.threaded = cs.succeed;
  rep.picked = world.picked_latched || cs.succeed;
  rep.recoveries_succeeded = (cs.succeed && recovered_before_thread) ? 1 : 0;
  return rep;
}

TrialReport run_trial(PolicyBundle& bundle, const sim::CameraModel& cam,
                      const sim::SimConfig& sim_cfg, std::uint64_t seed,
                      const ControllerConfig& ctrl) {
  BundlePolicy policy(bundle, {sim_cfg.max_step, sim_cfg.max_yaw_step});
  return run_trial(policy, bundle.options(), bundle.geom(), cam, sim_cfg, seed, ctrl);
}

namespace {

std::string events_code(const sim::EventSet& e) {
  std::string s;
  if (e.clamped) s += 'c';
  if (e.picked) s += 'p';
  if (e.threaded) s += 't';
  if (e.missed) s += 'm';
  if (e.dropped) s += 'd';
  return s.empty() ? "-" : s;
}

sim::EventSet events_from_code(const std::string& s, int line) {
  sim::EventSet e;
  if (s == "-") return e;
  for (char c : s) {
    switch (c) {
      case 'c': e.clamped = true; break;
      case 'p': e.picked = true; break;
      case 't': e.threaded = true; break;
      case 'm': e.missed = true; break;
      case 'd': e.dropped = true; break;
      default:
        throw std::invalid_argument("trace line " + std::to_string(line) +
                                    ": unknown event code '" + s + "'");
    }
  }
  return e;
}

bool events_equal(const sim::EventSet& a, const sim::EventSet& b) {
  return a.clamped == b.clamped && a.picked == b.picked && a.threaded == b.threaded &&
         a.missed == b.missed && a.dropped == b.dropped;
}

}  // namespace

std::string format_trace(const TrialReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "trial seed=" << r.seed << " steps=" << r.steps << " picked=" << int(r.picked)
     << " threaded=" << int(r.threaded) << " infra=" << int(r.infra_failure)
     << " attempts=" << r.recoveries_attempted << " recovered=" << r.recoveries_succeeded << "\n";
  for (const TraceStep& t : r.trace) {
    os << t.step << ' ' << branch_letter(t.branch) << ' ' << t.gaze_l.x << ' ' << t.gaze_l.y << ' '
       << t.gaze_r.x << ' ' << t.gaze_r.y << ' ' << t.cmd.dpos[0] << ' ' << t.cmd.dpos[1] << ' '
       << t.cmd.dpos[2] << ' ' << t.cmd.dyaw << ' '
       << (t.cmd.gripper_cmd == sim::GripperCmd::kClose ? 1 : 0) << ' ' << events_code(t.events)
       << "\n";
  }
  return os.str();
}

TrialReport parse_trace(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("trace: empty input");

  TrialReport r;
  {
    std::istringstream hs(line);
    std::string tag;
    hs >> tag;
    if (tag != "trial") throw std::invalid_argument("trace: header must start with 'trial'");
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("trace: malformed header field '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "seed")
        r.seed = std::stoull(val);
      else if (key == "steps")
        r.steps = std::stoi(val);
      else if (key == "picked")
        r.picked = std::stoi(val) != 0;
      else if (key == "threaded")
        r.threaded = std::stoi(val) != 0;
      else if (key == "infra")
        r.infra_failure = std::stoi(val) != 0;
      else if (key == "attempts")
        r.recoveries_attempted = std::stoi(val);
      else if (key == "recovered")
        r.recoveries_succeeded = std::stoi(val);
      else
        throw std::invalid_argument("trace: unknown header field '" + key + "'");
    }
  }

  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    TraceStep t;
    char branch = 0;
    int grip = 0;
    std::string ev;
    if (!(ls >> t.step >> branch >> t.gaze_l.x >> t.gaze_l.y >> t.gaze_r.x >> t.gaze_r.y >>
          t.cmd.dpos[0] >> t.cmd.dpos[1] >> t.cmd.dpos[2] >> t.cmd.dyaw >> grip >> ev))
      throw std::invalid_argument("trace line " + std::to_string(line_no) + ": expected 12 fields");
    t.branch = branch_from_letter(branch);
    t.cmd.gripper_cmd = grip != 0 ? sim::GripperCmd::kClose : sim::GripperCmd::kOpen;
    t.events = events_from_code(ev, line_no);
    r.trace.push_back(t);
  }
  if (static_cast<int>(r.trace.size()) != r.steps)
    throw std::invalid_argument("trace: header claims " + std::to_string(r.steps) +
                                " steps but " + std::to_string(r.trace.size()) +
                                " lines follow");
  return r;
}

bool replay_matches(const TrialReport& r, const sim::SimConfig& sim_cfg, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (static_cast<int>(r.trace.size()) != r.steps)
    return fail("record holds " + std::to_string(r.trace.size()) + " steps, header says " +
                std::to_string(r.steps));

  sim::WorldState world = sim::reset(r.seed, sim::Task::kThreading, sim_cfg);
  for (const TraceStep& t : r.trace) {
    sim::EventSet ev = sim::step(world, t.cmd, sim_cfg);
    if (!events_equal(ev, t.events))
      return fail("events diverge at step " + std::to_string(t.step) + ": replay raised '" +
                  events_code(ev) + "', record holds '" + events_code(t.events) + "'");
  }
  const bool succeed = sim::check_success(world, sim_cfg) == sim::Progress::kSuccess;
  if (succeed != r.threaded)
    return fail(std::string("final outcome diverges: replay ") +
                (succeed ? "succeeded" : "did not succeed") + ", record says " +
                (r.threaded ? "threaded" : "not threaded"));
  const bool picked = world.picked_latched || succeed;
  if (picked != r.picked)
    return fail(std::string("pick outcome diverges: replay ") + (picked ? "picked" : "not picked") +
                ", record says " + (r.picked ? "picked" : "not picked"));
  if (why) why->clear();
  return true;
}

}  // namespace fovea::control
