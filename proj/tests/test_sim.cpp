#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "fovea/core/rng.hpp"
#include "fovea/sim/render.hpp"
#include "fovea/sim/world.hpp"

using namespace fovea;
using namespace fovea::sim;

namespace {

bool same_vec(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return a.x() == b.x() && a.y() == b.y() && a.z() == b.z();
}

bool same_thread(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!same_vec(a[i], b[i])) return false;
  return true;
}

// Straight pinched thread trailing -y from the gripper, consistent with the
// rigid pinch region so the first step does not snap anything.
WorldState grasped_state(const Eigen::Vector3d& eef, const SimConfig& cfg) {
  WorldState s = reset(7, Task::kThreading, cfg);
  s.eef.pos = eef;
  s.eef.yaw = 0;
  s.gripper = Gripper::kClosed;
  s.thread_grasped = true;
  s.grasp_back = 0.006;
  const Eigen::Vector3d tip = eef + Eigen::Vector3d(0, s.grasp_back, 0);
  for (int i = 0; i < cfg.thread_links; ++i)
    s.thread[static_cast<size_t>(i)] = tip - Eigen::Vector3d(0, i * cfg.seg_len, 0);
  return s;
}

int count_color(const Image& im, std::uint8_t r, std::uint8_t g, std::uint8_t b, double* cu = nullptr,
                double* cv = nullptr) {
  int n = 0;
  double su = 0, sv = 0;
  for (int v = 0; v < im.h; ++v)
    for (int u = 0; u < im.w; ++u)
      if (im.at(u, v, 0) == r && im.at(u, v, 1) == g && im.at(u, v, 2) == b) {
        ++n;
        su += u;
        sv += v;
      }
  if (n > 0 && cu) *cu = su / n;
  if (n > 0 && cv) *cv = sv / n;
  return n;
}

}  // namespace

TEST_CASE("reset is seed-deterministic and seed-sensitive") {
  SimConfig cfg;
  WorldState a = reset(42, Task::kThreading, cfg);
  WorldState b = reset(42, Task::kThreading, cfg);
  CHECK(same_vec(a.eye.center, b.eye.center));
  CHECK(same_vec(a.eef.pos, b.eef.pos));
  CHECK(a.grasp_back == b.grasp_back);
  CHECK(same_thread(a.thread, b.thread));

  WorldState c = reset(43, Task::kThreading, cfg);
  CHECK_FALSE(same_vec(a.eye.center, c.eye.center));
}

TEST_CASE("reset covers the placement region across seeds") {
  SimConfig cfg;
  double xmin = 1, xmax = -1, ymin = 1, ymax = -1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    WorldState s = reset(seed, Task::kThreading, cfg);
    CHECK(s.eye.center.x() >= cfg.region_x_min);
    CHECK(s.eye.center.x() <= cfg.region_x_max);
    CHECK(s.eye.center.y() >= cfg.region_y_min);
    CHECK(s.eye.center.y() <= cfg.region_y_max);
    CHECK(s.eye.center.z() == cfg.eye_height);
    CHECK(s.grasp_back >= 0.003);
    CHECK(s.grasp_back <= 0.012);
    CHECK(static_cast<int>(s.thread.size()) == cfg.thread_links);
    for (const auto& p : s.thread) CHECK(p.z() == 0.0);
    xmin = std::min(xmin, s.eye.center.x());
    xmax = std::max(xmax, s.eye.center.x());
    ymin = std::min(ymin, s.eye.center.y());
    ymax = std::max(ymax, s.eye.center.y());
  }
  CHECK(xmin < cfg.region_x_min + 0.015);
  CHECK(xmax > cfg.region_x_max - 0.015);
  CHECK(ymin < cfg.region_y_min + 0.015);
  CHECK(ymax > cfg.region_y_max - 0.015);
}

TEST_CASE("bolt task has a bolt and no thread") {
  SimConfig cfg;
  WorldState s = reset(5, Task::kBolt, cfg);
  CHECK(s.thread.empty());
  CHECK(s.bolt.x() >= cfg.region_x_min);
  CHECK(s.bolt.x() <= cfg.region_x_max);
  CHECK(s.bolt.z() > 0);
  WorldState t = reset(5, Task::kThreading, cfg);
  CHECK_FALSE(same_vec(s.eye.center, t.eye.center));  // task salts the stream
}

TEST_CASE("zero action leaves a fresh state bit-identical except the counter") {
  SimConfig cfg;
  WorldState s = reset(11, Task::kThreading, cfg);
  WorldState before = s;
  ActionCommand zero;
  for (int k = 0; k < 5; ++k) {
    EventSet ev = step(s, zero, cfg);
    CHECK_FALSE(ev.clamped);
    CHECK_FALSE(ev.picked);
    CHECK_FALSE(ev.dropped);
  }
  CHECK(s.step_index == 5);
  CHECK(same_vec(s.eef.pos, before.eef.pos));
  CHECK(s.eef.yaw == before.eef.yaw);
  CHECK(same_thread(s.thread, before.thread));
  CHECK(s.gripper == Gripper::kOpen);
}

TEST_CASE("oversized motion is clamped and flagged") {
  SimConfig cfg;
  WorldState s = reset(3, Task::kThreading, cfg);
  const Eigen::Vector3d p0 = s.eef.pos;
  ActionCommand a;
  a.dpos = {0.05, 0, 0};
  a.dyaw = 0.5;
  EventSet ev = step(s, a, cfg);
  CHECK(ev.clamped);
  CHECK((s.eef.pos - p0).norm() == doctest::Approx(cfg.max_step).epsilon(1e-12));
  CHECK(s.eef.yaw == doctest::Approx(cfg.max_yaw_step));

  ActionCommand bad;
  bad.dpos = {std::nan(""), 0, 0};
  CHECK_THROWS_AS(step(s, bad, cfg), std::invalid_argument);
}

TEST_CASE("workspace box confines the gripper") {
  SimConfig cfg;
  WorldState s = reset(3, Task::kThreading, cfg);
  ActionCommand a;
  a.dpos = {0, 0, 0.02};
  for (int k = 0; k < 20; ++k) step(s, a, cfg);
  CHECK(s.eef.pos.z() == cfg.ws_z_max);
}

TEST_CASE("grasp, lift, and drop round trip") {
  SimConfig cfg;
  WorldState s = reset(21, Task::kThreading, cfg);
  s.eef.pos = thread_point_at(s, s.grasp_back, cfg);

  ActionCommand close;
  close.gripper_cmd = GripperCmd::kClose;
  step(s, close, cfg);
  CHECK(s.thread_grasped);
  CHECK(s.gripper == Gripper::kClosed);
  // pinched tip sits grasp_back ahead of the gripper along the yaw heading
  const Eigen::Vector3d want_tip = s.eef.pos + tip_forward(s.eef.yaw) * s.grasp_back;
  CHECK((s.thread[0] - want_tip).norm() < 1e-12);

  ActionCommand lift;
  lift.dpos = {0, 0, 0.015};
  lift.gripper_cmd = GripperCmd::kClose;
  EventSet e1 = step(s, lift, cfg);
  CHECK_FALSE(e1.picked);
  EventSet e2 = step(s, lift, cfg);
  CHECK(e2.picked);
  CHECK(check_success(s, cfg) == Progress::kPicked);
  EventSet e3 = step(s, lift, cfg);
  CHECK_FALSE(e3.picked);  // latched, fires once
  CHECK(max_segment_drift(s, cfg) < 1e-9);

  ActionCommand release;
  EventSet e4 = step(s, release, cfg);
  CHECK(e4.dropped);
  CHECK_FALSE(s.thread_grasped);
  CHECK(s.gripper == Gripper::kOpen);
}

TEST_CASE("far gripper close does not catch the thread") {
  SimConfig cfg;
  WorldState s = reset(21, Task::kThreading, cfg);
  s.eef.pos = thread_point_at(s, s.grasp_back, cfg) + Eigen::Vector3d(0.05, 0, 0.02);
  ActionCommand close;
  close.gripper_cmd = GripperCmd::kClose;
  step(s, close, cfg);
  CHECK_FALSE(s.thread_grasped);
  CHECK(s.gripper == Gripper::kClosed);
}

TEST_CASE("dropped thread settles to the table at a fixed point") {
  SimConfig cfg;
  WorldState s = reset(33, Task::kThreading, cfg);
  s.eef.pos = thread_point_at(s, s.grasp_back, cfg);
  ActionCommand close;
  close.gripper_cmd = GripperCmd::kClose;
  step(s, close, cfg);
  REQUIRE(s.thread_grasped);
  ActionCommand lift;
  lift.dpos = {0, 0.01, 0.015};
  lift.gripper_cmd = GripperCmd::kClose;
  for (int k = 0; k < 3; ++k) step(s, lift, cfg);

  ActionCommand release;
  step(s, release, cfg);
  CHECK_FALSE(s.thread_grasped);

  ActionCommand zero;
  int settle = -1;
  for (int k = 0; k < 50; ++k) {
    std::vector<Eigen::Vector3d> prev = s.thread;
    step(s, zero, cfg);
    CHECK(max_segment_drift(s, cfg) < 1e-9);
    if (same_thread(prev, s.thread)) {
      settle = k;
      break;
    }
  }
  CHECK(settle >= 0);
  for (const auto& p : s.thread) CHECK(p.z() == 0.0);

  // once settled, the fixed point is bit-stable
  std::vector<Eigen::Vector3d> frozen = s.thread;
  for (int k = 0; k < 10; ++k) step(s, zero, cfg);
  CHECK(same_thread(frozen, s.thread));
}

TEST_CASE("chain stays inextensible under 500 random steps") {
  SimConfig cfg;
  WorldState s = reset(77, Task::kThreading, cfg);
  Rng rng(123);
  double worst = 0;
  for (int k = 0; k < cfg.max_steps; ++k) {
    ActionCommand a;
    a.dpos = {rng.normal(0, 0.006), rng.normal(0, 0.006), rng.normal(0, 0.006)};
    a.dyaw = rng.normal(0, 0.05);
    a.gripper_cmd = rng.uniform() < 0.3 ? GripperCmd::kClose : GripperCmd::kOpen;
    step(s, a, cfg);
    worst = std::max(worst, max_segment_drift(s, cfg));
  }
  CHECK(worst < 1e-4);
  CHECK(s.step_index == cfg.max_steps);
  ActionCommand zero;
  CHECK_THROWS_AS(step(s, zero, cfg), std::logic_error);
}

TEST_CASE("pinched chain stays exact while towed around") {
  SimConfig cfg;
  WorldState s = grasped_state({0.0, 0.02, 0.05}, cfg);
  Rng rng(9);
  for (int k = 0; k < 200; ++k) {
    ActionCommand a;
    a.dpos = {rng.normal(0, 0.004), rng.normal(0, 0.004), rng.normal(0, 0.004)};
    a.dyaw = rng.normal(0, 0.08);
    a.gripper_cmd = GripperCmd::kClose;
    step(s, a, cfg);
    CHECK(max_segment_drift(s, cfg) < 1e-9);
    const Eigen::Vector3d want_tip = s.eef.pos + tip_forward(s.eef.yaw) * s.grasp_back;
    CHECK((s.thread[0] - want_tip).norm() < 1e-12);
  }
}

TEST_CASE("tip through the eye center raises threaded exactly once") {
  SimConfig cfg;
  WorldState s = grasped_state({0.0, 0.02, 0.06}, cfg);
  s.eye.center = {0.0, 0.06, 0.06};
  ActionCommand fwd;
  fwd.dpos = {0, 0.01, 0};
  fwd.gripper_cmd = GripperCmd::kClose;
  int threaded_events = 0, missed_events = 0;
  for (int k = 0; k < 8; ++k) {
    EventSet ev = step(s, fwd, cfg);
    threaded_events += ev.threaded ? 1 : 0;
    missed_events += ev.missed ? 1 : 0;
  }
  CHECK(threaded_events == 1);
  CHECK(missed_events == 0);
  CHECK(s.threaded);
  CHECK(check_success(s, cfg) == Progress::kSuccess);
}

TEST_CASE("success needs the tip strictly past the margin") {
  SimConfig cfg;
  WorldState s = grasped_state({0.0, 0.02, 0.06}, cfg);
  s.eye.center = {0.0, 0.06, 0.06};
  s.threaded = true;
  s.thread[0] = {0.0, s.eye.center.y() + cfg.pass_margin, 0.06};
  CHECK(check_success(s, cfg) == Progress::kInProgress);  // exactly at margin: not through
  s.thread[0].y() += 1e-9;
  CHECK(check_success(s, cfg) == Progress::kSuccess);
}

TEST_CASE("near miss lands in the miss band and retreat clears it") {
  SimConfig cfg;
  WorldState s = grasped_state({0.006, 0.02, 0.06}, cfg);
  s.eye.center = {0.0, 0.06, 0.06};  // tip will cross 6 mm off-center
  ActionCommand fwd;
  fwd.dpos = {0, 0.01, 0};
  fwd.gripper_cmd = GripperCmd::kClose;
  int threaded_events = 0, missed_events = 0;
  for (int k = 0; k < 8; ++k) {
    EventSet ev = step(s, fwd, cfg);
    threaded_events += ev.threaded ? 1 : 0;
    missed_events += ev.missed ? 1 : 0;
  }
  CHECK(threaded_events == 0);
  CHECK(missed_events == 1);
  CHECK(s.missed_this_pass);
  CHECK_FALSE(s.threaded);
  CHECK(check_success(s, cfg) != Progress::kSuccess);  // lifted thread still counts as picked

  ActionCommand back;
  back.dpos = {0, -0.02, 0};
  back.gripper_cmd = GripperCmd::kClose;
  for (int k = 0; k < 4; ++k) step(s, back, cfg);
  CHECK_FALSE(s.missed_this_pass);
}

TEST_CASE("crossing far outside the miss band raises nothing") {
  SimConfig cfg;
  WorldState s = grasped_state({0.02, 0.02, 0.06}, cfg);
  s.eye.center = {0.0, 0.06, 0.06};  // 20 mm off-center, outside the 12 mm band
  ActionCommand fwd;
  fwd.dpos = {0, 0.01, 0};
  fwd.gripper_cmd = GripperCmd::kClose;
  for (int k = 0; k < 8; ++k) {
    EventSet ev = step(s, fwd, cfg);
    CHECK_FALSE(ev.threaded);
    CHECK_FALSE(ev.missed);
  }
  CHECK_FALSE(s.missed_this_pass);
}

TEST_CASE("thread_point_at interpolates arclength on a straight chain") {
  SimConfig cfg;
  WorldState s = grasped_state({0.0, 0.02, 0.05}, cfg);
  const Eigen::Vector3d tip = s.thread[0];
  CHECK(same_vec(thread_point_at(s, 0.0, cfg), tip));
  Eigen::Vector3d mid = thread_point_at(s, 0.009, cfg);
  CHECK((mid - (tip - Eigen::Vector3d(0, 0.009, 0))).norm() < 1e-12);
  // clamped at the tail end
  const double total = (cfg.thread_links - 1) * cfg.seg_len;
  CHECK(same_vec(thread_point_at(s, total + 1.0, cfg), s.thread.back()));
}

TEST_CASE("tip_forward follows the yaw heading") {
  CHECK((tip_forward(0.0) - Eigen::Vector3d(0, 1, 0)).norm() < 1e-15);
  CHECK((tip_forward(1.5707963267948966) - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("projection hits the principal point and is linear in x") {
  CameraModel cam;
  for (Side side : {Side::kLeft, Side::kRight}) {
    Pixel p = project({0, 0, 0}, cam, side);
    CHECK(p.u == doctest::Approx(cam.cx));
    CHECK(p.v == doctest::Approx(cam.cy));
  }
  Pixel q = project({0.01, 0.02, 0}, cam, Side::kLeft);
  CHECK(q.u - cam.cx == doctest::Approx(cam.scale * 0.01));
  CHECK(cam.cy - q.v == doctest::Approx(cam.scale * 0.02));
}

TEST_CASE("disparity is linear in height and zero at the table") {
  CameraModel cam;
  auto disp = [&](double z) {
    return project({0.01, 0.03, z}, cam, Side::kLeft).u -
           project({0.01, 0.03, z}, cam, Side::kRight).u;
  };
  CHECK(disp(0.0) == doctest::Approx(0.0));
  const double want = cam.scale * cam.baseline * 0.06 / cam.cam_height;  // 43.2 px
  CHECK(disp(0.06) == doctest::Approx(want));
  CHECK(disp(0.03) == doctest::Approx(want / 2));
  // a 1 mm height change moves the pair by well over half a pixel, so tip
  // height against the eye is readable from the stereo pair
  CHECK(disp(0.001) > 0.5);
}

TEST_CASE("scene with everything out of frame renders background only") {
  SimConfig cfg;
  WorldState s = reset(4, Task::kBolt, cfg);
  s.bolt = {10.0, 0.05, 0.0};
  s.eef.pos = {10.0, 0.05, 0.0};
  CameraModel cam;
  Image l, r;
  render_stereo(s, cam, l, r);
  CHECK(count_color(l, 46, 46, 42) == cam.width * cam.height);
  CHECK(l.px == r.px);
}

TEST_CASE("rendering is a pure function of state") {
  SimConfig cfg;
  WorldState s = reset(19, Task::kThreading, cfg);
  CameraModel cam;
  Image l1, r1, l2, r2;
  render_stereo(s, cam, l1, r1);
  render_stereo(s, cam, l2, r2);
  CHECK(l1.px == l2.px);
  CHECK(r1.px == r2.px);
  CHECK(static_cast<int>(l1.px.size()) == cam.width * cam.height * 3);
}

TEST_CASE("flat scene renders pixel-identical in both views") {
  SimConfig cfg;
  WorldState s = reset(19, Task::kBolt, cfg);
  s.bolt.z() = 0.0;
  s.eef.pos = {0.02, 0.05, 0.0};
  CameraModel cam;
  Image l, r;
  render_stereo(s, cam, l, r);
  CHECK(l.px == r.px);
}

TEST_CASE("lifted marker separates between views by the closed-form disparity") {
  SimConfig cfg;
  WorldState s = reset(19, Task::kBolt, cfg);
  s.bolt = {0.0, 0.05, 0.05};
  CameraModel cam;
  Image l, r;
  render_stereo(s, cam, l, r);
  double ul = 0, ur = 0, vl = 0, vr = 0;
  const int nl = count_color(l, 195, 195, 60, &ul, &vl);
  const int nr = count_color(r, 195, 195, 60, &ur, &vr);
  CHECK(nl > 20);
  CHECK(nl == nr);
  const double want = cam.scale * cam.baseline * 0.05 / cam.cam_height;  // 9 px
  CHECK(ul - ur == doctest::Approx(want).epsilon(0.1));
  CHECK(vl == doctest::Approx(vr));
}

TEST_CASE("rendered tip bead sits at the projected tip") {
  SimConfig cfg;
  WorldState s = grasped_state({0.01, 0.03, 0.045}, cfg);
  CameraModel cam;
  Image l, r;
  render_stereo(s, cam, l, r);
  for (Side side : {Side::kLeft, Side::kRight}) {
    const Image& im = side == Side::kLeft ? l : r;
    double cu = 0, cv = 0;
    const int n = count_color(im, 255, 160, 20, &cu, &cv);
    CHECK(n >= 3);  // 2x2 bead, one corner may be overdrawn by the gripper
    Pixel want = project(s.thread[0], cam, side);
    CHECK(std::abs(cu - want.u) < 2.0);
    CHECK(std::abs(cv - want.v) < 2.0);
  }
}

TEST_CASE("scene primitives are all visible in a fresh threading state") {
  SimConfig cfg;
  WorldState s = reset(2, Task::kThreading, cfg);
  CameraModel cam;
  Image l, r;
  render_stereo(s, cam, l, r);
  CHECK(count_color(l, 46, 46, 42) > 20000);    // table
  CHECK(count_color(l, 70, 70, 160) > 50);      // needle block
  CHECK(count_color(l, 235, 235, 240) > 10);    // eye ring
  CHECK(count_color(l, 205, 60, 40) > 30);      // thread body
  CHECK(count_color(l, 255, 160, 20) >= 3);     // tip bead
  CHECK(count_color(l, 175, 175, 175) > 10);    // open gripper
}
