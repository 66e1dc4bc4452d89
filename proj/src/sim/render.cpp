#include "fovea/sim/render.hpp"

#include <algorithm>
#include <cmath>

namespace fovea::sim {

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr Rgb kTable{46, 46, 42};
constexpr Rgb kBlock{70, 70, 160};
constexpr Rgb kRing{235, 235, 240};
constexpr Rgb kTick{205, 205, 215};
constexpr Rgb kThread{205, 60, 40};
constexpr Rgb kBead{255, 160, 20};
constexpr Rgb kFingerOpen{175, 175, 175};
constexpr Rgb kFingerClosed{150, 150, 160};
constexpr Rgb kBolt{195, 195, 60};

void put(Image& im, int u, int v, Rgb c) {
  if (!im.inside(u, v)) return;
  im.set(u, v, c.r, c.g, c.b);
}

void dot(Image& im, const Pixel& p, Rgb c) {
  put(im, static_cast<int>(std::lround(p.u)), static_cast<int>(std::lround(p.v)), c);
}

/// Axis-aligned world rectangle at a single height; orthographic projection
/// keeps it a rectangle in the image.
void fill_rect(Image& im, const CameraModel& cam, Side side, double wx, double wy, double hx,
               double hy, double z, Rgb c) {
  const Pixel ctr = project({wx, wy, z}, cam, side);
  const int u0 = static_cast<int>(std::lround(ctr.u - cam.scale * hx));
  const int u1 = static_cast<int>(std::lround(ctr.u + cam.scale * hx));
  const int v0 = static_cast<int>(std::lround(ctr.v - cam.scale * hy));
  const int v1 = static_cast<int>(std::lround(ctr.v + cam.scale * hy));
  for (int v = std::max(0, v0); v <= std::min(im.h - 1, v1); ++v)
    for (int u = std::max(0, u0); u <= std::min(im.w - 1, u1); ++u) put(im, u, v, c);
}

void draw_segment(Image& im, const CameraModel& cam, Side side, const Eigen::Vector3d& a,
                  const Eigen::Vector3d& b, Rgb c) {
  const Pixel pa = project(a, cam, side);
  const Pixel pb = project(b, cam, side);
  const double len = std::hypot(pb.u - pa.u, pb.v - pa.v);
  const int n = std::max(1, static_cast<int>(std::ceil(len * 2)));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    dot(im, project(a * (1 - t) + b * t, cam, side), c);
  }
}

}  // namespace

Pixel project(const Eigen::Vector3d& p, const CameraModel& cam, Side side) {
  const double sign = side == Side::kLeft ? 1.0 : -1.0;
  const double shift = sign * 0.5 * cam.baseline * p.z() / cam.cam_height;
  return {cam.cx + cam.scale * (p.x() + shift), cam.cy - cam.scale * p.y()};
}

void render(const WorldState& s, const CameraModel& cam, Side side, Image& out) {
  out = Image(cam.width, cam.height);
  out.fill(kTable.r, kTable.g, kTable.b);

  if (s.task == Task::kBolt) {
    fill_rect(out, cam, side, s.bolt.x(), s.bolt.y(), 0.004, 0.004, s.bolt.z(), kBolt);
  } else {
    const Eigen::Vector3d& e = s.eye.center;
    const double block_top = e.z() - s.eye.radius - 0.004;
    fill_rect(out, cam, side, e.x(), e.y(), 0.007, 0.005, block_top, kBlock);
    // eye ring lives in the x-z plane; every sample carries its own parallax.
    // Seen from above it collapses to a short bar, so draw it two rows tall.
    for (int k = 0; k < 72; ++k) {
      const double th = 2 * 3.14159265358979323846 * k / 72;
      const Pixel p = project(
          {e.x() + s.eye.radius * std::cos(th), e.y(), e.z() + s.eye.radius * std::sin(th)}, cam,
          side);
      dot(out, p, kRing);
      dot(out, {p.u, p.v - 1}, kRing);
    }
    for (double dz = s.eye.radius; dz <= s.eye.radius + 0.004; dz += 0.0005)
      dot(out, project({e.x(), e.y(), e.z() + dz}, cam, side), kTick);
  }

  for (size_t i = 1; i < s.thread.size(); ++i)
    draw_segment(out, cam, side, s.thread[i - 1], s.thread[i], kThread);
  if (!s.thread.empty()) {
    const Pixel tip = project(s.thread[0], cam, side);
    const int u = static_cast<int>(std::lround(tip.u));
    const int v = static_cast<int>(std::lround(tip.v));
    for (int dv = 0; dv <= 1; ++dv)
      for (int du = 0; du <= 1; ++du) put(out, u + du, v + dv, kBead);
  }

  const Rgb finger = s.gripper == Gripper::kOpen ? kFingerOpen : kFingerClosed;
  const double gap = s.gripper == Gripper::kOpen ? 0.0045 : 0.00225;
  const Eigen::Vector3d fwd = tip_forward(s.eef.yaw);
  const Eigen::Vector3d lat(fwd.y(), -fwd.x(), 0.0);
  for (double sgn : {-1.0, 1.0}) {
    const Eigen::Vector3d c0 = s.eef.pos + lat * (sgn * gap);
    draw_segment(out, cam, side, c0 - fwd * 0.003, c0 + fwd * 0.003, finger);
    draw_segment(out, cam, side, c0 - fwd * 0.003 + lat * (sgn * 0.001),
                 c0 + fwd * 0.003 + lat * (sgn * 0.001), finger);
  }
}

void render_stereo(const WorldState& s, const CameraModel& cam, Image& left, Image& right) {
  render(s, cam, Side::kLeft, left);
  render(s, cam, Side::kRight, right);
}

}  // namespace fovea::sim
