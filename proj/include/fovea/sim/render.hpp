#pragma once

#include <Eigen/Dense>

#include "fovea/sim/world.hpp"
#include "fovea/vision/image.hpp"

namespace fovea::sim {

enum class Side { kLeft, kRight };

/// Orthographic top-down stereo pair. Horizontal parallax grows linearly with
/// height above the table and vanishes at table level, so the left/right views
/// of a flat scene are pixel-identical and only lifted objects separate.
struct CameraModel {
  int width = 256;
  int height = 144;
  double cx = 128.0;
  double cy = 110.0;
  double scale = 900.0;      // pixels per meter
  double baseline = 0.24;    // meters between the two views
  double cam_height = 0.30;  // meters above the table
};

struct Pixel {
  double u = 0;
  double v = 0;
};

Pixel project(const Eigen::Vector3d& p, const CameraModel& cam, Side side);

void render(const WorldState& s, const CameraModel& cam, Side side, Image& out);
void render_stereo(const WorldState& s, const CameraModel& cam, Image& left, Image& right);

}  // namespace fovea::sim
