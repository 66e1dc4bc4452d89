#pragma once

#include "fovea/vision/image.hpp"

namespace fovea {

/// Frame sizes for one camera rig: the full frame, the downsampled
/// peripheral view, and the gaze-centered foveal crop.
struct FrameGeom {
  int full_w = 256;
  int full_h = 144;
  int periph_w = 64;
  int periph_h = 36;
  int fovea_w = 28;  // fovea_crop_size(256, 90, 10)
  int fovea_h = 24;  // fovea_crop_size(144, 60, 10)
};

/// Pixel extent of a foveal crop: the fovea_deg slice of a fov_deg field
/// imaged onto full_px pixels, rounded to the nearest pixel (minimum 1).
int fovea_crop_size(int full_px, double fov_deg, double fovea_deg);

/// Six-channel [0,1] peripheral tensor: both frames area-resized to the
/// peripheral size and stacked L.R,L.G,L.B,R.R,R.G,R.B.
Tensor<float> make_peripheral(const Image& left, const Image& right, const FrameGeom& geom);

/// Six-channel [0,1] foveal tensor: per-side crops centered on that side's
/// gaze, stacked in the same channel order.
Tensor<float> make_foveal(const Image& left, const Image& right, GazePoint g_l, GazePoint g_r,
                          const FrameGeom& geom);

}  // namespace fovea
