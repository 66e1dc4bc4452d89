#include "fovea/vision/foveation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fovea {

int fovea_crop_size(int full_px, double fov_deg, double fovea_deg) {
  if (full_px <= 0 || fov_deg <= 0 || fovea_deg <= 0)
    throw std::invalid_argument("fovea_crop_size: non-positive input");
  if (fovea_deg > fov_deg)
    throw std::invalid_argument("fovea_crop_size: fovea " + std::to_string(fovea_deg) +
                                " deg exceeds field " + std::to_string(fov_deg) + " deg");
  const long px = std::lround(full_px * fovea_deg / fov_deg);
  return static_cast<int>(std::max(1L, px));
}

Tensor<float> make_peripheral(const Image& left, const Image& right, const FrameGeom& geom) {
  return pack_stereo_chw(resize_area(left, geom.periph_w, geom.periph_h),
                         resize_area(right, geom.periph_w, geom.periph_h));
}

Tensor<float> make_foveal(const Image& left, const Image& right, GazePoint g_l, GazePoint g_r,
                          const FrameGeom& geom) {
  return pack_stereo_chw(crop_at(left, g_l, geom.fovea_w, geom.fovea_h),
                         crop_at(right, g_r, geom.fovea_w, geom.fovea_h));
}

}  // namespace fovea
