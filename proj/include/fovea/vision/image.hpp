#pragma once

#include <cstdint>
#include <vector>

#include "fovea/core/tensor.hpp"

namespace fovea {

/// Interleaved row-major 8-bit RGB frame.
struct Image {
  int w = 0;
  int h = 0;
  std::vector<std::uint8_t> px;  // h * w * 3

  Image() = default;
  Image(int w_, int h_) : w(w_), h(h_), px(static_cast<size_t>(w_) * h_ * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }

  void fill(std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  bool inside(int x, int y) const { return x >= 0 && x < w && y >= 0 && y < h; }
};

/// Gaze location in full-frame pixel coordinates.
struct GazePoint {
  double x = 0;
  double y = 0;
};

/// Exact w x h window whose center is as close to `center` as the frame
/// border allows (the window is clamped, never padded).
Image crop_at(const Image& src, GazePoint center, int w, int h);

/// Top-left corner the clamped crop window would use.
std::pair<int, int> crop_origin(const Image& src, GazePoint center, int w, int h);

/// Box-filter (area average) downsample. Output dims must divide into the
/// input dims or not; fractional boxes are handled by pixel-weight overlap.
Image resize_area(const Image& src, int out_w, int out_h);

/// Pack two same-sized frames as [6, h, w] floats in [0,1], channel order
/// L.R, L.G, L.B, R.R, R.G, R.B.
Tensor<float> pack_stereo_chw(const Image& left, const Image& right);

}  // namespace fovea
