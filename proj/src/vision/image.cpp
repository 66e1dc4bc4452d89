#include "fovea/vision/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fovea {

void Image::fill(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (size_t i = 0; i < px.size(); i += 3) {
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }
}

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (!inside(x, y)) return;
  auto* p = &px[(static_cast<size_t>(y) * w + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

std::pair<int, int> crop_origin(const Image& src, GazePoint center, int w, int h) {
  if (w > src.w || h > src.h)
    throw std::invalid_argument("crop_at: " + std::to_string(w) + "x" + std::to_string(h) +
                                " crop exceeds " + std::to_string(src.w) + "x" +
                                std::to_string(src.h) + " frame");
  if (w < 1 || h < 1) throw std::invalid_argument("crop_at: empty crop");
  int x0 = static_cast<int>(std::lround(center.x)) - w / 2;
  int y0 = static_cast<int>(std::lround(center.y)) - h / 2;
  x0 = std::clamp(x0, 0, src.w - w);
  y0 = std::clamp(y0, 0, src.h - h);
  return {x0, y0};
}

Image crop_at(const Image& src, GazePoint center, int w, int h) {
  const auto [x0, y0] = crop_origin(src, center, w, h);
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* srow = &src.px[((static_cast<size_t>(y0) + y) * src.w + x0) * 3];
    std::uint8_t* drow = &out.px[static_cast<size_t>(y) * w * 3];
    std::copy(srow, srow + static_cast<size_t>(w) * 3, drow);
  }
  return out;
}

Image resize_area(const Image& src, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("resize_area: empty output");
  Image out(out_w, out_h);
  const double sx = static_cast<double>(src.w) / out_w;
  const double sy = static_cast<double>(src.h) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc[3] = {0, 0, 0};
      double area = 0;
      for (int iy = static_cast<int>(y0); iy < static_cast<int>(std::ceil(y1)); ++iy) {
        const double wy = std::min<double>(y1, iy + 1) - std::max<double>(y0, iy);
        for (int ix = static_cast<int>(x0); ix < static_cast<int>(std::ceil(x1)); ++ix) {
          const double wx = std::min<double>(x1, ix + 1) - std::max<double>(x0, ix);
          const double wgt = wx * wy;
          for (int c = 0; c < 3; ++c) acc[c] += wgt * src.at(std::min(ix, src.w - 1), std::min(iy, src.h - 1), c);
          area += wgt;
        }
      }
      for (int c = 0; c < 3; ++c)
        out.at(ox, oy, c) = static_cast<std::uint8_t>(std::lround(acc[c] / area));
    }
  }
  return out;
}

Tensor<float> pack_stereo_chw(const Image& left, const Image& right) {
  if (left.w != right.w || left.h != right.h)
    throw std::invalid_argument("pack_stereo_chw: frame size mismatch");
  const int w = left.w, h = left.h;
  Tensor<float> out({6, h, w});
  const float k = 1.0f / 255.0f;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out[(static_cast<long>(c) * h + y) * w + x] = k * left.at(x, y, c);
        out[((static_cast<long>(c) + 3) * h + y) * w + x] = k * right.at(x, y, c);
      }
  return out;
}

}  // namespace fovea
