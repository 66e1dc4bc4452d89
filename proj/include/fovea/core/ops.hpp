#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fovea/core/graph.hpp"
#include "fovea/core/tensor.hpp"

// Differentiable ops as free functions. Each op computes its forward value
// eagerly and, while the graph is recording, attaches a closure that routes
// the output gradient back to every parent that wants one.

namespace fovea::ag {

namespace detail {

template <typename S>
inline void acc(Node<S>& parent, const Tensor<S>& contrib) {
  if (!parent.requires_grad && parent.tape_index < 0 && parent.parents.empty() &&
      !parent.backward_fn)
    return;
  parent.ensure_grad().array() += contrib.array();
}

template <typename S>
inline bool wants_grad(const Var<S>& v) {
  return v->requires_grad;
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::check(a->value.same_shape(b->value),
                "add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor<S> out(a->value.shape());
  out.array() = a->value.array() + b->value.array();
  return a->graph->make(std::move(out), {a, b}, [a, b](Node<S>& self) {
    if (a->requires_grad) a->ensure_grad().array() += self.grad.array();
    if (b->requires_grad) b->ensure_grad().array() += self.grad.array();
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
  Tensor<S> out(a->value.shape());
  out.array() = a->value.array() * c;
  return a->graph->make(std::move(out), {a}, [a, c](Node<S>& self) {
    if (a->requires_grad) a->ensure_grad().array() += self.grad.array() * c;
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::check(a->value.same_shape(b->value),
                "mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
  Tensor<S> out(a->value.shape());
  out.array() = a->value.array() * b->value.array();
  return a->graph->make(std::move(out), {a, b}, [a, b](Node<S>& self) {
    if (a->requires_grad) a->ensure_grad().array() += self.grad.array() * b->value.array();
    if (b->requires_grad) b->ensure_grad().array() += self.grad.array() * a->value.array();
  });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  Tensor<S> out(x->value.shape());
  out.array() = x->value.array().max(S(0));
  return x->graph->make(std::move(out), {x}, [x](Node<S>& self) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad().array();
    // subgradient at exactly 0 is 0
    g += self.grad.array() * (x->value.array() > S(0)).template cast<S>();
  });
}

template <typename S>
Var<S> vtanh(const Var<S>& x) {
  Tensor<S> out(x->value.shape());
  out.array() = x->value.array().tanh();
  Tensor<S> saved = out;
  return x->graph->make(std::move(out), {x}, [x, saved](Node<S>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad().array() += self.grad.array() * (S(1) - saved.array().square());
  });
}

template <typename S>
Var<S> vexp(const Var<S>& x) {
  Tensor<S> out(x->value.shape());
  out.array() = x->value.array().exp();
  Tensor<S> saved = out;
  return x->graph->make(std::move(out), {x}, [x, saved](Node<S>& self) {
    if (!x->requires_grad) return;
    x->ensure_grad().array() += self.grad.array() * saved.array();
  });
}

template <typename S>
Var<S> reshape(const Var<S>& x, std::vector<int> shape) {
  Tensor<S> out = x->value.reshaped(std::move(shape));
  return x->graph->make(std::move(out), {x}, [x](Node<S>& self) {
    if (x->requires_grad) x->ensure_grad().array() += self.grad.array();
  });
}

/// Collapse [N, ...] to [N, rest].
template <typename S>
Var<S> flatten(const Var<S>& x) {
  const int n = x->value.dim(0);
  const long rest = x->value.size() / std::max(1, n);
  return reshape(x, {n, static_cast<int>(rest)});
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, int c0, int c1) {
  detail::check(x->value.rank() == 2, "slice_cols: rank-2 input required");
  const int n = x->value.dim(0), f = x->value.dim(1);
  detail::check(0 <= c0 && c0 < c1 && c1 <= f, "slice_cols: bad range");
  const int w = c1 - c0;
  Tensor<S> out({n, w});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out[static_cast<long>(i) * w + j] = x->value[static_cast<long>(i) * f + c0 + j];
  return x->graph->make(std::move(out), {x}, [x, c0, w, f, n](Node<S>& self) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        g[static_cast<long>(i) * f + c0 + j] += self.grad[static_cast<long>(i) * w + j];
  });
}

template <typename S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
  detail::check(a->value.rank() == 2 && b->value.rank() == 2 && a->value.dim(0) == b->value.dim(0),
                "concat_cols: incompatible shapes " + a->value.shape_str() + " vs " +
                    b->value.shape_str());
  const int n = a->value.dim(0), fa = a->value.dim(1), fb = b->value.dim(1);
  Tensor<S> out({n, fa + fb});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < fa; ++j) out[static_cast<long>(i) * (fa + fb) + j] = a->value[static_cast<long>(i) * fa + j];
    for (int j = 0; j < fb; ++j) out[static_cast<long>(i) * (fa + fb) + fa + j] = b->value[static_cast<long>(i) * fb + j];
  }
  return a->graph->make(std::move(out), {a, b}, [a, b, n, fa, fb](Node<S>& self) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < fa; ++j) g[static_cast<long>(i) * fa + j] += self.grad[static_cast<long>(i) * (fa + fb) + j];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < fb; ++j)
          g[static_cast<long>(i) * fb + j] += self.grad[static_cast<long>(i) * (fa + fb) + fa + j];
    }
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  detail::check(!parts.empty(), "concat_cols: no inputs");
  Var<S> acc = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) acc = concat_cols(acc, parts[i]);
  return acc;
}

template <typename S>
Var<S> concat_cols(std::initializer_list<Var<S>> parts) {
  return concat_cols(std::vector<Var<S>>(parts));
}

// ---------------------------------------------------------------------------
// Affine / convolution
// ---------------------------------------------------------------------------

/// y = x W + b with x:[N,F], W:[F,O], b:[O].
template <typename S>
Var<S> dense(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  detail::check(x->value.rank() == 2 && w->value.rank() == 2,
                "dense: rank-2 operands required, got " + x->value.shape_str() + " and " +
                    w->value.shape_str());
  const int n = x->value.dim(0), f = x->value.dim(1), o = w->value.dim(1);
  detail::check(w->value.dim(0) == f, "dense: inner dims " + x->value.shape_str() + " x " +
                                          w->value.shape_str() + " do not agree");
  detail::check(b->value.size() == o, "dense: bias size != output width");
  Tensor<S> out({n, o});
  out.mat(n, o).noalias() = x->value.mat(n, f) * w->value.mat(f, o);
  out.mat(n, o).rowwise() += b->value.mat(1, o).row(0);
  return x->graph->make(std::move(out), {x, w, b}, [x, w, b, n, f, o](Node<S>& self) {
    auto dy = self.grad.mat(n, o);
    if (x->requires_grad) x->ensure_grad().mat(n, f).noalias() += dy * w->value.mat(f, o).transpose();
    if (w->requires_grad) w->ensure_grad().mat(f, o).noalias() += x->value.mat(n, f).transpose() * dy;
    if (b->requires_grad) b->ensure_grad().mat(1, o) += dy.colwise().sum();
  });
}

namespace detail {

template <typename S>
void im2col(const S* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& col) {
  // col: [c*k*k, oh*ow], one column per output position
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* dst = col.col(static_cast<long>(oy) * ow + ox).data();
      long r = 0;
      for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, ++r) {
            const int ix = ox * stride - pad + kx;
            dst[r] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                         ? x[(static_cast<long>(ci) * h + iy) * w + ix]
                         : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& col, int c, int h, int w,
                int k, int stride, int pad, int oh, int ow, S* dx) {
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const S* src = col.col(static_cast<long>(oy) * ow + ox).data();
      long r = 0;
      for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < k; ++kx, ++r) {
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
              dx[(static_cast<long>(ci) * h + iy) * w + ix] += src[r];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-d convolution, x:[N,C,H,W], kernel:[O,C,k,k], bias:[O]. Zero padding.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias, int stride, int pad) {
  detail::check(x->value.rank() == 4, "conv2d: input must be [N,C,H,W], got " + x->value.shape_str());
  detail::check(kernel->value.rank() == 4,
                "conv2d: kernel must be [O,C,k,k], got " + kernel->value.shape_str());
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const int o = kernel->value.dim(0), kc = kernel->value.dim(1), k = kernel->value.dim(2);
  detail::check(kernel->value.dim(3) == k, "conv2d: kernel must be square");
  detail::check(k % 2 == 1, "conv2d: kernel size must be odd, got " + std::to_string(k));
  detail::check(stride >= 1, "conv2d: stride must be >= 1");
  detail::check(kc == c, "conv2d: kernel channels " + std::to_string(kc) +
                             " != input channels " + std::to_string(c) + " (input " +
                             x->value.shape_str() + ", kernel " + kernel->value.shape_str() + ")");
  detail::check(bias->value.size() == o, "conv2d: bias size != out channels");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  detail::check(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input (input " +
                                        x->value.shape_str() + ", kernel " +
                                        kernel->value.shape_str() + ")");

  const long patch = static_cast<long>(c) * k * k;
  Tensor<S> out({n, o, oh, ow});
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> col(patch, static_cast<long>(oh) * ow);
  auto kmat = kernel->value.mat(o, patch);  // row-major [O, C*k*k]
  for (int ni = 0; ni < n; ++ni) {
    detail::im2col(x->value.data() + static_cast<long>(ni) * c * h * w, c, h, w, k, stride, pad, oh,
                   ow, col);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> y(
        out.data() + static_cast<long>(ni) * o * oh * ow, o, static_cast<long>(oh) * ow);
    y.noalias() = kmat * col;
    for (int oi = 0; oi < o; ++oi) y.row(oi).array() += bias->value[oi];
  }

  return x->graph->make(
      std::move(out), {x, kernel, bias},
      [x, kernel, bias, n, c, h, w, o, k, stride, pad, oh, ow, patch](Node<S>& self) {
        Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> col(patch, static_cast<long>(oh) * ow);
        Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> dcol(patch, static_cast<long>(oh) * ow);
        auto kmat = kernel->value.mat(o, patch);
        for (int ni = 0; ni < n; ++ni) {
          Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dy(
              self.grad.data() + static_cast<long>(ni) * o * oh * ow, o,
              static_cast<long>(oh) * ow);
          if (kernel->requires_grad || x->requires_grad)
            detail::im2col(x->value.data() + static_cast<long>(ni) * c * h * w, c, h, w, k, stride,
                           pad, oh, ow, col);
          if (kernel->requires_grad)
            kernel->ensure_grad().mat(o, patch).noalias() += dy * col.transpose();
          if (x->requires_grad) {
            dcol.noalias() = kmat.transpose() * dy;
            detail::col2im_add(dcol, c, h, w, k, stride, pad, oh, ow,
                               x->ensure_grad().data() + static_cast<long>(ni) * c * h * w);
          }
          if (bias->requires_grad) {
            auto& bg = bias->ensure_grad();
            for (int oi = 0; oi < o; ++oi) bg[oi] += dy.row(oi).sum();
          }
        }
      });
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are replicate-
/// padded. Gradient goes to the first argmax in row-major window order.
template <typename S>
Var<S> maxpool2(const Var<S>& x) {
  detail::check(x->value.rank() == 4, "maxpool2: input must be [N,C,H,W]");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<S> out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<long>>(static_cast<size_t>(out.size()));
  long oidx = 0;
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const S* plane = x->value.data() + (static_cast<long>(ni) * c + ci) * h * w;
      const long base = (static_cast<long>(ni) * c + ci) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oidx) {
          S best{};
          long besti = -1;
          for (int dy = 0; dy < 2; ++dy) {
            const int iy = std::min(oy * 2 + dy, h - 1);  // replicate pad
            for (int dx = 0; dx < 2; ++dx) {
              const int ix = std::min(ox * 2 + dx, w - 1);
              const long fi = static_cast<long>(iy) * w + ix;
              const S v = plane[fi];
              if (besti < 0 || v > best) {
                best = v;
                besti = fi;
              }
            }
          }
          out[oidx] = best;
          (*argmax)[static_cast<size_t>(oidx)] = base + besti;
        }
      }
    }
  }
  return x->graph->make(std::move(out), {x}, [x, argmax](Node<S>& self) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (long i = 0; i < self.grad.size(); ++i) g[(*argmax)[static_cast<size_t>(i)]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Batch normalization (1-d, over features of [N,F])
// ---------------------------------------------------------------------------

template <typename S>
struct BatchNormState {
  Tensor<S> running_mean;  // [F]
  Tensor<S> running_var;   // [F], biased
  bool initialized = false;
};

template <typename S>
Var<S> batchnorm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                 BatchNormState<S>& state, S momentum = S(0.1), S eps = S(1e-5)) {
  detail::check(x->value.rank() == 2, "batchnorm: input must be [N,F]");
  const int n = x->value.dim(0), f = x->value.dim(1);
  detail::check(gamma->value.size() == f && beta->value.size() == f,
                "batchnorm: gamma/beta size != feature count");
  Graph<S>& g = *x->graph;

  if (!state.initialized) {
    state.running_mean = Tensor<S>({f});
    state.running_var = Tensor<S>({f}, S(1));
    state.initialized = true;
  }

  Tensor<S> mean({f}), var({f});
  if (g.mode == Mode::kTrain) {
    detail::check(n >= 2, "batchnorm: train mode needs batch size >= 2, got " + std::to_string(n));
    auto xm = x->value.mat(n, f);
    mean.mat(1, f) = xm.colwise().mean();
    for (int j = 0; j < f; ++j) {
      S acc = 0;
      for (int i = 0; i < n; ++i) {
        const S d = xm(i, j) - mean[j];
        acc += d * d;
      }
      var[j] = acc / S(n);  // biased
    }
    state.running_mean.array() = (S(1) - momentum) * state.running_mean.array() + momentum * mean.array();
    state.running_var.array() = (S(1) - momentum) * state.running_var.array() + momentum * var.array();
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor<S> xhat({n, f}), out({n, f});
  Tensor<S> istd({f});
  for (int j = 0; j < f; ++j) istd[j] = S(1) / std::sqrt(var[j] + eps);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) {
      const long o = static_cast<long>(i) * f + j;
      xhat[o] = (x->value[o] - mean[j]) * istd[j];
      out[o] = gamma->value[j] * xhat[o] + beta->value[j];
    }

  const bool train = g.mode == Mode::kTrain;
  auto xhat_p = std::make_shared<Tensor<S>>(std::move(xhat));
  auto istd_p = std::make_shared<Tensor<S>>(std::move(istd));
  return g.make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat_p, istd_p, n, f, train](Node<S>& self) {
                  const Tensor<S>& xh = *xhat_p;
                  if (gamma->requires_grad) {
                    auto& gg = gamma->ensure_grad();
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < f; ++j) gg[j] += self.grad[static_cast<long>(i) * f + j] * xh[static_cast<long>(i) * f + j];
                  }
                  if (beta->requires_grad) {
                    auto& bg = beta->ensure_grad();
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < f; ++j) bg[j] += self.grad[static_cast<long>(i) * f + j];
                  }
                  if (!x->requires_grad) return;
                  auto& xg = x->ensure_grad();
                  if (!train) {
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < f; ++j) {
                        const long o = static_cast<long>(i) * f + j;
                        xg[o] += self.grad[o] * gamma->value[j] * (*istd_p)[j];
                      }
                    return;
                  }
                  // train mode: gradient through the batch statistics
                  for (int j = 0; j < f; ++j) {
                    S sum_dy = 0, sum_dy_xh = 0;
                    for (int i = 0; i < n; ++i) {
                      const long o = static_cast<long>(i) * f + j;
                      sum_dy += self.grad[o];
                      sum_dy_xh += self.grad[o] * xh[o];
                    }
                    const S m_dy = sum_dy / S(n), m_dy_xh = sum_dy_xh / S(n);
                    const S gi = gamma->value[j] * (*istd_p)[j];
                    for (int i = 0; i < n; ++i) {
                      const long o = static_cast<long>(i) * f + j;
                      xg[o] += gi * (self.grad[o] - m_dy - xh[o] * m_dy_xh);
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Spatial softmax
// ---------------------------------------------------------------------------

/// Per-channel softmax over the H*W grid followed by the expected (x, y)
/// coordinate in [-1,1]^2. Output [N, 2C], channel c at columns (2c, 2c+1).
template <typename S>
Var<S> spatial_softmax(const Var<S>& x) {
  detail::check(x->value.rank() == 4, "spatial_softmax: input must be [N,C,H,W]");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  detail::check(h >= 1 && w >= 1, "spatial_softmax: empty grid");
  const long hw = static_cast<long>(h) * w;
  Tensor<S> out({n, 2 * c});
  auto soft = std::make_shared<Tensor<S>>(std::vector<int>{n, c, h, w});
  auto xcoord = [w](int ix) { return w > 1 ? S(2) * ix / S(w - 1) - S(1) : S(0); };
  auto ycoord = [h](int iy) { return h > 1 ? S(2) * iy / S(h - 1) - S(1) : S(0); };
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const S* plane = x->value.data() + (static_cast<long>(ni) * c + ci) * hw;
      S* sp = soft->data() + (static_cast<long>(ni) * c + ci) * hw;
      S mx = plane[0];
      for (long i = 1; i < hw; ++i) mx = std::max(mx, plane[i]);
      S denom = 0;
      for (long i = 0; i < hw; ++i) {
        sp[i] = std::exp(plane[i] - mx);
        denom += sp[i];
      }
      S ex = 0, ey = 0;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const S s = sp[static_cast<long>(iy) * w + ix] / denom;
          sp[static_cast<long>(iy) * w + ix] = s;
          ex += s * xcoord(ix);
          ey += s * ycoord(iy);
        }
      out[static_cast<long>(ni) * 2 * c + 2 * ci] = ex;
      out[static_cast<long>(ni) * 2 * c + 2 * ci + 1] = ey;
    }
  }
  return x->graph->make(std::move(out), {x}, [x, soft, n, c, h, w, hw](Node<S>& self) {
    if (!x->requires_grad) return;
    auto xco = [w](int ix) { return w > 1 ? S(2) * ix / S(w - 1) - S(1) : S(0); };
    auto yco = [h](int iy) { return h > 1 ? S(2) * iy / S(h - 1) - S(1) : S(0); };
    auto& g = x->ensure_grad();
    for (int ni = 0; ni < n; ++ni) {
      for (int ci = 0; ci < c; ++ci) {
        const S* sp = soft->data() + (static_cast<long>(ni) * c + ci) * hw;
        S* gp = g.data() + (static_cast<long>(ni) * c + ci) * hw;
        const S ex = self.value[static_cast<long>(ni) * 2 * c + 2 * ci];
        const S ey = self.value[static_cast<long>(ni) * 2 * c + 2 * ci + 1];
        const S dox = self.grad[static_cast<long>(ni) * 2 * c + 2 * ci];
        const S doy = self.grad[static_cast<long>(ni) * 2 * c + 2 * ci + 1];
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) {
            const long i = static_cast<long>(iy) * w + ix;
            gp[i] += sp[i] * (dox * (xco(ix) - ex) + doy * (yco(iy) - ey));
          }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Row softmax (used for mixture weights)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> softmax_rows(const Var<S>& x) {
  detail::check(x->value.rank() == 2, "softmax_rows: input must be [N,K]");
  const int n = x->value.dim(0), k = x->value.dim(1);
  Tensor<S> out({n, k});
  for (int i = 0; i < n; ++i) {
    const S* row = x->value.data() + static_cast<long>(i) * k;
    S* orow = out.data() + static_cast<long>(i) * k;
    S mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S denom = 0;
    for (int j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < k; ++j) orow[j] /= denom;
  }
  Tensor<S> saved = out;
  return x->graph->make(std::move(out), {x}, [x, saved, n, k](Node<S>& self) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const S* s = saved.data() + static_cast<long>(i) * k;
      const S* dy = self.grad.data() + static_cast<long>(i) * k;
      S dot = 0;
      for (int j = 0; j < k; ++j) dot += dy[j] * s[j];
      for (int j = 0; j < k; ++j) g[static_cast<long>(i) * k + j] += s[j] * (dy[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Negative log likelihood of a bivariate Gaussian mixture, averaged over
/// the batch. Layouts: weights [N,K]; means/sigmas [N,2K] with the x
/// component at column k and the y component at column K+k; rhos [N,K];
/// target [N,2]. Evaluated in log space.
template <typename S>
Var<S> mdn_nll(const Var<S>& weights, const Var<S>& means, const Var<S>& sigmas,
               const Var<S>& rhos, const Var<S>& target) {
  detail::check(weights->value.rank() == 2, "mdn_nll: weights must be [N,K]");
  const int n = weights->value.dim(0), k = weights->value.dim(1);
  detail::check(means->value.rank() == 2 && means->value.dim(0) == n && means->value.dim(1) == 2 * k,
                "mdn_nll: means must be [N,2K]");
  detail::check(sigmas->value.same_shape(means->value), "mdn_nll: sigmas must be [N,2K]");
  detail::check(rhos->value.same_shape(weights->value), "mdn_nll: rhos must be [N,K]");
  detail::check(target->value.rank() == 2 && target->value.dim(0) == n && target->value.dim(1) == 2,
                "mdn_nll: target must be [N,2]");
  constexpr double kLog2Pi = 1.8378770664093454836;
  for (int i = 0; i < n; ++i) {
    S sum = 0;
    for (int j = 0; j < k; ++j) sum += weights->value[static_cast<long>(i) * k + j];
    detail::check(std::abs(static_cast<double>(sum) - 1.0) <= 1e-6,
                  "mdn_nll: mixture weights must sum to 1");
    for (int j = 0; j < k; ++j) {
      detail::check(sigmas->value[static_cast<long>(i) * 2 * k + j] > S(0) &&
                        sigmas->value[static_cast<long>(i) * 2 * k + k + j] > S(0),
                    "mdn_nll: sigma must be positive");
      detail::check(std::abs(static_cast<double>(rhos->value[static_cast<long>(i) * k + j])) < 1.0,
                    "mdn_nll: |rho| must be < 1");
    }
  }

  auto post = std::make_shared<Tensor<S>>(std::vector<int>{n, k});  // responsibilities
  S total = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<S> lk(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
      const S wv = weights->value[static_cast<long>(i) * k + j];
      const S mx = means->value[static_cast<long>(i) * 2 * k + j];
      const S my = means->value[static_cast<long>(i) * 2 * k + k + j];
      const S sx = sigmas->value[static_cast<long>(i) * 2 * k + j];
      const S sy = sigmas->value[static_cast<long>(i) * 2 * k + k + j];
      const S r = rhos->value[static_cast<long>(i) * k + j];
      const S u = (target->value[static_cast<long>(i) * 2] - mx) / sx;
      const S v = (target->value[static_cast<long>(i) * 2 + 1] - my) / sy;
      const S q = S(1) - r * r;
      const S z = u * u - S(2) * r * u * v + v * v;
      lk[static_cast<size_t>(j)] = std::log(wv) - S(kLog2Pi) - std::log(sx) - std::log(sy) -
                                   S(0.5) * std::log(q) - z / (S(2) * q);
    }
    S mx = lk[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, lk[static_cast<size_t>(j)]);
    S denom = 0;
    for (int j = 0; j < k; ++j) denom += std::exp(lk[static_cast<size_t>(j)] - mx);
    const S lse = mx + std::log(denom);
    for (int j = 0; j < k; ++j)
      (*post)[static_cast<long>(i) * k + j] = std::exp(lk[static_cast<size_t>(j)] - lse);
    total += -lse;
  }
  Tensor<S> out({1});
  out[0] = total / S(n);

  return weights->graph->make(
      std::move(out), {weights, means, sigmas, rhos, target},
      [weights, means, sigmas, rhos, target, post, n, k](Node<S>& self) {
        const S gscale = self.grad[0] / S(n);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < k; ++j) {
            const S r_post = (*post)[static_cast<long>(i) * k + j];
            const S wv = weights->value[static_cast<long>(i) * k + j];
            const S mx = means->value[static_cast<long>(i) * 2 * k + j];
            const S my = means->value[static_cast<long>(i) * 2 * k + k + j];
            const S sx = sigmas->value[static_cast<long>(i) * 2 * k + j];
            const S sy = sigmas->value[static_cast<long>(i) * 2 * k + k + j];
            const S r = rhos->value[static_cast<long>(i) * k + j];
            const S u = (target->value[static_cast<long>(i) * 2] - mx) / sx;
            const S v = (target->value[static_cast<long>(i) * 2 + 1] - my) / sy;
            const S q = S(1) - r * r;
            const S z = u * u - S(2) * r * u * v + v * v;
            // dNLL/dtheta = -r_post * dlogN/dtheta
            if (weights->requires_grad)
              weights->ensure_grad()[static_cast<long>(i) * k + j] += gscale * (-r_post / wv);
            if (means->requires_grad) {
              means->ensure_grad()[static_cast<long>(i) * 2 * k + j] +=
                  gscale * (-r_post * (u - r * v) / (q * sx));
              means->ensure_grad()[static_cast<long>(i) * 2 * k + k + j] +=
                  gscale * (-r_post * (v - r * u) / (q * sy));
            }
            if (sigmas->requires_grad) {
              sigmas->ensure_grad()[static_cast<long>(i) * 2 * k + j] +=
                  gscale * (-r_post * (-S(1) / sx + u * (u - r * v) / (q * sx)));
              sigmas->ensure_grad()[static_cast<long>(i) * 2 * k + k + j] +=
                  gscale * (-r_post * (-S(1) / sy + v * (v - r * u) / (q * sy)));
            }
            if (rhos->requires_grad) {
              const S dlogn_drho = r / q - (r * z - u * v * q) / (q * q);
              rhos->ensure_grad()[static_cast<long>(i) * k + j] += gscale * (-r_post * dlogn_drho);
            }
          }
        }
      });
}

/// Mean cross entropy with integer class labels; logits [N,C].
template <typename S>
Var<S> softmax_xent(const Var<S>& logits, const std::vector<int>& labels) {
  detail::check(logits->value.rank() == 2, "softmax_xent: logits must be [N,C]");
  const int n = logits->value.dim(0), c = logits->value.dim(1);
  detail::check(static_cast<int>(labels.size()) == n, "softmax_xent: label count != batch size");
  for (int lb : labels) detail::check(lb >= 0 && lb < c, "softmax_xent: label out of range");
  auto soft = std::make_shared<Tensor<S>>(std::vector<int>{n, c});
  S total = 0;
  for (int i = 0; i < n; ++i) {
    const S* row = logits->value.data() + static_cast<long>(i) * c;
    S mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S denom = 0;
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const S lse = mx + std::log(denom);
    for (int j = 0; j < c; ++j) (*soft)[static_cast<long>(i) * c + j] = std::exp(row[j] - lse);
    total += lse - row[labels[static_cast<size_t>(i)]];
  }
  Tensor<S> out({1});
  out[0] = total / S(n);
  auto labels_p = std::make_shared<std::vector<int>>(labels);
  return logits->graph->make(std::move(out), {logits}, [logits, soft, labels_p, n, c](Node<S>& self) {
    if (!logits->requires_grad) return;
    const S gscale = self.grad[0] / S(n);
    auto& g = logits->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        S d = (*soft)[static_cast<long>(i) * c + j];
        if (j == (*labels_p)[static_cast<size_t>(i)]) d -= S(1);
        g[static_cast<long>(i) * c + j] += gscale * d;
      }
  });
}

/// Sum of L1 and squared L2 error over the last axis, averaged over rows.
template <typename S>
Var<S> l1l2_loss(const Var<S>& pred, const Var<S>& target) {
  detail::check(pred->value.same_shape(target->value), "l1l2_loss: shape mismatch");
  const int n = pred->value.dim(0);
  S total = 0;
  for (long i = 0; i < pred->value.size(); ++i) {
    const S e = pred->value[i] - target->value[i];
    total += std::abs(e) + e * e;
  }
  Tensor<S> out({1});
  out[0] = total / S(n);
  return pred->graph->make(std::move(out), {pred, target}, [pred, target, n](Node<S>& self) {
    if (!pred->requires_grad) return;
    const S gscale = self.grad[0] / S(n);
    auto& g = pred->ensure_grad();
    for (long i = 0; i < pred->value.size(); ++i) {
      const S e = pred->value[i] - target->value[i];
      const S sgn = e > S(0) ? S(1) : (e < S(0) ? S(-1) : S(0));
      g[i] += gscale * (sgn + S(2) * e);
    }
  });
}

template <typename S>
Var<S> mse_loss(const Var<S>& pred, const Var<S>& target) {
  detail::check(pred->value.same_shape(target->value), "mse_loss: shape mismatch");
  const int n = pred->value.dim(0);
  S total = 0;
  for (long i = 0; i < pred->value.size(); ++i) {
    const S e = pred->value[i] - target->value[i];
    total += e * e;
  }
  Tensor<S> out({1});
  out[0] = total / S(n);
  return pred->graph->make(std::move(out), {pred, target}, [pred, target, n](Node<S>& self) {
    if (!pred->requires_grad) return;
    const S gscale = self.grad[0] / S(n);
    auto& g = pred->ensure_grad();
    for (long i = 0; i < pred->value.size(); ++i)
      g[i] += gscale * S(2) * (pred->value[i] - target->value[i]);
  });
}

}  // namespace fovea::ag
