#include "fovea/models/arch.hpp"

#include <cmath>
#include <stdexcept>

namespace fovea::models {

namespace {

int conv_out(int in, int k, int stride) { return (in + 2 - k) / stride + 1; }  // pad 1

Tensor<float> he_normal(const std::vector<int>& shape, long fan_in, Rng& rng) {
  Tensor<float> t(shape);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal(0.0, sd));
  return t;
}

/// (x - mean_c) / std_c over the channel axis of [N,6,H,W].
Tensor<float> channel_normalize(const Tensor<float>& x, const Tensor<float>& mean,
                                const Tensor<float>& std) {
  Tensor<float> out = x;
  const int n = x.dim(0), c = x.dim(1);
  const long hw = static_cast<long>(x.dim(2)) * x.dim(3);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      float* p = out.data() + (static_cast<long>(ni) * c + ci) * hw;
      const float m = mean[ci], s = std[ci];
      for (long i = 0; i < hw; ++i) p[i] = (p[i] - m) / s;
    }
  return out;
}

}  // namespace

std::vector<ConvShape> periph_plan(const ArchConfig& arch, int h, int w) {
  std::vector<ConvShape> plan;
  int c = 6;
  for (size_t i = 0; i < arch.periph_channels.size(); ++i) {
    const int s = arch.periph_strides[i];
    ConvShape cs{c, h, w, arch.periph_channels[i], conv_out(h, 3, s), conv_out(w, 3, s), 3, s};
    plan.push_back(cs);
    c = cs.out_c;
    h = cs.out_h;
    w = cs.out_w;
  }
  return plan;
}

std::vector<ConvShape> foveal_plan(const ArchConfig& arch, int h, int w) {
  std::vector<ConvShape> plan;
  int c = 6;
  for (int ch : arch.foveal_channels) {
    ConvShape cs{c, h, w, ch, h, w, 3, 1};
    plan.push_back(cs);
    c = ch;
    h = (h + 1) / 2;  // maxpool2 follows each block
    w = (w + 1) / 2;
  }
  return plan;
}

int periph_feature_dim(const ArchConfig& arch, int h, int w) {
  auto plan = periph_plan(arch, h, w);
  const ConvShape& last = plan.back();
  if (arch.periph_spatial_softmax) return 2 * last.out_c;
  return last.out_c * last.out_h * last.out_w;
}

int foveal_feature_dim(const ArchConfig& arch, int h, int w) {
  for (size_t i = 0; i < arch.foveal_channels.size(); ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return arch.foveal_channels.back() * h * w;
}

void validate_arch(const ArchConfig& arch, int periph_h, int periph_w, int foveal_h,
                   int foveal_w) {
  if (arch.periph_channels.empty() || arch.foveal_channels.empty())
    throw std::invalid_argument("arch: encoder needs at least one conv layer");
  for (int c : arch.periph_channels)
    if (c <= 0) throw std::invalid_argument("arch: zero-channel peripheral conv layer");
  for (int c : arch.foveal_channels)
    if (c <= 0) throw std::invalid_argument("arch: zero-channel foveal conv block");
  if (arch.periph_strides.size() != arch.periph_channels.size())
    throw std::invalid_argument("arch: peripheral stride count != conv layer count");
  for (int s : arch.periph_strides)
    if (s < 1) throw std::invalid_argument("arch: conv stride must be >= 1");
  if (arch.fc_width <= 0) throw std::invalid_argument("arch: fc_width must be positive");
  if (arch.fc_depth_action < 1 || arch.fc_depth_other < 1)
    throw std::invalid_argument("arch: fc_depth must be >= 1");
  if (arch.mdn_k < 1) throw std::invalid_argument("arch: mdn_k must be >= 1");
  if (periph_h < 1 || periph_w < 1 || foveal_h < 1 || foveal_w < 1)
    throw std::invalid_argument("arch: image dims must be positive");
  if (arch.periph_spatial_softmax) {
    auto plan = periph_plan(arch, periph_h, periph_w);
    const ConvShape& last = plan.back();
    if (last.out_h < 2 || last.out_w < 2)
      throw std::invalid_argument(
          "arch: geometry mismatch, spatial softmax needs a final grid of at least 2x2, got " +
          std::to_string(last.out_h) + "x" + std::to_string(last.out_w) + " from peripheral " +
          std::to_string(periph_h) + "x" + std::to_string(periph_w));
  }
}

MdnParams mdn_side(const ag::Var<float>& raw, int k, int side) {
  const int base = side * 6 * k;
  MdnParams p;
  p.weights = ag::softmax_rows(ag::slice_cols(raw, base, base + k));
  p.means = ag::slice_cols(raw, base + k, base + 3 * k);
  auto log_sigma = ag::slice_cols(raw, base + 3 * k, base + 5 * k);
  auto sigma = ag::vexp(log_sigma);
  Tensor<float> eps(sigma->value.shape(), 1e-6f);
  p.sigmas = ag::add(sigma, raw->graph->constant(std::move(eps)));
  p.rhos = ag::scale(ag::vtanh(ag::slice_cols(raw, base + 5 * k, base + 6 * k)), 0.99f);
  return p;
}

Network::Network(NetSpec spec, ArchConfig arch, int periph_h, int periph_w, int foveal_h,
                 int foveal_w, Rng& rng)
    : spec_(std::move(spec)),
      arch_(std::move(arch)),
      periph_h_(periph_h),
      periph_w_(periph_w),
      foveal_h_(foveal_h),
      foveal_w_(foveal_w) {
  validate_arch(arch_, periph_h_, periph_w_, foveal_h_, foveal_w_);
  if (!spec_.use_periph && !spec_.use_foveal)
    throw std::invalid_argument("arch: network '" + spec_.name + "' consumes no input");
  if (spec_.out_dim < 1)
    throw std::invalid_argument("arch: network '" + spec_.name + "' needs a positive out_dim");
  if (spec_.fc_depth < 1)
    throw std::invalid_argument("arch: network '" + spec_.name + "' needs fc_depth >= 1");
  if (spec_.kind == HeadKind::kMdn && spec_.out_dim != 12 * arch_.mdn_k)
    throw std::invalid_argument("arch: mixture head out_dim must be 12*K");

  int feat = 0;
  if (spec_.use_periph) {
    auto plan = periph_plan(arch_, periph_h_, periph_w_);
    for (size_t i = 0; i < plan.size(); ++i) {
      const ConvShape& cs = plan[i];
      const long fan = static_cast<long>(cs.in_c) * cs.k * cs.k;
      periph_w_params_.push_back(graph_.param(
          "p" + std::to_string(i) + ".w", he_normal({cs.out_c, cs.in_c, cs.k, cs.k}, fan, rng)));
      periph_b_params_.push_back(
          graph_.param("p" + std::to_string(i) + ".b", Tensor<float>({cs.out_c})));
    }
    feat += periph_feature_dim(arch_, periph_h_, periph_w_);
  }
  if (spec_.use_foveal) {
    auto plan = foveal_plan(arch_, foveal_h_, foveal_w_);
    for (size_t i = 0; i < plan.size(); ++i) {
      const ConvShape& cs = plan[i];
      const long fan = static_cast<long>(cs.in_c) * cs.k * cs.k;
      foveal_w_params_.push_back(graph_.param(
          "f" + std::to_string(i) + ".w", he_normal({cs.out_c, cs.in_c, cs.k, cs.k}, fan, rng)));
      foveal_b_params_.push_back(
          graph_.param("f" + std::to_string(i) + ".b", Tensor<float>({cs.out_c})));
    }
    feat += foveal_feature_dim(arch_, foveal_h_, foveal_w_);
  }

  int in = feat;
  for (int i = 0; i < spec_.fc_depth; ++i) {
    const std::string tag = "fc" + std::to_string(i);
    fc_w_.push_back(graph_.param(tag + ".w", he_normal({in, arch_.fc_width}, in, rng)));
    fc_b_.push_back(graph_.param(tag + ".b", Tensor<float>({arch_.fc_width})));
    fc_gamma_.push_back(graph_.param(tag + ".g", Tensor<float>({arch_.fc_width}, 1.f)));
    fc_beta_.push_back(graph_.param(tag + ".beta", Tensor<float>({arch_.fc_width})));
    in = arch_.fc_width;
  }
  bn_.resize(static_cast<size_t>(spec_.fc_depth));

  Tensor<float> ow = he_normal({in, spec_.out_dim}, in, rng);
  // a mixture head starts as its bias prior: the spread means below already
  // cover the frame, so the output weights open at near zero instead of
  // drowning that prior in init noise
  if (spec_.kind == HeadKind::kMdn) ow.array() *= 0.01f;
  out_w_ = graph_.param("out.w", std::move(ow));
  Tensor<float> ob({spec_.out_dim});
  if (spec_.kind == HeadKind::kMdn) {
    // spread the component means across the frame and start sigmas wide so
    // early responsibilities stay spread over the mixture
    const int k = arch_.mdn_k;
    for (int side = 0; side < 2; ++side) {
      const int base = side * 6 * k;
      for (int j = 0; j < k; ++j) {
        ob[base + k + j] = (static_cast<float>(j) + 0.5f) / static_cast<float>(k);  // x mean
        ob[base + 2 * k + j] = 0.5f;                                                // y mean
        ob[base + 3 * k + j] = std::log(0.25f);                                     // x sigma
        ob[base + 4 * k + j] = std::log(0.25f);                                     // y sigma
      }
    }
  }
  out_b_ = graph_.param("out.b", std::move(ob));

  stats_.out_mean = Tensor<float>({spec_.out_dim});
  stats_.out_std = Tensor<float>({spec_.out_dim}, 1.f);
}

long Network::param_count() const {
  long n = 0;
  for (const auto& p : graph_.params()) n += p->value.size();
  return n;
}

ag::Var<float> Network::encode_periph(const Tensor<float>& x) {
  auto v = graph_.constant(channel_normalize(x, stats_.periph_mean, stats_.periph_std));
  const size_t last = periph_w_params_.size() - 1;
  for (size_t i = 0; i < periph_w_params_.size(); ++i) {
    v = ag::conv2d(v, periph_w_params_[i], periph_b_params_[i], arch_.periph_strides[i], 1);
    if (i != last) v = ag::relu(v);
  }
  if (arch_.periph_spatial_softmax) return ag::spatial_softmax(v);
  return ag::flatten(ag::relu(v));
}

ag::Var<float> Network::encode_foveal(const Tensor<float>& x) {
  auto v = graph_.constant(channel_normalize(x, stats_.foveal_mean, stats_.foveal_std));
  for (size_t i = 0; i < foveal_w_params_.size(); ++i)
    v = ag::maxpool2(ag::relu(ag::conv2d(v, foveal_w_params_[i], foveal_b_params_[i], 1, 1)));
  return ag::flatten(v);
}

ag::Var<float> Network::forward(const Tensor<float>* periph, const Tensor<float>* foveal,
                                ag::Mode mode) {
  graph_.mode = mode;
  auto expect = [&](const Tensor<float>* t, bool used, int h, int w, const char* which) {
    if (!used) {
      if (t)
        throw std::invalid_argument("network '" + spec_.name + "' does not consume " + which +
                                    " input");
      return;
    }
    if (!t)
      throw std::invalid_argument("network '" + spec_.name + "' requires " + which + " input");
    if (t->rank() != 4 || t->dim(1) != 6 || t->dim(2) != h || t->dim(3) != w)
      throw std::invalid_argument("network '" + spec_.name + "': " + which +
                                  " input must be [N,6," + std::to_string(h) + "," +
                                  std::to_string(w) + "], got " + t->shape_str());
  };
  expect(periph, spec_.use_periph, periph_h_, periph_w_, "peripheral");
  expect(foveal, spec_.use_foveal, foveal_h_, foveal_w_, "foveal");
  if (spec_.use_periph && spec_.use_foveal && periph->dim(0) != foveal->dim(0))
    throw std::invalid_argument("network '" + spec_.name + "': batch sizes disagree");

  ag::Var<float> x;
  if (spec_.use_periph && spec_.use_foveal)
    x = ag::concat_cols(encode_periph(*periph), encode_foveal(*foveal));
  else if (spec_.use_periph)
    x = encode_periph(*periph);
  else
    x = encode_foveal(*foveal);

  for (int i = 0; i < spec_.fc_depth; ++i) {
    x = ag::dense(x, fc_w_[static_cast<size_t>(i)], fc_b_[static_cast<size_t>(i)]);
    x = ag::batchnorm(x, fc_gamma_[static_cast<size_t>(i)], fc_beta_[static_cast<size_t>(i)],
                      bn_[static_cast<size_t>(i)], bn_momentum_);
    x = ag::relu(x);
  }
  return ag::dense(x, out_w_, out_b_);
}

NamedTensors Network::export_tensors() const {
  NamedTensors out;
  for (const auto& p : graph_.params()) out.emplace_back(p->name, p->value);
  for (size_t i = 0; i < bn_.size(); ++i) {
    const auto& s = bn_[i];
    Tensor<float> rm = s.initialized ? s.running_mean : Tensor<float>({arch_.fc_width});
    Tensor<float> rv = s.initialized ? s.running_var : Tensor<float>({arch_.fc_width}, 1.f);
    out.emplace_back("fc" + std::to_string(i) + ".rm", std::move(rm));
    out.emplace_back("fc" + std::to_string(i) + ".rv", std::move(rv));
  }
  out.emplace_back("stats.pm", stats_.periph_mean);
  out.emplace_back("stats.ps", stats_.periph_std);
  out.emplace_back("stats.fm", stats_.foveal_mean);
  out.emplace_back("stats.fs", stats_.foveal_std);
  out.emplace_back("stats.om", stats_.out_mean);
  out.emplace_back("stats.os", stats_.out_std);
  return out;
}

void Network::import_tensors(const NamedTensors& arrays) {
  auto take = [&](const std::string& name) -> const Tensor<float>& {
    for (const auto& [n, t] : arrays)
      if (n == name) return t;
    throw std::runtime_error("network '" + spec_.name + "': checkpoint missing tensor " + name);
  };
  auto assign = [&](Tensor<float>& dst, const std::string& name) {
    const Tensor<float>& src = take(name);
    if (!src.same_shape(dst))
      throw std::runtime_error("network '" + spec_.name + "': tensor " + name + " has shape " +
                               src.shape_str() + ", expected " + dst.shape_str());
    dst = src;
  };
  for (auto& p : graph_.params()) assign(p->value, p->name);
  for (size_t i = 0; i < bn_.size(); ++i) {
    auto& s = bn_[i];
    s.running_mean = Tensor<float>({arch_.fc_width});
    s.running_var = Tensor<float>({arch_.fc_width}, 1.f);
    s.initialized = true;
    assign(s.running_mean, "fc" + std::to_string(i) + ".rm");
    assign(s.running_var, "fc" + std::to_string(i) + ".rv");
  }
  assign(stats_.periph_mean, "stats.pm");
  assign(stats_.periph_std, "stats.ps");
  assign(stats_.foveal_mean, "stats.fm");
  assign(stats_.foveal_std, "stats.fs");
  assign(stats_.out_mean, "stats.om");
  assign(stats_.out_std, "stats.os");
  if (arrays.size() != graph_.params().size() + 2 * bn_.size() + 6)
    throw std::runtime_error("network '" + spec_.name + "': checkpoint has " +
                             std::to_string(arrays.size()) + " tensors, expected " +
                             std::to_string(graph_.params().size() + 2 * bn_.size() + 6));
}

Network::Snapshot Network::snapshot() const {
  Snapshot s;
  for (const auto& p : graph_.params()) s.params.push_back(p->value);
  s.bn = bn_;
  return s;
}

void Network::restore(const Snapshot& snap) {
  if (snap.params.size() != graph_.params().size())
    throw std::logic_error("network '" + spec_.name + "': snapshot parameter count mismatch");
  for (size_t i = 0; i < snap.params.size(); ++i) graph_.params()[i]->value = snap.params[i];
  bn_ = snap.bn;
}

}  // namespace fovea::models
