#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fovea/core/graph.hpp"
#include "fovea/core/ops.hpp"
#include "fovea/core/rng.hpp"
#include "fovea/core/tensor.hpp"
#include "fovea/core/weights_io.hpp"

namespace fovea::models {

/// Encoder and head hyperparameters shared by every network in a bundle.
/// The peripheral encoder is a strided conv stack ending in a spatial
/// softmax; the foveal encoder is conv3x3+ReLU+maxpool2 blocks flattened.
struct ArchConfig {
  std::vector<int> periph_channels{8, 16, 16};
  std::vector<int> periph_strides{2, 2, 1};
  bool periph_spatial_softmax = true;
  std::vector<int> foveal_channels{8, 16, 32};
  int fc_width = 200;
  int fc_depth_action = 3;
  int fc_depth_other = 2;
  int mdn_k = 8;
};

enum class HeadKind { kRegression, kClassifier, kMdn };

/// What one network consumes and emits. Networks never share trunks; a
/// spec with both trunks concatenates their feature vectors.
struct NetSpec {
  std::string name;
  bool use_periph = false;
  bool use_foveal = false;
  int out_dim = 0;
  int fc_depth = 2;
  HeadKind kind = HeadKind::kRegression;
};

/// One conv layer's geometry, used for construction and MAC accounting.
struct ConvShape {
  int in_c, in_h, in_w;
  int out_c, out_h, out_w;
  int k, stride;
};

std::vector<ConvShape> periph_plan(const ArchConfig& arch, int h, int w);
std::vector<ConvShape> foveal_plan(const ArchConfig& arch, int h, int w);
int periph_feature_dim(const ArchConfig& arch, int h, int w);
int foveal_feature_dim(const ArchConfig& arch, int h, int w);

/// Rejects zero channels, stride/channel length mismatch, nonpositive FC
/// sizes, and a peripheral grid too small for the spatial softmax.
void validate_arch(const ArchConfig& arch, int periph_h, int periph_w, int foveal_h, int foveal_w);

/// One side of a mixture head, still on the graph (training view).
struct MdnParams {
  ag::Var<float> weights;  // [N,K] simplex
  ag::Var<float> means;    // [N,2K], x block then y block
  ag::Var<float> sigmas;   // [N,2K] positive
  ag::Var<float> rhos;     // [N,K] in (-1,1)
};

/// Carves one side's mixture out of a raw [N, 12K] head output (side 0 is
/// left) and applies the simplex/positivity/correlation transforms.
MdnParams mdn_side(const ag::Var<float>& raw, int k, int side);

/// An independent conv-encoder + FC-head model owning its parameters,
/// batch-norm state, and input/output normalization statistics.
class Network {
 public:
  Network(NetSpec spec, ArchConfig arch, int periph_h, int periph_w, int foveal_h, int foveal_w,
          Rng& rng);
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetSpec& spec() const { return spec_; }
  const ArchConfig& arch() const { return arch_; }
  long param_count() const;

  /// Raw head output [N, out_dim]. Inputs are [N,6,H,W] in [0,1]; pass
  /// null for a trunk the spec does not consume (non-null is rejected, as
  /// is a tensor with the other trunk's shape).
  ag::Var<float> forward(const Tensor<float>* periph, const Tensor<float>* foveal, ag::Mode mode);

  ag::Graph<float>& graph() { return graph_; }
  std::vector<ag::Var<float>>& params() { return graph_.params(); }

  /// Channel statistics applied to inputs and, for regression heads, the
  /// target scale the raw output is expressed in.
  struct Stats {
    Tensor<float> periph_mean{std::vector<int>{6}};
    Tensor<float> periph_std{std::vector<int>{6}, 1.f};
    Tensor<float> foveal_mean{std::vector<int>{6}};
    Tensor<float> foveal_std{std::vector<int>{6}, 1.f};
    Tensor<float> out_mean;  // [out_dim], zeros by default
    Tensor<float> out_std;   // [out_dim], ones by default
  };
  Stats& stats() { return stats_; }
  const Stats& stats() const { return stats_; }

  void set_bn_momentum(float m) { bn_momentum_ = m; }

  /// All persistent tensors: parameters, batch-norm running stats, and
  /// normalization statistics. Names are stable across runs.
  NamedTensors export_tensors() const;
  void import_tensors(const NamedTensors& arrays);

  struct Snapshot {
    std::vector<Tensor<float>> params;
    std::vector<ag::BatchNormState<float>> bn;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

  int periph_h() const { return periph_h_; }
  int periph_w() const { return periph_w_; }
  int foveal_h() const { return foveal_h_; }
  int foveal_w() const { return foveal_w_; }

 private:
  ag::Var<float> encode_periph(const Tensor<float>& x);
  ag::Var<float> encode_foveal(const Tensor<float>& x);

  NetSpec spec_;
  ArchConfig arch_;
  int periph_h_, periph_w_, foveal_h_, foveal_w_;
  ag::Graph<float> graph_;
  std::vector<ag::Var<float>> periph_w_params_, periph_b_params_;
  std::vector<ag::Var<float>> foveal_w_params_, foveal_b_params_;
  std::vector<ag::Var<float>> fc_w_, fc_b_, fc_gamma_, fc_beta_;
  ag::Var<float> out_w_, out_b_;
  std::vector<ag::BatchNormState<float>> bn_;
  Stats stats_;
  float bn_momentum_ = 0.1f;
};

}  // namespace fovea::models
