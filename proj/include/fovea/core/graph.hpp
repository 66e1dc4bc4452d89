#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fovea/core/tensor.hpp"

namespace fovea::ag {

enum class Mode { kTrain, kEval };

template <typename S>
class Graph;

/// One value in the computation graph. Non-leaf nodes carry a closure that
/// pulls this node's gradient back into its parents.
template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  long tape_index = -1;  // -1 for leaves
  Graph<S>* graph = nullptr;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<S>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<S>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size(); }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

/// Define-by-run tape. Creation order is a topological order, so the
/// backward pass is a single reverse sweep that touches each node once.
/// Parameters live outside the tape and survive clear_tape().
template <typename S>
class Graph {
 public:
  Mode mode = Mode::kTrain;

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  Var<S> constant(Tensor<S> v) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    n->graph = this;
    return n;
  }

  Var<S> param(std::string name, Tensor<S> v) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->graph = this;
    n->name = std::move(name);
    params_.push_back(n);
    return n;
  }

  Var<S> make(Tensor<S> value, std::vector<Var<S>> parents, std::function<void(Node<S>&)> bw) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->graph = this;
    if (recording_) {
      bool needs = false;
      for (const auto& p : parents)
        if (p->requires_grad) needs = true;
      if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
        n->tape_index = static_cast<long>(tape_.size());
        tape_.push_back(n);
      }
    }
    return n;
  }

  /// Reverse sweep from a scalar loss. Gradients accumulate into every
  /// reachable node with requires_grad, including parameters.
  void backward(const Var<S>& loss) {
    if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (loss->tape_index < 0) {
      if (!loss->requires_grad) return;  // constant loss: all grads stay zero
      throw std::logic_error("backward: loss not on this tape");
    }
    loss->ensure_grad().array().setConstant(S(1));
    for (long i = loss->tape_index; i >= 0; --i) {
      Node<S>& n = *tape_[static_cast<size_t>(i)];
      if (n.backward_fn && n.has_grad()) n.backward_fn(n);
    }
  }

  void zero_grad() {
    for (auto& p : params_)
      if (p->has_grad()) p->grad.array().setZero();
  }

  void clear_tape() { tape_.clear(); }
  long tape_size() const { return static_cast<long>(tape_.size()); }

  std::vector<Var<S>>& params() { return params_; }
  const std::vector<Var<S>>& params() const { return params_; }

  Var<S> find_param(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

 private:
  std::vector<Var<S>> tape_;
  std::vector<Var<S>> params_;
  bool recording_ = true;
};

/// Scoped inference guard: disables taping, restores on exit.
template <typename S>
class NoGrad {
 public:
  explicit NoGrad(Graph<S>& g) : g_(g), prev_(g.recording()) { g_.set_recording(false); }
  ~NoGrad() { g_.set_recording(prev_); }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Graph<S>& g_;
  bool prev_;
};

}  // namespace fovea::ag
