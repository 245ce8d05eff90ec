#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mld/numerics/tensor.hpp"

namespace mld {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
};

/// Handle to a node in the dynamic graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& dims() const { return node_->value.dims(); }
  size_t rows() const { return node_->value.rows(); }
  size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  uint64_t id() const { return node_->id; }
  std::string label() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

  /// Replaces the value of a leaf (parameter updates, loading).
  void assign(Tensor value) const;
  void set_requires_grad(bool on) const;

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled() noexcept;

/// Runs reverse accumulation from a 1x1 loss. Gradients of every reachable node are
/// reset first, so leaves hold exactly d(loss)/d(leaf) afterwards.
void backward(const Var& loss);

/// Gradients for `params` (zeros for unreachable ones), same dims as each parameter.
std::vector<Tensor> reverse_gradients(const Var& loss, std::span<const Var> params);

/// Half-open query and key row ranges that attend to each other.
struct AttnSegment {
  size_t q_begin, q_end;
  size_t k_begin, k_end;
};

// Elementwise and broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a (N x M) + row (1 x M) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var square(const Var& a);
Var exp(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var silu(const Var& a);
Var relu(const Var& a);
/// Zero gradient outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
/// x W + b with W (in x out), b (1 x out).
Var linear(const Var& x, const Var& w, const Var& b);
/// Squared Euclidean distance between every row of a and every row of b.
Var pairwise_sqdist(const Var& a, const Var& b);

// Structural.
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& x, std::span<const size_t> index);
Var slice_rows(const Var& x, size_t begin, size_t count);
/// One output row per segment: mean of rows [begin, end).
Var segment_mean(const Var& x, std::span<const std::pair<size_t, size_t>> segments);

// Normalization and attention.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
/// Multi-head scaled dot-product attention restricted to segments; query rows outside
/// every segment, or with an empty key range, produce zeros.
Var attention(const Var& q, const Var& k, const Var& v, std::span<const AttnSegment> segments, size_t heads);

// Reductions and losses (1x1 outputs).
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const size_t> labels);
/// Sum over coordinates of 0.5 (sigma^2 + mu^2 - 1 - log sigma^2), sigma = exp(log_sigma).
Var kl_standard_normal(const Var& mu, const Var& log_sigma);

}  // namespace mld
