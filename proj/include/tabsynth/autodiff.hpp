#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every op records its parents and a backward closure. Backward closures are
// written in terms of other ops, so running them with recording enabled
// (create_graph) yields a differentiable gradient graph. Ops whose backward
// is evaluated numerically are flagged and refuse to take part in
// double-backprop.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tabsynth/matrix.hpp"

namespace tabsynth::ad {

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const;
  Matrix& mutable_value();
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  /// Accumulated gradient of a leaf after backward(); zero-sized when none.
  const Matrix& grad() const;
  void zero_grad();
  double item() const;
  const std::string& op() const;

  Node* get() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  using BackwardFn = std::function<std::vector<Var>(const Var& grad_out, const Var& self)>;

  Matrix value;
  Matrix grad;  // leaves only, filled by backward()
  std::vector<Var> parents;
  BackwardFn backward;
  bool requires_grad = false;
  bool double_differentiable = true;
  std::string op = "leaf";
};

/// True while new ops record their parents.
bool recording();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Matrix value);
Var constant(double value);
/// Leaf that gradients are tracked for.
Var parameter(Matrix value);

/// Gradients of a scalar `loss` with respect to `wrt`. With create_graph the
/// returned gradients are themselves differentiable.
std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt, bool create_graph = false);

/// Accumulates d(loss)/d(leaf) into every reachable leaf's grad().
void backward(const Var& loss);

// --- op catalog -------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var broadcast_to(const Var& a, Eigen::Index rows, Eigen::Index cols);
/// Sums `a` down to shape rows x cols (each must be 1 or match `a`).
Var sum_to(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var leaky_relu(const Var& a, double slope = 0.2);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var pow(const Var& a, double p);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index offset, Eigen::Index len);
/// Places `a` at column `offset` of a zero matrix with `total_cols` columns.
Var embed_cols(const Var& a, Eigen::Index offset, Eigen::Index total_cols);
/// Inverted dropout: kept entries scaled by 1/(1-p).
Var dropout(const Var& a, double p, std::mt19937_64& rng, bool training = true);
/// Per-row normalization to zero mean and unit variance.
Var layer_norm(const Var& a, double eps = 1e-5);
Var softmax(const Var& a);
/// Row-wise log(softmax(a)); built from double-differentiable ops.
Var log_softmax(const Var& a);
/// Mean negative log-likelihood of integer labels under row-wise softmax(logits).
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);
Var mean(const Var& a);
Var sum(const Var& a);
/// Column-wise mean over rows: 1 x cols.
Var mean_rows(const Var& a);
/// Column-wise population variance over rows: 1 x cols.
Var variance_rows(const Var& a);
/// Euclidean norm of every row: rows x 1. `eps` keeps the norm differentiable at 0.
Var l2_norm_rows(const Var& a, double eps = 1e-12);
Var l2_norm(const Var& a, double eps = 1e-12);

/// softmax((logits + g) / temperature) with g ~ Gumbel(0, 1) drawn per entry.
Var gumbel_softmax(const Var& logits, double temperature, std::mt19937_64& rng);
/// As above with caller-supplied noise (same shape as logits).
Var gumbel_softmax(const Var& logits, double temperature, const Matrix& noise);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

// --- gradient penalty -------------------------------------------------------

enum class Interpolation { Spherical, Linear };

struct PenaltyResult {
  Var penalty;                       // coefficient * mean((||grad||_2 - 1)^2)
  std::vector<double> gradient_norms;
};

/// Soft 1-Lipschitz penalty at points between paired real and fake rows.
/// `critic` must be built from double-differentiable ops.
PenaltyResult gradient_penalty(const std::function<Var(const Var&)>& critic, const Matrix& real, const Matrix& fake,
                               double coefficient, std::mt19937_64& rng,
                               Interpolation mode = Interpolation::Spherical);

/// Interpolates between rows a_i and b_i at fraction t_i.
Matrix interpolate_rows(const Matrix& a, const Matrix& b, const Vector& t, Interpolation mode);

}  // namespace tabsynth::ad
