#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "tabsynth/autodiff.hpp"
#include "tabsynth/error.hpp"
#include "tabsynth/nn.hpp"

namespace tabsynth {
namespace {

using ad::Var;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Central-difference oracle for the gradient of a scalar function of one matrix.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

void expect_close(const Matrix& analytic, const Matrix& numeric, double rel, const std::string& what) {
  ASSERT_EQ(analytic.rows(), numeric.rows()) << what;
  ASSERT_EQ(analytic.cols(), numeric.cols()) << what;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    EXPECT_LE(std::abs(a - n), rel * std::max(1.0, std::abs(n))) << what << " entry " << i;
  }
}

using UnaryOp = std::function<Var(const Var&)>;

void check_unary(const std::string& name, const UnaryOp& op, double lo = -2.0, double hi = 2.0, Eigen::Index r = 3,
                 Eigen::Index c = 4) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x0 = random_matrix(r, c, rng, lo, hi);
    const Matrix w = random_matrix(r, c, rng);  // random projection makes the loss scalar
    auto loss_of = [&](const Var& x) {
      const Var y = op(x);
      return ad::sum(ad::mul(y, ad::constant(Matrix(w.topLeftCorner(y.rows(), y.cols())))));
    };
    Var x = ad::parameter(x0);
    const auto g = ad::grad(loss_of(x), {x});
    const Matrix num = numeric_gradient(
        [&](const Matrix& m) {
          ad::NoGradGuard guard;
          return loss_of(ad::constant(m)).item();
        },
        x0);
    expect_close(g[0].value(), num, 1e-4, name + " seed " + std::to_string(seed));
    if (::testing::Test::HasFailure()) return;
  }
}

TEST(AutodiffOracle, ElementwiseOps) {
  check_unary("tanh", [](const Var& x) { return ad::tanh(x); });
  check_unary("sigmoid", [](const Var& x) { return ad::sigmoid(x); });
  check_unary("softplus", [](const Var& x) { return ad::softplus(x); });
  check_unary("exp", [](const Var& x) { return ad::exp(x); });
  check_unary("log", [](const Var& x) { return ad::log(x); }, 0.2, 3.0);
  check_unary("pow", [](const Var& x) { return ad::pow(x, 2.5); }, 0.2, 3.0);
  check_unary("leaky_relu", [](const Var& x) { return ad::leaky_relu(x, 0.2); });
  check_unary("relu", [](const Var& x) { return ad::relu(x); });
  check_unary("scale", [](const Var& x) { return ad::scale(ad::add_scalar(x, 3.0), -1.5); });
}

TEST(AutodiffOracle, StructuralOps) {
  check_unary("transpose", [](const Var& x) { return ad::transpose(ad::transpose(x)); });
  check_unary("mul_self", [](const Var& x) { return x * x - x; });
  check_unary("slice", [](const Var& x) { return ad::slice_cols(x, 1, 2); });
  check_unary("embed", [](const Var& x) { return ad::slice_cols(ad::embed_cols(x, 2, 7), 0, 4); });
  check_unary("concat", [](const Var& x) { return ad::slice_cols(ad::concat_cols({x, ad::tanh(x)}), 2, 4); });
  check_unary("sum_to_row", [](const Var& x) { return ad::sum_to(x, 1, x.cols()); });
  check_unary("sum_to_col", [](const Var& x) { return ad::sum_to(x, x.rows(), 1); });
  check_unary("broadcast", [](const Var& x) { return ad::broadcast_to(ad::sum_to(x, 1, x.cols()), 3, 4); });
  check_unary("mean", [](const Var& x) { return ad::mean(x); });
  check_unary("mean_rows", [](const Var& x) { return ad::mean_rows(x); });
  check_unary("variance_rows", [](const Var& x) { return ad::variance_rows(x); });
  check_unary("l2_norm_rows", [](const Var& x) { return ad::l2_norm_rows(x); });
  check_unary("l2_norm", [](const Var& x) { return ad::l2_norm(x); });
  check_unary("layer_norm", [](const Var& x) { return ad::layer_norm(x); });
  check_unary("softmax", [](const Var& x) { return ad::softmax(x); });
  check_unary("log_softmax", [](const Var& x) { return ad::log_softmax(x); });
  check_unary("broadcast_add", [](const Var& x) { return ad::add(x, ad::sum_to(x, 1, x.cols())); });
}

TEST(AutodiffOracle, MatmulBothSides) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix a0 = random_matrix(3, 5, rng);
    const Matrix b0 = random_matrix(5, 2, rng);
    Var a = ad::parameter(a0);
    Var b = ad::parameter(b0);
    const auto g = ad::grad(ad::sum(ad::tanh(ad::matmul(a, b))), {a, b});
    auto f_a = [&](const Matrix& m) { return (m * b0).array().tanh().sum(); };
    auto f_b = [&](const Matrix& m) { return (a0 * m).array().tanh().sum(); };
    expect_close(g[0].value(), numeric_gradient(f_a, a0), 1e-4, "matmul lhs");
    expect_close(g[1].value(), numeric_gradient(f_b, b0), 1e-4, "matmul rhs");
  }
}

TEST(AutodiffOracle, CrossEntropyAndGumbel) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x0 = random_matrix(4, 3, rng, -3.0, 3.0);
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    Var x = ad::parameter(x0);
    const auto g = ad::grad(ad::cross_entropy(x, labels), {x});
    auto f = [&](const Matrix& m) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        const double lse = mx + std::log((m.row(i).array() - mx).exp().sum());
        s += lse - m(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
      }
      return s / static_cast<double>(m.rows());
    };
    expect_close(g[0].value(), numeric_gradient(f, x0), 1e-4, "cross_entropy");

    const Matrix noise = random_matrix(4, 3, rng, -1.0, 1.0);
    const Matrix w = random_matrix(4, 3, rng);
    Var y = ad::parameter(x0);
    const auto gg = ad::grad(ad::sum(ad::mul(ad::gumbel_softmax(y, 0.5, noise), ad::constant(w))), {y});
    auto fg = [&](const Matrix& m) {
      Matrix z = (m + noise) / 0.5;
      double s = 0.0;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const auto e = (z.row(i).array() - z.row(i).maxCoeff()).exp();
        s += (e / e.sum() * w.row(i).array()).sum();
      }
      return s;
    };
    expect_close(gg[0].value(), numeric_gradient(fg, x0), 1e-4, "gumbel_softmax");
  }
  EXPECT_THROW(ad::cross_entropy(ad::parameter(Matrix::Zero(2, 3)), {0, 3}), Error);
}

TEST(Autodiff, NonScalarLossIsRejected) {
  Var x = ad::parameter(Matrix::Ones(2, 2));
  try {
    ad::grad(ad::tanh(x), {x});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotScalarLoss);
  }
}

TEST(Autodiff, NumericBackwardRefusesDoubleBackprop) {
  Var x = ad::parameter(Matrix::Ones(2, 3));
  try {
    ad::grad(ad::sum(ad::softmax(x)), {x}, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedOpForDoubleBackprop);
  }
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  Var x = ad::parameter(Matrix::Ones(2, 2));
  ad::NoGradGuard guard;
  const Var y = ad::tanh(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, BackwardAccumulatesIntoLeaves) {
  Var x = ad::parameter(Matrix::Constant(1, 2, 3.0));
  ad::backward(ad::sum(x * x));
  ad::backward(ad::sum(x));
  EXPECT_EQ(x.grad()(0, 0), 7.0);
  x.zero_grad();
  EXPECT_EQ(x.grad().size(), 0);
}

TEST(Autodiff, SecondDerivativeOfCubic) {
  Var x = ad::parameter(Matrix::Constant(1, 1, 2.0));
  const auto g = ad::grad(ad::sum(ad::pow(x, 3.0)), {x}, true);
  EXPECT_NEAR(g[0].item(), 12.0, 1e-12);
  const auto h = ad::grad(ad::sum(g[0]), {x});
  EXPECT_NEAR(h[0].item(), 12.0, 1e-12);
}

// Critic used for the penalty tests: leaky-relu MLP with layer norm.
struct Critic {
  nn::Linear l1, l2;
  Critic(std::size_t in, std::mt19937_64& rng) : l1(in, 6, rng), l2(6, 1, rng) {}
  Var operator()(const Var& x) const { return l2(ad::leaky_relu(ad::layer_norm(l1(x)), 0.2)); }
  std::vector<Var> parameters() const { return {l1.weight, l1.bias, l2.weight, l2.bias}; }
};

TEST(GradientPenalty, ParameterGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    Critic critic(4, rng);
    const Matrix real = random_matrix(5, 4, rng);
    const Matrix fake = random_matrix(5, 4, rng);
    const auto params = critic.parameters();
    auto penalty_at = [&](std::uint64_t s) {
      std::mt19937_64 r(s);
      return ad::gradient_penalty([&](const Var& x) { return critic(x); }, real, fake, 10.0, r);
    };
    const auto result = penalty_at(1000 + seed);
    const auto g = ad::grad(result.penalty, params);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Var param = params[p];
      const Matrix keep = param.value();
      auto f = [&](const Matrix& m) {
        param.mutable_value() = m;
        const double v = penalty_at(1000 + seed).penalty.item();
        param.mutable_value() = keep;
        return v;
      };
      expect_close(g[p].value(), numeric_gradient(f, keep), 1e-3, "gp param " + std::to_string(p));
    }
    if (HasFailure()) return;
  }
}

TEST(GradientPenalty, LinearCriticHasExactNorm) {
  // f(x) = x . w has gradient w everywhere: penalty = coef * (|w| - 1)^2.
  std::mt19937_64 rng(2);
  const Matrix w = random_matrix(3, 1, rng);
  Var wv = ad::parameter(w);
  const Matrix real = random_matrix(6, 3, rng);
  const Matrix fake = random_matrix(6, 3, rng);
  for (auto mode : {ad::Interpolation::Spherical, ad::Interpolation::Linear}) {
    const auto r = ad::gradient_penalty([&](const Var& x) { return ad::matmul(x, wv); }, real, fake, 10.0, rng, mode);
    const double n = w.norm();
    EXPECT_NEAR(r.penalty.item(), 10.0 * (n - 1.0) * (n - 1.0), 1e-9);
    for (double gn : r.gradient_norms) EXPECT_NEAR(gn, n, 1e-9);
  }
}

TEST(Interpolation, EndpointsAndNorms) {
  std::mt19937_64 rng(4);
  const Matrix a = random_matrix(5, 3, rng);
  const Matrix b = random_matrix(5, 3, rng);
  for (auto mode : {ad::Interpolation::Spherical, ad::Interpolation::Linear}) {
    EXPECT_TRUE(ad::interpolate_rows(a, b, Vector::Zero(5), mode).isApprox(a, 1e-12));
    EXPECT_TRUE(ad::interpolate_rows(a, b, Vector::Ones(5), mode).isApprox(b, 1e-12));
  }
  // Unit rows stay on the sphere under spherical interpolation.
  Matrix ua = a.rowwise().normalized();
  Matrix ub = b.rowwise().normalized();
  const Matrix mid = ad::interpolate_rows(ua, ub, Vector::Constant(5, 0.5), ad::Interpolation::Spherical);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(mid.row(i).norm(), 1.0, 1e-9);
}

TEST(Dropout, ExpectationIsPreserved) {
  std::mt19937_64 rng(9);
  Var x = ad::constant(Matrix::Ones(200, 50));
  const double m = ad::mean(ad::dropout(x, 0.5, rng)).item();
  EXPECT_NEAR(m, 1.0, 0.03);
  EXPECT_EQ(ad::mean(ad::dropout(x, 0.5, rng, false)).item(), 1.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Var p = ad::parameter(Matrix::Constant(1, 3, 1.0));
  nn::Adam opt({p}, nn::AdamOptions{});
  Matrix g(1, 3);
  g << 0.5, -2.0, 10.0;
  opt.step({g});
  EXPECT_NEAR(p.value()(0, 0), 1.0 - 2e-4, 1e-9);
  EXPECT_NEAR(p.value()(0, 1), 1.0 + 2e-4, 1e-9);
  EXPECT_NEAR(p.value()(0, 2), 1.0 - 2e-4, 1e-9);
}

TEST(Nn, ParameterJsonRoundTrip) {
  std::mt19937_64 rng(1);
  nn::Linear a(3, 4, rng), b(3, 4, rng);
  auto pa = a.parameters();
  auto pb = b.parameters();
  nn::parameters_from_json(nn::parameters_to_json(pa), pb);
  EXPECT_EQ(pa[0].value(), pb[0].value());
  EXPECT_EQ(pa[1].value(), pb[1].value());
  nn::Linear c(4, 4, rng);
  auto pc = c.parameters();
  EXPECT_THROW(nn::parameters_from_json(nn::parameters_to_json(pa), pc), Error);
  const Vector flat = nn::flatten(nn::values_of(pa));
  const auto back = nn::unflatten(flat, pa);
  EXPECT_EQ(back[0], pa[0].value());
}

}  // namespace
}  // namespace tabsynth
