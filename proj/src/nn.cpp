#include "tabsynth/nn.hpp"

#include <cmath>

#include "tabsynth/error.hpp"

namespace tabsynth::nn {

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  Matrix b(1, static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
  weight = ad::parameter(std::move(w));
  bias = ad::parameter(std::move(b));
}

Var Linear::operator()(const Var& x) const { return ad::add(ad::matmul(x, weight), bias); }

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(const std::vector<Matrix>& grads) {
  if (grads.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "Adam: one gradient per parameter");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].mutable_value();
    if (grads[i].size() == 0) continue;
    Matrix g = grads[i];
    if (opt_.weight_decay != 0.0) g += opt_.weight_decay * w;
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    w.array() -= opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
  }
}

void Adam::step() {
  std::vector<Matrix> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.grad());
  step(grads);
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t parameter_count(const std::vector<Var>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.value().size());
  return n;
}

Vector flatten(const std::vector<Matrix>& grads) {
  Eigen::Index n = 0;
  for (const auto& g : grads) n += g.size();
  Vector out(n);
  Eigen::Index off = 0;
  for (const auto& g : grads) {
    out.segment(off, g.size()) = Eigen::Map<const Vector>(g.data(), g.size());
    off += g.size();
  }
  return out;
}

std::vector<Matrix> unflatten(const Vector& flat, const std::vector<Var>& params) {
  std::vector<Matrix> out;
  Eigen::Index off = 0;
  for (const auto& p : params) {
    Matrix m(p.rows(), p.cols());
    m = Eigen::Map<const Matrix>(flat.data() + off, p.rows(), p.cols());
    off += m.size();
    out.push_back(std::move(m));
  }
  if (off != flat.size()) throw Error(ErrorCode::ShapeMismatch, "flat gradient length does not match parameters");
  return out;
}

std::vector<Matrix> values_of(const std::vector<Var>& vars) {
  std::vector<Matrix> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

nlohmann::json parameters_to_json(const std::vector<Var>& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : params) {
    const auto& v = p.value();
    arr.push_back({{"shape", {v.rows(), v.cols()}}, {"data", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  return arr;
}

void parameters_from_json(const nlohmann::json& j, std::vector<Var>& params) {
  if (j.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto shape = j[i].at("shape").get<std::vector<Eigen::Index>>();
    const auto data = j[i].at("data").get<std::vector<double>>();
    auto& v = params[i].mutable_value();
    if (shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols() ||
        data.size() != static_cast<std::size_t>(v.size())) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter shape mismatch at index " + std::to_string(i));
    }
    v = Eigen::Map<const Matrix>(data.data(), v.rows(), v.cols());
  }
}

}  // namespace tabsynth::nn
