#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "tabsynth/encoder.hpp"
#include "tabsynth/error.hpp"

namespace tabsynth {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - kLogSqrt2Pi;
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

struct EmFit {
  std::vector<double> weights, means, stds;
  double total_log_likelihood = 0.0;
  std::vector<double> trace;
};

std::vector<double> kmeanspp_centers(std::span<const double> x, std::size_t k, std::mt19937_64& rng) {
  std::vector<double> centers;
  std::uniform_int_distribution<std::size_t> first(0, x.size() - 1);
  centers.push_back(x[first(rng)]);
  std::vector<double> d2(x.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) break;
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng), acc = 0.0;
    std::size_t pick = x.size() - 1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      acc += d2[i];
      if (acc >= target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(x[pick]);
  }
  return centers;
}

EmFit run_em(std::span<const double> x, std::size_t k, double sigma_floor, const VgmOptions& opt,
             std::mt19937_64& rng) {
  const std::size_t n = x.size();
  auto centers = kmeanspp_centers(x, k, rng);
  k = centers.size();

  // Initial hard assignment to the nearest center.
  std::vector<double> resp(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (std::abs(x[i] - centers[j]) < std::abs(x[i] - centers[best])) best = j;
    }
    resp[i * k + best] = 1.0;
  }

  EmFit fit;
  fit.weights.assign(k, 1.0 / static_cast<double>(k));
  fit.means = centers;
  fit.stds.assign(k, sigma_floor);

  auto m_step = [&] {
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        sx += resp[i * k + j] * x[i];
      }
      fit.weights[j] = nk / static_cast<double>(n);
      if (nk <= 0.0) {
        fit.stds[j] = sigma_floor;
        continue;
      }
      const double mu = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) sv += resp[i * k + j] * (x[i] - mu) * (x[i] - mu);
      fit.means[j] = mu;
      fit.stds[j] = std::max(std::sqrt(sv / nk), sigma_floor);
    }
  };

  std::vector<double> lp(k);
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    m_step();
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        lp[j] = fit.weights[j] > 0.0 ? std::log(fit.weights[j]) + log_normal(x[i], fit.means[j], fit.stds[j])
                                     : -std::numeric_limits<double>::infinity();
      }
      const double lse = log_sum_exp(lp);
      ll += lse;
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(lp[j] - lse);
    }
    const double mean_ll = ll / static_cast<double>(n);
    fit.trace.push_back(mean_ll);
    fit.total_log_likelihood = ll;
    if (std::abs(mean_ll - prev) < opt.tolerance) break;
    prev = mean_ll;
  }
  // Final M-step so the returned parameters are consistent with the last responsibilities.
  m_step();
  return fit;
}

}  // namespace

std::size_t VgmModel::num_active() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

std::vector<std::size_t> VgmModel::active_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (active[k]) out.push_back(k);
  }
  return out;
}

double VgmModel::log_likelihood(std::span<const double> values) const {
  const auto idx = active_indices();
  std::vector<double> lp(idx.size());
  double ll = 0.0;
  for (double v : values) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      lp[j] = std::log(weights[idx[j]]) + log_normal(v, means[idx[j]], stds[idx[j]]);
    }
    ll += log_sum_exp(lp);
  }
  return ll;
}

nlohmann::json VgmModel::to_json() const {
  return {{"weights", weights}, {"means", means}, {"stds", stds}, {"active", active}, {"max_modes", max_modes}};
}

VgmModel VgmModel::from_json(const nlohmann::json& j) {
  VgmModel m;
  m.weights = j.at("weights").get<std::vector<double>>();
  m.means = j.at("means").get<std::vector<double>>();
  m.stds = j.at("stds").get<std::vector<double>>();
  m.active = j.at("active").get<std::vector<bool>>();
  m.max_modes = j.value("max_modes", std::size_t{10});
  return m;
}

VgmModel fit_vgm(std::span<const double> values, const VgmOptions& options) {
  std::vector<double> x;
  x.reserve(values.size());
  for (double v : values) {
    if (std::isfinite(v)) x.push_back(v);
  }
  if (x.empty()) throw Error(ErrorCode::EmptyInput, "fit_vgm needs at least one finite value");
  if (options.max_modes < 1) throw Error(ErrorCode::InvalidConfig, "max_modes must be >= 1");

  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double sigma_floor = 1e-4 * (sd > 0.0 ? sd : 1.0);

  VgmModel model;
  model.max_modes = options.max_modes;

  const std::set<double> distinct(x.begin(), x.end());
  if (distinct.size() < 2) {
    model.weights = {1.0};
    model.means = {x.front()};
    model.stds = {sigma_floor};
    model.active = {true};
    if (options.trace) options.trace->clear();
    return model;
  }

  std::mt19937_64 rng(options.seed);
  const std::size_t k_max = std::min(options.max_modes, distinct.size());
  EmFit best;
  double best_bic = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= k_max; ++k) {
    EmFit fit = run_em(x, k, sigma_floor, options, rng);
    const double params = 3.0 * static_cast<double>(fit.weights.size()) - 1.0;
    const double bic = -2.0 * fit.total_log_likelihood + params * std::log(n);
    if (bic < best_bic) {
      best_bic = bic;
      best = std::move(fit);
    }
  }

  model.weights = best.weights;
  model.means = best.means;
  model.stds = best.stds;
  model.active.assign(best.weights.size(), false);
  double kept = 0.0;
  for (std::size_t j = 0; j < best.weights.size(); ++j) {
    if (best.weights[j] >= options.weight_threshold) {
      model.active[j] = true;
      kept += best.weights[j];
    }
  }
  if (kept <= 0.0) {
    auto j = static_cast<std::size_t>(std::max_element(best.weights.begin(), best.weights.end()) - best.weights.begin());
    model.active[j] = true;
    kept = best.weights[j];
  }
  for (std::size_t j = 0; j < model.weights.size(); ++j) {
    model.weights[j] = model.active[j] ? model.weights[j] / kept : 0.0;
  }
  if (options.trace) *options.trace = best.trace;
  return model;
}

std::size_t select_mode(double tau, const VgmModel& m) {
  const auto idx = m.active_indices();
  std::size_t best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const std::size_t k = idx[j];
    const double lp = std::log(m.weights[k]) + log_normal(tau, m.means[k], m.stds[k]);
    if (lp > best_lp) {
      best_lp = lp;
      best = j;
    }
  }
  return best;
}

MsnCode msn_encode(double tau, const VgmModel& m) {
  const std::size_t slot = select_mode(tau, m);
  const std::size_t k = m.active_indices()[slot];
  const double alpha = std::clamp((tau - m.means[k]) / (4.0 * m.stds[k]), -1.0, 1.0);
  return {alpha, slot};
}

double msn_decode(double alpha, std::span<const double> beta, const VgmModel& m) {
  const auto idx = m.active_indices();
  if (beta.size() != idx.size()) throw Error(ErrorCode::InvalidOneHot, "beta width does not match active modes");
  std::size_t ones = 0, slot = 0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (beta[j] == 1.0) {
      ++ones;
      slot = j;
    } else if (beta[j] != 0.0) {
      throw Error(ErrorCode::InvalidOneHot, "beta entries must be 0 or 1");
    }
  }
  if (ones != 1) throw Error(ErrorCode::InvalidOneHot, "beta must contain exactly one 1");
  const std::size_t k = idx[slot];
  return alpha * 4.0 * m.stds[k] + m.means[k];
}

}  // namespace tabsynth
