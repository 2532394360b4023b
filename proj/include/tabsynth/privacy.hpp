#pragma once

// DP-SGD sanitization, Renyi-DP accounting with subsampling amplification, and the two
// private training schedules (private critic, private generator).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabsynth/data.hpp"
#include "tabsynth/gan.hpp"
#include "tabsynth/matrix.hpp"

namespace tabsynth::privacy {

enum class Variant { DDp, GDp };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

enum class Lipschitz { GradientPenalty, WeightClip };

struct PrivacySpec {
  double epsilon = 1.0;
  double delta = 1e-5;
  double sigma = 1.0;
  double clip = 1.0;
  std::size_t batch = 64;
  /// Training rows; the trainers overwrite it with the table size.
  std::size_t n = 0;
  Variant variant = Variant::DDp;
  std::size_t n_discriminators = 10;
  Lipschitz lipschitz = Lipschitz::GradientPenalty;
  double weight_clip = 0.01;
  /// Fixed number of updates instead of planning one from epsilon.
  std::optional<std::size_t> iterations;
  /// Epochs (in generator iterations) below which an exhausted budget is reported.
  std::size_t min_epochs = 1;
  std::size_t max_order = 64;

  /// Usable rows: n for d_dp, n rounded down to a multiple of n_discriminators for g_dp.
  std::size_t usable_rows() const;
  /// B/N for d_dp, 1/N_d for g_dp.
  double sampling_rate() const;
  void validate() const;

  nlohmann::json to_json() const;
  static PrivacySpec from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Sanitization

/// Scales g down to norm C when it is longer; returns the new norm.
double clip_in_place(Eigen::Ref<Vector> g, double c);

/// Rows are per-example gradients. Returns (sum of clipped rows + N(0, sigma^2 C^2 I)) / B.
Vector sanitize(const Matrix& per_example, double clip, double sigma, std::mt19937_64& rng);

/// Row-wise variant used on upstream gradients w.r.t. generated rows: every row is
/// clipped, receives its own noise draw, and is divided by the batch size.
Matrix sanitize_rows(const Matrix& per_row, double clip, double sigma, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Accounting

/// RDP of the Gaussian mechanism: order * sensitivity^2 / (2 sigma^2).
double rdp_gaussian(double order, double sensitivity, double sigma);

/// Unamplified cost of one update: 2B*order/sigma^2 (d_dp) or 6B*order/sigma^2 (g_dp).
double per_update_cost(Variant v, double order, std::size_t batch, double sigma);

using RdpCurve = std::function<double(std::size_t)>;

/// Upper bound on the RDP at integer `order` of a mechanism with curve `eps` run on a
/// subsample drawn without replacement at rate gamma. Evaluated in log space.
double amplify_by_subsampling(double gamma, std::size_t order, const RdpCurve& eps);

/// The same bound by direct summation of the terms; overflows for large costs.
double amplify_by_subsampling_naive(double gamma, std::size_t order, const RdpCurve& eps);

/// ln(1/delta)/(order-1) added to the RDP value.
double rdp_to_dp(std::size_t order, double rdp, double delta);

struct Conversion {
  double epsilon = 0.0;
  std::size_t order = 0;
};

/// Cumulative RDP per integer order 2..max_order.
class RdpLedger {
 public:
  explicit RdpLedger(std::size_t max_order = 64);

  std::size_t max_order() const { return max_order_; }
  const std::vector<double>& values() const { return eps_; }  // index order - 2
  double at(std::size_t order) const;
  std::size_t steps() const { return steps_; }

  /// Adds one mechanism invocation costing step(order).
  void compose(const RdpCurve& step);
  /// Adds `count` identical invocations.
  void compose(const RdpCurve& step, std::size_t count);

  /// After freezing, compose() throws; sampling a released model must not spend budget.
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  std::size_t max_order_;
  std::vector<double> eps_;
  std::size_t steps_ = 0;
  bool frozen_ = false;
};

/// Best (epsilon, order) over the ledger's orders. Throws EmptyLedger when no step was composed.
Conversion compose_and_convert(const RdpLedger& ledger, double delta);

/// Per-update RDP after amplification at the spec's sampling rate, capped by the unamplified cost.
RdpCurve step_curve(const PrivacySpec& spec);

/// (epsilon, order) after `iterations` updates under the spec.
Conversion epsilon_after(const PrivacySpec& spec, std::size_t iterations);

/// Largest number of updates whose epsilon stays within the target; 0 when even one is too many.
std::size_t max_iterations(const PrivacySpec& spec);
/// As max_iterations, throwing BudgetTooSmall when it is 0.
std::size_t plan_iterations(const PrivacySpec& spec);

struct PrivacyReport {
  Variant variant = Variant::DDp;
  double sigma = 0.0;
  double clip = 0.0;
  std::size_t batch = 0;
  double gamma = 0.0;
  std::size_t iterations = 0;
  std::size_t order = 0;
  double epsilon = 0.0;
  double delta = 0.0;

  nlohmann::json to_json() const;
};

PrivacyReport make_report(const PrivacySpec& spec, const RdpLedger& ledger);

// ---------------------------------------------------------------------------
// Private training

/// How often each gradient path of the generator went through the sanitizer.
struct SanitizerCounters {
  std::size_t critic_real = 0;     // per-example critic gradients (d_dp)
  std::size_t adversarial = 0;     // generator paths (g_dp)
  std::size_t info = 0;
  std::size_t classifier = 0;
  std::size_t cond = 0;            // stays 0: the condition loss never sees real rows
};

struct PrivateRun {
  GanModel model;
  PrivacyReport report;
  RdpLedger ledger;
  SanitizerCounters counters;
  /// Generator iterations completed and whether the budget ran out before min_epochs.
  std::size_t generator_steps = 0;
  bool exhausted_before_min_epochs = false;
  /// Rows seen by each discriminator (g_dp); empty for d_dp.
  std::vector<std::vector<std::size_t>> partitions;
};

/// The private critic: per-example clipping and noise on the real-data term only.
/// Requires wgan_gp. The planned T counts critic updates.
PrivateRun train_d_dp(const Table& table, const TrainConfig& config, PrivacySpec spec);

/// The private generator: N_d critics on disjoint partitions; gradients reaching the
/// generator through a critic or the classifier are sanitized. T counts generator updates.
PrivateRun train_g_dp(const Table& table, const TrainConfig& config, PrivacySpec spec);

PrivateRun train_private(const Table& table, const TrainConfig& config, const PrivacySpec& spec);

}  // namespace tabsynth::privacy
