#include "tabsynth/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tabsynth/error.hpp"

namespace tabsynth::privacy {

std::string to_string(Variant v) { return v == Variant::DDp ? "d_dp" : "g_dp"; }

Variant variant_from_string(const std::string& s) {
  if (s == "d_dp") return Variant::DDp;
  if (s == "g_dp") return Variant::GDp;
  throw Error(ErrorCode::InvalidConfig, "unknown privacy variant '" + s + "'");
}

namespace {

std::string to_string(Lipschitz l) { return l == Lipschitz::GradientPenalty ? "gradient_penalty" : "weight_clip"; }

Lipschitz lipschitz_from_string(const std::string& s) {
  if (s == "gradient_penalty") return Lipschitz::GradientPenalty;
  if (s == "weight_clip") return Lipschitz::WeightClip;
  throw Error(ErrorCode::InvalidConfig, "unknown lipschitz mode '" + s + "'");
}

double log_binomial(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// log(min(4(e^x - 1), 2e^x)) for x >= 0; -inf at x = 0.
double log_second_order_factor(double x) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  const double a = std::log(4.0) + x + std::log1p(-std::exp(-x));
  const double b = std::log(2.0) + x;
  return std::min(a, b);
}

}  // namespace

// ---------------------------------------------------------------------------
// Spec

std::size_t PrivacySpec::usable_rows() const {
  if (variant == Variant::DDp || n_discriminators == 0) return n;
  return n / n_discriminators * n_discriminators;
}

double PrivacySpec::sampling_rate() const {
  if (variant == Variant::GDp) return 1.0 / static_cast<double>(n_discriminators);
  return std::min(1.0, static_cast<double>(batch) / static_cast<double>(usable_rows()));
}

void PrivacySpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) fail("delta must lie in (0, 1)");
  if (!(sigma > 0.0)) fail("sigma must be positive");
  if (!(clip > 0.0)) fail("clip must be positive");
  if (batch < 1) fail("batch must be positive");
  if (n < 1) fail("dataset size n must be positive");
  if (max_order < 2) fail("max_order must be at least 2");
  if (lipschitz == Lipschitz::WeightClip && !(weight_clip > 0.0)) fail("weight_clip must be positive");
  if (variant == Variant::DDp) {
    if (batch > n) fail("batch exceeds the dataset size");
  } else {
    if (n_discriminators < 2) fail("g_dp needs at least 2 discriminators");
    if (usable_rows() / n_discriminators < 1) fail("too few rows for the number of discriminators");
  }
}

nlohmann::json PrivacySpec::to_json() const {
  nlohmann::json j = {{"epsilon", epsilon},
                      {"delta", delta},
                      {"sigma", sigma},
                      {"clip", clip},
                      {"batch", batch},
                      {"n", n},
                      {"variant", to_string(variant)},
                      {"n_discriminators", n_discriminators},
                      {"lipschitz", to_string(lipschitz)},
                      {"weight_clip", weight_clip},
                      {"min_epochs", min_epochs},
                      {"max_order", max_order}};
  j["iterations"] = iterations ? nlohmann::json(*iterations) : nlohmann::json(nullptr);
  return j;
}

PrivacySpec PrivacySpec::from_json(const nlohmann::json& j) {
  PrivacySpec s;
  try {
    s.epsilon = j.value("epsilon", s.epsilon);
    s.delta = j.value("delta", s.delta);
    s.sigma = j.value("sigma", s.sigma);
    s.clip = j.value("clip", s.clip);
    s.batch = j.value("batch", s.batch);
    s.n = j.value("n", s.n);
    if (j.contains("variant")) s.variant = variant_from_string(j.at("variant").get<std::string>());
    s.n_discriminators = j.value("n_discriminators", s.n_discriminators);
    if (j.contains("lipschitz")) s.lipschitz = lipschitz_from_string(j.at("lipschitz").get<std::string>());
    s.weight_clip = j.value("weight_clip", s.weight_clip);
    if (j.contains("iterations") && !j.at("iterations").is_null()) s.iterations = j.at("iterations").get<std::size_t>();
    s.min_epochs = j.value("min_epochs", s.min_epochs);
    s.max_order = j.value("max_order", s.max_order);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("privacy spec: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sanitization

double clip_in_place(Eigen::Ref<Vector> g, double c) {
  const double norm = g.norm();
  if (norm > c) {
    g *= c / norm;
    return c;
  }
  return norm;
}

Vector sanitize(const Matrix& per_example, double clip, double sigma, std::mt19937_64& rng) {
  const auto b = per_example.rows();
  if (b == 0) throw Error(ErrorCode::EmptyInput, "sanitize needs at least one example");
  Vector sum = Vector::Zero(per_example.cols());
  Vector g(per_example.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    g = per_example.row(i).transpose();
    clip_in_place(g, clip);
    sum += g;
  }
  std::normal_distribution<double> noise(0.0, sigma * clip);
  for (Eigen::Index k = 0; k < sum.size(); ++k) sum[k] += noise(rng);
  return sum / static_cast<double>(b);
}

Matrix sanitize_rows(const Matrix& per_row, double clip, double sigma, std::mt19937_64& rng) {
  const auto b = per_row.rows();
  if (b == 0) throw Error(ErrorCode::EmptyInput, "sanitize needs at least one example");
  Matrix out(per_row.rows(), per_row.cols());
  Vector g(per_row.cols());
  std::normal_distribution<double> noise(0.0, sigma * clip);
  for (Eigen::Index i = 0; i < b; ++i) {
    g = per_row.row(i).transpose();
    clip_in_place(g, clip);
    for (Eigen::Index k = 0; k < g.size(); ++k) g[k] += noise(rng);
    out.row(i) = g.transpose() / static_cast<double>(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accounting

double rdp_gaussian(double order, double sensitivity, double sigma) {
  return order * sensitivity * sensitivity / (2.0 * sigma * sigma);
}

double per_update_cost(Variant v, double order, std::size_t batch, double sigma) {
  // One Gaussian mechanism with sensitivity 2C (C = 1) per example, per sanitized path.
  const double paths = v == Variant::DDp ? 1.0 : 3.0;
  return paths * static_cast<double>(batch) * rdp_gaussian(order, 2.0, sigma);
}

double amplify_by_subsampling(double gamma, std::size_t order, const RdpCurve& eps) {
  if (order < 2) throw Error(ErrorCode::DomainError, "subsampled RDP needs an integer order >= 2");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorCode::DomainError, "sampling rate must lie in [0, 1]");
  if (gamma == 0.0) return 0.0;
  const double log_gamma = std::log(gamma);
  std::vector<double> terms;
  terms.reserve(order);
  terms.push_back(2.0 * log_gamma + log_binomial(order, 2) + log_second_order_factor(eps(2)));
  for (std::size_t j = 3; j <= order; ++j) {
    terms.push_back(static_cast<double>(j) * log_gamma + log_binomial(order, j) +
                    static_cast<double>(j - 1) * eps(j) + std::log(2.0));
  }
  // log(1 + sum exp(terms)), keeping the leading 1 exact when the terms are small.
  const double top = *std::max_element(terms.begin(), terms.end());
  double log_total;
  if (top <= 0.0) {
    double s = 0.0;
    for (double t : terms) s += std::exp(t);
    log_total = std::log1p(s);
  } else {
    double s = std::exp(-top);
    for (double t : terms) s += std::exp(t - top);
    log_total = top + std::log(s);
  }
  const double out = log_total / static_cast<double>(order - 1);
  if (!std::isfinite(out)) {
    throw Error(ErrorCode::NumericalOverflow, "subsampled RDP bound is not finite at order " + std::to_string(order));
  }
  return out;
}

double amplify_by_subsampling_naive(double gamma, std::size_t order, const RdpCurve& eps) {
  const double e2 = eps(2);
  double s = gamma * gamma * std::exp(log_binomial(order, 2)) * std::min(4.0 * std::expm1(e2), 2.0 * std::exp(e2));
  for (std::size_t j = 3; j <= order; ++j) {
    s += std::pow(gamma, static_cast<double>(j)) * std::exp(log_binomial(order, j)) * 2.0 *
         std::exp(static_cast<double>(j - 1) * eps(j));
  }
  return std::log1p(s) / static_cast<double>(order - 1);
}

double rdp_to_dp(std::size_t order, double rdp, double delta) {
  if (order < 2) throw Error(ErrorCode::DomainError, "conversion needs order >= 2");
  return rdp + std::log(1.0 / delta) / static_cast<double>(order - 1);
}

RdpLedger::RdpLedger(std::size_t max_order) : max_order_(max_order) {
  if (max_order < 2) throw Error(ErrorCode::InvalidConfig, "ledger needs max_order >= 2");
  eps_.assign(max_order - 1, 0.0);
}

double RdpLedger::at(std::size_t order) const {
  if (order < 2 || order > max_order_) throw Error(ErrorCode::OutOfRange, "order outside the ledger grid");
  return eps_[order - 2];
}

void RdpLedger::compose(const RdpCurve& step) { compose(step, 1); }

void RdpLedger::compose(const RdpCurve& step, std::size_t count) {
  if (frozen_) throw Error(ErrorCode::InvalidConfig, "the privacy ledger is frozen");
  for (std::size_t order = 2; order <= max_order_; ++order) {
    eps_[order - 2] += static_cast<double>(count) * step(order);
  }
  steps_ += count;
}

Conversion compose_and_convert(const RdpLedger& ledger, double delta) {
  if (ledger.steps() == 0) throw Error(ErrorCode::EmptyLedger, "no mechanism has been composed");
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::DomainError, "delta must lie in (0, 1)");
  Conversion best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t order = 2; order <= ledger.max_order(); ++order) {
    const double e = rdp_to_dp(order, ledger.at(order), delta);
    if (e < best.epsilon) best = {e, order};
  }
  return best;
}

RdpCurve step_curve(const PrivacySpec& spec) {
  const double gamma = spec.sampling_rate();
  const Variant v = spec.variant;
  const std::size_t b = spec.batch;
  const double sigma = spec.sigma;
  auto base = [v, b, sigma](std::size_t order) { return per_update_cost(v, static_cast<double>(order), b, sigma); };
  std::vector<double> table(spec.max_order + 1, 0.0);
  for (std::size_t order = 2; order <= spec.max_order; ++order) {
    // Subsampling never costs more than the full-batch mechanism.
    table[order] = std::min(amplify_by_subsampling(gamma, order, base), base(order));
  }
  return [table = std::move(table)](std::size_t order) {
    if (order < 2 || order >= table.size()) throw Error(ErrorCode::OutOfRange, "order outside the planned grid");
    return table[order];
  };
}

namespace {

Conversion epsilon_for(const std::vector<double>& per_step, std::size_t max_order, double delta, double iterations) {
  Conversion best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t order = 2; order <= max_order; ++order) {
    const double e = rdp_to_dp(order, iterations * per_step[order], delta);
    if (e < best.epsilon) best = {e, order};
  }
  return best;
}

std::vector<double> tabulate(const PrivacySpec& spec) {
  const RdpCurve curve = step_curve(spec);
  std::vector<double> per_step(spec.max_order + 1, 0.0);
  for (std::size_t order = 2; order <= spec.max_order; ++order) per_step[order] = curve(order);
  return per_step;
}

constexpr std::size_t kIterationCap = std::size_t{1} << 40;

}  // namespace

Conversion epsilon_after(const PrivacySpec& spec, std::size_t iterations) {
  spec.validate();
  return epsilon_for(tabulate(spec), spec.max_order, spec.delta, static_cast<double>(iterations));
}

std::size_t max_iterations(const PrivacySpec& spec) {
  spec.validate();
  const auto per_step = tabulate(spec);
  auto fits = [&](std::size_t t) {
    return epsilon_for(per_step, spec.max_order, spec.delta, static_cast<double>(t)).epsilon <= spec.epsilon;
  };
  if (!fits(1)) return 0;
  std::size_t lo = 1;
  std::size_t hi = 2;
  while (hi < kIterationCap && fits(hi)) {
    lo = hi;
    hi *= 2;
  }
  if (hi >= kIterationCap && fits(kIterationCap)) return kIterationCap;
  // fits(lo) holds and fits(hi) fails.
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

std::size_t plan_iterations(const PrivacySpec& spec) {
  const std::size_t t = max_iterations(spec);
  if (t == 0) {
    throw Error(ErrorCode::BudgetTooSmall,
                "a single update already exceeds epsilon=" + std::to_string(spec.epsilon) + " (" + to_string(spec.variant) +
                    ", sigma=" + std::to_string(spec.sigma) + ", batch=" + std::to_string(spec.batch) + ")");
  }
  return t;
}

nlohmann::json PrivacyReport::to_json() const {
  return {{"variant", to_string(variant)}, {"sigma", sigma},   {"clip", clip},       {"batch", batch},
          {"gamma", gamma},               {"T", iterations},  {"order", order},     {"epsilon", epsilon},
          {"delta", delta}};
}

PrivacyReport make_report(const PrivacySpec& spec, const RdpLedger& ledger) {
  PrivacyReport r;
  r.variant = spec.variant;
  r.sigma = spec.sigma;
  r.clip = spec.clip;
  r.batch = spec.batch;
  r.gamma = spec.sampling_rate();
  r.iterations = ledger.steps();
  r.delta = spec.delta;
  if (ledger.steps() > 0) {
    const Conversion c = compose_and_convert(ledger, spec.delta);
    r.order = c.order;
    r.epsilon = c.epsilon;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Private training

namespace {

TrainConfig private_config(const TrainConfig& config, const PrivacySpec& spec) {
  if (config.loss_mode != LossMode::WganGp) {
    throw Error(ErrorCode::InvalidConfig, "private training requires loss_mode wgan_gp");
  }
  TrainConfig cfg = config;
  cfg.batch_size = spec.batch;
  if (spec.lipschitz == Lipschitz::WeightClip) cfg.weight_clip = spec.weight_clip;
  return cfg;
}

std::size_t resolve_iterations(const PrivacySpec& spec, std::size_t schedule_cap) {
  const std::size_t planned = spec.iterations ? *spec.iterations : plan_iterations(spec);
  return std::min(planned, schedule_cap);
}

void finish_record(LossRecord& rec, std::size_t steps, std::vector<LossRecord>& trace) {
  if (steps == 0) return;
  const double inv = 1.0 / static_cast<double>(steps);
  rec.d *= inv;
  rec.g *= inv;
  rec.cls *= inv;
  rec.info *= inv;
  rec.cond *= inv;
  trace.push_back(rec);
}

Matrix scaled_grad(const Var& term, const Var& wrt, double factor) {
  return ad::grad(term, {wrt})[0].value() * factor;
}

}  // namespace

PrivateRun train_d_dp(const Table& table, const TrainConfig& config, PrivacySpec spec) {
  spec.variant = Variant::DDp;
  spec.n = table.num_rows();
  spec.validate();
  TrainConfig cfg = private_config(config, spec);
  // The classifier and the information loss read real rows outside the sanitized critic path.
  cfg.use_classifier = false;
  cfg.use_info_loss = false;
  cfg.validate();
  if (table.empty()) throw Error(ErrorCode::EmptyInput, "cannot train on an empty table");

  DataTransformer enc = DataTransformer::fit(table, cfg.encoder);
  Matrix encoded = enc.encode(table);
  GanTrainer trainer(std::move(enc), std::move(encoded), cfg);
  GanModel& model = trainer.model();
  const std::size_t side = model.layout().square_side();
  const std::size_t d_steps = cfg.effective_d_steps();
  const std::size_t steps = trainer.steps_per_epoch();
  const std::size_t total = resolve_iterations(spec, cfg.epochs * steps * d_steps);

  PrivateRun run{GanModel{}, {}, RdpLedger(spec.max_order), {}, 0, false, {}};
  const RdpCurve curve = step_curve(spec);
  auto d_params = model.discriminator.parameters();
  const auto g_params = model.generator.parameters();
  nn::Adam& d_opt = trainer.discriminator_optimizer();
  nn::Adam& g_opt = trainer.generator_optimizer();
  const std::size_t n_params = nn::parameter_count(d_params);

  LossRecord rec;
  std::size_t in_epoch = 0;
  std::size_t epoch = 0;
  while (run.ledger.steps() < total) {
    for (std::size_t k = 0; k < d_steps && run.ledger.steps() < total; ++k) {
      const auto batch = trainer.sample_batch(cfg.batch_size);
      Matrix fake;
      {
        ad::NoGradGuard guard;
        fake = trainer.generate(batch.cond).rows.value();
      }
      Matrix per_example(static_cast<Eigen::Index>(cfg.batch_size), static_cast<Eigen::Index>(n_params));
      double real_term = 0.0;
      for (Eigen::Index i = 0; i < per_example.rows(); ++i) {
        Var in = critic_input(ad::constant(batch.real.row(i)), batch.cond.row(i), side);
        Var loss = trainer.critic_real_rows(model.discriminator, in);
        real_term += loss.item();
        per_example.row(i) = nn::flatten(nn::values_of(ad::grad(loss, d_params))).transpose();
        ++run.counters.critic_real;
      }
      const Vector noisy = sanitize(per_example, spec.clip, spec.sigma, trainer.rng());

      auto terms = trainer.critic_terms(model.discriminator, batch.real, fake, batch.cond);
      Var rest = terms.fake_term;
      if (terms.penalty.defined()) rest = ad::add(rest, terms.penalty);
      auto grads = nn::values_of(ad::grad(rest, d_params));
      const auto private_part = nn::unflatten(noisy, d_params);
      for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += private_part[p];
      d_opt.step(grads);
      if (cfg.weight_clip) model.discriminator.clamp_weights(*cfg.weight_clip);
      run.ledger.compose(curve);

      const double ld = real_term / static_cast<double>(cfg.batch_size) + rest.item();
      check_finite(ld, "L_D", epoch, in_epoch);
      rec.d += ld / static_cast<double>(d_steps);
    }

    const auto batch = trainer.sample_batch(cfg.batch_size);
    const auto fake = trainer.generate(batch.cond);
    const auto terms = trainer.generator_terms(model.discriminator, std::nullopt, batch, fake);
    Var loss = terms.total();
    check_finite(loss.item(), "L_G", epoch, in_epoch);
    g_opt.step(nn::values_of(ad::grad(loss, g_params)));
    rec.g += terms.adversarial.item();
    if (terms.cond.defined()) rec.cond += terms.cond.item();
    ++run.generator_steps;
    if (++in_epoch == steps) {
      rec.epoch = epoch++;
      finish_record(rec, in_epoch, model.trace);
      rec = LossRecord{};
      in_epoch = 0;
    }
  }
  rec.epoch = epoch;
  finish_record(rec, in_epoch, model.trace);

  run.ledger.freeze();
  run.exhausted_before_min_epochs = run.generator_steps < spec.min_epochs * steps;
  run.report = make_report(spec, run.ledger);
  run.model = std::move(model);
  return run;
}

PrivateRun train_g_dp(const Table& table, const TrainConfig& config, PrivacySpec spec) {
  spec.variant = Variant::GDp;
  spec.n = table.num_rows();
  spec.validate();
  TrainConfig cfg = private_config(config, spec);
  cfg.validate();
  if (table.empty()) throw Error(ErrorCode::EmptyInput, "cannot train on an empty table");

  DataTransformer enc = DataTransformer::fit(table, cfg.encoder);
  Matrix encoded = enc.encode(table);
  const EncodingLayout layout = enc.layout();
  const std::size_t target = enc.schema().target_index();

  // Disjoint equal partitions of a seeded permutation; the remainder is dropped.
  const std::size_t nd = spec.n_discriminators;
  const std::size_t per = spec.usable_rows() / nd;
  std::vector<std::size_t> order(table.num_rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 perm_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(order.begin(), order.end(), perm_rng);

  PrivateRun run{GanModel{}, {}, RdpLedger(spec.max_order), {}, 0, false, {}};
  std::vector<Matrix> part_rows(nd);
  for (std::size_t k = 0; k < nd; ++k) {
    std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(k * per),
                                 order.begin() + static_cast<std::ptrdiff_t>((k + 1) * per));
    std::sort(ids.begin(), ids.end());
    Matrix m(static_cast<Eigen::Index>(per), encoded.cols());
    for (std::size_t i = 0; i < per; ++i) m.row(static_cast<Eigen::Index>(i)) = encoded.row(static_cast<Eigen::Index>(ids[i]));
    part_rows[k] = std::move(m);
    run.partitions.push_back(std::move(ids));
  }

  GanTrainer trainer(std::move(enc), std::move(encoded), cfg);
  GanModel& model = trainer.model();
  auto& rng = trainer.rng();
  const std::size_t side = layout.square_side();
  const auto opts = trainer.adam_options();

  std::vector<ConditionalSampler> samplers;
  std::vector<Discriminator> critics;
  std::vector<nn::Adam> critic_opts;
  std::vector<std::optional<Classifier>> classifiers(nd);
  std::vector<nn::Adam> classifier_opts(nd);
  samplers.reserve(nd);
  critics.reserve(nd);
  for (std::size_t k = 0; k < nd; ++k) {
    samplers.emplace_back(layout, part_rows[k]);
    critics.emplace_back(side * side, cfg.hidden, true, rng);
    critic_opts.emplace_back(critics.back().parameters(), opts);
    if (model.classifier) {
      classifiers[k] = Classifier(layout.width - layout.span_for_column(target).onehot_len, cfg.classifier_hidden,
                                  cfg.classifier_layers, layout.span_for_column(target).onehot_len,
                                  cfg.classifier_dropout, rng);
      classifier_opts[k] = nn::Adam(classifiers[k]->parameters(), opts);
    }
  }

  const std::size_t d_steps = cfg.effective_d_steps();
  const std::size_t steps = std::max<std::size_t>(1, spec.usable_rows() / cfg.batch_size);
  const std::size_t total = resolve_iterations(spec, cfg.epochs * steps);
  const RdpCurve curve = step_curve(spec);
  const auto g_params = model.generator.parameters();
  const double b = static_cast<double>(cfg.batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, nd - 1);

  LossRecord rec;
  std::size_t in_epoch = 0;
  std::size_t epoch = 0;
  while (run.ledger.steps() < total) {
    const std::size_t k = pick(rng);
    GanTrainer::Batch batch;
    for (std::size_t s = 0; s < d_steps; ++s) {
      batch = trainer.sample_batch(cfg.batch_size, samplers[k], part_rows[k]);
      const double ld = trainer.discriminator_step(critics[k], critic_opts[k], batch);
      check_finite(ld, "L_D", epoch, in_epoch);
      rec.d += ld / static_cast<double>(d_steps);
    }
    if (classifiers[k]) {
      const double lc = trainer.classifier_step(*classifiers[k], classifier_opts[k], batch.real);
      check_finite(lc, "L_C", epoch, in_epoch);
    }

    batch = trainer.sample_batch(cfg.batch_size, samplers[k], part_rows[k]);
    const auto fake = trainer.generate(batch.cond);
    const auto terms = trainer.generator_terms(critics[k], classifiers[k], batch, fake);
    check_finite(terms.total().item(), "L_G", epoch, in_epoch);

    // Upstream gradients w.r.t. the generated rows, scaled to per-example size (x B).
    Matrix upstream = sanitize_rows(scaled_grad(terms.adversarial, fake.rows, b), spec.clip, spec.sigma, rng);
    ++run.counters.adversarial;
    if (terms.info.defined()) {
      upstream += sanitize_rows(scaled_grad(terms.info, fake.rows, b), spec.clip, spec.sigma, rng);
      ++run.counters.info;
    }
    if (terms.cls.defined()) {
      upstream += sanitize_rows(scaled_grad(terms.cls, fake.rows, b), spec.clip, spec.sigma, rng);
      ++run.counters.classifier;
    }
    Var surrogate = ad::sum(ad::mul(fake.rows, ad::constant(std::move(upstream))));
    if (terms.cond.defined()) surrogate = ad::add(surrogate, terms.cond);
    trainer.generator_optimizer().step(nn::values_of(ad::grad(surrogate, g_params)));
    run.ledger.compose(curve);

    rec.g += terms.adversarial.item();
    if (terms.cls.defined()) rec.cls += terms.cls.item();
    if (terms.info.defined()) rec.info += terms.info.item();
    if (terms.cond.defined()) rec.cond += terms.cond.item();
    ++run.generator_steps;
    if (++in_epoch == steps) {
      rec.epoch = epoch++;
      finish_record(rec, in_epoch, model.trace);
      rec = LossRecord{};
      in_epoch = 0;
    }
  }
  rec.epoch = epoch;
  finish_record(rec, in_epoch, model.trace);

  // Only the generator is covered by the guarantee; the released checkpoint carries
  // freshly initialised critic and classifier weights instead of partition-trained ones.
  std::mt19937_64 fresh(cfg.seed + 1);
  model.discriminator = Discriminator(side * side, cfg.hidden, true, fresh);
  if (model.classifier) {
    model.classifier = Classifier(layout.width - layout.span_for_column(target).onehot_len, cfg.classifier_hidden,
                                  cfg.classifier_layers, layout.span_for_column(target).onehot_len,
                                  cfg.classifier_dropout, fresh);
  }

  run.ledger.freeze();
  run.exhausted_before_min_epochs = run.generator_steps < spec.min_epochs * steps;
  run.report = make_report(spec, run.ledger);
  run.model = std::move(model);
  return run;
}

PrivateRun train_private(const Table& table, const TrainConfig& config, const PrivacySpec& spec) {
  return spec.variant == Variant::DDp ? train_d_dp(table, config, spec) : train_g_dp(table, config, spec);
}

}  // namespace tabsynth::privacy
