#include "tabsynth/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tabsynth/error.hpp"

namespace tabsynth {

std::string to_string(LossMode m) { return m == LossMode::Vanilla ? "vanilla" : "wgan_gp"; }

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "vanilla") return LossMode::Vanilla;
  if (s == "wgan_gp") return LossMode::WganGp;
  throw Error(ErrorCode::InvalidConfig, "unknown loss_mode '" + s + "'");
}

std::size_t TrainConfig::effective_d_steps() const {
  if (d_steps > 0) return d_steps;
  return loss_mode == LossMode::WganGp ? 5 : 1;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (latent_dim < 1 || hidden < 1) fail("latent_dim and hidden must be positive");
  if (use_classifier && (classifier_hidden < 1 || classifier_layers < 1)) fail("classifier needs a hidden layer");
  if (!(classifier_dropout >= 0.0 && classifier_dropout < 1.0)) fail("classifier_dropout must lie in [0, 1)");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(gp_coefficient >= 0.0)) fail("gp_coefficient must be non-negative");
  if (!(gumbel_temperature > 0.0)) fail("gumbel_temperature must be positive");
  if (weight_clip && !(*weight_clip > 0.0)) fail("weight_clip must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json enc = {{"max_modes", encoder.vgm.max_modes},
                        {"weight_threshold", encoder.vgm.weight_threshold},
                        {"max_iterations", encoder.vgm.max_iterations},
                        {"tolerance", encoder.vgm.tolerance},
                        {"seed", encoder.vgm.seed}};
  if (encoder.long_tail_epsilon) enc["long_tail_epsilon"] = *encoder.long_tail_epsilon;
  nlohmann::json j = {{"epochs", epochs},
                      {"batch_size", batch_size},
                      {"latent_dim", latent_dim},
                      {"hidden", hidden},
                      {"classifier_hidden", classifier_hidden},
                      {"classifier_layers", classifier_layers},
                      {"classifier_dropout", classifier_dropout},
                      {"lr", lr},
                      {"beta1", beta1},
                      {"beta2", beta2},
                      {"loss_mode", to_string(loss_mode)},
                      {"d_steps", d_steps},
                      {"gp_coefficient", gp_coefficient},
                      {"interpolation", interpolation == ad::Interpolation::Spherical ? "spherical" : "linear"},
                      {"gumbel_temperature", gumbel_temperature},
                      {"use_classifier", use_classifier},
                      {"use_info_loss", use_info_loss},
                      {"use_cond_loss", use_cond_loss},
                      {"encoder", enc},
                      {"seed", seed}};
  j["weight_clip"] = weight_clip ? nlohmann::json(*weight_clip) : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.classifier_layers = j.value("classifier_layers", c.classifier_layers);
    c.classifier_dropout = j.value("classifier_dropout", c.classifier_dropout);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.loss_mode = loss_mode_from_string(j.value("loss_mode", to_string(c.loss_mode)));
    c.d_steps = j.value("d_steps", c.d_steps);
    c.gp_coefficient = j.value("gp_coefficient", c.gp_coefficient);
    const std::string interp = j.value("interpolation", std::string("spherical"));
    if (interp == "spherical") {
      c.interpolation = ad::Interpolation::Spherical;
    } else if (interp == "linear") {
      c.interpolation = ad::Interpolation::Linear;
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown interpolation '" + interp + "'");
    }
    if (j.contains("weight_clip") && !j["weight_clip"].is_null()) c.weight_clip = j["weight_clip"].get<double>();
    c.gumbel_temperature = j.value("gumbel_temperature", c.gumbel_temperature);
    c.use_classifier = j.value("use_classifier", c.use_classifier);
    c.use_info_loss = j.value("use_info_loss", c.use_info_loss);
    c.use_cond_loss = j.value("use_cond_loss", c.use_cond_loss);
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      c.encoder.vgm.max_modes = e.value("max_modes", c.encoder.vgm.max_modes);
      c.encoder.vgm.weight_threshold = e.value("weight_threshold", c.encoder.vgm.weight_threshold);
      c.encoder.vgm.max_iterations = e.value("max_iterations", c.encoder.vgm.max_iterations);
      c.encoder.vgm.tolerance = e.value("tolerance", c.encoder.vgm.tolerance);
      c.encoder.vgm.seed = e.value("seed", c.encoder.vgm.seed);
      if (e.contains("long_tail_epsilon")) c.encoder.long_tail_epsilon = e["long_tail_epsilon"].get<double>();
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream out;
  out << "epoch,L_D,L_G,L_class,L_info,L_cond\n";
  for (const auto& r : trace) {
    out << r.epoch << ',' << format_number(r.d) << ',' << format_number(r.g) << ',' << format_number(r.cls) << ','
        << format_number(r.info) << ',' << format_number(r.cond) << '\n';
  }
  return out.str();
}

void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << loss_trace_csv(trace);
}

// ---------------------------------------------------------------------------
// Networks

Generator::Generator(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  layers.emplace_back(in, hidden, rng);
  layers.emplace_back(hidden, hidden, rng);
  layers.emplace_back(hidden, out, rng);
}

Var Generator::operator()(const Var& x) const {
  Var h = ad::relu(ad::layer_norm(layers[0](x)));
  h = ad::relu(ad::layer_norm(layers[1](h)));
  return layers[2](h);
}

std::vector<Var> Generator::parameters() const {
  std::vector<Var> p;
  for (const auto& l : layers) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  return p;
}

Discriminator::Discriminator(std::size_t in, std::size_t hidden, bool norm, std::mt19937_64& rng) : layer_norm(norm) {
  layers.emplace_back(in, hidden, rng);
  layers.emplace_back(hidden, hidden, rng);
  layers.emplace_back(hidden, 1, rng);
}

CriticOutput Discriminator::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = layers[i](h);
    if (layer_norm) h = ad::layer_norm(h);
    h = ad::leaky_relu(h, 0.2);
  }
  return {layers.back()(h), h};
}

std::vector<Var> Discriminator::parameters() const {
  std::vector<Var> p;
  for (const auto& l : layers) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  return p;
}

void Discriminator::clamp_weights(double c) {
  for (auto& p : parameters()) {
    auto& v = p.mutable_value();
    v = v.cwiseMax(-c).cwiseMin(c);
  }
}

Classifier::Classifier(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t classes, double p,
                       std::mt19937_64& rng)
    : dropout(p) {
  std::size_t width = in;
  for (std::size_t i = 0; i < depth; ++i) {
    layers.emplace_back(width, hidden, rng);
    width = hidden;
  }
  layers.emplace_back(width, classes, rng);
}

Var Classifier::operator()(const Var& x, std::mt19937_64& rng, bool training) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = ad::leaky_relu(layers[i](h), 0.2);
    if (dropout > 0.0) h = ad::dropout(h, dropout, rng, training);
  }
  return layers.back()(h);
}

std::vector<Var> Classifier::parameters() const {
  std::vector<Var> p;
  for (const auto& l : layers) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Loss terms

Var info_loss(const Var& real_features, const Var& fake_features) {
  if (real_features.cols() != fake_features.cols()) {
    throw Error(ErrorCode::WidthMismatch, "info_loss: feature widths differ");
  }
  Var mean_gap = ad::sub(ad::mean_rows(real_features), ad::mean_rows(fake_features));
  Var sd_real = ad::pow(ad::add_scalar(ad::variance_rows(real_features), 1e-12), 0.5);
  Var sd_fake = ad::pow(ad::add_scalar(ad::variance_rows(fake_features), 1e-12), 0.5);
  return ad::add(ad::l2_norm(mean_gap), ad::l2_norm(ad::sub(sd_real, sd_fake)));
}

double info_loss(const Matrix& real_features, const Matrix& fake_features) {
  if (real_features.cols() != fake_features.cols()) {
    throw Error(ErrorCode::WidthMismatch, "info_loss: feature widths differ");
  }
  auto moments = [](const Matrix& m) {
    const Eigen::RowVectorXd mu = m.colwise().mean();
    const Eigen::RowVectorXd sd =
        ((m.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(m.rows())).sqrt();
    return std::make_pair(mu, sd);
  };
  const auto [mr, sr] = moments(real_features);
  const auto [mf, sf] = moments(fake_features);
  return (mr - mf).norm() + (sr - sf).norm();
}

Var class_loss(const Var& logits, const std::vector<std::size_t>& labels) { return ad::cross_entropy(logits, labels); }

Var cond_loss(const Var& raw, const EncodingLayout& layout, const std::vector<CondVector>& conds) {
  if (static_cast<std::size_t>(raw.rows()) != conds.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cond_loss: one condition per generated row");
  }
  Var total;
  for (std::size_t s = 0; s < layout.spans.size(); ++s) {
    const auto& span = layout.spans[s];
    Matrix mask = Matrix::Zero(raw.rows(), static_cast<Eigen::Index>(span.onehot_len));
    bool any = false;
    for (std::size_t i = 0; i < conds.size(); ++i) {
      if (conds[i].span_index != s) continue;
      mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(conds[i].selected_class)) = 1.0;
      any = true;
    }
    if (!any) continue;
    Var logp = ad::log_softmax(ad::slice_cols(raw, static_cast<Eigen::Index>(span.onehot_offset),
                                              static_cast<Eigen::Index>(span.onehot_len)));
    Var term = ad::sum(ad::mul(ad::constant(std::move(mask)), logp));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, -1.0 / static_cast<double>(conds.size()));
}

Var activate(const Var& raw, const EncodingLayout& layout, double temperature, std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, Var>> pieces;
  for (const auto& s : layout.spans) {
    if (s.kind != ColumnKind::Categorical) {
      pieces.emplace_back(s.alpha_offset, ad::tanh(ad::slice_cols(raw, static_cast<Eigen::Index>(s.alpha_offset), 1)));
    }
    Var seg = ad::slice_cols(raw, static_cast<Eigen::Index>(s.onehot_offset), static_cast<Eigen::Index>(s.onehot_len));
    pieces.emplace_back(s.onehot_offset, ad::gumbel_softmax(seg, temperature, rng));
  }
  std::sort(pieces.begin(), pieces.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Var> parts;
  parts.reserve(pieces.size());
  for (auto& p : pieces) parts.push_back(std::move(p.second));
  return ad::concat_cols(parts);
}

Var critic_input(const Var& rows, const Matrix& cond, std::size_t side) {
  Var x = ad::concat_cols({rows, ad::constant(cond)});
  const auto total = static_cast<Eigen::Index>(side * side);
  if (x.cols() > total) throw Error(ErrorCode::LayoutMismatch, "row and condition exceed the square side");
  return x.cols() == total ? x : ad::embed_cols(x, 0, total);
}

Matrix cond_matrix(const std::vector<CondVector>& conds, std::size_t width) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(conds.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (conds[i].bits.size() != width) throw Error(ErrorCode::LayoutMismatch, "condition width mismatch");
    for (std::size_t j = 0; j < width; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = conds[i].bits[j];
  }
  return m;
}

Var without_target(const Var& rows, const EncodingLayout& layout, std::size_t target_column) {
  const auto& span = layout.span_for_column(target_column);
  const auto off = static_cast<Eigen::Index>(span.onehot_offset);
  const auto len = static_cast<Eigen::Index>(span.onehot_len);
  std::vector<Var> parts;
  if (off > 0) parts.push_back(ad::slice_cols(rows, 0, off));
  if (off + len < rows.cols()) parts.push_back(ad::slice_cols(rows, off + len, rows.cols() - off - len));
  if (parts.empty()) throw Error(ErrorCode::LayoutMismatch, "no columns besides the target");
  return parts.size() == 1 ? parts[0] : ad::concat_cols(parts);
}

std::vector<std::size_t> target_labels(const Matrix& rows, const EncodingLayout& layout, std::size_t target_column) {
  const auto& span = layout.span_for_column(target_column);
  std::vector<std::size_t> labels(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index k = 0;
    rows.row(r).segment(static_cast<Eigen::Index>(span.onehot_offset), static_cast<Eigen::Index>(span.onehot_len)).maxCoeff(&k);
    labels[static_cast<std::size_t>(r)] = static_cast<std::size_t>(k);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

std::size_t classifier_input_width(const EncodingLayout& layout, std::size_t target) {
  return layout.width - layout.span_for_column(target).onehot_len;
}

void build_networks(GanModel& m, std::mt19937_64& rng) {
  const auto& layout = m.layout();
  const auto& cfg = m.config;
  m.generator = Generator(cfg.latent_dim + layout.cond_width, cfg.hidden, layout.width, rng);
  const std::size_t side = layout.square_side();
  m.discriminator = Discriminator(side * side, cfg.hidden, cfg.loss_mode == LossMode::WganGp, rng);
  m.classifier.reset();
  if (cfg.use_classifier) {
    const std::size_t target = m.encoder.schema().target_index();
    if (m.encoder.schema()[target].kind != ColumnKind::Categorical) {
      throw Error(ErrorCode::InvalidConfig, "the auxiliary classifier needs a categorical target");
    }
    m.classifier = Classifier(classifier_input_width(layout, target), cfg.classifier_hidden, cfg.classifier_layers,
                              layout.span_for_column(target).onehot_len, cfg.classifier_dropout, rng);
  }
}

}  // namespace

nlohmann::json GanModel::to_json() const {
  nlohmann::json trace_json = nlohmann::json::array();
  for (const auto& r : trace) {
    trace_json.push_back({{"epoch", r.epoch}, {"d", r.d}, {"g", r.g}, {"cls", r.cls}, {"info", r.info}, {"cond", r.cond}});
  }
  return {{"format", "tabsynth-gan"},
          {"version", 1},
          {"config", config.to_json()},
          {"encoder", encoder.to_json()},
          {"layout", layout().to_json()},
          {"generator", nn::parameters_to_json(generator.parameters())},
          {"discriminator", nn::parameters_to_json(discriminator.parameters())},
          {"classifier", classifier ? nn::parameters_to_json(classifier->parameters()) : nlohmann::json(nullptr)},
          {"stats", stats.to_json()},
          {"trace", trace_json}};
}

GanModel GanModel::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "tabsynth-gan" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::InvalidConfig, "not a version 1 tabsynth-gan checkpoint");
  }
  GanModel m;
  m.config = TrainConfig::from_json(j.at("config"));
  m.encoder = DataTransformer::from_json(j.at("encoder"));
  std::mt19937_64 rng(0);
  build_networks(m, rng);
  auto gp = m.generator.parameters();
  nn::parameters_from_json(j.at("generator"), gp);
  auto dp = m.discriminator.parameters();
  nn::parameters_from_json(j.at("discriminator"), dp);
  if (m.classifier) {
    if (j.at("classifier").is_null()) throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks classifier weights");
    auto cp = m.classifier->parameters();
    nn::parameters_from_json(j.at("classifier"), cp);
  }
  m.stats = FreqStats::from_json(j.at("stats"));
  for (const auto& r : j.value("trace", nlohmann::json::array())) {
    m.trace.push_back({r.at("epoch").get<std::size_t>(), r.at("d").get<double>(), r.at("g").get<double>(),
                       r.at("cls").get<double>(), r.at("info").get<double>(), r.at("cond").get<double>()});
  }
  return m;
}

void GanModel::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << to_json().dump();
}

GanModel GanModel::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Trainer

void check_finite(double value, const char* term, std::size_t epoch, std::size_t step) {
  if (std::isfinite(value)) return;
  throw Error(ErrorCode::NonFiniteLoss, std::string(term) + " became " + std::to_string(value) + " at epoch " +
                                            std::to_string(epoch) + ", step " + std::to_string(step));
}

GanTrainer::GanTrainer(DataTransformer encoder, Matrix encoded, TrainConfig config)
    : encoded_(std::move(encoded)), sampler_(encoder.layout(), encoded_), rng_(config.seed) {
  config.validate();
  if (encoded_.rows() == 0) throw Error(ErrorCode::EmptyInput, "cannot train on an empty table");
  if (static_cast<std::size_t>(encoded_.cols()) != encoder.layout().width) {
    throw Error(ErrorCode::LayoutMismatch, "encoded table width does not match the layout");
  }
  model_.encoder = std::move(encoder);
  model_.config = config;
  model_.stats = sampler_.stats();
  target_ = model_.encoder.schema().target_index();
  build_networks(model_, rng_);
  const auto opts = adam_options();
  g_opt_ = nn::Adam(model_.generator.parameters(), opts);
  d_opt_ = nn::Adam(model_.discriminator.parameters(), opts);
  if (model_.classifier) c_opt_ = nn::Adam(model_.classifier->parameters(), opts);
}

nn::AdamOptions GanTrainer::adam_options() const {
  nn::AdamOptions o;
  o.lr = model_.config.lr;
  o.beta1 = model_.config.beta1;
  o.beta2 = model_.config.beta2;
  return o;
}

std::size_t GanTrainer::steps_per_epoch() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(encoded_.rows()) / model_.config.batch_size);
}

GanTrainer::Batch GanTrainer::sample_batch(std::size_t size) { return sample_batch(size, sampler_, encoded_); }

GanTrainer::Batch GanTrainer::sample_batch(std::size_t size, const ConditionalSampler& sampler, const Matrix& encoded) {
  Batch b;
  b.conds.reserve(size);
  b.rows.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    b.conds.push_back(sampler.sample(rng_));
    b.rows.push_back(sampler.sample_row(b.conds.back(), rng_));
  }
  b.cond = cond_matrix(b.conds, model_.layout().cond_width);
  b.real.resize(static_cast<Eigen::Index>(size), encoded.cols());
  for (std::size_t i = 0; i < size; ++i) b.real.row(static_cast<Eigen::Index>(i)) = encoded.row(static_cast<Eigen::Index>(b.rows[i]));
  return b;
}

GanTrainer::Fake GanTrainer::generate(const Matrix& cond) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix z(cond.rows(), static_cast<Eigen::Index>(model_.config.latent_dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng_);
  Var raw = model_.generator(ad::concat_cols({ad::constant(std::move(z)), ad::constant(cond)}));
  Var rows = activate(raw, model_.layout(), model_.config.gumbel_temperature, rng_);
  return {raw, rows};
}

Var GanTrainer::critic_real_rows(const Discriminator& d, const Var& real_in) {
  Var logit = d(real_in).logit;
  return model_.config.loss_mode == LossMode::Vanilla ? ad::softplus(ad::scale(logit, -1.0)) : ad::scale(logit, -1.0);
}

Var GanTrainer::generator_adversarial_rows(const Var& fake_logits) const {
  return model_.config.loss_mode == LossMode::Vanilla ? ad::softplus(ad::scale(fake_logits, -1.0))
                                                      : ad::scale(fake_logits, -1.0);
}

GanTrainer::CriticTerms GanTrainer::critic_terms(const Discriminator& d, const Matrix& real, const Matrix& fake,
                                                 const Matrix& cond) {
  const std::size_t side = model_.layout().square_side();
  Var real_in = critic_input(ad::constant(real), cond, side);
  Var fake_in = critic_input(ad::constant(fake), cond, side);
  CriticTerms t;
  t.real_term = ad::mean(critic_real_rows(d, real_in));
  Var fake_logit = d(fake_in).logit;
  t.fake_term = ad::mean(model_.config.loss_mode == LossMode::Vanilla ? ad::softplus(fake_logit) : fake_logit);
  if (model_.config.loss_mode == LossMode::WganGp && !model_.config.weight_clip && model_.config.gp_coefficient > 0.0) {
    auto critic = [&d](const Var& x) { return d(x).logit; };
    t.penalty = ad::gradient_penalty(critic, real_in.value(), fake_in.value(), model_.config.gp_coefficient, rng_,
                                     model_.config.interpolation)
                    .penalty;
  }
  return t;
}

double GanTrainer::discriminator_step(Discriminator& d, nn::Adam& opt, const Batch& batch) {
  Matrix fake;
  {
    ad::NoGradGuard guard;
    fake = generate(batch.cond).rows.value();
  }
  const auto t = critic_terms(d, batch.real, fake, batch.cond);
  Var loss = ad::add(t.real_term, t.fake_term);
  if (t.penalty.defined()) loss = ad::add(loss, t.penalty);
  const auto grads = ad::grad(loss, d.parameters());
  opt.step(nn::values_of(grads));
  if (model_.config.weight_clip) d.clamp_weights(*model_.config.weight_clip);
  return loss.item();
}

double GanTrainer::classifier_step(Classifier& c, nn::Adam& opt, const Matrix& real) {
  const auto& layout = model_.layout();
  Var logits = c(without_target(ad::constant(real), layout, target_), rng_, true);
  Var loss = class_loss(logits, target_labels(real, layout, target_));
  const auto grads = ad::grad(loss, c.parameters());
  opt.step(nn::values_of(grads));
  return loss.item();
}

Var GanTrainer::GeneratorTerms::total() const {
  Var t = adversarial;
  for (const Var* v : {&info, &cls, &cond}) {
    if (v->defined()) t = ad::add(t, *v);
  }
  return t;
}

GanTrainer::GeneratorTerms GanTrainer::generator_terms(const Discriminator& d, const std::optional<Classifier>& c,
                                                       const Batch& batch, const Fake& fake) {
  const auto& layout = model_.layout();
  const std::size_t side = layout.square_side();
  GeneratorTerms t;
  const CriticOutput out = d(critic_input(fake.rows, batch.cond, side));
  t.adversarial = ad::mean(generator_adversarial_rows(out.logit));
  if (model_.config.use_info_loss) {
    Matrix real_features;
    {
      ad::NoGradGuard guard;
      real_features = d(critic_input(ad::constant(batch.real), batch.cond, side)).features.value();
    }
    t.info = info_loss(ad::constant(std::move(real_features)), out.features);
  }
  if (c) {
    Var logits = (*c)(without_target(fake.rows, layout, target_), rng_, false);
    t.cls = class_loss(logits, target_labels(fake.rows.value(), layout, target_));
  }
  if (model_.config.use_cond_loss) t.cond = cond_loss(fake.raw, layout, batch.conds);
  return t;
}

void GanTrainer::run(const EpochCallback& on_epoch) {
  const auto& cfg = model_.config;
  const std::size_t steps = steps_per_epoch();
  const auto g_params = model_.generator.parameters();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossRecord rec;
    rec.epoch = epoch;
    for (std::size_t step = 0; step < steps; ++step) {
      Batch batch;
      for (std::size_t k = 0; k < cfg.effective_d_steps(); ++k) {
        batch = sample_batch(cfg.batch_size);
        const double ld = discriminator_step(model_.discriminator, d_opt_, batch);
        check_finite(ld, "L_D", epoch, step);
        rec.d += ld / static_cast<double>(cfg.effective_d_steps());
      }
      if (model_.classifier) {
        const double lc = classifier_step(*model_.classifier, c_opt_, batch.real);
        check_finite(lc, "L_C", epoch, step);
      }
      batch = sample_batch(cfg.batch_size);
      const Fake fake = generate(batch.cond);
      const GeneratorTerms terms = generator_terms(model_.discriminator, model_.classifier, batch, fake);
      Var loss = terms.total();
      check_finite(loss.item(), "L_G", epoch, step);
      const auto grads = ad::grad(loss, g_params);
      g_opt_.step(nn::values_of(grads));
      rec.g += terms.adversarial.item();
      if (terms.cls.defined()) rec.cls += terms.cls.item();
      if (terms.info.defined()) rec.info += terms.info.item();
      if (terms.cond.defined()) rec.cond += terms.cond.item();
    }
    const double inv = 1.0 / static_cast<double>(steps);
    rec.d *= inv;
    rec.g *= inv;
    rec.cls *= inv;
    rec.info *= inv;
    rec.cond *= inv;
    model_.trace.push_back(rec);
    if (on_epoch && !on_epoch(model_, epoch)) break;
  }
}

GanModel train(const Table& table, const TrainConfig& config, const GanTrainer::EpochCallback& on_epoch) {
  config.validate();
  if (table.empty()) throw Error(ErrorCode::EmptyInput, "cannot train on an empty table");
  DataTransformer enc = DataTransformer::fit(table, config.encoder);
  Matrix encoded = enc.encode(table);
  GanTrainer trainer(std::move(enc), std::move(encoded), config);
  trainer.run(on_epoch);
  return std::move(trainer.model());
}

// ---------------------------------------------------------------------------
// Sampling

Matrix sample_encoded(const GanModel& model, std::size_t n,
                      std::optional<std::pair<std::size_t, std::size_t>> condition, std::uint64_t seed) {
  const auto& layout = model.layout();
  std::optional<CondVector> fixed;
  if (condition) {
    try {
      fixed = build_cond_vector(layout, condition->first, condition->second);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidCondition, e.what());
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  ad::NoGradGuard guard;
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(layout.width));
  const std::size_t chunk = std::max<std::size_t>(1, model.config.batch_size);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    std::vector<CondVector> conds;
    conds.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      conds.push_back(fixed ? *fixed : sample_condition(layout, model.stats, rng, ClassWeighting::Empirical));
    }
    Matrix z(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(model.config.latent_dim));
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
    Var raw = model.generator(ad::concat_cols({ad::constant(std::move(z)), ad::constant(cond_matrix(conds, layout.cond_width))}));
    Var rows = activate(raw, layout, model.config.gumbel_temperature, rng);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(m)) = rows.value();
  }
  return out;
}

Table sample(const GanModel& model, std::size_t n, std::optional<std::pair<std::size_t, std::size_t>> condition,
             std::uint64_t seed) {
  return model.encoder.decode(sample_encoded(model, n, condition, seed));
}

}  // namespace tabsynth
