#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tabsynth/autodiff.hpp"
#include "tabsynth/conditioning.hpp"
#include "tabsynth/data.hpp"
#include "tabsynth/encoder.hpp"
#include "tabsynth/nn.hpp"

namespace tabsynth {

using ad::Var;

enum class LossMode { Vanilla, WganGp };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 500;
  std::size_t latent_dim = 100;
  std::size_t hidden = 256;  // width of the generator and discriminator layers
  std::size_t classifier_hidden = 256;
  std::size_t classifier_layers = 4;
  double classifier_dropout = 0.5;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  LossMode loss_mode = LossMode::Vanilla;
  /// 0 picks the mode default: 5 for wgan_gp, 1 for vanilla.
  std::size_t d_steps = 0;
  double gp_coefficient = 10.0;
  ad::Interpolation interpolation = ad::Interpolation::Spherical;
  /// When set, discriminator weights are clamped to [-c, c] after each update and no penalty is added.
  std::optional<double> weight_clip;
  double gumbel_temperature = 0.2;
  bool use_classifier = true;
  bool use_info_loss = true;
  bool use_cond_loss = true;
  EncoderOptions encoder;
  std::uint64_t seed = 0;

  std::size_t effective_d_steps() const;
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossRecord {
  std::size_t epoch = 0;
  double d = 0.0;
  double g = 0.0;
  double cls = 0.0;
  double info = 0.0;
  double cond = 0.0;
};

std::string loss_trace_csv(const std::vector<LossRecord>& trace);
void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Networks

/// MLP [s+E -> h -> h -> T] with layer norm and ReLU; outputs raw pre-activation values.
struct Generator {
  std::vector<nn::Linear> layers;

  Generator() = default;
  Generator(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const;
};

struct CriticOutput {
  Var logit;     // rows x 1
  Var features;  // penultimate activations
};

/// MLP [d^2 -> h -> h -> 1] with leaky ReLU(0.2); layer norm only in wgan_gp mode.
struct Discriminator {
  std::vector<nn::Linear> layers;
  bool layer_norm = false;

  Discriminator() = default;
  Discriminator(std::size_t in, std::size_t hidden, bool layer_norm, std::mt19937_64& rng);
  CriticOutput operator()(const Var& x) const;
  std::vector<Var> parameters() const;
  void clamp_weights(double c);
};

/// Auxiliary classifier over an encoded row with the target segment removed.
struct Classifier {
  std::vector<nn::Linear> layers;  // hidden layers then the head
  double dropout = 0.5;

  Classifier() = default;
  Classifier(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t classes, double dropout,
             std::mt19937_64& rng);
  Var operator()(const Var& x, std::mt19937_64& rng, bool training) const;
  std::vector<Var> parameters() const;
};

// ---------------------------------------------------------------------------
// Loss terms

/// ||E[real] - E[fake]||_2 + ||SD[real] - SD[fake]||_2 over the batch (population SD).
Var info_loss(const Var& real_features, const Var& fake_features);
double info_loss(const Matrix& real_features, const Matrix& fake_features);

/// Mean cross-entropy of the classifier's logits against integer labels.
Var class_loss(const Var& logits, const std::vector<std::size_t>& labels);

/// Cross-entropy between each row's condition and the generator's raw logits for the
/// selected segment (log-softmax over that segment).
Var cond_loss(const Var& raw, const EncodingLayout& layout, const std::vector<CondVector>& conds);

/// Tanh on alpha slots and gumbel-softmax on every one-hot segment.
Var activate(const Var& raw, const EncodingLayout& layout, double temperature, std::mt19937_64& rng);

/// Row-wise concatenation with the condition bits, zero padded to side^2 columns.
Var critic_input(const Var& rows, const Matrix& cond, std::size_t side);

Matrix cond_matrix(const std::vector<CondVector>& conds, std::size_t width);

/// Columns of an encoded batch with the target segment removed, and the target labels.
Var without_target(const Var& rows, const EncodingLayout& layout, std::size_t target_column);
std::vector<std::size_t> target_labels(const Matrix& rows, const EncodingLayout& layout, std::size_t target_column);

// ---------------------------------------------------------------------------
// Model, training and sampling

struct GanModel {
  DataTransformer encoder;
  TrainConfig config;
  Generator generator;
  Discriminator discriminator;
  std::optional<Classifier> classifier;
  FreqStats stats;
  std::vector<LossRecord> trace;

  const EncodingLayout& layout() const { return encoder.layout(); }

  nlohmann::json to_json() const;
  static GanModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static GanModel load(const std::filesystem::path& path);
};

/// Builds networks, optimizers and the condition sampler for one training run.
/// Used by train() and by the private variants, which drive the steps themselves.
class GanTrainer {
 public:
  struct Batch {
    std::vector<CondVector> conds;
    Matrix cond;              // B x E
    Matrix real;              // B x T
    std::vector<std::size_t> rows;
  };

  struct Fake {
    Var raw;   // pre-activation generator output
    Var rows;  // activated rows
  };

  GanTrainer(DataTransformer encoder, Matrix encoded, TrainConfig config);

  GanModel& model() { return model_; }
  const GanModel& model() const { return model_; }
  std::mt19937_64& rng() { return rng_; }
  const Matrix& encoded() const { return encoded_; }
  const ConditionalSampler& sampler() const { return sampler_; }
  std::size_t target_column() const { return target_; }
  std::size_t steps_per_epoch() const;

  /// Conditions by training-by-sampling and real rows that satisfy them.
  Batch sample_batch(std::size_t size);
  /// Same, restricted to another encoded table (a partition) and its sampler.
  Batch sample_batch(std::size_t size, const ConditionalSampler& sampler, const Matrix& encoded);
  Fake generate(const Matrix& cond);

  /// Discriminator loss pieces for one batch. The fake rows are treated as constants.
  struct CriticTerms {
    Var real_term;  // mean over rows of the real-data loss
    Var fake_term;
    Var penalty;    // undefined unless wgan_gp without weight clipping
  };
  CriticTerms critic_terms(const Discriminator& d, const Matrix& real, const Matrix& fake, const Matrix& cond);
  /// Per-row real-data loss (before averaging): rows x 1.
  Var critic_real_rows(const Discriminator& d, const Var& real_in);

  /// Generator adversarial loss per row (rows x 1), given the critic's logits on fake rows.
  Var generator_adversarial_rows(const Var& fake_logits) const;

  double discriminator_step(Discriminator& d, nn::Adam& opt, const Batch& batch);
  double classifier_step(Classifier& c, nn::Adam& opt, const Matrix& real);

  struct GeneratorTerms {
    Var adversarial, info, cls, cond;
    Var total() const;
  };
  GeneratorTerms generator_terms(const Discriminator& d, const std::optional<Classifier>& c, const Batch& batch,
                                 const Fake& fake);

  nn::Adam& generator_optimizer() { return g_opt_; }
  nn::Adam& discriminator_optimizer() { return d_opt_; }
  nn::Adam& classifier_optimizer() { return c_opt_; }

  /// Called after each epoch with the model so far; returning false stops training.
  using EpochCallback = std::function<bool(const GanModel&, std::size_t epoch)>;

  /// Runs the non-private schedule for the configured number of epochs.
  void run(const EpochCallback& on_epoch = {});

  nn::AdamOptions adam_options() const;

 private:
  GanModel model_;
  Matrix encoded_;
  ConditionalSampler sampler_;
  std::mt19937_64 rng_;
  std::size_t target_ = 0;
  nn::Adam g_opt_, d_opt_, c_opt_;
};

/// Throws NonFiniteLoss naming the term, epoch and step.
void check_finite(double value, const char* term, std::size_t epoch, std::size_t step);

GanModel train(const Table& table, const TrainConfig& config, const GanTrainer::EpochCallback& on_epoch = {});

/// Draws n rows. With a condition, every row uses it; otherwise the column is chosen
/// uniformly and the class at its empirical frequency.
Table sample(const GanModel& model, std::size_t n, std::optional<std::pair<std::size_t, std::size_t>> condition,
             std::uint64_t seed);
/// Encoded (soft) rows, before decoding.
Matrix sample_encoded(const GanModel& model, std::size_t n,
                      std::optional<std::pair<std::size_t, std::size_t>> condition, std::uint64_t seed);

}  // namespace tabsynth
