#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "tabsynth/error.hpp"
#include "tabsynth/gan.hpp"
#include "test_util.hpp"

using namespace tabsynth;
namespace tt = tabsynth::testing;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 50;
  c.latent_dim = 8;
  c.hidden = 16;
  c.classifier_hidden = 16;
  c.classifier_layers = 2;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(InfoLoss, ConstantShiftClosedForm) {
  const double c = 0.7;
  const std::size_t w = 9;
  const Matrix real = Matrix::Zero(6, static_cast<Eigen::Index>(w));
  const Matrix fake = Matrix::Constant(6, static_cast<Eigen::Index>(w), c);
  EXPECT_NEAR(info_loss(real, fake), c * std::sqrt(static_cast<double>(w)), 1e-9);
  // The differentiable form smooths the square roots, which shifts it by about 1e-6.
  EXPECT_NEAR(info_loss(ad::constant(real), ad::constant(fake)).item(), info_loss(real, fake), 1e-5);
}

TEST(InfoLoss, MatchesHandComputedMeanAndSd) {
  Matrix real(2, 1), fake(2, 1);
  real << 0.0, 2.0;  // mean 1, population sd 1
  fake << 1.0, 1.0;  // mean 1, sd 0
  EXPECT_NEAR(info_loss(real, fake), 1.0, 1e-6);
  EXPECT_THROW(info_loss(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), Error);
}

TEST(CondLoss, UniformLogitsGiveLogWidth) {
  TableSchema schema({tt::continuous("x"), tt::categorical("y", {"a", "b", "c", "d"}, true)});
  Table t(schema);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) t.add_row({Cell::number(g(rng)), Cell::category(static_cast<std::size_t>(i % 4))});
  const auto enc = DataTransformer::fit(t);
  const auto& layout = enc.layout();
  std::vector<CondVector> conds;
  for (std::size_t k = 0; k < 4; ++k) conds.push_back(build_cond_vector(layout, 1, k));
  const Var raw = ad::constant(Matrix::Zero(4, static_cast<Eigen::Index>(layout.width)));
  EXPECT_NEAR(cond_loss(raw, layout, conds).item(), std::log(4.0), 1e-12);
}

TEST(Activate, AlphaBoundedAndSegmentsSumToOne) {
  const Table t = tt::spike_table(300, 0.3, 1);
  const auto enc = DataTransformer::fit(t);
  const auto& layout = enc.layout();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 3.0);
  Matrix raw(20, static_cast<Eigen::Index>(layout.width));
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = g(rng);
  const Matrix out = activate(ad::constant(raw), layout, 0.2, rng).value();
  for (const auto& s : layout.spans) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      if (s.kind != ColumnKind::Categorical) EXPECT_LE(std::abs(out(r, static_cast<Eigen::Index>(s.alpha_offset))), 1.0);
      double sum = 0.0;
      for (std::size_t k = 0; k < s.onehot_len; ++k) sum += out(r, static_cast<Eigen::Index>(s.onehot_offset + k));
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(CriticInput, PadsToTheSquare) {
  const Var rows = ad::constant(Matrix::Ones(3, 5));
  const Matrix cond = Matrix::Constant(3, 2, 2.0);
  const Matrix in = critic_input(rows, cond, 3).value();
  ASSERT_EQ(in.cols(), 9);
  EXPECT_EQ(in(1, 4), 1.0);
  EXPECT_EQ(in(1, 5), 2.0);
  EXPECT_EQ(in(1, 7), 0.0);
  EXPECT_EQ(in(1, 8), 0.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = small_config();
  c.loss_mode = LossMode::WganGp;
  c.weight_clip = 0.02;
  c.interpolation = ad::Interpolation::Linear;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(c.effective_d_steps(), 5u);
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(loss_mode_from_string("hinge"), Error);
}

TEST(Training, TraceHasOneRecordPerEpoch) {
  const Table t = tt::bimodal_binary_table(200, 3);
  const GanModel m = train(t, small_config());
  ASSERT_EQ(m.trace.size(), 2u);
  const std::string csv = loss_trace_csv(m.trace);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,L_D,L_G,L_class,L_info,L_cond");
  for (const auto& r : m.trace) {
    EXPECT_TRUE(std::isfinite(r.d));
    EXPECT_TRUE(std::isfinite(r.g));
    EXPECT_GT(r.cls, 0.0);
  }
}

TEST(Training, DeterministicGivenSeed) {
  const Table t = tt::bimodal_binary_table(150, 4);
  const GanModel a = train(t, small_config()), b = train(t, small_config());
  const auto pa = a.generator.parameters(), pb = b.generator.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value(), pb[i].value());
  EXPECT_EQ(sample(a, 40, std::nullopt, 9), sample(b, 40, std::nullopt, 9));
}

TEST(Training, CheckpointRoundTripSamplesIdentically) {
  const Table t = tt::spike_table(150, 0.4, 5);
  const GanModel m = train(t, small_config());
  const auto path = std::filesystem::temp_directory_path() / "tabsynth_gan_test_ckpt.json";
  m.save(path);
  const GanModel back = GanModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(sample(m, 60, std::nullopt, 3), sample(back, 60, std::nullopt, 3));
  EXPECT_EQ(sample(m, 60, std::make_pair<std::size_t, std::size_t>(1, 1), 3),
            sample(back, 60, std::make_pair<std::size_t, std::size_t>(1, 1), 3));
  EXPECT_EQ(back.trace.size(), m.trace.size());
}

TEST(Training, WganGpWithWeightClipBoundsTheCritic) {
  TrainConfig c = small_config();
  c.loss_mode = LossMode::WganGp;
  c.weight_clip = 0.03;
  c.epochs = 1;
  const GanModel m = train(tt::bimodal_binary_table(100, 6), c);
  for (const auto& p : m.discriminator.parameters()) EXPECT_LE(p.value().cwiseAbs().maxCoeff(), 0.03 + 1e-12);
  EXPECT_TRUE(m.discriminator.layer_norm);
}

TEST(Sampling, SchemaAndSizes) {
  const Table t = tt::bimodal_binary_table(120, 7);
  const GanModel m = train(t, small_config());
  EXPECT_EQ(sample(m, 0, std::nullopt, 1).num_rows(), 0u);
  const Table s = sample(m, 123, std::nullopt, 1);
  EXPECT_EQ(s.num_rows(), 123u);
  EXPECT_EQ(s.schema(), t.schema());
  try {
    sample(m, 5, std::make_pair<std::size_t, std::size_t>(1, 7), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCondition);
  }
}

TEST(Training, NonFiniteLossIsReported) {
  try {
    check_finite(std::nan(""), "L_G", 3, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 3"), std::string::npos);
  }
}

TEST(Training, ClassifierNeedsCategoricalTarget) {
  auto spec = tt::continuous("t");
  spec.is_target = true;
  TableSchema with_target({tt::continuous("x"), spec});
  Table t(with_target);
  for (int i = 0; i < 60; ++i) t.add_row({Cell::number(i), Cell::number(i * 0.5)});
  EXPECT_THROW(train(t, small_config()), Error);
  TrainConfig c = small_config();
  c.use_classifier = false;
  EXPECT_NO_THROW(train(t, c));
}
