#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "rlstm/oracles.hpp"
#include "rlstm/trainer.hpp"

using namespace rlstm;

namespace {

ModelParams<double> tiny(std::uint64_t seed, StackConfig c = {2, 2, 8, DimFix::pad_input_with_zeros},
                         std::size_t vocab = 12) {
  Rng rng(seed);
  return ModelParams<double>::random(c, vocab, rng, 0.3);
}

std::vector<IndexPair> pairs() {
  return {{{3, 4, 5, 6}, {7, 8, 9}}, {{10, 11}, {3, 5, kPad, kPad}}, {{4}, {11, 10, 9, 8, 7}}};
}

}  // namespace

TEST(LrSchedule, HalvesEveryThreeEpochs) {
  TrainConfig c;
  EXPECT_EQ(lr_at(0, c), 1.0);
  EXPECT_EQ(lr_at(2, c), 1.0);
  EXPECT_EQ(lr_at(3, c), 0.5);
  EXPECT_EQ(lr_at(6, c), 0.25);
  EXPECT_EQ(lr_at(9, c), 0.125);
  c.initial_lr = 0.7;
  c.halve_every = 1;
  EXPECT_DOUBLE_EQ(lr_at(2, c), 0.175);
}

TEST(TrainConfigTest, ValidateRejectsBadValues) {
  TrainConfig c;
  c.dropout_keep = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_grad_norm = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_loss_normalization("token"), LossNormalization::token);
  EXPECT_THROW(parse_loss_normalization("batch"), ConfigError);
}

TEST(BatchLoss, MatchesScalarOracle) {
  const auto m = tiny(1);
  const auto batch = pairs();
  const auto r = batch_loss(m, std::span<const IndexPair>(batch));
  double nll = 0.0;
  nll -= oracle::scalar_sequence_log_prob(m, batch[0].source, batch[0].target);
  nll -= oracle::scalar_sequence_log_prob(m, batch[1].source, {3, 5});
  nll -= oracle::scalar_sequence_log_prob(m, batch[2].source, batch[2].target);
  EXPECT_EQ(r.tokens, 4u + 3u + 6u);
  EXPECT_NEAR(r.nll_sum, nll, 1e-11);
  EXPECT_NEAR(r.loss, nll / 13.0, 1e-12);
}

TEST(BatchLoss, GradientMatchesFiniteDifferences) {
  for (auto fix : {DimFix::pad_input_with_zeros, DimFix::clip_hidden_to_input}) {
    const std::size_t vocab = fix == DimFix::pad_input_with_zeros ? 12 : 6;
    auto m = tiny(2, {2, 2, 8, fix}, vocab);
    const std::vector<IndexPair> batch{{{3, 4, 5}, {5, 3, 4}}, {{5, 5}, {4, kPad}}};
    Rng rng(3);
    std::vector<PairMasks<double>> masks;
    for (const auto& p : batch) masks.push_back(sample_pair_masks(m, p, 0.8, rng));
    const auto r = batch_loss(m, std::span<const IndexPair>(batch), &masks);
    const auto numeric = oracle::fd_gradient_model(
        [&](const ModelParams<double>& q) { return batch_loss(q, std::span<const IndexPair>(batch), &masks).loss; },
        m);
    std::vector<std::span<const double>> a;
    r.gradients.for_each_tensor([&](const std::string&, std::span<const double> v) { a.push_back(v); });
    std::size_t i = 0;
    double worst = 0.0;
    numeric.for_each_tensor([&](const std::string&, std::span<const double> v) {
      for (std::size_t k = 0; k < v.size(); ++k) worst = std::max(worst, oracle::relative_error(a[i][k], v[k]));
      ++i;
    });
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(BatchLoss, AllPaddingIsArgumentError) {
  const auto m = tiny(1);
  const std::vector<IndexPair> batch{{{3}, {kPad, kPad}}, {{4}, {}}};
  EXPECT_THROW(batch_loss(m, std::span<const IndexPair>(batch)), ArgumentError);
  EXPECT_THROW(batch_loss(m, std::span<const IndexPair>()), ArgumentError);
}

TEST(BatchLoss, PaddedPairScoresLikeItsPrefix) {
  const auto m = tiny(5);
  const std::vector<IndexPair> a{{{3, 4}, {5, 6, kPad, kPad}}};
  const std::vector<IndexPair> b{{{3, 4}, {5, 6}}};
  const auto ra = batch_loss(m, std::span<const IndexPair>(a));
  const auto rb = batch_loss(m, std::span<const IndexPair>(b));
  EXPECT_EQ(ra.tokens, rb.tokens);
  EXPECT_DOUBLE_EQ(ra.loss, rb.loss);
}

TEST(BatchLoss, ThreadsGiveSameResult) {
  const auto m = tiny(7);
  const auto batch = pairs();
  const auto one = batch_loss<double>(m, std::span<const IndexPair>(batch), nullptr, 1);
  const auto three = batch_loss<double>(m, std::span<const IndexPair>(batch), nullptr, 3);
  EXPECT_NEAR(one.loss, three.loss, 1e-14);
  std::vector<std::span<const double>> a;
  one.gradients.for_each_tensor([&](const std::string&, std::span<const double> v) { a.push_back(v); });
  std::size_t i = 0;
  three.gradients.for_each_tensor([&](const std::string&, std::span<const double> v) {
    for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(a[i][k], v[k], 1e-14);
    ++i;
  });
}

TEST(BatchLoss, DropoutKeepOneMasksChangeNothing) {
  const auto m = tiny(8);
  const auto batch = pairs();
  Rng rng(1);
  std::vector<PairMasks<double>> masks;
  for (const auto& p : batch) masks.push_back(sample_pair_masks(m, p, 1.0, rng));
  EXPECT_NEAR(batch_loss(m, std::span<const IndexPair>(batch), &masks).loss,
              batch_loss(m, std::span<const IndexPair>(batch)).loss, 1e-14);
}

TEST(DropoutMasks, InvertedScaling) {
  Rng rng(4);
  const auto masks = sample_dropout_masks<double>({10, 200, 200}, 50, 0.5, rng);
  ASSERT_EQ(masks.size(), 2u);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& layer : masks) {
    for (const auto& step : layer) {
      for (double v : step) {
        EXPECT_TRUE(v == 0.0 || v == 2.0);
        sum += v;
        ++n;
      }
    }
  }
  EXPECT_NEAR(sum / static_cast<double>(n), 1.0, 0.02);
}

TEST(Sgd, StepAndClipping) {
  auto p = ModelParams<double>::zeros({1, 0, 1, DimFix::pad_input_with_zeros}, 4);
  auto g = p.zeros_like();
  g.projection_bias = {0.0, 4.0, 0.0, 0.0};  // global norm 4
  auto q = p;
  const auto s = sgd_step(q, g, 0.5);
  EXPECT_EQ(s.grad_norm, 4.0);
  EXPECT_EQ(q.projection_bias[1], -2.0);
  auto r = p;
  const auto c = sgd_step(r, g, 0.5, 1.0);
  EXPECT_EQ(c.clip_scale, 0.25);
  EXPECT_EQ(r.projection_bias[1], -0.5);
  auto u = p;
  sgd_step(u, g, 0.5, 10.0);
  EXPECT_EQ(u.projection_bias[1], -2.0);
}

TEST(Sgd, NonFiniteGradientIsTrainingError) {
  auto p = ModelParams<double>::zeros({1, 0, 1, DimFix::pad_input_with_zeros}, 4);
  auto g = p.zeros_like();
  g.projection_bias[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sgd_step(p, g, 1.0), TrainingError);
}

TEST(Train, NonFiniteLossNamesLastCheckpoint) {
  auto m = tiny(1);
  m.projection_bias[3] = std::numeric_limits<double>::infinity();
  TrainConfig c;
  c.epochs = 1;
  const auto dir = std::filesystem::temp_directory_path() / "rlstm_train_nan";
  std::filesystem::remove_all(dir);
  try {
    train(m, pairs(), {}, c, {dir, {}});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("model.ckpt"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Train, DeterministicForFixedSeed) {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 2;
  c.dropout_keep = 0.7;
  c.record_wall_clock = false;
  const auto corpus = pairs();
  const auto a = train(tiny(3), corpus, std::span<const IndexPair>(corpus), c);
  const auto b = train(tiny(3), corpus, std::span<const IndexPair>(corpus), c);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.report.csv(), b.report.csv());
  c.seed = 2;
  const auto d = train(tiny(3), corpus, std::span<const IndexPair>(corpus), c);
  EXPECT_NE(a.params, d.params);
}

TEST(Train, ReportsScheduleAndCsv) {
  TrainConfig c;
  c.epochs = 4;
  c.halve_every = 2;
  c.batch_size = 3;
  c.dropout_keep = 1.0;
  c.record_wall_clock = false;
  const auto corpus = pairs();
  const auto r = train(tiny(3), corpus, std::span<const IndexPair>(corpus), c);
  EXPECT_EQ(r.report.lr_trace, (std::vector<double>{1.0, 1.0, 0.5, 0.5}));
  EXPECT_EQ(r.report.steps, 4u);
  const auto csv = r.report.csv();
  EXPECT_EQ(csv.rfind("epoch,split,perplexity,lr,seconds\n", 0), 0u);
  EXPECT_NE(csv.find("4,valid,"), std::string::npos);
  EXPECT_LT(r.report.epochs.back().train_perplexity, r.report.epochs.front().train_perplexity);
}

TEST(Train, MaxStepsStopsEarly) {
  TrainConfig c;
  c.epochs = 10;
  c.batch_size = 1;
  c.max_steps = 5;
  c.dropout_keep = 1.0;
  const auto r = train(tiny(3), pairs(), {}, c);
  EXPECT_EQ(r.report.steps, 5u);
  EXPECT_EQ(r.report.epochs.size(), 2u);
}

TEST(Train, SequenceNormalizationScalesTokenUpdate) {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 3;
  c.dropout_keep = 1.0;
  const std::vector<IndexPair> corpus = pairs();
  const auto m = tiny(9);
  c.loss_normalization = LossNormalization::token;
  const auto tok = train(m, corpus, {}, c).params;
  c.loss_normalization = LossNormalization::sequence;
  const auto seq = train(m, corpus, {}, c).params;
  // 13 tokens over 3 sequences: the sequence update is 13/3 times the token update.
  const double dt = tok.projection_bias[kEos] - m.projection_bias[kEos];
  const double ds = seq.projection_bias[kEos] - m.projection_bias[kEos];
  EXPECT_NEAR(ds, dt * 13.0 / 3.0, 1e-12);
}

TEST(Train, EmptyCorpusIsArgumentError) {
  EXPECT_THROW(train(tiny(1), {}, {}, TrainConfig{}), ArgumentError);
}
