#include <gtest/gtest.h>

#include <cmath>

#include "rlstm/model.hpp"
#include "rlstm/oracles.hpp"

using namespace rlstm;

namespace {

ModelParams<double> small_model(std::uint64_t seed, StackConfig c = {2, 2, 4, DimFix::pad_input_with_zeros},
                                std::size_t vocab = 6, double scale = 0.3) {
  Rng rng(seed);
  return ModelParams<double>::random(c, vocab, rng, scale);
}

}  // namespace

TEST(ModelParamsTest, ShapesAndCount) {
  const StackConfig c{3, 2, 5, DimFix::pad_input_with_zeros};
  const auto m = ModelParams<double>::zeros(c, 9);
  EXPECT_NO_THROW(m.validate());
  ASSERT_EQ(m.encoder.size(), 3u);
  EXPECT_EQ(m.encoder[0].input_dim(), 9u);
  EXPECT_EQ(m.decoder[2].input_dim(), 5u);
  EXPECT_EQ(m.projection.rows(), 9u);
  EXPECT_EQ(m.top_width(), 5u);
  const std::size_t lstm0 = 4 * (5 * 9 + 5 * 5 + 5);
  const std::size_t lstm = 4 * (5 * 5 + 5 * 5 + 5);
  EXPECT_EQ(m.parameter_count(), 2 * (lstm0 + 2 * lstm) + 9 * 5 + 9);
}

TEST(ModelParamsTest, ResidualsAddNoParameters) {
  const auto a = ModelParams<float>::zeros({4, 2, 16, DimFix::pad_input_with_zeros}, 40);
  const auto b = ModelParams<float>::zeros({4, 0, 16, DimFix::pad_input_with_zeros}, 40);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
}

TEST(ModelParamsTest, ReservedOnlyVocabularyIsConfigError) {
  EXPECT_THROW(ModelParams<double>::zeros({1, 0, 4, DimFix::pad_input_with_zeros}, kReservedTokens), ConfigError);
}

TEST(ModelParamsTest, ValidateCatchesBadShapes) {
  auto m = small_model(1);
  m.projection = Matrix<double>(5, 4);
  EXPECT_THROW(m.validate(), ShapeError);
  auto n = small_model(1);
  n.decoder.pop_back();
  EXPECT_THROW(n.validate(), ShapeError);
}

TEST(ModelParamsTest, RandomIsSeeded) {
  EXPECT_EQ(small_model(4), small_model(4));
  EXPECT_NE(small_model(4), small_model(5));
}

TEST(Encode, MatchesStackOverSourceThenEos) {
  auto m = small_model(2);
  const std::vector<std::size_t> src{3, 5, 4};
  for (bool rev : {false, true}) {
    m.reverse_source = rev;
    std::vector<std::size_t> toks = src;
    if (rev) std::reverse(toks.begin(), toks.end());
    toks.push_back(kEos);
    const auto fwd = stack_forward(m.encoder, m.config, StackInput<double>::from_tokens(toks, m.vocab_size),
                                   zero_states<double>(m.config));
    EXPECT_EQ(encode(m, src), fwd.final_states);
  }
}

TEST(Encode, OutOfRangeTokenIsDataError) {
  const auto m = small_model(2);
  EXPECT_THROW(encode(m, {3, 6}), DataError);
  EXPECT_THROW(decode_step(m, 6, encode(m, {3})), DataError);
}

TEST(DecodeStep, TwoStepsEqualTwoStepForward) {
  const auto m = small_model(3);
  const auto init = encode(m, {4, 3});
  auto s1 = decode_step(m, kEos, init);
  auto s2 = decode_step(m, 5, s1.states);
  const auto fwd = stack_forward(m.decoder, m.config, StackInput<double>::from_tokens({kEos, 5}, m.vocab_size), init);
  const auto expect = log_softmax(std::span<const double>(project(m, std::span<const double>(fwd.top[1]))));
  for (std::size_t v = 0; v < m.vocab_size; ++v) EXPECT_NEAR(s2.log_probs[v], expect[v], 1e-14);
  EXPECT_EQ(s2.states, fwd.final_states);
}

TEST(DecodeStep, LogProbsNormalize) {
  const auto m = small_model(6);
  const auto s = decode_step(m, kEos, encode(m, {3}));
  double total = 0.0;
  for (double lp : s.log_probs) total += std::exp(lp);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(SequenceLogProb, MatchesFrozenOracleValue) {
  Rng rng(11);
  const auto m = ModelParams<double>::random({2, 2, 4, DimFix::pad_input_with_zeros}, 6, rng, 0.3);
  EXPECT_NEAR(sequence_log_prob(m, {3, 4, 5}, {5, 3}), -5.7109285082277417, 1e-12);
  EXPECT_NEAR(oracle::scalar_sequence_log_prob(m, {3, 4, 5}, {5, 3}), -5.7109285082277417, 1e-12);
}

TEST(SequenceLogProb, AgreesWithScalarOracleAcrossConfigs) {
  const std::vector<StackConfig> configs{
      {1, 0, 3, DimFix::pad_input_with_zeros},
      {3, 1, 5, DimFix::pad_input_with_zeros},
      {4, 2, 3, DimFix::pad_input_with_zeros},
      {3, 1, 7, DimFix::clip_hidden_to_input},
  };
  std::uint64_t seed = 20;
  for (const auto& c : configs) {
    auto m = small_model(seed++, c, 7, 0.5);
    m.reverse_source = seed % 2 == 0;
    const double a = sequence_log_prob(m, {6, 3, 3, 4}, {5, 6});
    const double b = oracle::scalar_sequence_log_prob(m, {6, 3, 3, 4}, {5, 6});
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(SequenceLogProb, UniformModel) {
  const auto m = ModelParams<double>::zeros({2, 1, 4, DimFix::pad_input_with_zeros}, 8);
  EXPECT_NEAR(sequence_log_prob(m, {3, 4}, {5, 6, 7}), -4.0 * std::log(8.0), 1e-12);
  EXPECT_NEAR(sequence_log_prob(m, {3, 4}, {5, 6, 7}, false), -3.0 * std::log(8.0), 1e-12);
}

TEST(SequenceLogProb, FloatTracksDouble) {
  const auto m = small_model(9);
  Rng rng(9);
  const auto mf = ModelParams<float>::random({2, 2, 4, DimFix::pad_input_with_zeros}, 6, rng, 0.3);
  EXPECT_NEAR(sequence_log_prob(mf, {3, 4}, {5}), sequence_log_prob(m, {3, 4}, {5}), 1e-5);
}
