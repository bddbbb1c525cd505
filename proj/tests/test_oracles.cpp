#include <gtest/gtest.h>

#include <cmath>

#include "rlstm/gradcheck.hpp"
#include "rlstm/oracles.hpp"

using namespace rlstm;

TEST(FdGradient, QuadraticAndLinear) {
  const auto g = oracle::fd_gradient(
      [](std::span<const double> p) { return 3.0 * p[0] * p[0] + 2.0 * p[1] - p[0] * p[2]; }, {1.0, -2.0, 0.5});
  EXPECT_NEAR(g[0], 6.0 - 0.5, 1e-8);
  EXPECT_NEAR(g[1], 2.0, 1e-8);
  EXPECT_NEAR(g[2], -1.0, 1e-8);
}

TEST(FdGradient, BudgetIsEnforced) {
  oracle::OracleBudget b;
  b.max_parameters = 2;
  EXPECT_THROW(oracle::fd_gradient([](std::span<const double>) { return 0.0; }, {1, 2, 3}, 1e-5, b), OracleError);
}

TEST(RelativeError, FloorAndSymmetry) {
  EXPECT_EQ(oracle::relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(oracle::relative_error(1e-9, 0.0), 1e-3, 1e-15);
  EXPECT_DOUBLE_EQ(oracle::relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(oracle::relative_error(1.0, 2.0), 0.5);
}

TEST(ScalarOracle, SoftmaxNormalizes) {
  const auto l = oracle::scalar_log_softmax({1.0, 2.0, 3.0});
  double s = 0.0;
  for (double v : l) s += std::exp(v);
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_EQ(oracle::one_hot(2, 4), (std::vector<double>{0, 0, 1, 0}));
}

TEST(Enumerator, ExpansionCountsForVocabFourLengthTwo) {
  // Three non-reserved-EOS tokens per step (vocab 4 with EOS): 3 + 3^2 expansions.
  Rng rng(1);
  const auto m = ModelParams<double>::random({1, 0, 3, DimFix::pad_input_with_zeros}, 4, rng, 0.5);
  const auto r = oracle::enumerate_best_sequence(m, {3}, 2);
  EXPECT_EQ(r.expansions, 12u);
  EXPECT_EQ(r.terminations, 4u);
  EXPECT_EQ(r.candidates, 4u + 9u);
}

TEST(Enumerator, FrozenBestSequence) {
  Rng rng(11);
  const auto m = ModelParams<double>::random({2, 2, 4, DimFix::pad_input_with_zeros}, 6, rng, 0.3);
  const auto r = oracle::enumerate_best_sequence(m, {3, 4, 5}, 3);
  EXPECT_EQ(r.tokens, (std::vector<std::size_t>{kEos}));
  EXPECT_NEAR(r.log_prob, -1.6746237056957884, 1e-12);
  EXPECT_EQ(r.expansions, 155u);
  EXPECT_EQ(r.terminations, 31u);
  EXPECT_EQ(r.candidates, 156u);
}

TEST(Enumerator, ProbabilitiesOfAllCandidatesSumToOne) {
  // Terminated sequences plus length-capped prefixes partition the probability mass.
  Rng rng(2);
  const auto m = ModelParams<double>::random({2, 1, 3, DimFix::pad_input_with_zeros}, 5, rng, 1.0);
  double total = 0.0;
  std::vector<std::size_t> seq;
  std::function<void()> walk = [&]() {
    total += std::exp(sequence_log_prob(m, {3, 4}, seq));
    if (seq.size() == 2) return;
    for (std::size_t w = 1; w < 5; ++w) {
      seq.push_back(w);
      if (seq.size() == 2) total += std::exp(sequence_log_prob(m, {3, 4}, seq, false)) -
                                    std::exp(sequence_log_prob(m, {3, 4}, seq));
      walk();
      seq.pop_back();
    }
  };
  walk();
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Enumerator, BudgetIsEnforced) {
  Rng rng(3);
  const auto m = ModelParams<double>::random({1, 0, 2, DimFix::pad_input_with_zeros}, 30, rng);
  oracle::OracleBudget b;
  b.max_states = 1000;
  EXPECT_THROW(oracle::enumerate_best_sequence(m, {3}, 3, b), OracleError);
  EXPECT_THROW(oracle::enumerate_best_sequence(m, {3}, 0), OracleError);
}

TEST(EditDistance, KnownCases) {
  using oracle::edit_distance_words;
  EXPECT_EQ(edit_distance_words({}, {"a", "b"}).insertions, 2u);
  EXPECT_EQ(edit_distance_words({"a", "b"}, {}).deletions, 2u);
  EXPECT_EQ(edit_distance_words({"a", "b"}, {"a", "b"}).total(), 0u);
  EXPECT_EQ(edit_distance_words({"a", "b", "c"}, {"b", "c", "a"}).total(), 2u);
  EXPECT_EQ(oracle::single_shift_ter_edits({"b", "c", "a"}, {"a", "b", "c"}), 1u);
}

TEST(EditDistance, TriangleInequalityProperty) {
  Rng rng(4);
  auto sentence = [&] {
    std::vector<std::string> s(rng.below(5));
    for (auto& t : s) t = std::string(1, static_cast<char>('a' + rng.below(3)));
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = sentence();
    const auto b = sentence();
    const auto c = sentence();
    EXPECT_LE(oracle::edit_distance_words(a, c).total(),
              oracle::edit_distance_words(a, b).total() + oracle::edit_distance_words(b, c).total());
  }
}

TEST(BootstrapOracle, ClosedForm) {
  EXPECT_DOUBLE_EQ(oracle::bootstrap_mean_variance({2.0, 2.0, 2.0}), 0.0);
  EXPECT_DOUBLE_EQ(oracle::bootstrap_mean_variance({0.0, 1.0}), 0.125);
}

TEST(ArOracle, CountsAssignments) {
  // Metric = sum; A = {1, 0}, B = {0, 0}: swapping instance 0 flips the sign, |delta| stays 1.
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> b{0.0, 0.0};
  const auto sum = [](const std::vector<double>& xs) { return xs[0] + xs[1]; };
  EXPECT_EQ(oracle::exhaustive_ar_p_value<double>(a, b, sum), 1.0);
  const std::vector<double> c{1.0, 1.0};
  const std::vector<double> d{0.0, 0.0};
  EXPECT_EQ(oracle::exhaustive_ar_p_value<double>(c, d, sum), 0.5);
}

TEST(GradCheck, PassesAndCatchesCorruption) {
  GradCheckOptions opt;
  const auto ok = run_gradcheck(opt);
  EXPECT_TRUE(ok.passed()) << ok.max_relative_error();
  EXPECT_LT(ok.max_relative_error(), 1e-4);
  opt.corrupt_backward = true;
  const auto bad = run_gradcheck(opt);
  EXPECT_FALSE(bad.passed());
  ASSERT_FALSE(bad.offenders().empty());
}
