#include <gtest/gtest.h>

#include "rlstm/lstm.hpp"
#include "rlstm/oracles.hpp"

using namespace rlstm;

namespace {

LstmState<double> state(std::vector<double> h, std::vector<double> c) { return {std::move(h), std::move(c)}; }

std::vector<Vector<double>> random_sequence(std::size_t steps, std::size_t width, Rng& rng) {
  std::vector<Vector<double>> xs(steps, Vector<double>(width));
  for (auto& x : xs) fill_uniform(std::span<double>(x), rng, -1, 1);
  return xs;
}

}  // namespace

TEST(LstmStep, ZeroParamsZeroState) {
  const auto p = LstmParams<double>::zeros(4, 3);
  const auto s = lstm_step(p, Vector<double>{1, 2, 3}, LstmState<double>::zeros(4));
  for (double v : s.h) EXPECT_EQ(v, 0.0);
  for (double v : s.c) EXPECT_EQ(v, 0.0);
}

TEST(LstmStep, MatchesFrozenScalarOracle) {
  Rng rng(7);
  const auto p = LstmParams<double>::random(3, 2, rng, 0.5);
  const auto prev = state({0.1, -0.2, 0.3}, {0.0, 0.5, -0.5});
  const auto s = lstm_step(p, Vector<double>{0.5, -1.0}, prev);
  // Frozen from oracle::scalar_lstm_step on the same parameters.
  const double h[] = {-0.078489840076576334, 0.064748110601622583, -0.15274421293221391};
  const double c[] = {-0.14175919652565763, 0.16650882928735694, -0.2603862175954747};
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(s.h[k], h[k], 1e-15);
    EXPECT_NEAR(s.c[k], c[k], 1e-15);
  }
  const auto o = oracle::scalar_lstm_step(p, {0.5, -1.0}, {prev.h, prev.c});
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(s.h[k], o.h[k], 1e-15);
}

TEST(LstmStep, RandomAgreementWithScalarOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t hidden = 1 + rng.below(6);
    const std::size_t input = 1 + rng.below(6);
    const auto p = LstmParams<double>::random(hidden, input, rng, 1.0, rng.uniform(-1, 1));
    Vector<double> x(input);
    fill_uniform(std::span<double>(x), rng, -2, 2);
    auto prev = LstmState<double>::zeros(hidden);
    fill_uniform(std::span<double>(prev.h), rng, -1, 1);
    fill_uniform(std::span<double>(prev.c), rng, -1, 1);
    const auto s = lstm_step(p, x, prev);
    const auto o = oracle::scalar_lstm_step(p, x, {prev.h, prev.c});
    for (std::size_t k = 0; k < hidden; ++k) {
      EXPECT_NEAR(s.h[k], o.h[k], 1e-13);
      EXPECT_NEAR(s.c[k], o.c[k], 1e-13);
    }
  }
}

TEST(LstmStep, StateBoundsProperty) {
  Rng rng(4);
  const auto p = LstmParams<double>::random(5, 3, rng, 3.0);
  auto s = LstmState<double>::zeros(5);
  double bound = 0.0;
  for (int t = 0; t < 50; ++t) {
    Vector<double> x(3);
    fill_uniform(std::span<double>(x), rng, -5, 5);
    s = lstm_step(p, x, s);
    bound += 1.0;
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_LE(std::abs(s.h[k]), 1.0);
      EXPECT_LE(std::abs(s.c[k]), bound);
    }
  }
}

TEST(LstmStep, DimensionMismatchIsShapeError) {
  const auto p = LstmParams<double>::zeros(4, 3);
  EXPECT_THROW(lstm_step(p, Vector<double>{1, 2}, LstmState<double>::zeros(4)), ShapeError);
  EXPECT_THROW(lstm_step(p, Vector<double>{1, 2, 3}, LstmState<double>::zeros(3)), ShapeError);
}

TEST(LstmStep, TokenInputEqualsOneHot) {
  Rng rng(10);
  const auto p = LstmParams<double>::random(4, 6, rng, 0.5);
  auto prev = LstmState<double>::zeros(4);
  fill_uniform(std::span<double>(prev.h), rng, -1, 1);
  const auto a = lstm_step(p, TokenInput{2}, prev);
  Vector<double> onehot(6, 0.0);
  onehot[2] = 1.0;
  const auto b = lstm_step(p, onehot, prev);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.h[k], b.h[k], 1e-15);
  EXPECT_THROW(lstm_step(p, TokenInput{6}, prev), DataError);
}

TEST(LstmForward, ComposesSteps) {
  Rng rng(12);
  const auto p = LstmParams<double>::random(3, 2, rng, 0.5);
  const auto xs = random_sequence(4, 2, rng);
  const auto fwd = lstm_forward(p, xs, LstmState<double>::zeros(3));
  auto s = LstmState<double>::zeros(3);
  for (std::size_t t = 0; t < 4; ++t) {
    s = lstm_step(p, xs[t], s);
    EXPECT_EQ(fwd.states[t], s);
  }
}

TEST(LstmForward, EmptySequence) {
  const auto p = LstmParams<double>::zeros(3, 2);
  const auto fwd = lstm_forward(p, {}, LstmState<double>::zeros(3));
  EXPECT_TRUE(fwd.states.empty());
  EXPECT_EQ(fwd.tape.length(), 0u);
}

TEST(LstmForward, WrongInputWidthIsShapeError) {
  const auto p = LstmParams<double>::zeros(3, 2);
  EXPECT_THROW(lstm_forward(p, {Vector<double>{1, 2}, Vector<double>{1}}, LstmState<double>::zeros(3)), ShapeError);
}

TEST(LstmForward, TokensMatchDense) {
  Rng rng(13);
  const auto p = LstmParams<double>::random(3, 5, rng, 0.5);
  const std::vector<std::size_t> toks{4, 0, 2};
  std::vector<Vector<double>> xs;
  for (auto t : toks) {
    Vector<double> v(5, 0.0);
    v[t] = 1.0;
    xs.push_back(v);
  }
  const auto a = lstm_forward_tokens(p, toks, LstmState<double>::zeros(3));
  const auto b = lstm_forward(p, xs, LstmState<double>::zeros(3));
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a.states[t].h[k], b.states[t].h[k], 1e-15);
  }
}

namespace {

// Loss = sum of the final hidden state; the gradient check from the LSTM spec.
double sum_final_h(const LstmParams<double>& p, const std::vector<Vector<double>>& xs, const LstmState<double>& init) {
  const auto fwd = lstm_forward(p, xs, init);
  double s = 0.0;
  for (double v : fwd.states.back().h) s += v;
  return s;
}

}  // namespace

TEST(LstmBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    auto p = LstmParams<double>::random(4, 3, rng, 0.5);
    const auto xs = random_sequence(5, 3, rng);
    auto init = LstmState<double>::zeros(4);
    fill_uniform(std::span<double>(init.h), rng, -0.5, 0.5);
    fill_uniform(std::span<double>(init.c), rng, -0.5, 0.5);

    const auto fwd = lstm_forward(p, xs, init);
    std::vector<Vector<double>> grad_h(5, Vector<double>(4, 0.0));
    grad_h.back().assign(4, 1.0);
    const auto back = lstm_backward(p, fwd.tape, grad_h, LstmState<double>{});

    std::vector<std::span<const double>> analytic;
    back.grads.for_each_tensor([&](const std::string&, std::span<const double> v) { analytic.push_back(v); });
    std::size_t tensor = 0;
    p.for_each_tensor([&](const std::string& name, std::span<double> v) {
      std::vector<double> flat(v.begin(), v.end());
      const auto numeric = oracle::fd_gradient(
          [&](std::span<const double> q) {
            std::copy(q.begin(), q.end(), v.begin());
            const double l = sum_final_h(p, xs, init);
            std::copy(flat.begin(), flat.end(), v.begin());
            return l;
          },
          flat);
      for (std::size_t k = 0; k < v.size(); ++k) {
        EXPECT_LT(oracle::relative_error(analytic[tensor][k], numeric[k]), 1e-4) << name << "[" << k << "]";
      }
      ++tensor;
    });

    // Input and initial-state gradients.
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const auto numeric = oracle::fd_gradient(
          [&](std::span<const double> q) {
            auto ys = xs;
            ys[t].assign(q.begin(), q.end());
            return sum_final_h(p, ys, init);
          },
          xs[t]);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_LT(oracle::relative_error(back.grad_inputs[t][k], numeric[k]), 1e-4);
    }
    const auto numeric_h0 = oracle::fd_gradient(
        [&](std::span<const double> q) {
          auto s = init;
          s.h.assign(q.begin(), q.end());
          return sum_final_h(p, xs, s);
        },
        init.h);
    const auto numeric_c0 = oracle::fd_gradient(
        [&](std::span<const double> q) {
          auto s = init;
          s.c.assign(q.begin(), q.end());
          return sum_final_h(p, xs, s);
        },
        init.c);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_LT(oracle::relative_error(back.grad_init.h[k], numeric_h0[k]), 1e-4);
      EXPECT_LT(oracle::relative_error(back.grad_init.c[k], numeric_c0[k]), 1e-4);
    }
  }
}

TEST(LstmBackward, ZeroUpstreamGradientGivesZero) {
  Rng rng(3);
  const auto p = LstmParams<double>::random(3, 2, rng, 0.5);
  const auto fwd = lstm_forward(p, random_sequence(4, 2, rng), LstmState<double>::zeros(3));
  const auto back = lstm_backward(p, fwd.tape, std::vector<Vector<double>>(4, Vector<double>(3, 0.0)),
                                  LstmState<double>{});
  back.grads.for_each_tensor([](const std::string&, std::span<const double> v) {
    for (double x : v) EXPECT_EQ(x, 0.0);
  });
}

TEST(LstmBackward, LengthMismatchIsArgumentError) {
  const auto p = LstmParams<double>::zeros(3, 2);
  Rng rng(1);
  const auto fwd = lstm_forward(p, random_sequence(4, 2, rng), LstmState<double>::zeros(3));
  EXPECT_THROW(lstm_backward(p, fwd.tape, std::vector<Vector<double>>(3, Vector<double>(3, 0.0)), LstmState<double>{}),
               ArgumentError);
}

TEST(LstmParamsTest, CountAndNames) {
  const auto p = LstmParams<float>::zeros(5, 7);
  EXPECT_EQ(p.parameter_count(), 4u * (5 * 7 + 5 * 5 + 5));
  std::vector<std::string> names;
  p.for_each_tensor([&](const std::string& n, auto) { names.push_back(n); });
  ASSERT_EQ(names.size(), 12u);
  EXPECT_EQ(names.front(), "wx_i");
  EXPECT_EQ(names.back(), "b_c");
}

TEST(LstmParamsTest, ForgetBiasOption) {
  Rng rng(1);
  const auto p = LstmParams<double>::random(3, 2, rng, 0.08, 1.0);
  for (double b : p.bias[kForgetGate]) EXPECT_EQ(b, 1.0);
  for (double b : p.bias[kInputGate]) EXPECT_EQ(b, 0.0);
  for (double w : p.input_weights[0].values()) EXPECT_LE(std::abs(w), 0.08);
}
