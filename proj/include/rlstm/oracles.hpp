#pragma once

// Brute-force reference implementations for tests. Nothing here calls the
// production forward, backward, decoding or metric code; only the parameter
// containers are shared.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlstm/errors.hpp"
#include "rlstm/model.hpp"

namespace rlstm::oracle {

struct OracleBudget {
  std::size_t max_vocab = 64;
  std::size_t max_length = 8;
  std::size_t max_states = 1'000'000;
  std::size_t max_parameters = 200'000;
};

// ---------------------------------------------------------------------------
// Finite differences

/// Central differences (L(p + eps) - L(p - eps)) / 2eps for every coordinate.
inline std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& loss,
                                       std::vector<double> params, double eps = 1e-5,
                                       const OracleBudget& budget = {}) {
  if (params.size() > budget.max_parameters) {
    throw OracleError("fd_gradient: " + std::to_string(params.size()) + " parameters exceed the budget");
  }
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = loss(params);
    params[i] = saved - eps;
    const double down = loss(params);
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// Central differences over every tensor of a model; `loss` reads the model.
inline ModelParams<double> fd_gradient_model(const std::function<double(const ModelParams<double>&)>& loss,
                                             ModelParams<double> params, double eps = 1e-5,
                                             const OracleBudget& budget = {}) {
  std::size_t total = 0;
  params.for_each_tensor([&](const std::string&, std::span<double> v) { total += v.size(); });
  if (total > budget.max_parameters) {
    throw OracleError("fd_gradient: " + std::to_string(total) + " parameters exceed the budget");
  }
  ModelParams<double> grads = params.zeros_like();
  std::vector<std::span<double>> grad_spans;
  grads.for_each_tensor([&](const std::string&, std::span<double> v) { grad_spans.push_back(v); });
  std::size_t tensor = 0;
  params.for_each_tensor([&](const std::string&, std::span<double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + eps;
      const double up = loss(params);
      v[i] = saved - eps;
      const double down = loss(params);
      v[i] = saved;
      grad_spans[tensor][i] = (up - down) / (2.0 * eps);
    }
    ++tensor;
  });
  return grads;
}

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero pairs from blowing up.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// ---------------------------------------------------------------------------
// Scalar LSTM and model evaluation

struct ScalarState {
  std::vector<double> h;
  std::vector<double> c;
};

inline double scalar_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One LSTM step written as plain loops over the six defining equations.
inline ScalarState scalar_lstm_step(const LstmParams<double>& p, const std::vector<double>& x,
                                    const ScalarState& prev) {
  const std::size_t hidden = p.bias[0].size();
  const std::size_t input = p.input_weights[0].cols();
  if (x.size() != input || prev.h.size() != hidden || prev.c.size() != hidden) {
    throw OracleError("scalar_lstm_step: dimension mismatch");
  }
  double z[4];
  ScalarState next{std::vector<double>(hidden), std::vector<double>(hidden)};
  for (std::size_t r = 0; r < hidden; ++r) {
    for (std::size_t g = 0; g < 4; ++g) {
      z[g] = p.bias[g][r];
      for (std::size_t k = 0; k < input; ++k) z[g] += p.input_weights[g](r, k) * x[k];
      for (std::size_t k = 0; k < hidden; ++k) z[g] += p.recurrent_weights[g](r, k) * prev.h[k];
    }
    const double i = scalar_sigmoid(z[0]);
    const double f = scalar_sigmoid(z[1]);
    const double o = scalar_sigmoid(z[2]);
    const double cin = std::tanh(z[3]);
    next.c[r] = f * prev.c[r] + i * cin;
    next.h[r] = o * std::tanh(next.c[r]);
  }
  return next;
}

inline std::vector<double> one_hot(std::size_t index, std::size_t width) {
  std::vector<double> v(width, 0.0);
  v.at(index) = 1.0;
  return v;
}

struct ScalarStackRun {
  std::vector<std::vector<double>> top;
  std::vector<ScalarState> final_states;
};

/// Stack over a whole sequence with residual additions, no dropout.
inline ScalarStackRun scalar_stack(const std::vector<LstmParams<double>>& layers, const StackConfig& config,
                                   const std::vector<std::vector<double>>& inputs, std::vector<ScalarState> states) {
  // seqs[0] is the stack input, seqs[l] the output of layer l.
  std::vector<std::vector<std::vector<double>>> seqs{inputs};
  const std::size_t n = config.residual_interval;
  for (std::size_t l = 1; l <= layers.size(); ++l) {
    std::vector<std::vector<double>> out;
    for (const auto& x : seqs[l - 1]) {
      states[l - 1] = scalar_lstm_step(layers[l - 1], x, states[l - 1]);
      std::vector<double> y = states[l - 1].h;
      if (n > 0 && l % n == 0) {
        const auto& src = seqs[l - n][out.size()];
        if (config.dim_fix == DimFix::clip_hidden_to_input) y.resize(src.size());
        for (std::size_t k = 0; k < y.size() && k < src.size(); ++k) y[k] += src[k];
      }
      out.push_back(std::move(y));
    }
    seqs.push_back(std::move(out));
  }
  return {seqs.back(), std::move(states)};
}

inline std::vector<double> scalar_log_softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

inline std::vector<double> scalar_project(const ModelParams<double>& p, const std::vector<double>& top) {
  std::vector<double> z(p.vocab_size);
  for (std::size_t v = 0; v < p.vocab_size; ++v) {
    z[v] = p.projection_bias[v];
    for (std::size_t k = 0; k < top.size(); ++k) z[v] += p.projection(v, k) * top[k];
  }
  return z;
}

inline std::vector<ScalarState> scalar_encode(const ModelParams<double>& p, const std::vector<std::size_t>& source) {
  std::vector<std::size_t> toks = source;
  if (p.reverse_source) std::reverse(toks.begin(), toks.end());
  toks.push_back(kEos);
  std::vector<std::vector<double>> xs;
  for (auto t : toks) xs.push_back(one_hot(t, p.vocab_size));
  std::vector<ScalarState> zero(p.config.num_layers, ScalarState{std::vector<double>(p.config.hidden, 0.0),
                                                                 std::vector<double>(p.config.hidden, 0.0)});
  return scalar_stack(p.encoder, p.config, xs, zero).final_states;
}

/// log p(target, EOS | source) by teacher forcing, recomputed from scratch.
inline double scalar_sequence_log_prob(const ModelParams<double>& p, const std::vector<std::size_t>& source,
                                       const std::vector<std::size_t>& target) {
  auto states = scalar_encode(p, source);
  std::vector<std::vector<double>> xs{one_hot(kEos, p.vocab_size)};
  for (auto t : target) xs.push_back(one_hot(t, p.vocab_size));
  const auto run = scalar_stack(p.decoder, p.config, xs, states);
  double total = 0.0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const std::size_t next = t < target.size() ? target[t] : kEos;
    total += scalar_log_softmax(scalar_project(p, run.top[t]))[next];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Exhaustive decoding

struct EnumerationResult {
  std::vector<std::size_t> tokens;  // ends in EOS unless cut at max_len
  double log_prob = 0.0;
  std::size_t expansions = 0;   // non-EOS prefixes of length 1..max_len
  std::size_t terminations = 0;  // EOS-terminated candidates
  std::size_t candidates = 0;    // terminations plus prefixes cut at max_len
};

/// Exact argmax over every EOS-terminated sequence of length <= max_len and
/// every EOS-free sequence of length max_len (those a length-capped decoder
/// finishes as they stand). Ties: shorter, then lexicographically smaller.
inline EnumerationResult enumerate_best_sequence(const ModelParams<double>& p, const std::vector<std::size_t>& source,
                                                 std::size_t max_len, const OracleBudget& budget = {}) {
  if (p.vocab_size > budget.max_vocab || max_len > budget.max_length || max_len == 0) {
    throw OracleError("enumerate_best_sequence: vocab or length outside the budget");
  }
  const double branch = static_cast<double>(p.vocab_size - 1);
  double space = 0.0;
  for (std::size_t k = 0; k <= max_len; ++k) space += std::pow(branch, static_cast<double>(k));
  if (space > static_cast<double>(budget.max_states)) {
    throw OracleError("enumerate_best_sequence: search space of " + std::to_string(space) + " exceeds the budget");
  }

  EnumerationResult best;
  bool have = false;
  auto offer = [&](const std::vector<std::size_t>& toks, double lp) {
    ++best.candidates;
    const bool better = !have || lp > best.log_prob ||
                        (lp == best.log_prob && (toks.size() < best.tokens.size() ||
                                                 (toks.size() == best.tokens.size() && toks < best.tokens)));
    if (better) {
      best.tokens = toks;
      best.log_prob = lp;
      have = true;
    }
  };

  std::vector<std::size_t> prefix;
  std::function<void(std::vector<ScalarState>, double)> visit = [&](std::vector<ScalarState> states, double lp) {
    const std::size_t prev = prefix.empty() ? kEos : prefix.back();
    const auto run = scalar_stack(p.decoder, p.config, {one_hot(prev, p.vocab_size)}, std::move(states));
    const auto logp = scalar_log_softmax(scalar_project(p, run.top[0]));
    prefix.push_back(kEos);
    ++best.terminations;
    offer(prefix, lp + logp[kEos]);
    prefix.pop_back();
    for (std::size_t w = 0; w < p.vocab_size; ++w) {
      if (w == kEos) continue;
      prefix.push_back(w);
      ++best.expansions;
      if (prefix.size() == max_len) {
        offer(prefix, lp + logp[w]);
      } else {
        visit(run.final_states, lp + logp[w]);
      }
      prefix.pop_back();
    }
  };
  visit(scalar_encode(p, source), 0.0);
  return best;
}

// ---------------------------------------------------------------------------
// Edit distance and metric hand counts

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;  // words of b missing from a
  std::size_t deletions = 0;   // words of a missing from b
  std::size_t total() const noexcept { return substitutions + insertions + deletions; }
  friend bool operator==(const EditCounts&, const EditCounts&) = default;
};

/// Minimum-cost word edit script from a to b. Among minimum scripts the one with
/// the fewest insertions plus deletions is reported, which makes the counts unique.
inline EditCounts edit_distance_words(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  using Cell = std::pair<std::size_t, std::size_t>;  // (cost, indels)
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<Cell>> d(n + 1, std::vector<Cell>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = {i, i};
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = {j, j};
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t s = a[i - 1] == b[j - 1] ? 0 : 1;
      Cell diag{d[i - 1][j - 1].first + s, d[i - 1][j - 1].second};
      Cell del{d[i - 1][j].first + 1, d[i - 1][j].second + 1};
      Cell ins{d[i][j - 1].first + 1, d[i][j - 1].second + 1};
      d[i][j] = std::min({diag, del, ins});
    }
  }
  const auto [cost, indels] = d[n][m];
  EditCounts out;
  // insertions - deletions = m - n and insertions + deletions = indels.
  out.insertions = m >= n ? (indels + (m - n)) / 2 : (indels - (n - m)) / 2;
  out.deletions = indels - out.insertions;
  out.substitutions = cost - indels;
  return out;
}

/// Minimum of the plain edit distance and one block shift plus edit distance,
/// over every phrase and every destination.
inline std::size_t single_shift_ter_edits(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  std::size_t best = edit_distance_words(hyp, ref).total();
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    for (std::size_t len = 1; i + len <= hyp.size(); ++len) {
      std::vector<std::string> phrase(hyp.begin() + static_cast<std::ptrdiff_t>(i),
                                      hyp.begin() + static_cast<std::ptrdiff_t>(i + len));
      std::vector<std::string> rest = hyp;
      rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(i), rest.begin() + static_cast<std::ptrdiff_t>(i + len));
      for (std::size_t dest = 0; dest <= rest.size(); ++dest) {
        std::vector<std::string> moved = rest;
        moved.insert(moved.begin() + static_cast<std::ptrdiff_t>(dest), phrase.begin(), phrase.end());
        best = std::min(best, 1 + edit_distance_words(moved, ref).total());
      }
    }
  }
  return best;
}

/// Clipped n-gram precision counted with nested loops.
inline std::pair<std::size_t, std::size_t> clipped_ngram_counts(const std::vector<std::string>& cand,
                                                                const std::vector<std::vector<std::string>>& refs,
                                                                std::size_t n) {
  auto gram = [n](const std::vector<std::string>& s, std::size_t i) {
    return std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                    s.begin() + static_cast<std::ptrdiff_t>(i + n));
  };
  auto count_in = [&](const std::vector<std::string>& s, const std::vector<std::string>& g) {
    std::size_t c = 0;
    for (std::size_t i = 0; i + n <= s.size(); ++i) c += gram(s, i) == g ? 1 : 0;
    return c;
  };
  std::size_t matched = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::string>> seen;
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    const auto g = gram(cand, i);
    ++total;
    if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
    seen.push_back(g);
    std::size_t ref_max = 0;
    for (const auto& r : refs) ref_max = std::max(ref_max, count_in(r, g));
    matched += std::min(count_in(cand, g), ref_max);
  }
  return {matched, total};
}

/// Exact approximate-randomization p-value: over all 2^n swap assignments, the
/// share whose |metric(A') - metric(B')| reaches the observed difference.
template <class Instance>
double exhaustive_ar_p_value(const std::vector<Instance>& a, const std::vector<Instance>& b,
                             const std::function<double(const std::vector<Instance>&)>& metric,
                             const OracleBudget& budget = {}) {
  if (a.size() != b.size() || a.size() >= 63 || (std::uint64_t{1} << a.size()) > budget.max_states) {
    throw OracleError("exhaustive_ar_p_value: inputs outside the budget");
  }
  const double observed = std::abs(metric(a) - metric(b));
  const std::uint64_t total = std::uint64_t{1} << a.size();
  std::uint64_t hits = 0;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    std::vector<Instance> pa;
    std::vector<Instance> pb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool swap = ((mask >> i) & 1U) != 0;
      pa.push_back(swap ? b[i] : a[i]);
      pb.push_back(swap ? a[i] : b[i]);
    }
    const double delta = std::abs(metric(pa) - metric(pb));
    if (delta >= observed - 1e-12 * std::max(1.0, observed)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Variance of the mean of `values` under with-replacement resampling of the
/// same size: population variance divided by n.
inline double bootstrap_mean_variance(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return var / static_cast<double>(values.size());
}

}  // namespace rlstm::oracle
