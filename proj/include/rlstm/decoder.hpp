#pragma once

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "rlstm/data.hpp"
#include "rlstm/errors.hpp"
#include "rlstm/model.hpp"

namespace rlstm {

struct DecodeConfig {
  std::size_t beam_size = 5;
  std::size_t max_len = 0;  // 0: 2 * source length + 5
  bool length_normalize = false;
  std::size_t top_k = 0;    // 0: every finished hypothesis

  std::size_t effective_max_len(std::size_t source_len) const noexcept {
    return max_len != 0 ? max_len : 2 * source_len + 5;
  }
};

/// A partial or finished decode. `tokens` includes the closing EOS when finished.
template <std::floating_point T>
struct Hypothesis {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  std::vector<LstmState<T>> states;
  bool finished = false;

  double score(bool length_normalize) const noexcept {
    if (!length_normalize || tokens.empty()) return log_prob;
    return log_prob / static_cast<double>(tokens.size());
  }
};

namespace detail {

/// Higher score first, then shorter, then lexicographically smaller tokens.
inline bool ranks_before(double score_a, const std::vector<std::size_t>& a, double score_b,
                         const std::vector<std::size_t>& b) {
  if (score_a != score_b) return score_a > score_b;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

}  // namespace detail

/// Beam search. Every live hypothesis is expanded over the whole vocabulary and
/// the best beam_size candidates survive; candidates ending in EOS move to the
/// finished pool. Decoding stops once beam_size finished hypotheses all score at
/// least as well as the best live one (raw scores only, since extensions can
/// only lower a raw sum), when nothing is live, or at max_len, where remaining
/// live hypotheses are finished as they stand.
template <std::floating_point T>
std::vector<Hypothesis<T>> beam_decode(const ModelParams<T>& params, const std::vector<std::size_t>& source,
                                       const DecodeConfig& config) {
  if (config.beam_size == 0) throw ArgumentError("beam_decode: beam_size must be >= 1");
  const std::size_t max_len = config.effective_max_len(source.size());
  if (max_len == 0) throw ArgumentError("beam_decode: max_len must be >= 1");
  const bool norm = config.length_normalize;

  std::vector<Hypothesis<T>> live(1);
  live[0].states = encode(params, source);
  std::vector<Hypothesis<T>> finished;

  struct Candidate {
    std::size_t parent;
    std::size_t token;
    double log_prob;
    double score;
  };

  auto by_rank = [norm](const Hypothesis<T>& a, const Hypothesis<T>& b) {
    return detail::ranks_before(a.score(norm), a.tokens, b.score(norm), b.tokens);
  };

  std::size_t length = 0;
  while (!live.empty() && length < max_len) {
    std::vector<std::vector<LstmState<T>>> next_states(live.size());
    std::vector<Candidate> candidates;
    candidates.reserve(live.size() * params.vocab_size);
    for (std::size_t p = 0; p < live.size(); ++p) {
      const std::size_t prev = live[p].tokens.empty() ? kEos : live[p].tokens.back();
      auto step = decode_step(params, prev, live[p].states);
      next_states[p] = std::move(step.states);
      for (std::size_t w = 0; w < params.vocab_size; ++w) {
        const double lp = live[p].log_prob + static_cast<double>(step.log_probs[w]);
        candidates.push_back({p, w, lp, norm ? lp / static_cast<double>(length + 1) : lp});
      }
    }
    const std::size_t keep = std::min(config.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [&live](const Candidate& a, const Candidate& b) {
                        // Candidates of one step share a length; ties fall back to token order.
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return live[a.parent].tokens < live[b.parent].tokens;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis<T>> next_live;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = candidates[k];
      Hypothesis<T> h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      h.states = next_states[c.parent];
      h.finished = c.token == kEos;
      (h.finished ? finished : next_live).push_back(std::move(h));
    }
    live = std::move(next_live);
    ++length;

    if (!norm && finished.size() >= config.beam_size && !live.empty()) {
      std::sort(finished.begin(), finished.end(), by_rank);
      double best_live = live.front().log_prob;
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      if (finished[config.beam_size - 1].log_prob >= best_live) {
        live.clear();
      }
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));
  std::sort(finished.begin(), finished.end(), by_rank);
  return finished;
}

/// Argmax at every step until EOS or max_len; ties go to the smaller index.
template <std::floating_point T>
Hypothesis<T> greedy_decode(const ModelParams<T>& params, const std::vector<std::size_t>& source,
                            std::size_t max_len) {
  Hypothesis<T> h;
  h.states = encode(params, source);
  std::size_t prev = kEos;
  while (h.tokens.size() < max_len) {
    auto step = decode_step(params, prev, std::move(h.states));
    h.states = std::move(step.states);
    const auto best = static_cast<std::size_t>(
        std::max_element(step.log_probs.begin(), step.log_probs.end()) - step.log_probs.begin());
    h.log_prob += static_cast<double>(step.log_probs[best]);
    h.tokens.push_back(best);
    prev = best;
    if (best == kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

struct Generation {
  std::string text;
  double score = 0.0;
};

/// Tokenise, beam-decode, and detokenise with reserved tokens removed. Unknown
/// words become UNK. The vocabulary must be the one the model was trained with.
template <std::floating_point T>
std::vector<Generation> generate(const ModelParams<T>& params, const Vocabulary& vocab, const std::string& source_text,
                                 const DecodeConfig& config) {
  if (vocab.hash() != params.vocab_hash) {
    throw DataError("vocabulary hash does not match the one recorded in the model");
  }
  if (vocab.size() != params.vocab_size) throw DataError("vocabulary size does not match the model");
  const auto hyps = beam_decode(params, vocab.encode(tokenize(source_text)), config);
  std::vector<Generation> out;
  for (const auto& h : hyps) {
    if (config.top_k != 0 && out.size() == config.top_k) break;
    Tokens words;
    for (auto t : h.tokens) {
      if (!Vocabulary::is_reserved(t)) words.push_back(vocab.token(t));
    }
    out.push_back({join(words), h.score(config.length_normalize)});
  }
  return out;
}

/// Batch output: `source \t rank \t score \t paraphrase`, ranks from 1.
inline void write_generations(std::ostream& out, const std::string& source, const std::vector<Generation>& gens) {
  for (std::size_t i = 0; i < gens.size(); ++i) {
    out << source << '\t' << i + 1 << '\t' << std::fixed << std::setprecision(6) << gens[i].score << '\t'
        << gens[i].text << '\n';
  }
}

}  // namespace rlstm
