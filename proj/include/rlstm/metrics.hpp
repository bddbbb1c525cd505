#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlstm/data.hpp"
#include "rlstm/errors.hpp"
#include "rlstm/model.hpp"
#include "rlstm/tensor.hpp"

namespace rlstm {

struct EvalInstance {
  Tokens source;
  Tokens candidate;
  std::vector<Tokens> references;
};

/// Scores a whole corpus of instances.
using CorpusMetric = std::function<double(std::span<const EvalInstance>)>;

// ---------------------------------------------------------------------------
// BLEU

inline constexpr std::size_t kMaxBleuOrder = 4;

struct BleuStats {
  std::array<std::size_t, kMaxBleuOrder> matches{};  // clipped n-gram matches
  std::array<std::size_t, kMaxBleuOrder> totals{};   // candidate n-grams
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;  // sum of closest reference lengths

  double precision(std::size_t n) const {
    return totals[n - 1] == 0 ? 0.0 : static_cast<double>(matches[n - 1]) / static_cast<double>(totals[n - 1]);
  }
};

namespace detail {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

inline NgramCounts count_ngrams(const Tokens& s, std::size_t n) {
  NgramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key += s[i + k];
      key += '\x1f';
    }
    ++counts[key];
  }
  return counts;
}

// Reference length closest to the candidate length; ties go to the shorter one.
inline std::size_t closest_reference_length(std::size_t cand, const std::vector<Tokens>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [cand](std::size_t len) { return len > cand ? len - cand : cand - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

}  // namespace detail

/// Adds one instance's clipped counts; each n-gram is clipped at its maximum
/// count in any single reference.
inline void accumulate_bleu(BleuStats& stats, const EvalInstance& inst, std::size_t max_n = kMaxBleuOrder) {
  if (inst.references.empty()) throw ArgumentError("bleu: instance without references");
  stats.candidate_length += inst.candidate.size();
  stats.reference_length += detail::closest_reference_length(inst.candidate.size(), inst.references);
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = detail::count_ngrams(inst.candidate, n);
    detail::NgramCounts max_ref;
    for (const auto& r : inst.references) {
      for (const auto& [g, c] : detail::count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : cand) {
      stats.totals[n - 1] += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) stats.matches[n - 1] += std::min(c, it->second);
    }
  }
}

inline BleuStats bleu_stats(std::span<const EvalInstance> instances, std::size_t max_n = kMaxBleuOrder) {
  if (max_n < 1 || max_n > kMaxBleuOrder) throw ArgumentError("bleu: max_n must be in 1..4");
  BleuStats stats;
  for (const auto& inst : instances) accumulate_bleu(stats, inst, max_n);
  return stats;
}

/// Geometric mean of clipped precisions times the brevity penalty, scaled to 0-100.
/// Unsmoothed by default: any zero precision gives 0. `smooth` adds one to the
/// numerator and denominator of orders above 1, for sentence-level diagnostics.
inline double bleu_from_stats(const BleuStats& stats, std::size_t max_n = kMaxBleuOrder, bool smooth = false) {
  if (stats.candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double m = static_cast<double>(stats.matches[n - 1]);
    double t = static_cast<double>(stats.totals[n - 1]);
    if (smooth && n > 1) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double c = static_cast<double>(stats.candidate_length);
  const double r = static_cast<double>(stats.reference_length);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

inline double bleu(std::span<const EvalInstance> instances, std::size_t max_n = kMaxBleuOrder, bool smooth = false) {
  if (instances.empty()) throw ArgumentError("bleu: no instances");
  return bleu_from_stats(bleu_stats(instances, max_n), max_n, smooth);
}

// ---------------------------------------------------------------------------
// TER

struct TerEdits {
  std::size_t shifts = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t total() const noexcept { return shifts + substitutions + insertions + deletions; }
};

inline constexpr std::size_t kMaxShiftLength = 10;

namespace detail {

struct Levenshtein {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;  // reference words missing from the hypothesis
  std::size_t deletions = 0;   // surplus hypothesis words
  std::size_t cost() const noexcept { return substitutions + insertions + deletions; }
};

inline std::size_t word_distance(const Tokens& hyp, const Tokens& ref) {
  std::vector<std::size_t> prev(ref.size() + 1);
  std::vector<std::size_t> cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

// Full table with a backtrace to split the cost into edit kinds.
inline Levenshtein word_alignment(const Tokens& hyp, const Tokens& ref) {
  const std::size_t n = hyp.size();
  const std::size_t m = ref.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  Levenshtein out;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
      if (hyp[i - 1] != ref[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

inline bool occurs_in(const Tokens& ref, const Tokens& hyp, std::size_t begin, std::size_t len) {
  if (len > ref.size()) return false;
  for (std::size_t r = 0; r + len <= ref.size(); ++r) {
    if (std::equal(hyp.begin() + static_cast<std::ptrdiff_t>(begin),
                   hyp.begin() + static_cast<std::ptrdiff_t>(begin + len), ref.begin() + static_cast<std::ptrdiff_t>(r))) {
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Greedy TER for one hypothesis/reference pair. Repeatedly applies the block
/// shift (length <= 10, phrase must occur in the reference) that most reduces
/// the word edit distance, counting one edit per shift, until no shift helps;
/// then adds the remaining insertions, deletions and substitutions.
inline TerEdits ter_edits(Tokens hyp, const Tokens& ref) {
  TerEdits edits;
  std::size_t current = detail::word_distance(hyp, ref);
  while (current > 0) {
    std::size_t best_distance = current;
    Tokens best;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      for (std::size_t len = 1; len <= kMaxShiftLength && i + len <= hyp.size(); ++len) {
        if (!detail::occurs_in(ref, hyp, i, len)) break;
        Tokens rest;
        rest.reserve(hyp.size());
        rest.insert(rest.end(), hyp.begin(), hyp.begin() + static_cast<std::ptrdiff_t>(i));
        rest.insert(rest.end(), hyp.begin() + static_cast<std::ptrdiff_t>(i + len), hyp.end());
        for (std::size_t dest = 0; dest <= rest.size(); ++dest) {
          if (dest == i) continue;
          Tokens moved = rest;
          moved.insert(moved.begin() + static_cast<std::ptrdiff_t>(dest), hyp.begin() + static_cast<std::ptrdiff_t>(i),
                       hyp.begin() + static_cast<std::ptrdiff_t>(i + len));
          const std::size_t d = detail::word_distance(moved, ref);
          // A shift costs one edit, so it must save at least two.
          if (d + 1 < best_distance) {
            best_distance = d + 1;
            best = std::move(moved);
          }
        }
      }
    }
    if (best.empty()) break;
    hyp = std::move(best);
    ++edits.shifts;
    current = detail::word_distance(hyp, ref);
  }
  const auto lev = detail::word_alignment(hyp, ref);
  edits.substitutions = lev.substitutions;
  edits.insertions = lev.insertions;
  edits.deletions = lev.deletions;
  return edits;
}

struct TerResult {
  double score = 0.0;  // total edits / total reference length
  std::size_t edits = 0;
  std::size_t reference_length = 0;
  std::size_t skipped = 0;  // instances without a non-empty reference
};

/// Per instance the reference with the lowest edits/length ratio is chosen; the
/// corpus rate is the sum of chosen edits over the sum of chosen lengths.
inline TerResult ter_detail(std::span<const EvalInstance> instances) {
  if (instances.empty()) throw ArgumentError("ter: no instances");
  TerResult result;
  for (const auto& inst : instances) {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    for (const auto& ref : inst.references) {
      if (ref.empty()) continue;
      const std::size_t e = ter_edits(inst.candidate, ref).total();
      // e / len < best_e / best_len without division
      if (!best || e * best->second < best->first * ref.size()) best = {e, ref.size()};
    }
    if (!best) {
      ++result.skipped;
      continue;
    }
    result.edits += best->first;
    result.reference_length += best->second;
  }
  result.score = result.reference_length == 0
                     ? 0.0
                     : static_cast<double>(result.edits) / static_cast<double>(result.reference_length);
  return result;
}

inline double ter(std::span<const EvalInstance> instances) { return ter_detail(instances).score; }

// ---------------------------------------------------------------------------
// Embedding greedy matching

/// Word vectors looked up by exact, case-sensitive match.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  void add(const std::string& word, std::vector<double> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0) {
      throw DataError("embedding for '" + word + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                      std::to_string(dim_));
    }
    vectors_[word] = std::move(vec);
  }

  const std::vector<double>* find(const std::string& word) const {
    auto it = vectors_.find(word);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  bool empty() const noexcept { return vectors_.empty(); }

  /// Text format: `word v1 ... vd` per line; an optional first line `count dim`.
  static EmbeddingTable parse(std::istream& in) {
    EmbeddingTable table;
    std::string line;
    bool first = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const Tokens f = tokenize(line);
      if (f.empty()) continue;
      if (first && f.size() == 2 && is_integer(f[0]) && is_integer(f[1])) {
        table.dim_ = std::stoul(f[1]);
        first = false;
        continue;
      }
      first = false;
      std::vector<double> v;
      v.reserve(f.size() - 1);
      try {
        for (std::size_t i = 1; i < f.size(); ++i) v.push_back(std::stod(f[i]));
      } catch (const std::exception&) {
        throw DataError("embedding line " + std::to_string(line_no) + ": non-numeric component");
      }
      table.add(f[0], std::move(v));
    }
    return table;
  }

  static EmbeddingTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read embeddings " + path.string());
    return parse(in);
  }

 private:
  static bool is_integer(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
  }

  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace detail {

inline std::vector<const std::vector<double>*> covered(const Tokens& s, const EmbeddingTable& table,
                                                       std::size_t& skipped_tokens) {
  std::vector<const std::vector<double>*> out;
  for (const auto& t : s) {
    if (const auto* v = table.find(t)) {
      out.push_back(v);
    } else {
      ++skipped_tokens;
    }
  }
  return out;
}

inline double directional_greedy(const std::vector<const std::vector<double>*>& from,
                                 const std::vector<const std::vector<double>*>& to) {
  double sum = 0.0;
  for (const auto* a : from) {
    double best = -1.0;
    for (const auto* b : to) best = std::max(best, cosine(*a, *b));
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace detail

/// Greedy matching similarity of two token sequences, or nothing when either
/// side has no token with an embedding.
inline std::optional<double> greedy_similarity(const Tokens& a, const Tokens& b, const EmbeddingTable& table,
                                               std::size_t* skipped_tokens = nullptr) {
  std::size_t skipped = 0;
  const auto va = detail::covered(a, table, skipped);
  const auto vb = detail::covered(b, table, skipped);
  if (skipped_tokens) *skipped_tokens += skipped;
  if (va.empty() || vb.empty()) return std::nullopt;
  return 0.5 * (detail::directional_greedy(va, vb) + detail::directional_greedy(vb, va));
}

struct EmbGreedyResult {
  double score = 0.0;
  std::size_t scored = 0;
  std::size_t skipped_instances = 0;
  std::size_t skipped_tokens = 0;
};

/// Corpus mean over instances of the best per-reference greedy similarity.
inline EmbGreedyResult emb_greedy_detail(std::span<const EvalInstance> instances, const EmbeddingTable& table) {
  if (table.empty()) throw ArgumentError("emb_greedy: empty embedding table");
  EmbGreedyResult result;
  double sum = 0.0;
  for (const auto& inst : instances) {
    std::optional<double> best;
    for (const auto& ref : inst.references) {
      const auto s = greedy_similarity(inst.candidate, ref, table, &result.skipped_tokens);
      if (s && (!best || *s > *best)) best = s;
    }
    if (!best) {
      ++result.skipped_instances;
      continue;
    }
    sum += *best;
    ++result.scored;
  }
  result.score = result.scored == 0 ? 0.0 : sum / static_cast<double>(result.scored);
  return result;
}

inline double emb_greedy(std::span<const EvalInstance> instances, const EmbeddingTable& table) {
  return emb_greedy_detail(instances, table).score;
}

// ---------------------------------------------------------------------------
// Test-set variance and significance

/// Population variance of `metric` over `resamples` with-replacement resamples.
inline double bootstrap_variance(std::span<const EvalInstance> instances, const CorpusMetric& metric,
                                 std::size_t resamples = 1000, std::uint64_t seed = 1) {
  if (instances.size() < 2) throw ArgumentError("bootstrap_variance: need at least two instances");
  if (resamples < 1) throw ArgumentError("bootstrap_variance: need at least one resample");
  Rng rng(seed);
  std::vector<double> values;
  values.reserve(resamples);
  std::vector<EvalInstance> sample(instances.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& s : sample) s = instances[rng.below(instances.size())];
    values.push_back(metric(sample));
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return var / static_cast<double>(values.size());
}

struct ArResult {
  double p_value = 1.0;
  double observed_delta = 0.0;
  std::size_t trials = 0;
  bool exhaustive = false;
};

namespace detail {

inline bool at_least(double delta, double observed) {
  return delta >= observed - 1e-12 * std::max(1.0, std::abs(observed));
}

}  // namespace detail

/// Paired approximate randomization. Each trial swaps every instance pair between
/// the two systems with probability 1/2 and recomputes |metric(A) - metric(B)|;
/// p = (hits + 1) / (trials + 1). When 2^n <= iterations the full permutation
/// distribution is enumerated instead and p = hits / 2^n (the identity
/// assignment is one of the 2^n and always counts).
inline ArResult ar_test(std::span<const EvalInstance> a, std::span<const EvalInstance> b, const CorpusMetric& metric,
                        std::size_t iterations = 10000, std::uint64_t seed = 1) {
  if (a.size() != b.size()) {
    throw ArgumentError("ar_test: systems have " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                        " instances");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].source != b[i].source || a[i].references != b[i].references) {
      throw ArgumentError("ar_test: instance " + std::to_string(i) + " is not aligned between systems");
    }
  }
  if (a.empty()) throw ArgumentError("ar_test: no instances");
  ArResult result;
  result.observed_delta = std::abs(metric(a) - metric(b));
  std::vector<EvalInstance> pa(a.begin(), a.end());
  std::vector<EvalInstance> pb(b.begin(), b.end());
  std::size_t hits = 0;
  const std::size_t n = a.size();
  if (n < 63 && (std::uint64_t{1} << n) <= iterations) {
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      for (std::size_t i = 0; i < n; ++i) {
        const bool swap = (mask >> i) & 1U;
        pa[i].candidate = swap ? b[i].candidate : a[i].candidate;
        pb[i].candidate = swap ? a[i].candidate : b[i].candidate;
      }
      if (detail::at_least(std::abs(metric(pa) - metric(pb)), result.observed_delta)) ++hits;
    }
    result.exhaustive = true;
    result.trials = total;
    result.p_value = static_cast<double>(hits) / static_cast<double>(total);
    return result;
  }
  Rng rng(seed);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool swap = rng.bernoulli(0.5);
      pa[i].candidate = swap ? b[i].candidate : a[i].candidate;
      pb[i].candidate = swap ? a[i].candidate : b[i].candidate;
    }
    if (detail::at_least(std::abs(metric(pa) - metric(pb)), result.observed_delta)) ++hits;
  }
  result.trials = iterations;
  result.p_value = static_cast<double>(hits + 1) / static_cast<double>(iterations + 1);
  return result;
}

// ---------------------------------------------------------------------------
// Perplexity

/// exp(mean per-token NLL) of each target given its source, teacher-forced, with
/// the closing EOS counted as a token. Uses the inference path (encode then
/// decode_step), independent of the training code.
template <std::floating_point T>
double corpus_perplexity(const ModelParams<T>& params, std::span<const IndexPair> pairs) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& p : pairs) {
    nll -= sequence_log_prob(params, p.source, p.target);
    tokens += p.target.size() + 1;
  }
  if (tokens == 0) return 1.0;
  return std::exp(nll / static_cast<double>(tokens));
}

// ---------------------------------------------------------------------------
// Reporting

struct MetricReport {
  double bleu = 0.0;
  double ter = 0.0;
  std::optional<double> emb_greedy;
  std::optional<double> perplexity;
  std::map<std::string, double> variances;  // bootstrap variance per metric
  std::map<std::string, double> p_values;   // AR p-value per metric
  std::size_t instances = 0;
  std::size_t ter_skipped = 0;
  std::size_t emb_skipped_instances = 0;
  std::size_t emb_skipped_tokens = 0;

  /// Table-style scaling: BLEU 0-100, TER and Emb Greedy multiplied by 100.
  std::string table() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "metric        score     variance  p-value\n";
    auto row = [&](const std::string& name, double value, const std::string& key) {
      out << std::left << std::setw(12) << name << std::right << std::setw(8) << value;
      if (auto it = variances.find(key); it != variances.end()) {
        out << std::setw(11) << std::setprecision(4) << it->second << std::setprecision(2);
      } else {
        out << std::setw(11) << "-";
      }
      if (auto it = p_values.find(key); it != p_values.end()) {
        out << std::setw(9) << std::setprecision(4) << it->second << std::setprecision(2);
        out << (it->second < 0.05 ? " *" : "");
      } else {
        out << std::setw(9) << "-";
      }
      out << "\n";
    };
    row("BLEU", bleu, "bleu");
    row("TER", 100.0 * ter, "ter");
    if (emb_greedy) row("EmbGreedy", 100.0 * *emb_greedy, "emb_greedy");
    if (perplexity) row("Perplexity", *perplexity, "perplexity");
    if (!p_values.empty()) out << "(* significant at the 95% level, p < 0.05)\n";
    return out.str();
  }

  /// Machine-readable `key=value` lines using the same scaling as table().
  std::string key_values() const {
    std::ostringstream out;
    out << std::setprecision(10);
    out << "instances=" << instances << "\n";
    out << "bleu=" << bleu << "\n";
    out << "ter=" << 100.0 * ter << "\n";
    if (emb_greedy) out << "emb_greedy=" << 100.0 * *emb_greedy << "\n";
    if (perplexity) out << "perplexity=" << *perplexity << "\n";
    for (const auto& [k, v] : variances) out << "variance." << k << "=" << v << "\n";
    for (const auto& [k, v] : p_values) out << "p_value." << k << "=" << v << "\n";
    out << "ter_skipped=" << ter_skipped << "\n";
    if (emb_greedy) {
      out << "emb_skipped_instances=" << emb_skipped_instances << "\n";
      out << "emb_skipped_tokens=" << emb_skipped_tokens << "\n";
    }
    return out.str();
  }
};

}  // namespace rlstm
