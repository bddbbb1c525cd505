#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rlstm/errors.hpp"
#include "rlstm/model.hpp"
#include "rlstm/tensor.hpp"

namespace rlstm {

using Tokens = std::vector<std::string>;

/// Splits on ASCII whitespace. No case folding or other normalisation.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Token <-> index map. Indices 0, 1, 2 are EOS, UNK and PAD.
class Vocabulary {
 public:
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kPadToken = "<pad>";

  Vocabulary() : tokens_{std::string(kEosToken), std::string(kUnkToken), std::string(kPadToken)} { reindex(); }

  /// Reserved entries followed by `content` in order.
  static Vocabulary from_content(const Tokens& content) {
    Vocabulary v;
    for (const auto& t : content) {
      if (is_reserved_name(t)) throw ArgumentError("vocabulary: '" + t + "' is a reserved token name");
      if (v.index_.contains(t)) throw ArgumentError("vocabulary: duplicate token '" + t + "'");
      v.index_.emplace(t, v.tokens_.size());
      v.tokens_.push_back(t);
    }
    return v;
  }

  static bool is_reserved_name(std::string_view t) noexcept {
    return t == kEosToken || t == kUnkToken || t == kPadToken;
  }
  static bool is_reserved(std::size_t index) noexcept { return index < kReservedTokens; }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.contains(token); }

  std::size_t index_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t index) const {
    if (index >= tokens_.size()) throw DataError("vocabulary: index " + std::to_string(index) + " out of range");
    return tokens_[index];
  }

  std::vector<std::size_t> encode(const Tokens& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(index_of(t));
    return out;
  }

  Tokens decode(const std::vector<std::size_t>& indices) const {
    Tokens out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(token(i));
    return out;
  }

  /// Hash of the ordered token list; equal content gives equal hashes.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("rlstm-vocab");
    for (const auto& t : tokens_) {
      h = fnv1a(t, h);
      h = fnv1a("\n", h);
    }
    return h;
  }

  const Tokens& tokens() const noexcept { return tokens_; }

  /// One token per line, reserved entries first.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary " + path.string());
    Tokens lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    if (lines.size() < kReservedTokens || lines[0] != kEosToken || lines[1] != kUnkToken || lines[2] != kPadToken) {
      throw DataError("vocabulary file " + path.string() + " does not start with the reserved tokens");
    }
    return from_content(Tokens(lines.begin() + kReservedTokens, lines.end()));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  Tokens tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Keeps the (max_size - 3) most frequent tokens; ties go to the lexicographically
/// smaller token. Reserved token names in the corpus are ignored.
inline Vocabulary build_vocab(const std::vector<Tokens>& corpus, std::size_t max_size) {
  if (max_size < 4) throw ArgumentError("build_vocab: max_size must be at least 4");
  if (corpus.empty()) throw ArgumentError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus) {
    for (const auto& t : sentence) {
      if (!Vocabulary::is_reserved_name(t)) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kReservedTokens);
  Tokens content;
  content.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) content.push_back(ranked[i].first);
  return Vocabulary::from_content(content);
}

struct ParaphrasePair {
  Tokens source;
  Tokens reference;

  friend bool operator==(const ParaphrasePair&, const ParaphrasePair&) = default;
  friend auto operator<=>(const ParaphrasePair&, const ParaphrasePair&) = default;
};

inline std::vector<Tokens> pair_sentences(const std::vector<ParaphrasePair>& pairs) {
  std::vector<Tokens> out;
  out.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    out.push_back(p.source);
    out.push_back(p.reference);
  }
  return out;
}

inline std::vector<IndexPair> encode_pairs(const std::vector<ParaphrasePair>& pairs, const Vocabulary& vocab) {
  std::vector<IndexPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.encode(p.source), vocab.encode(p.reference)});
  return out;
}

struct TsvLoadResult {
  std::vector<ParaphrasePair> pairs;
  std::size_t skipped = 0;
};

/// `source \t reference` per line. Lines without a tab or with an empty side are
/// skipped and counted.
inline TsvLoadResult parse_pairs_tsv(std::istream& in) {
  TsvLoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      ++result.skipped;
      continue;
    }
    ParaphrasePair p{tokenize(std::string_view(line).substr(0, tab)), tokenize(std::string_view(line).substr(tab + 1))};
    if (p.source.empty() || p.reference.empty()) {
      ++result.skipped;
      continue;
    }
    result.pairs.push_back(std::move(p));
  }
  return result;
}

inline TsvLoadResult load_pairs_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_pairs_tsv(in);
}

inline void write_pairs_tsv(const std::filesystem::path& path, const std::vector<ParaphrasePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : pairs) out << join(p.source) << '\t' << join(p.reference) << '\n';
}

// ---------------------------------------------------------------------------
// PPDB

enum class PpdbType { lexical, phrasal, syntactic };

struct PpdbRecord {
  std::string phrase;
  std::string paraphrase;
  PpdbType type = PpdbType::phrasal;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_on(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(s.substr(start)));
      return out;
    }
    out.push_back(trim(s.substr(start, pos - start)));
    start = pos + sep.size();
  }
}

// Nonterminal slots such as [NN,1] mark syntactic rules.
inline bool has_nonterminal(const std::string& s) {
  const auto open = s.find('[');
  return open != std::string::npos && s.find(']', open) != std::string::npos;
}

inline bool has_digit(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

}  // namespace detail

inline std::optional<PpdbType> parse_ppdb_type(const std::string& s) {
  if (s == "lexical") return PpdbType::lexical;
  if (s == "phrasal") return PpdbType::phrasal;
  if (s == "syntactic") return PpdbType::syntactic;
  return std::nullopt;
}

/// Accepts either `type \t phrase \t paraphrase` or the distributed
/// `LHS ||| PHRASE ||| PARAPHRASE ||| ...` layout, where the type is inferred:
/// nonterminals make a rule syntactic, single words on both sides lexical.
inline std::optional<PpdbRecord> parse_ppdb_line(const std::string& line) {
  if (line.find("|||") != std::string::npos) {
    const auto f = detail::split_on(line, "|||");
    if (f.size() < 3) return std::nullopt;
    PpdbRecord r{f[1], f[2], PpdbType::phrasal};
    if (detail::has_nonterminal(r.phrase) || detail::has_nonterminal(r.paraphrase)) {
      r.type = PpdbType::syntactic;
    } else if (tokenize(r.phrase).size() == 1 && tokenize(r.paraphrase).size() == 1) {
      r.type = PpdbType::lexical;
    }
    return r;
  }
  const auto f = detail::split_on(line, "\t");
  if (f.size() < 3) return std::nullopt;
  const auto type = parse_ppdb_type(f[0]);
  if (!type) return std::nullopt;
  return PpdbRecord{f[1], f[2], *type};
}

struct PpdbLoadResult {
  std::vector<PpdbRecord> records;
  std::size_t skipped = 0;
};

inline PpdbLoadResult load_ppdb(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  PpdbLoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    if (auto r = parse_ppdb_line(line)) {
      result.records.push_back(std::move(*r));
    } else {
      ++result.skipped;
    }
  }
  return result;
}

/// Drops syntactic records and records containing a digit, groups the rest into
/// paraphrase sets keyed by the shared phrase, then draws source/reference pairs
/// from each set without replacement: every set member fills at most one slot.
inline std::vector<ParaphrasePair> preprocess_ppdb(const std::vector<PpdbRecord>& records, std::uint64_t seed) {
  std::map<std::string, std::set<std::string>> sets;
  for (const auto& r : records) {
    if (r.type == PpdbType::syntactic) continue;
    if (detail::has_digit(r.phrase) || detail::has_digit(r.paraphrase)) continue;
    const std::string phrase = join(tokenize(r.phrase));
    const std::string para = join(tokenize(r.paraphrase));
    if (phrase.empty() || para.empty() || phrase == para) continue;
    auto& s = sets[phrase];
    s.insert(phrase);
    s.insert(para);
  }
  Rng rng(seed);
  std::vector<ParaphrasePair> out;
  for (const auto& [key, members] : sets) {
    std::vector<std::string> pool(members.begin(), members.end());
    rng.shuffle(pool);
    for (std::size_t i = 0; i + 1 < pool.size(); i += 2) {
      out.push_back({tokenize(pool[i]), tokenize(pool[i + 1])});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// MSCOCO

struct CaptionSet {
  std::int64_t image_id = 0;
  std::vector<std::string> captions;
};

/// Reads the caption-annotation structure: only `annotations[].image_id` and
/// `annotations[].caption` are consumed. Sets are ordered by image id.
inline std::vector<CaptionSet> parse_mscoco_captions(const nlohmann::json& doc) {
  if (!doc.contains("annotations") || !doc["annotations"].is_array()) {
    throw DataError("caption file has no 'annotations' array");
  }
  std::map<std::int64_t, std::vector<std::string>> by_image;
  for (const auto& a : doc["annotations"]) {
    if (!a.contains("image_id") || !a.contains("caption")) throw DataError("caption annotation missing a field");
    by_image[a["image_id"].get<std::int64_t>()].push_back(a["caption"].get<std::string>());
  }
  std::vector<CaptionSet> out;
  for (auto& [id, caps] : by_image) out.push_back({id, std::move(caps)});
  return out;
}

inline std::vector<CaptionSet> load_mscoco_captions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return parse_mscoco_captions(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed caption file " + path.string() + ": " + e.what());
  }
}

struct MscocoResult {
  std::vector<ParaphrasePair> pairs;
  std::size_t skipped = 0;
};

/// Per image: drop one of the five captions at random, pair the remaining four
/// into two disjoint source/reference pairs at random, keep the first
/// `max_words` words of every caption. Images without exactly five captions are
/// skipped and counted.
inline MscocoResult preprocess_mscoco(const std::vector<CaptionSet>& sets, std::uint64_t seed,
                                      std::size_t max_words = 15) {
  Rng rng(seed);
  MscocoResult result;
  for (const auto& set : sets) {
    if (set.captions.size() != 5) {
      ++result.skipped;
      continue;
    }
    std::vector<Tokens> caps;
    for (const auto& c : set.captions) {
      Tokens t = tokenize(c);
      if (t.size() > max_words) t.resize(max_words);
      caps.push_back(std::move(t));
    }
    caps.erase(caps.begin() + static_cast<std::ptrdiff_t>(rng.below(5)));
    rng.shuffle(caps);
    for (std::size_t i = 0; i < 4; i += 2) {
      if (caps[i].empty() || caps[i + 1].empty()) continue;
      result.pairs.push_back({caps[i], caps[i + 1]});
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Toy corpora and splitting

enum class ToyKind { copy, substitution };

inline ToyKind parse_toy_kind(const std::string& s) {
  if (s == "copy") return ToyKind::copy;
  if (s == "substitution") return ToyKind::substitution;
  throw ConfigError("unknown toy corpus kind '" + s + "' (expected copy or substitution)");
}

struct ToyCorpusSpec {
  ToyKind kind = ToyKind::copy;
  std::size_t vocab_size = 20;  // content words
  std::size_t max_len = 8;
  std::size_t train_count = 1000;
  std::size_t valid_count = 100;
  std::uint64_t seed = 1;
};

struct ToyCorpus {
  std::vector<ParaphrasePair> train;
  std::vector<ParaphrasePair> valid;
  Tokens words;
  std::map<std::string, std::string> synonym;  // substitution involution
};

inline std::string toy_word(std::size_t i) { return "w" + std::to_string(i); }

/// Random pairing of the word list; an odd word out maps to itself.
inline std::map<std::string, std::string> toy_synonyms(const Tokens& words, Rng& rng) {
  std::vector<std::size_t> perm(words.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::map<std::string, std::string> syn;
  for (std::size_t i = 0; i + 1 < perm.size(); i += 2) {
    syn[words[perm[i]]] = words[perm[i + 1]];
    syn[words[perm[i + 1]]] = words[perm[i]];
  }
  if (perm.size() % 2 == 1) syn[words[perm.back()]] = words[perm.back()];
  return syn;
}

inline Tokens apply_synonyms(const Tokens& s, const std::map<std::string, std::string>& syn) {
  Tokens out;
  out.reserve(s.size());
  for (const auto& t : s) {
    auto it = syn.find(t);
    out.push_back(it == syn.end() ? t : it->second);
  }
  return out;
}

/// Distinct random sources of length 1..max_len; train and valid never share a source.
inline ToyCorpus make_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.vocab_size < 4) throw ArgumentError("toy corpus: vocab_size must be >= 4");
  if (spec.max_len < 1) throw ArgumentError("toy corpus: max_len must be >= 1");
  const std::size_t wanted = spec.train_count + spec.valid_count;
  // Number of distinct sequences, saturating once it exceeds the request.
  std::size_t space = 0;
  std::size_t power = 1;
  for (std::size_t k = 1; k <= spec.max_len && space < wanted; ++k) {
    power = power > wanted ? power : power * spec.vocab_size;
    space += power;
  }
  if (wanted > space) {
    throw ArgumentError("toy corpus: " + std::to_string(wanted) + " sequences requested but only " +
                        std::to_string(space) + " distinct sequences exist");
  }
  ToyCorpus corpus;
  for (std::size_t i = 0; i < spec.vocab_size; ++i) corpus.words.push_back(toy_word(i));
  Rng rng(spec.seed);
  if (spec.kind == ToyKind::substitution) corpus.synonym = toy_synonyms(corpus.words, rng);
  std::set<Tokens> seen;
  std::vector<Tokens> sources;
  while (sources.size() < wanted) {
    Tokens s(1 + rng.below(spec.max_len));
    for (auto& t : s) t = corpus.words[rng.below(spec.vocab_size)];
    if (seen.insert(s).second) sources.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Tokens ref = spec.kind == ToyKind::copy ? sources[i] : apply_synonyms(sources[i], corpus.synonym);
    auto& dst = i < spec.train_count ? corpus.train : corpus.valid;
    dst.push_back({sources[i], std::move(ref)});
  }
  return corpus;
}

template <class Item>
struct Split {
  std::vector<Item> train;
  std::vector<Item> test;
};

/// Seeded shuffle; the first floor(n * train_fraction) items train, then up to
/// test_count of the remainder test.
template <class Item>
Split<Item> split(const std::vector<Item>& items, double train_fraction, std::size_t test_count, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ArgumentError("split: fraction outside [0, 1]");
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(items.size())));
  Split<Item> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_train) {
      out.train.push_back(items[order[i]]);
    } else if (out.test.size() < test_count) {
      out.test.push_back(items[order[i]]);
    }
  }
  return out;
}

}  // namespace rlstm
