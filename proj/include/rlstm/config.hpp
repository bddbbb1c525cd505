#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "rlstm/data.hpp"
#include "rlstm/decoder.hpp"
#include "rlstm/errors.hpp"
#include "rlstm/stack.hpp"
#include "rlstm/trainer.hpp"

namespace rlstm {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Flat key=value settings. Later assignments win, so a file is applied first and
/// command-line values after it.
class RunConfig {
 public:
  static const std::vector<ConfigKey>& keys() {
    static const std::vector<ConfigKey> k{
        {"layers", "4", "LSTM layers per stack"},
        {"residual_every", "2", "residual interval n (0 disables residuals)"},
        {"hidden", "512", "units per layer"},
        {"dim_fix", "pad", "residual width fix: pad or clip"},
        {"reverse_source", "false", "feed the source to the encoder reversed"},
        {"vocab_size", "50000", "maximum vocabulary size including reserved tokens"},
        {"init_scale", "0.08", "weights start uniform in [-init_scale, init_scale]"},
        {"forget_bias", "0", "initial forget-gate bias"},
        {"precision", "32", "floating-point width: 32 or 64"},
        {"lr", "1.0", "initial learning rate"},
        {"halve_every", "3", "halve the learning rate every this many epochs"},
        {"epochs", "10", "training epochs"},
        {"dropout_keep", "0.5", "dropout keep probability (1 disables dropout)"},
        {"batch_size", "64", "pairs per SGD step"},
        {"loss_normalization", "sequence", "SGD update scale: token or sequence"},
        {"max_grad_norm", "0", "global gradient-norm clip (0 disables)"},
        {"max_steps", "0", "stop after this many SGD steps (0: no limit)"},
        {"record_wall_clock", "true", "write elapsed seconds to curves.csv (false writes 0)"},
        {"seed", "1", "random seed"},
        {"threads", "1", "worker threads for batch gradients"},
        {"beam", "5", "beam size"},
        {"max_len", "0", "maximum output length (0: 2 * source length + 5)"},
        {"length_normalize", "false", "rank hypotheses by mean per-token log-probability"},
        {"top_k", "0", "hypotheses printed per source (0: all finished)"},
        {"bootstrap_resamples", "1000", "bootstrap resamples for variance"},
        {"ar_iterations", "10000", "approximate randomization trials"},
        {"toy_kind", "copy", "toy corpus: copy or substitution"},
        {"toy_vocab", "20", "toy corpus content words"},
        {"toy_max_len", "8", "toy corpus maximum sentence length"},
        {"toy_train", "5000", "toy corpus training pairs"},
        {"toy_valid", "500", "toy corpus validation pairs"},
    };
    return k;
  }

  RunConfig() {
    for (const auto& k : keys()) values_.push_back(k.default_value);
  }

  static bool is_key(const std::string& name) { return index(name) < keys().size(); }

  void set(const std::string& name, const std::string& value) {
    const std::size_t i = index(name);
    if (i == keys().size()) throw ConfigError("unknown configuration key '" + name + "'");
    values_[i] = value;
  }

  const std::string& get(const std::string& name) const {
    const std::size_t i = index(name);
    if (i == keys().size()) throw ConfigError("unknown configuration key '" + name + "'");
    return values_[i];
  }

  /// `key = value` lines; `#` starts a comment; blank lines are ignored.
  void apply(std::istream& in, const std::string& origin) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
      }
      const std::string key = detail::trim(std::string_view(t).substr(0, eq));
      if (!is_key(key)) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown configuration key '" + key + "'");
      }
      set(key, detail::trim(std::string_view(t).substr(eq + 1)));
    }
  }

  void apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    apply(in, path.string());
  }

  /// Every key in declaration order; loading this text back reproduces the config.
  std::string echo() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < keys().size(); ++i) out << keys()[i].name << '=' << values_[i] << '\n';
    return out.str();
  }

  std::size_t count(const std::string& name) const {
    const std::string& v = get(name);
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + name + "' expects a non-negative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(x);
  }

  double real(const std::string& name) const {
    const std::string& v = get(name);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used == v.size() && std::isfinite(x)) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + name + "' expects a number, got '" + v + "'");
  }

  bool boolean(const std::string& name) const {
    const std::string& v = get(name);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + name + "' expects true or false, got '" + v + "'");
  }

  StackConfig stack() const {
    StackConfig c{count("layers"), count("residual_every"), count("hidden"), parse_dim_fix(get("dim_fix"))};
    c.validate();
    return c;
  }

  TrainConfig train() const {
    TrainConfig c;
    c.initial_lr = real("lr");
    c.halve_every = count("halve_every");
    c.epochs = count("epochs");
    c.dropout_keep = real("dropout_keep");
    c.batch_size = count("batch_size");
    c.seed = count("seed");
    if (const double g = real("max_grad_norm"); g != 0.0) c.max_grad_norm = g;
    c.threads = count("threads");
    c.max_steps = count("max_steps");
    c.record_wall_clock = boolean("record_wall_clock");
    c.loss_normalization = parse_loss_normalization(get("loss_normalization"));
    c.validate();
    return c;
  }

  DecodeConfig decode() const {
    DecodeConfig c;
    c.beam_size = count("beam");
    c.max_len = count("max_len");
    c.length_normalize = boolean("length_normalize");
    c.top_k = count("top_k");
    if (c.beam_size == 0) throw ConfigError("config key 'beam' must be >= 1");
    return c;
  }

  ToyCorpusSpec toy() const {
    ToyCorpusSpec s;
    s.kind = parse_toy_kind(get("toy_kind"));
    s.vocab_size = count("toy_vocab");
    s.max_len = count("toy_max_len");
    s.train_count = count("toy_train");
    s.valid_count = count("toy_valid");
    s.seed = count("seed");
    return s;
  }

  std::size_t precision() const {
    const std::size_t p = count("precision");
    if (p != 32 && p != 64) throw ConfigError("config key 'precision' must be 32 or 64");
    return p;
  }

  /// Parses every typed view so that bad values fail before any work starts.
  void validate() const {
    (void)stack();
    (void)train();
    (void)decode();
    (void)toy();
    (void)precision();
    if (count("vocab_size") <= kReservedTokens) throw ConfigError("config key 'vocab_size' must exceed 3");
    (void)real("init_scale");
    (void)real("forget_bias");
    (void)boolean("reverse_source");
    (void)count("bootstrap_resamples");
    (void)count("ar_iterations");
  }

 private:
  static std::size_t index(const std::string& name) {
    const auto& k = keys();
    return static_cast<std::size_t>(
        std::find_if(k.begin(), k.end(), [&](const ConfigKey& c) { return c.name == name; }) - k.begin());
  }

  std::vector<std::string> values_;
};

}  // namespace rlstm
