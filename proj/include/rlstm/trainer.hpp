#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rlstm/checkpoint.hpp"
#include "rlstm/errors.hpp"
#include "rlstm/model.hpp"
#include "rlstm/stack.hpp"
#include "rlstm/tensor.hpp"

namespace rlstm {

/// Scale of the SGD update. `token` steps along the gradient of the mean token
/// cross-entropy; `sequence` along the per-token NLL summed within each sequence
/// and averaged over the batch (update scaled by tokens / sequences).
enum class LossNormalization { token, sequence };

inline const char* to_string(LossNormalization n) noexcept {
  return n == LossNormalization::token ? "token" : "sequence";
}

inline LossNormalization parse_loss_normalization(const std::string& s) {
  if (s == "token") return LossNormalization::token;
  if (s == "sequence") return LossNormalization::sequence;
  throw ConfigError("unknown loss_normalization '" + s + "' (expected token or sequence)");
}

struct TrainConfig {
  double initial_lr = 1.0;
  std::size_t halve_every = 3;
  std::size_t epochs = 10;
  double dropout_keep = 0.5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  std::optional<double> max_grad_norm;
  std::size_t threads = 1;
  std::size_t max_steps = 0;  // 0: no step limit
  bool record_wall_clock = true;
  LossNormalization loss_normalization = LossNormalization::sequence;

  void validate() const {
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("train: dropout_keep must be in (0, 1]");
    if (!(initial_lr > 0.0)) throw ConfigError("train: initial_lr must be positive");
    if (halve_every < 1) throw ConfigError("train: halve_every must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
    if (max_grad_norm && !(*max_grad_norm > 0.0)) throw ConfigError("train: max_grad_norm must be positive");
  }
};

/// initial_lr * 0.5^floor(epoch / halve_every), epoch counted from 0.
inline double lr_at(std::size_t epoch, const TrainConfig& config) {
  return config.initial_lr * std::ldexp(1.0, -static_cast<int>(epoch / config.halve_every));
}

/// Dropout multipliers for one training pair, encoder and decoder.
template <std::floating_point T>
struct PairMasks {
  DropoutMasks<T> encoder;
  DropoutMasks<T> decoder;
};

/// Number of target tokens before the first PAD; later positions are masked.
inline std::size_t target_length(const std::vector<std::size_t>& target) {
  std::size_t n = 0;
  while (n < target.size() && target[n] != kPad) ++n;
  return n;
}

/// Scored positions of a pair: the unpadded target plus the closing EOS, or
/// nothing when the target is entirely padding.
inline std::size_t scored_tokens(const std::vector<std::size_t>& target) {
  const std::size_t n = target_length(target);
  return n == 0 ? 0 : n + 1;
}

template <std::floating_point T>
DropoutMasks<T> sample_dropout_masks(const std::vector<std::size_t>& widths, std::size_t steps, double keep,
                                     Rng& rng) {
  DropoutMasks<T> masks(widths.size() - 1);
  const T scale = static_cast<T>(1.0 / keep);
  for (std::size_t l = 1; l < widths.size(); ++l) {
    masks[l - 1].resize(steps);
    for (auto& m : masks[l - 1]) {
      m.resize(widths[l]);
      for (T& v : m) v = rng.bernoulli(keep) ? scale : T(0);
    }
  }
  return masks;
}

template <std::floating_point T>
PairMasks<T> sample_pair_masks(const ModelParams<T>& params, const IndexPair& pair, double keep, Rng& rng) {
  const auto widths = stack_widths(params.config, params.vocab_size);
  PairMasks<T> masks;
  masks.encoder = sample_dropout_masks<T>(widths, pair.source.size() + 1, keep, rng);
  masks.decoder = sample_dropout_masks<T>(widths, target_length(pair.target) + 1, keep, rng);
  return masks;
}

namespace detail {

/// Forward and backward for one pair. Gradients of scale * NLL are added into
/// `grads` when it is non-null. Returns the NLL summed over scored positions.
template <class T>
double pair_nll(const ModelParams<T>& params, const IndexPair& pair, const PairMasks<T>* masks, T scale,
                ModelParams<T>* grads) {
  const std::size_t len = target_length(pair.target);
  if (len == 0) return 0.0;
  std::vector<std::size_t> dec_in(len + 1);
  std::vector<std::size_t> dec_out(len + 1);
  dec_in[0] = kEos;
  for (std::size_t t = 0; t < len; ++t) {
    dec_in[t + 1] = pair.target[t];
    dec_out[t] = pair.target[t];
  }
  dec_out[len] = kEos;
  check_tokens(params, dec_out);

  auto enc = stack_forward(params.encoder, params.config,
                           StackInput<T>::from_tokens(encoder_tokens(params, pair.source), params.vocab_size),
                           zero_states<T>(params.config), masks ? &masks->encoder : nullptr);
  auto dec = stack_forward(params.decoder, params.config, StackInput<T>::from_tokens(dec_in, params.vocab_size),
                           enc.final_states, masks ? &masks->decoder : nullptr);

  double nll = 0.0;
  const std::size_t steps = dec.top.size();
  std::vector<Vector<T>> grad_top;
  if (grads != nullptr) grad_top.assign(steps, Vector<T>(params.top_width(), T(0)));
  for (std::size_t t = 0; t < steps; ++t) {
    const Vector<T> logits = project(params, std::span<const T>(dec.top[t]));
    const Vector<T> lp = log_softmax(std::span<const T>(logits));
    nll -= static_cast<double>(lp[dec_out[t]]);
    if (grads == nullptr) continue;
    Vector<T> dlogits(lp.size());
    for (std::size_t v = 0; v < lp.size(); ++v) dlogits[v] = std::exp(lp[v]) * scale;
    dlogits[dec_out[t]] -= scale;
    outer_add(grads->projection, std::span<const T>(dlogits), std::span<const T>(dec.top[t]));
    for (std::size_t v = 0; v < lp.size(); ++v) grads->projection_bias[v] += dlogits[v];
    gemv_transposed_add(params.projection, std::span<const T>(dlogits), std::span<T>(grad_top[t]));
  }
  if (grads == nullptr) return nll;

  const std::size_t layers = params.config.num_layers;
  auto dec_back = stack_backward(params.decoder, params.config, dec.tape, grad_top,
                                 std::vector<LstmState<T>>(layers), grads->decoder);
  const std::vector<Vector<T>> enc_top_grad(enc.top.size(), Vector<T>(params.top_width(), T(0)));
  stack_backward(params.encoder, params.config, enc.tape, enc_top_grad, dec_back.grad_init, grads->encoder);
  return nll;
}

template <class T>
void add_into(ModelParams<T>& dst, const ModelParams<T>& src) {
  std::vector<std::span<const T>> from;
  src.for_each_tensor([&](const std::string&, std::span<const T> v) { from.push_back(v); });
  std::size_t i = 0;
  dst.for_each_tensor([&](const std::string&, std::span<T> v) {
    const auto s = from[i++];
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += s[k];
  });
}

}  // namespace detail

template <std::floating_point T>
struct BatchResult {
  double loss = 0.0;     // mean token cross-entropy
  double nll_sum = 0.0;
  std::size_t tokens = 0;
  ModelParams<T> gradients;
};

/// Teacher-forced mean token cross-entropy over the batch and its exact gradient.
/// Targets may carry trailing PAD tokens; those positions are excluded. With
/// threads > 1 the batch is split into contiguous chunks whose gradients are
/// summed in chunk order.
template <std::floating_point T>
BatchResult<T> batch_loss(const ModelParams<T>& params, std::span<const IndexPair> batch,
                          const std::vector<PairMasks<T>>* masks = nullptr, std::size_t threads = 1) {
  if (batch.empty()) throw ArgumentError("batch_loss: empty batch");
  if (masks != nullptr && masks->size() != batch.size()) throw ArgumentError("batch_loss: one mask set per pair");
  BatchResult<T> result;
  for (const auto& p : batch) result.tokens += scored_tokens(p.target);
  if (result.tokens == 0) throw ArgumentError("batch_loss: batch contains only padding");
  const T scale = static_cast<T>(1.0 / static_cast<double>(result.tokens));

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
  std::vector<ModelParams<T>> partial(workers, params.zeros_like());
  std::vector<double> nll(workers, 0.0);
  auto run_chunk = [&](std::size_t w) {
    const std::size_t begin = batch.size() * w / workers;
    const std::size_t end = batch.size() * (w + 1) / workers;
    for (std::size_t i = begin; i < end; ++i) {
      nll[w] += detail::pair_nll(params, batch[i], masks ? &(*masks)[i] : nullptr, scale, &partial[w]);
    }
  };
  if (workers == 1) {
    run_chunk(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
  }
  result.gradients = std::move(partial[0]);
  result.nll_sum = nll[0];
  for (std::size_t w = 1; w < workers; ++w) {
    detail::add_into(result.gradients, partial[w]);
    result.nll_sum += nll[w];
  }
  result.loss = result.nll_sum / static_cast<double>(result.tokens);
  return result;
}

/// Summed NLL and scored-token count over a dataset, no dropout, no gradients.
template <std::floating_point T>
std::pair<double, std::size_t> dataset_nll(const ModelParams<T>& params, std::span<const IndexPair> pairs) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& p : pairs) {
    nll += detail::pair_nll<T>(params, p, nullptr, T(1), nullptr);
    tokens += scored_tokens(p.target);
  }
  return {nll, tokens};
}

template <std::floating_point T>
void scale_into(ModelParams<T>& grads, T factor) {
  grads.for_each_tensor([factor](const std::string&, std::span<T> v) {
    for (T& x : v) x *= factor;
  });
}

struct SgdStats {
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

/// p <- p - lr * g, after rescaling g to max_grad_norm when its global norm exceeds it.
template <std::floating_point T>
SgdStats sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, double lr,
                  std::optional<double> max_grad_norm = std::nullopt) {
  SgdStats stats;
  double sq = 0.0;
  std::vector<std::span<const T>> g;
  grads.for_each_tensor([&](const std::string& name, std::span<const T> v) {
    for (T x : v) {
      if (!std::isfinite(x)) throw TrainingError("non-finite gradient in tensor " + name);
      sq += static_cast<double>(x) * static_cast<double>(x);
    }
    g.push_back(v);
  });
  stats.grad_norm = std::sqrt(sq);
  if (max_grad_norm && stats.grad_norm > *max_grad_norm) stats.clip_scale = *max_grad_norm / stats.grad_norm;
  const T step = static_cast<T>(lr * stats.clip_scale);
  std::size_t i = 0;
  params.for_each_tensor([&](const std::string& name, std::span<T> v) {
    const auto gv = g[i++];
    if (gv.size() != v.size()) throw ShapeError("sgd_step: gradient shape mismatch in tensor " + name);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= step * gv[k];
  });
  return stats;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_perplexity = 0.0;
  double valid_loss = 0.0;
  double valid_perplexity = 0.0;
  double seconds = 0.0;
  std::size_t steps = 0;  // cumulative SGD steps at the end of the epoch
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;
  std::size_t steps = 0;
  bool has_validation = false;

  /// `epoch,split,perplexity,lr,seconds`, one row per epoch and split, epochs 1-based.
  std::string csv() const {
    std::ostringstream out;
    out << "epoch,split,perplexity,lr,seconds\n";
    out << std::setprecision(17);
    for (const auto& e : epochs) {
      out << e.epoch + 1 << ",train," << e.train_perplexity << "," << e.lr << "," << e.seconds << "\n";
      if (has_validation) {
        out << e.epoch + 1 << ",valid," << e.valid_perplexity << "," << e.lr << "," << e.seconds << "\n";
      }
    }
    return out.str();
  }
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

template <std::floating_point T>
struct TrainResult {
  ModelParams<T> params;
  TrainReport report;
};

/// Path of the most recent good checkpoint written by train().
inline std::filesystem::path latest_checkpoint_path(const std::filesystem::path& dir) { return dir / "model.ckpt"; }

/// SGD with the halving schedule. Each epoch shuffles the corpus with the seeded
/// generator, draws fresh inverted-dropout masks per pair, and records training
/// and validation perplexity. A non-finite loss or gradient aborts with the path of
/// the last good checkpoint in the message.
template <std::floating_point T>
TrainResult<T> train(ModelParams<T> params, std::vector<IndexPair> corpus, std::span<const IndexPair> valid,
                     const TrainConfig& config, const TrainOptions& options = {}) {
  config.validate();
  if (corpus.empty()) throw ArgumentError("train: empty corpus");
  Rng rng(config.seed);
  TrainReport report;
  report.has_validation = !valid.empty();
  std::string last_good = "none";
  if (options.checkpoint_dir) {
    std::filesystem::create_directories(*options.checkpoint_dir);
    save_checkpoint(params, latest_checkpoint_path(*options.checkpoint_dir));
    last_good = latest_checkpoint_path(*options.checkpoint_dir).string();
  }
  const bool dropout = config.dropout_keep < 1.0;
  bool done = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, config);
    report.lr_trace.push_back(lr);
    rng.shuffle(corpus);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t begin = 0; begin < corpus.size(); begin += config.batch_size) {
      const std::size_t end = std::min(corpus.size(), begin + config.batch_size);
      const std::span<const IndexPair> batch(corpus.data() + begin, end - begin);
      std::vector<PairMasks<T>> masks;
      if (dropout) {
        masks.reserve(batch.size());
        for (const auto& pair : batch) masks.push_back(sample_pair_masks(params, pair, config.dropout_keep, rng));
      }
      BatchResult<T> b = batch_loss(params, batch, dropout ? &masks : nullptr, config.threads);
      try {
        if (!std::isfinite(b.loss)) throw TrainingError("non-finite training loss");
        if (config.loss_normalization == LossNormalization::sequence) {
          scale_into(b.gradients, static_cast<T>(static_cast<double>(b.tokens) / static_cast<double>(batch.size())));
        }
        sgd_step(params, b.gradients, lr, config.max_grad_norm);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(report.steps + 1) + "; last good checkpoint: " + last_good);
      }
      epoch_nll += b.nll_sum;
      epoch_tokens += b.tokens;
      ++report.steps;
      if (config.max_steps != 0 && report.steps >= config.max_steps) {
        done = true;
        break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_nll / static_cast<double>(epoch_tokens);
    rec.train_perplexity = std::exp(rec.train_loss);
    if (!valid.empty()) {
      const auto [nll, tokens] = dataset_nll(params, valid);
      rec.valid_loss = tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
      rec.valid_perplexity = std::exp(rec.valid_loss);
    }
    rec.steps = report.steps;
    if (config.record_wall_clock) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    if (options.checkpoint_dir) {
      std::ostringstream name;
      name << "epoch-" << std::setw(2) << std::setfill('0') << epoch + 1 << ".ckpt";
      save_checkpoint(params, *options.checkpoint_dir / name.str());
      save_checkpoint(params, latest_checkpoint_path(*options.checkpoint_dir));
      last_good = latest_checkpoint_path(*options.checkpoint_dir).string();
    }
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return {std::move(params), std::move(report)};
}

}  // namespace rlstm
