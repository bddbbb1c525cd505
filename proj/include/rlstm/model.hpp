#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rlstm/errors.hpp"
#include "rlstm/lstm.hpp"
#include "rlstm/stack.hpp"
#include "rlstm/tensor.hpp"

namespace rlstm {

/// Reserved vocabulary indices shared by every model and vocabulary.
inline constexpr std::size_t kEos = 0;
inline constexpr std::size_t kUnk = 1;
inline constexpr std::size_t kPad = 2;
inline constexpr std::size_t kReservedTokens = 3;

/// Encoder-decoder parameters. Layer 1 of each stack reads one-hot tokens, so its
/// input weights are hidden x vocab_size and are used by column selection.
template <std::floating_point T>
struct ModelParams {
  StackConfig config;
  std::size_t vocab_size = 0;
  bool reverse_source = false;
  std::uint64_t vocab_hash = 0;
  std::vector<LstmParams<T>> encoder;
  std::vector<LstmParams<T>> decoder;
  Matrix<T> projection;  // vocab x top width
  Vector<T> projection_bias;

  static ModelParams zeros(const StackConfig& config, std::size_t vocab_size) {
    if (vocab_size <= kReservedTokens) throw ConfigError("model: vocabulary must hold more than the reserved tokens");
    const auto widths = stack_widths(config, vocab_size);
    ModelParams p;
    p.config = config;
    p.vocab_size = vocab_size;
    for (std::size_t l = 1; l <= config.num_layers; ++l) {
      p.encoder.push_back(LstmParams<T>::zeros(config.hidden, widths[l - 1]));
      p.decoder.push_back(LstmParams<T>::zeros(config.hidden, widths[l - 1]));
    }
    p.projection = Matrix<T>(vocab_size, widths.back());
    p.projection_bias.assign(vocab_size, T(0));
    return p;
  }

  /// Uniform(-init_scale, init_scale) weights; the output bias starts at zero.
  static ModelParams random(const StackConfig& config, std::size_t vocab_size, Rng& rng, double init_scale = 0.08,
                            double forget_bias = 0.0) {
    ModelParams p = zeros(config, vocab_size);
    for (auto* stack : {&p.encoder, &p.decoder}) {
      for (auto& layer : *stack) {
        layer = LstmParams<T>::random(layer.hidden(), layer.input_dim(), rng, init_scale, forget_bias);
      }
    }
    fill_uniform(p.projection.values(), rng, -init_scale, init_scale);
    return p;
  }

  /// Same shapes, all zeros; used as a gradient accumulator.
  ModelParams zeros_like() const {
    ModelParams g = zeros(config, vocab_size);
    g.reverse_source = reverse_source;
    g.vocab_hash = vocab_hash;
    return g;
  }

  std::size_t top_width() const noexcept { return projection.cols(); }

  std::size_t parameter_count() const {
    std::size_t n = projection.size() + projection_bias.size();
    for (const auto& l : encoder) n += l.parameter_count();
    for (const auto& l : decoder) n += l.parameter_count();
    return n;
  }

  void validate() const {
    const auto widths = stack_widths(config, vocab_size);
    if (encoder.size() != config.num_layers || decoder.size() != config.num_layers) {
      throw ShapeError("model: stack depth does not match config");
    }
    for (std::size_t l = 1; l <= config.num_layers; ++l) {
      for (const auto* layer : {&encoder[l - 1], &decoder[l - 1]}) {
        layer->validate();
        if (layer->hidden() != config.hidden || layer->input_dim() != widths[l - 1]) {
          throw ShapeError("model: layer " + std::to_string(l) + " shape does not match config");
        }
      }
    }
    if (projection.rows() != vocab_size || projection.cols() != widths.back() ||
        projection_bias.size() != vocab_size) {
      throw ShapeError("model: output projection shape " + projection.shape_string());
    }
  }

  /// Visits every tensor in a fixed order as (name, flat values).
  template <class F>
  void for_each_tensor(F&& f) {
    visit_stack(encoder, "encoder", f);
    visit_stack(decoder, "decoder", f);
    f(std::string("projection"), projection.values());
    f(std::string("projection_bias"), std::span<T>(projection_bias));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit_stack(encoder, "encoder", f);
    visit_stack(decoder, "decoder", f);
    f(std::string("projection"), projection.values());
    f(std::string("projection_bias"), std::span<const T>(projection_bias));
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  template <class Stack, class F>
  static void visit_stack(Stack& stack, const char* prefix, F& f) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
      const std::string base = std::string(prefix) + "." + std::to_string(l + 1) + ".";
      stack[l].for_each_tensor([&](const std::string& name, auto values) { f(base + name, values); });
    }
  }
};

/// A source/target pair already mapped to vocabulary indices.
struct IndexPair {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;

  friend bool operator==(const IndexPair&, const IndexPair&) = default;
  friend auto operator<=>(const IndexPair&, const IndexPair&) = default;
};

template <std::floating_point T>
void check_tokens(const ModelParams<T>& params, const std::vector<std::size_t>& tokens) {
  for (std::size_t tok : tokens) {
    if (tok >= params.vocab_size) {
      throw DataError("token index " + std::to_string(tok) + " out of range for vocabulary of " +
                      std::to_string(params.vocab_size));
    }
  }
}

/// Source as fed to the encoder: optionally reversed, with EOS appended.
template <std::floating_point T>
std::vector<std::size_t> encoder_tokens(const ModelParams<T>& params, const std::vector<std::size_t>& source) {
  check_tokens(params, source);
  std::vector<std::size_t> toks = source;
  if (params.reverse_source) std::reverse(toks.begin(), toks.end());
  toks.push_back(kEos);
  return toks;
}

template <std::floating_point T>
std::vector<LstmState<T>> zero_states(const StackConfig& config) {
  return std::vector<LstmState<T>>(config.num_layers, LstmState<T>::zeros(config.hidden));
}

/// Final (h, c) of every encoder layer; these initialise the decoder layer by layer.
template <std::floating_point T>
std::vector<LstmState<T>> encode(const ModelParams<T>& params, const std::vector<std::size_t>& source) {
  auto toks = encoder_tokens(params, source);
  auto fwd = stack_forward(params.encoder, params.config, StackInput<T>::from_tokens(std::move(toks), params.vocab_size),
                           zero_states<T>(params.config));
  return std::move(fwd.final_states);
}

/// logits = projection * top + bias
template <std::floating_point T>
Vector<T> project(const ModelParams<T>& params, std::span<const T> top) {
  Vector<T> logits = params.projection_bias;
  gemv_add(params.projection, top, std::span<T>(logits));
  return logits;
}

template <std::floating_point T>
struct DecodeStepResult {
  Vector<T> log_probs;
  std::vector<LstmState<T>> states;
};

/// Feeds prev_token through the decoder stack once and returns log p(next | ...).
template <std::floating_point T>
DecodeStepResult<T> decode_step(const ModelParams<T>& params, std::size_t prev_token,
                                 std::vector<LstmState<T>> states) {
  if (prev_token >= params.vocab_size) {
    throw DataError("token index " + std::to_string(prev_token) + " out of range for vocabulary of " +
                    std::to_string(params.vocab_size));
  }
  const Vector<T> top = stack_step(params.decoder, params.config, params.vocab_size, TokenInput{prev_token}, states);
  const Vector<T> logits = project(params, std::span<const T>(top));
  return {log_softmax(std::span<const T>(logits)), std::move(states)};
}

/// Teacher-forced log-probability of `target` followed by EOS (inference path).
template <std::floating_point T>
double sequence_log_prob(const ModelParams<T>& params, const std::vector<std::size_t>& source,
                         const std::vector<std::size_t>& target, bool append_eos = true) {
  check_tokens(params, target);
  auto states = encode(params, source);
  std::size_t prev = kEos;
  double total = 0.0;
  const std::size_t n = target.size() + (append_eos ? 1 : 0);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t next = t < target.size() ? target[t] : kEos;
    auto step = decode_step(params, prev, std::move(states));
    total += static_cast<double>(step.log_probs[next]);
    states = std::move(step.states);
    prev = next;
  }
  return total;
}

}  // namespace rlstm
