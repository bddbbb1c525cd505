#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rlstm/errors.hpp"
#include "rlstm/lstm.hpp"
#include "rlstm/tensor.hpp"

namespace rlstm {

/// How a residual source of a different width is matched to the layer output.
enum class DimFix {
  pad_input_with_zeros,  // zero-pad (or truncate) the source to the hidden width
  clip_hidden_to_input,  // keep only the first width(source) hidden units
};

inline const char* to_string(DimFix d) noexcept {
  return d == DimFix::pad_input_with_zeros ? "pad" : "clip";
}

inline DimFix parse_dim_fix(const std::string& s) {
  if (s == "pad" || s == "pad_input_with_zeros") return DimFix::pad_input_with_zeros;
  if (s == "clip" || s == "clip_hidden_to_input") return DimFix::clip_hidden_to_input;
  throw ConfigError("unknown dim_fix '" + s + "' (expected pad or clip)");
}

/// Vertical LSTM stack. Layers are numbered 1..num_layers; with interval n > 0 the
/// layers n, 2n, ... add the input of layer l-n+1 to their output.
struct StackConfig {
  std::size_t num_layers = 1;
  std::size_t residual_interval = 0;
  std::size_t hidden = 0;
  DimFix dim_fix = DimFix::pad_input_with_zeros;

  void validate() const {
    if (num_layers < 1) throw ConfigError("stack: num_layers must be >= 1");
    if (hidden < 1) throw ConfigError("stack: hidden must be >= 1");
    if (residual_interval > num_layers) {
      throw ConfigError("stack: residual interval " + std::to_string(residual_interval) + " exceeds " +
                        std::to_string(num_layers) + " layers");
    }
  }

  bool is_residual(std::size_t layer) const noexcept {
    return residual_interval > 0 && layer % residual_interval == 0;
  }

  /// Index into the per-layer input list (0 = stack input, l = output of layer l).
  std::size_t residual_source(std::size_t layer) const noexcept { return layer - residual_interval; }

  std::vector<std::size_t> residual_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 1; l <= num_layers; ++l) {
      if (is_residual(l)) out.push_back(l);
    }
    return out;
  }

  friend bool operator==(const StackConfig&, const StackConfig&) = default;
};

/// widths[0] is the stack input width, widths[l] the output width of layer l.
inline std::vector<std::size_t> stack_widths(const StackConfig& config, std::size_t input_width) {
  config.validate();
  std::vector<std::size_t> widths(config.num_layers + 1, config.hidden);
  widths[0] = input_width;
  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    if (!config.is_residual(l) || config.dim_fix == DimFix::pad_input_with_zeros) continue;
    const std::size_t src = widths[config.residual_source(l)];
    if (src > config.hidden) {
      throw ConfigError("stack: clip mode needs residual input width " + std::to_string(src) +
                        " <= hidden " + std::to_string(config.hidden) + " at layer " + std::to_string(l));
    }
    widths[l] = src;
  }
  return widths;
}

/// Stack input: a token sequence over a vocabulary of `width` or a dense sequence.
template <std::floating_point T>
struct StackInput {
  std::size_t width = 0;
  std::vector<std::size_t> tokens;
  std::vector<Vector<T>> dense;
  bool is_tokens = false;

  static StackInput from_tokens(std::vector<std::size_t> toks, std::size_t vocab) {
    StackInput in;
    in.width = vocab;
    in.tokens = std::move(toks);
    in.is_tokens = true;
    return in;
  }
  static StackInput from_dense(std::vector<Vector<T>> xs, std::size_t width) {
    StackInput in;
    in.width = width;
    in.dense = std::move(xs);
    return in;
  }

  std::size_t length() const noexcept { return is_tokens ? tokens.size() : dense.size(); }
};

/// Dropout multipliers indexed [layer-1][t][unit]; entries are 0 or 1/keep.
template <std::floating_point T>
using DropoutMasks = std::vector<std::vector<Vector<T>>>;

template <std::floating_point T>
struct StackTape {
  StackInput<T> input;
  std::vector<std::size_t> widths;
  std::vector<LstmTape<T>> layers;
  std::vector<std::vector<Vector<T>>> outputs;  // outputs[l-1][t], after residual and dropout
  DropoutMasks<T> masks;                         // empty when dropout is off
};

template <std::floating_point T>
struct StackForwardResult {
  std::vector<Vector<T>> top;            // top-layer output per timestep
  std::vector<LstmState<T>> final_states;  // raw LSTM (h, c) per layer
  StackTape<T> tape;
};

namespace detail {

template <class T>
void add_residual(const StackConfig& config, const StackInput<T>& input,
                  const std::vector<std::vector<Vector<T>>>& outputs, std::size_t layer, std::size_t t,
                  std::size_t src_width, Vector<T>& out) {
  const std::size_t src = config.residual_source(layer);
  if (config.dim_fix == DimFix::clip_hidden_to_input) out.resize(src_width);
  if (src == 0 && input.is_tokens) {
    const std::size_t idx = input.tokens[t];
    if (idx < out.size()) out[idx] += T(1);
    return;
  }
  const Vector<T>& x = src == 0 ? input.dense[t] : outputs[src - 1][t];
  const std::size_t m = std::min(out.size(), x.size());
  for (std::size_t k = 0; k < m; ++k) out[k] += x[k];
}

template <class T>
void check_masks(const DropoutMasks<T>& masks, const std::vector<std::size_t>& widths, std::size_t steps) {
  if (masks.size() != widths.size() - 1) throw ShapeError("stack: dropout masks need one entry per layer");
  for (std::size_t l = 0; l < masks.size(); ++l) {
    if (masks[l].size() != steps) throw ShapeError("stack: dropout mask length at layer " + std::to_string(l + 1));
    for (const auto& m : masks[l]) {
      if (m.size() != widths[l + 1]) throw ShapeError("stack: dropout mask width at layer " + std::to_string(l + 1));
    }
  }
}

}  // namespace detail

/// Runs every layer over the whole sequence. Layer l consumes layer l-1's output;
/// residual layers add the (dimension-fixed) input of layer l-n+1; dropout masks,
/// when given, scale every layer's output.
template <std::floating_point T>
StackForwardResult<T> stack_forward(const std::vector<LstmParams<T>>& layers, const StackConfig& config,
                                    StackInput<T> input, const std::vector<LstmState<T>>& init_states,
                                    const DropoutMasks<T>* masks = nullptr) {
  const auto widths = stack_widths(config, input.width);
  if (layers.size() != config.num_layers) throw ShapeError("stack: layer count does not match config");
  if (init_states.size() != config.num_layers) throw ShapeError("stack: need one initial state per layer");
  const std::size_t steps = input.length();
  if (masks != nullptr) detail::check_masks(*masks, widths, steps);

  StackForwardResult<T> result;
  auto& tape = result.tape;
  tape.widths = widths;
  tape.layers.resize(config.num_layers);
  tape.outputs.resize(config.num_layers);
  result.final_states.resize(config.num_layers);

  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    const auto& params = layers[l - 1];
    if (params.input_dim() != widths[l - 1] || params.hidden() != config.hidden) {
      throw ShapeError("stack: layer " + std::to_string(l) + " expects input " + std::to_string(params.input_dim()) +
                       ", hidden " + std::to_string(params.hidden()) + "; config gives " +
                       std::to_string(widths[l - 1]) + ", " + std::to_string(config.hidden));
    }
    LstmForwardResult<T> fwd = l == 1 && input.is_tokens
                                   ? lstm_forward_tokens(params, input.tokens, init_states[0])
                                   : lstm_forward(params, l == 1 ? input.dense : tape.outputs[l - 2], init_states[l - 1]);
    result.final_states[l - 1] = fwd.states.empty() ? init_states[l - 1] : fwd.states.back();
    auto& out = tape.outputs[l - 1];
    out.resize(steps);
    const bool residual = config.is_residual(l);
    for (std::size_t t = 0; t < steps; ++t) {
      out[t] = fwd.states[t].h;
      if (residual) {
        detail::add_residual(config, input, tape.outputs, l, t, widths[config.residual_source(l)], out[t]);
      }
      if (masks != nullptr) {
        const Vector<T>& m = (*masks)[l - 1][t];
        for (std::size_t k = 0; k < out[t].size(); ++k) out[t][k] *= m[k];
      }
    }
    tape.layers[l - 1] = std::move(fwd.tape);
  }
  result.top = tape.outputs.back();
  if (masks != nullptr) tape.masks = *masks;
  tape.input = std::move(input);
  return result;
}

template <std::floating_point T>
struct StackBackwardResult {
  std::vector<Vector<T>> grad_input;       // empty for token input
  std::vector<LstmState<T>> grad_init;     // per layer
};

/// Reverse pass of stack_forward. grad_top[t] is dL/d(top output); grad_final[l]
/// is dL/d(final raw state of layer l+1) and may hold empty vectors. Parameter
/// gradients are added into `grads`.
template <std::floating_point T>
StackBackwardResult<T> stack_backward(const std::vector<LstmParams<T>>& layers, const StackConfig& config,
                                      const StackTape<T>& tape, const std::vector<Vector<T>>& grad_top,
                                      const std::vector<LstmState<T>>& grad_final,
                                      std::vector<LstmParams<T>>& grads) {
  const std::size_t num = config.num_layers;
  const std::size_t steps = tape.input.length();
  if (grad_top.size() != steps) throw ArgumentError("stack_backward: gradient length does not match tape");
  if (grad_final.size() != num || grads.size() != num) throw ShapeError("stack_backward: per-layer sizes");
  const auto& widths = tape.widths;

  // grad_out[l][t] = dL/d(input list entry l): 0 is the stack input, l the output of layer l.
  std::vector<std::vector<Vector<T>>> grad_out(num + 1);
  for (std::size_t l = 0; l <= num; ++l) {
    if (l == 0 && tape.input.is_tokens) continue;
    grad_out[l].assign(steps, Vector<T>(widths[l], T(0)));
  }
  for (std::size_t t = 0; t < steps; ++t) {
    if (grad_top[t].size() != widths[num]) throw ShapeError("stack_backward: top gradient width");
    grad_out[num][t] = grad_top[t];
  }

  StackBackwardResult<T> result;
  result.grad_init.resize(num);
  std::vector<Vector<T>> grad_h(steps, Vector<T>(config.hidden, T(0)));
  std::vector<Vector<T>> grad_x;
  for (std::size_t l = num; l >= 1; --l) {
    auto& g = grad_out[l];
    if (!tape.masks.empty()) {
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t k = 0; k < g[t].size(); ++k) g[t][k] *= tape.masks[l - 1][t][k];
      }
    }
    for (std::size_t t = 0; t < steps; ++t) {
      std::fill(grad_h[t].begin(), grad_h[t].end(), T(0));
      std::copy(g[t].begin(), g[t].end(), grad_h[t].begin());
    }
    if (config.is_residual(l)) {
      const std::size_t src = config.residual_source(l);
      if (!(src == 0 && tape.input.is_tokens)) {
        for (std::size_t t = 0; t < steps; ++t) {
          const std::size_t m = std::min(g[t].size(), grad_out[src][t].size());
          for (std::size_t k = 0; k < m; ++k) grad_out[src][t][k] += g[t][k];
        }
      }
    }
    const bool need_x = !(l == 1 && tape.input.is_tokens);
    result.grad_init[l - 1] = lstm_backward_accumulate(layers[l - 1], tape.layers[l - 1], grad_h, grad_final[l - 1],
                                                       grads[l - 1], need_x ? &grad_x : nullptr);
    if (need_x) {
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t k = 0; k < grad_x[t].size(); ++k) grad_out[l - 1][t][k] += grad_x[t][k];
      }
    }
  }
  if (!tape.input.is_tokens) result.grad_input = std::move(grad_out[0]);
  return result;
}

/// One timestep of the stack without recording a tape (inference path).
/// `states` is updated in place; returns the top-layer output.
template <std::floating_point T>
Vector<T> stack_step(const std::vector<LstmParams<T>>& layers, const StackConfig& config, std::size_t input_width,
                     TokenInput token, std::vector<LstmState<T>>& states) {
  const auto widths = stack_widths(config, input_width);
  if (states.size() != config.num_layers) throw ShapeError("stack_step: need one state per layer");
  if (token.index >= input_width) {
    throw DataError("token index " + std::to_string(token.index) + " out of range for vocabulary of " +
                    std::to_string(input_width));
  }
  StackInput<T> input;
  input.width = input_width;
  input.is_tokens = true;
  input.tokens = {token.index};
  std::vector<std::vector<Vector<T>>> outputs(config.num_layers, std::vector<Vector<T>>(1));
  LstmStepCache<T> cache;
  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    const auto& params = layers[l - 1];
    detail::check_state(params, states[l - 1]);
    if (l == 1) {
      detail::check_token_input(params, token);
      detail::step_into(params, detail::token_adder<T>(token), states[0], cache);
    } else {
      const std::span<const T> x(outputs[l - 2][0]);
      detail::check_dense_input(params, x);
      detail::step_into(params, detail::dense_adder<T>(x), states[l - 1], cache);
    }
    states[l - 1].h = cache.h;
    states[l - 1].c = cache.c;
    outputs[l - 1][0] = cache.h;
    if (config.is_residual(l)) {
      detail::add_residual(config, input, outputs, l, 0, widths[config.residual_source(l)], outputs[l - 1][0]);
    }
  }
  return std::move(outputs.back()[0]);
}

}  // namespace rlstm
