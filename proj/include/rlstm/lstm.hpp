#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rlstm/errors.hpp"
#include "rlstm/tensor.hpp"

namespace rlstm {

/// Gate order used throughout: input, forget, output, cell input.
enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCellInput = 3 };
inline constexpr std::size_t kGateCount = 4;
inline constexpr std::array<const char*, kGateCount> kGateNames = {"i", "f", "o", "c"};

/// One layer's weights. input_weights[g] is hidden x input, recurrent_weights[g] is
/// hidden x hidden, bias[g] has hidden entries.
template <std::floating_point T>
struct LstmParams {
  std::array<Matrix<T>, kGateCount> input_weights;
  std::array<Matrix<T>, kGateCount> recurrent_weights;
  std::array<Vector<T>, kGateCount> bias;

  static LstmParams zeros(std::size_t hidden, std::size_t input) {
    LstmParams p;
    for (std::size_t g = 0; g < kGateCount; ++g) {
      p.input_weights[g] = Matrix<T>(hidden, input);
      p.recurrent_weights[g] = Matrix<T>(hidden, hidden);
      p.bias[g] = Vector<T>(hidden, T(0));
    }
    return p;
  }

  /// Uniform(-scale, scale) weights, zero biases except the forget gate.
  static LstmParams random(std::size_t hidden, std::size_t input, Rng& rng, double scale,
                           double forget_bias = 0.0) {
    LstmParams p = zeros(hidden, input);
    for (std::size_t g = 0; g < kGateCount; ++g) {
      fill_uniform(p.input_weights[g].values(), rng, -scale, scale);
      fill_uniform(p.recurrent_weights[g].values(), rng, -scale, scale);
    }
    std::fill(p.bias[kForgetGate].begin(), p.bias[kForgetGate].end(), static_cast<T>(forget_bias));
    return p;
  }

  std::size_t hidden() const noexcept { return bias[0].size(); }
  std::size_t input_dim() const noexcept { return input_weights[0].cols(); }

  std::size_t parameter_count() const noexcept {
    return kGateCount * (hidden() * input_dim() + hidden() * hidden() + hidden());
  }

  void validate() const {
    const std::size_t h = hidden();
    const std::size_t in = input_dim();
    for (std::size_t g = 0; g < kGateCount; ++g) {
      if (input_weights[g].rows() != h || input_weights[g].cols() != in ||
          recurrent_weights[g].rows() != h || recurrent_weights[g].cols() != h ||
          bias[g].size() != h) {
        throw ShapeError(std::string("lstm params: inconsistent shapes for gate ") + kGateNames[g]);
      }
    }
  }

  /// Visits every tensor as (name, flat values) in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t g = 0; g < kGateCount; ++g) f(std::string("wx_") + kGateNames[g], input_weights[g].values());
    for (std::size_t g = 0; g < kGateCount; ++g) f(std::string("wh_") + kGateNames[g], recurrent_weights[g].values());
    for (std::size_t g = 0; g < kGateCount; ++g) f(std::string("b_") + kGateNames[g], std::span<T>(bias[g]));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (std::size_t g = 0; g < kGateCount; ++g) f(std::string("wx_") + kGateNames[g], input_weights[g].values());
    for (std::size_t g = 0; g < kGateCount; ++g) f(std::string("wh_") + kGateNames[g], recurrent_weights[g].values());
    for (std::size_t g = 0; g < kGateCount; ++g) f(std::string("b_") + kGateNames[g], std::span<const T>(bias[g]));
  }

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

template <std::floating_point T>
struct LstmState {
  Vector<T> h;
  Vector<T> c;

  static LstmState zeros(std::size_t hidden) { return {Vector<T>(hidden, T(0)), Vector<T>(hidden, T(0))}; }

  friend bool operator==(const LstmState&, const LstmState&) = default;
};

/// Column selection into input_weights; equivalent to multiplying by a one-hot vector.
struct TokenInput {
  std::size_t index;
};

/// Activations of one timestep kept for the backward pass.
template <std::floating_point T>
struct LstmStepCache {
  std::array<Vector<T>, kGateCount> gates;  // post-nonlinearity i, f, o, c_in
  Vector<T> c;
  Vector<T> tanh_c;
  Vector<T> h;
};

template <std::floating_point T>
struct LstmTape {
  LstmState<T> init;
  std::vector<LstmStepCache<T>> steps;
  std::vector<Vector<T>> dense_inputs;     // filled for dense sequences
  std::vector<std::size_t> token_inputs;   // filled for token sequences

  std::size_t length() const noexcept { return steps.size(); }
  bool token_input() const noexcept { return !token_inputs.empty(); }
};

namespace detail {

template <class T>
void check_state(const LstmParams<T>& p, const LstmState<T>& s) {
  if (s.h.size() != p.hidden() || s.c.size() != p.hidden()) {
    throw ShapeError("lstm: state dimension " + std::to_string(s.h.size()) + "/" +
                     std::to_string(s.c.size()) + " does not match hidden " + std::to_string(p.hidden()));
  }
}

template <class T>
void check_dense_input(const LstmParams<T>& p, std::span<const T> x) {
  if (x.size() != p.input_dim()) {
    throw ShapeError("lstm: input dimension " + std::to_string(x.size()) + " does not match " +
                     std::to_string(p.input_dim()));
  }
}

template <class T>
void check_token_input(const LstmParams<T>& p, TokenInput x) {
  if (x.index >= p.input_dim()) {
    throw DataError("lstm: token index " + std::to_string(x.index) + " out of range for input width " +
                    std::to_string(p.input_dim()));
  }
}

// z_g = b_g + W_xg x + W_hg h_prev, then gate nonlinearities and the state update.
template <class T, class AddInput>
void step_into(const LstmParams<T>& p, AddInput&& add_input, const LstmState<T>& prev,
               LstmStepCache<T>& out) {
  const std::size_t n = p.hidden();
  for (std::size_t g = 0; g < kGateCount; ++g) {
    Vector<T>& z = out.gates[g];
    z.assign(p.bias[g].begin(), p.bias[g].end());
    add_input(p.input_weights[g], std::span<T>(z));
    gemv_add(p.recurrent_weights[g], std::span<const T>(prev.h), std::span<T>(z));
    if (g == kCellInput) {
      for (T& v : z) v = std::tanh(v);
    } else {
      for (T& v : z) v = sigmoid(v);
    }
  }
  out.c.resize(n);
  out.tanh_c.resize(n);
  out.h.resize(n);
  const auto& i = out.gates[kInputGate];
  const auto& f = out.gates[kForgetGate];
  const auto& o = out.gates[kOutputGate];
  const auto& cin = out.gates[kCellInput];
  for (std::size_t k = 0; k < n; ++k) {
    out.c[k] = f[k] * prev.c[k] + i[k] * cin[k];
    out.tanh_c[k] = std::tanh(out.c[k]);
    out.h[k] = o[k] * out.tanh_c[k];
  }
}

template <class T>
auto dense_adder(std::span<const T> x) {
  return [x](const Matrix<T>& w, std::span<T> z) { gemv_add(w, x, z); };
}

template <class T>
auto token_adder(TokenInput x) {
  return [x](const Matrix<T>& w, std::span<T> z) { add_column(w, x.index, z); };
}

}  // namespace detail

template <std::floating_point T>
LstmState<T> lstm_step(const LstmParams<T>& params, std::span<const T> x, const LstmState<T>& prev) {
  detail::check_dense_input(params, x);
  detail::check_state(params, prev);
  LstmStepCache<T> cache;
  detail::step_into(params, detail::dense_adder<T>(x), prev, cache);
  return {std::move(cache.h), std::move(cache.c)};
}

template <std::floating_point T>
LstmState<T> lstm_step(const LstmParams<T>& params, const Vector<T>& x, const LstmState<T>& prev) {
  return lstm_step(params, std::span<const T>(x), prev);
}

template <std::floating_point T>
LstmState<T> lstm_step(const LstmParams<T>& params, TokenInput x, const LstmState<T>& prev) {
  detail::check_token_input(params, x);
  detail::check_state(params, prev);
  LstmStepCache<T> cache;
  detail::step_into(params, detail::token_adder<T>(x), prev, cache);
  return {std::move(cache.h), std::move(cache.c)};
}

template <std::floating_point T>
struct LstmForwardResult {
  std::vector<LstmState<T>> states;
  LstmTape<T> tape;
};

/// Runs the layer over a dense input sequence. An empty sequence yields empty outputs.
template <std::floating_point T>
LstmForwardResult<T> lstm_forward(const LstmParams<T>& params, const std::vector<Vector<T>>& xs,
                                  const LstmState<T>& init) {
  detail::check_state(params, init);
  LstmForwardResult<T> result;
  result.tape.init = init;
  result.tape.dense_inputs = xs;
  result.tape.steps.resize(xs.size());
  result.states.reserve(xs.size());
  const LstmState<T>* prev = &init;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    detail::check_dense_input(params, std::span<const T>(xs[t]));
    auto& cache = result.tape.steps[t];
    detail::step_into(params, detail::dense_adder<T>(std::span<const T>(xs[t])), *prev, cache);
    result.states.push_back({cache.h, cache.c});
    prev = &result.states.back();
  }
  return result;
}

template <std::floating_point T>
LstmForwardResult<T> lstm_forward_tokens(const LstmParams<T>& params, const std::vector<std::size_t>& tokens,
                                         const LstmState<T>& init) {
  detail::check_state(params, init);
  LstmForwardResult<T> result;
  result.tape.init = init;
  result.tape.token_inputs = tokens;
  result.tape.steps.resize(tokens.size());
  result.states.reserve(tokens.size());
  const LstmState<T>* prev = &init;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    detail::check_token_input(params, TokenInput{tokens[t]});
    auto& cache = result.tape.steps[t];
    detail::step_into(params, detail::token_adder<T>(TokenInput{tokens[t]}), *prev, cache);
    result.states.push_back({cache.h, cache.c});
    prev = &result.states.back();
  }
  return result;
}

/// Backpropagation through time. grad_h[t] is dL/dh_t from outside the layer;
/// grad_final carries dL/dh_T and dL/dc_T (empty vectors mean zero). Parameter
/// gradients are added into `grads`; dL/dx_t is written to `grad_inputs` when the
/// tape holds dense inputs and the pointer is non-null. Returns dL/d(init state).
template <std::floating_point T>
LstmState<T> lstm_backward_accumulate(const LstmParams<T>& params, const LstmTape<T>& tape,
                                      const std::vector<Vector<T>>& grad_h, const LstmState<T>& grad_final,
                                      LstmParams<T>& grads, std::vector<Vector<T>>* grad_inputs) {
  const std::size_t steps = tape.length();
  const std::size_t n = params.hidden();
  if (grad_h.size() != steps) {
    throw ArgumentError("lstm_backward: " + std::to_string(grad_h.size()) + " output gradients for a tape of length " +
                        std::to_string(steps));
  }
  if (!tape.token_input() && tape.dense_inputs.size() != steps) {
    throw ArgumentError("lstm_backward: tape inputs do not match its length");
  }
  Vector<T> dh_next = grad_final.h.empty() ? Vector<T>(n, T(0)) : grad_final.h;
  Vector<T> dc_next = grad_final.c.empty() ? Vector<T>(n, T(0)) : grad_final.c;
  if (dh_next.size() != n || dc_next.size() != n) throw ShapeError("lstm_backward: final-state gradient size");

  const bool want_inputs = grad_inputs != nullptr && !tape.token_input();
  if (want_inputs) {
    grad_inputs->assign(steps, Vector<T>(params.input_dim(), T(0)));
  }

  std::array<Vector<T>, kGateCount> dz;
  for (auto& v : dz) v.resize(n);
  Vector<T> dh(n);
  Vector<T> dh_prev(n);

  for (std::size_t t = steps; t-- > 0;) {
    const auto& s = tape.steps[t];
    const Vector<T>& c_prev = t == 0 ? tape.init.c : tape.steps[t - 1].c;
    const Vector<T>& h_prev = t == 0 ? tape.init.h : tape.steps[t - 1].h;
    if (grad_h[t].size() != n) throw ShapeError("lstm_backward: output gradient size at step " + std::to_string(t));
    const auto& i = s.gates[kInputGate];
    const auto& f = s.gates[kForgetGate];
    const auto& o = s.gates[kOutputGate];
    const auto& cin = s.gates[kCellInput];
    for (std::size_t k = 0; k < n; ++k) {
      dh[k] = grad_h[t][k] + dh_next[k];
      const T d_o = dh[k] * s.tanh_c[k];
      const T dc = dc_next[k] + dh[k] * o[k] * (T(1) - s.tanh_c[k] * s.tanh_c[k]);
      const T d_i = dc * cin[k];
      const T d_cin = dc * i[k];
      const T d_f = dc * c_prev[k];
      dc_next[k] = dc * f[k];
      dz[kInputGate][k] = d_i * i[k] * (T(1) - i[k]);
      dz[kForgetGate][k] = d_f * f[k] * (T(1) - f[k]);
      dz[kOutputGate][k] = d_o * o[k] * (T(1) - o[k]);
      dz[kCellInput][k] = d_cin * (T(1) - cin[k] * cin[k]);
    }
    std::fill(dh_prev.begin(), dh_prev.end(), T(0));
    for (std::size_t g = 0; g < kGateCount; ++g) {
      const std::span<const T> dzg(dz[g]);
      if (tape.token_input()) {
        accumulate_column(grads.input_weights[g], tape.token_inputs[t], dzg);
      } else {
        outer_add(grads.input_weights[g], dzg, std::span<const T>(tape.dense_inputs[t]));
        if (want_inputs) gemv_transposed_add(params.input_weights[g], dzg, std::span<T>((*grad_inputs)[t]));
      }
      outer_add(grads.recurrent_weights[g], dzg, std::span<const T>(h_prev));
      for (std::size_t k = 0; k < n; ++k) grads.bias[g][k] += dz[g][k];
      gemv_transposed_add(params.recurrent_weights[g], dzg, std::span<T>(dh_prev));
    }
    dh_next.swap(dh_prev);
  }
  return {std::move(dh_next), std::move(dc_next)};
}

template <std::floating_point T>
struct LstmBackwardResult {
  LstmParams<T> grads;
  std::vector<Vector<T>> grad_inputs;
  LstmState<T> grad_init;
};

template <std::floating_point T>
LstmBackwardResult<T> lstm_backward(const LstmParams<T>& params, const LstmTape<T>& tape,
                                    const std::vector<Vector<T>>& grad_h, const LstmState<T>& grad_final) {
  LstmBackwardResult<T> r;
  r.grads = LstmParams<T>::zeros(params.hidden(), params.input_dim());
  r.grad_init = lstm_backward_accumulate(params, tape, grad_h, grad_final, r.grads, &r.grad_inputs);
  return r;
}

}  // namespace rlstm
