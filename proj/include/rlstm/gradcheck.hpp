#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rlstm/model.hpp"
#include "rlstm/oracles.hpp"
#include "rlstm/trainer.hpp"

namespace rlstm {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  std::size_t layers = 2;
  std::size_t residual_interval = 2;
  std::size_t hidden = 8;
  std::size_t vocab = 12;
  std::size_t length = 5;
  std::size_t pairs = 2;
  double dropout_keep = 0.8;  // 1 disables the fixed dropout masks
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  DimFix dim_fix = DimFix::pad_input_with_zeros;
  bool corrupt_backward = false;  // negative control: perturbs one analytic gradient
};

struct TensorCheck {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t size = 0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double tolerance = 0.0;

  double max_relative_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_relative_error);
    return m;
  }
  bool passed() const { return max_relative_error() < tolerance; }
  std::vector<std::string> offenders() const {
    std::vector<std::string> out;
    for (const auto& t : tensors) {
      if (!(t.max_relative_error < tolerance)) out.push_back(t.name);
    }
    return out;
  }
};

/// Compares batch_loss gradients of a random double-precision model, under fixed
/// dropout masks, with central finite differences of the same loss.
inline GradCheckReport run_gradcheck(const GradCheckOptions& opt) {
  Rng rng(opt.seed);
  StackConfig config{opt.layers, opt.residual_interval, opt.hidden, opt.dim_fix};
  auto params = ModelParams<double>::random(config, opt.vocab, rng, 0.3, 0.0);
  std::vector<IndexPair> batch(opt.pairs);
  for (auto& p : batch) {
    for (std::size_t t = 0; t < opt.length; ++t) {
      p.source.push_back(kReservedTokens + rng.below(opt.vocab - kReservedTokens));
      p.target.push_back(kReservedTokens + rng.below(opt.vocab - kReservedTokens));
    }
  }
  std::vector<PairMasks<double>> masks;
  if (opt.dropout_keep < 1.0) {
    for (const auto& p : batch) masks.push_back(sample_pair_masks(params, p, opt.dropout_keep, rng));
  }
  const auto* mask_ptr = masks.empty() ? nullptr : &masks;

  auto analytic = batch_loss<double>(params, batch, mask_ptr).gradients;
  if (opt.corrupt_backward) {
    auto& w = analytic.decoder.front().recurrent_weights[kForgetGate];
    for (double& v : w.values()) v = v * 1.5 + 1e-3;
  }
  const auto numeric = oracle::fd_gradient_model(
      [&](const ModelParams<double>& p) { return batch_loss<double>(p, batch, mask_ptr).loss; }, params, opt.epsilon);

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  std::vector<std::span<const double>> num;
  numeric.for_each_tensor([&](const std::string&, std::span<const double> v) { num.push_back(v); });
  std::size_t i = 0;
  analytic.for_each_tensor([&](const std::string& name, std::span<const double> a) {
    TensorCheck check{name, 0.0, a.size()};
    for (std::size_t k = 0; k < a.size(); ++k) {
      check.max_relative_error = std::max(check.max_relative_error, oracle::relative_error(a[k], num[i][k]));
    }
    report.tensors.push_back(check);
    ++i;
  });
  return report;
}

}  // namespace rlstm
