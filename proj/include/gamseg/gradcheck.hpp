#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gamseg/matrix.hpp"
#include "gamseg/model.hpp"
#include "gamseg/rng.hpp"
#include "gamseg/tensor.hpp"

namespace gamseg::nn {

struct GradCheckOptions {
  double step = 1e-3;
  /// Smallest step tried when a perturbation flips a ReLU unit.
  double min_step = 1e-7;
  /// Entries checked per parameter tensor (all entries when the tensor is smaller).
  std::size_t samples_per_tensor = 12;
  double pos_weight = 100.0;
  std::uint64_t seed = 0;
  /// Applied to the analytic gradients before comparison (harness mutation tests).
  std::function<void(Model<double>&)> tamper;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Samples whose step had to shrink to stay on one side of every ReLU kink.
  std::size_t step_reductions = 0;
  std::string worst_param;
};

/// Compares backprop gradients of the mean weighted BCE with central
/// differences, both in double precision. Relative error per entry is
/// |g_a − g_n| / max(1e-8, |g_a| + |g_n|); the result is the maximum.
/// Train mode is used with a fixed dropout seed so every evaluation sees the
/// same mask.
template <typename T>
GradCheckResult grad_finite_diff_check(const Model<T>& source, const Matrix& input,
                                       std::span<const float> targets,
                                       const GradCheckOptions& opt = {}) {
  Model<double> model = source.template cast<double>();
  const std::uint64_t dropout_seed = mix_seed(opt.seed, 0xD0);

  auto evaluate = [&](std::vector<std::uint8_t>* pattern) {
    ForwardOptions<double> fo;
    fo.mode = Mode::Train;
    fo.dropout_seed = dropout_seed;
    fo.relu_pattern = pattern;
    auto logits = model.forward(input, fo);
    return weighted_bce_with_logits<double>(nullptr, logits, targets, opt.pos_weight)->data[0];
  };

  model.zero_grad();
  {
    Tape<double> tape;
    ForwardOptions<double> fo;
    fo.mode = Mode::Train;
    fo.dropout_seed = dropout_seed;
    fo.tape = &tape;
    auto logits = model.forward(input, fo);
    auto loss = weighted_bce_with_logits(&tape, logits, targets, opt.pos_weight);
    tape.backward(loss);
  }
  if (opt.tamper) opt.tamper(model);

  std::vector<std::uint8_t> base_pattern;
  evaluate(&base_pattern);

  GradCheckResult result;
  Rng rng(mix_seed(opt.seed, 0x6C));
  std::vector<std::uint8_t> plus_pattern;
  std::vector<std::uint8_t> minus_pattern;
  for (auto& p : model.params()) {
    auto& t = *p.tensor;
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > opt.samples_per_tensor) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.samples_per_tensor);
    }
    for (std::size_t k : idx) {
      const double original = t.data[k];
      const double analytic = t.grad.empty() ? 0.0 : t.grad[k];
      double h = opt.step;
      double numeric = 0.0;
      bool reduced = false;
      while (true) {
        t.data[k] = original + h;
        const double lp = evaluate(&plus_pattern);
        t.data[k] = original - h;
        const double lm = evaluate(&minus_pattern);
        t.data[k] = original;
        numeric = (lp - lm) / (2.0 * h);
        const bool smooth = plus_pattern == base_pattern && minus_pattern == base_pattern;
        if (smooth || h / 10.0 < opt.min_step) break;
        h /= 10.0;
        reduced = true;
      }
      if (reduced) ++result.step_reductions;
      const double rel =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name + "[" + std::to_string(k) + "]";
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace gamseg::nn
