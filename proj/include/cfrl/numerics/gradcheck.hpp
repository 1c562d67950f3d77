#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "cfrl/numerics/tensor.hpp"

namespace cfrl::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "param[index]" of the worst entry
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  double denominator_floor = 1e-6;
  std::size_t max_entries_per_param = 0;  // 0 checks every entry
  std::uint64_t seed = 7;
};

/// Compares analytic gradients against central finite differences.
///
/// `analytic()` must zero the gradients of `params`, run the forward/backward
/// pass and return the loss. `loss()` must return the loss for the current
/// parameter values without depending on gradient state.
template <class Analytic, class Loss>
GradCheckResult gradcheck(std::span<const ParamRef> params, Analytic&& analytic, Loss&& loss,
                          const GradCheckOptions& opt = {}) {
  analytic();
  std::vector<Tensor2> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(*p.grad);

  Rng rng(opt.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor2& value = *params[k].value;
    const Eigen::Index n = value.size();
    std::vector<Eigen::Index> entries;
    if (opt.max_entries_per_param == 0 || static_cast<std::size_t>(n) <= opt.max_entries_per_param) {
      for (Eigen::Index i = 0; i < n; ++i) entries.push_back(i);
    } else {
      for (std::size_t s = 0; s < opt.max_entries_per_param; ++s) {
        entries.push_back(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n))));
      }
    }
    for (Eigen::Index i : entries) {
      const double saved = value.data()[i];
      value.data()[i] = saved + opt.step;
      const double up = loss();
      value.data()[i] = saved - opt.step;
      const double down = loss();
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = grads[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = params[k].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace cfrl::nn
