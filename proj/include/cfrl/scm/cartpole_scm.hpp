#pragma once

#include "cfrl/env/dataset.hpp"
#include "cfrl/scm/model.hpp"

namespace cfrl::scm {

/// The simulator written as an SCM: s'_j = euler_j(s, a; force noise) (1 + sigma u_j)
/// with sigma = noise_frac. The force noise is not a per-dimension term, so it
/// enters as context through theta(:, 0) (zero when theta is empty).
struct CartPoleScm {
  env::EnvConfig config;

  Eigen::Index state_dim() const { return env::CartState::kDim; }

  Tensor2 predict(const Tensor2& s, const Tensor2& a, const Tensor2& theta, const Tensor2& u) const {
    nn::check_cols(s, 4, "CartPoleScm: s");
    nn::check_cols(u, 4, "CartPoleScm: u");
    nn::check_cols(a, 1, "CartPoleScm: a");
    Tensor2 out(s.rows(), 4);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double force_noise = theta.cols() > 0 ? theta(i, 0) : 0.0;
      const auto next = env::euler_step(env::CartState::from_vector(s.row(i)), a(i, 0), config, force_noise).to_array();
      for (Eigen::Index j = 0; j < 4; ++j) out(i, j) = next[static_cast<std::size_t>(j)] * (1.0 + config.noise_frac * u(i, j));
    }
    return out;
  }

  /// Standardized noise of a recorded realization.
  Vector noise_of(const env::StepNoise& n) const {
    require(config.noise_frac > 0.0, "CartPoleScm: noise_frac must be positive to standardize noise");
    Vector u(4);
    for (Eigen::Index j = 0; j < 4; ++j) u(j) = n.state[static_cast<std::size_t>(j)] / config.noise_frac;
    return u;
  }
};

}  // namespace cfrl::scm
