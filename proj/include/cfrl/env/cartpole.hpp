#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include <json.hpp>

#include "cfrl/core/error.hpp"
#include "cfrl/core/random.hpp"

namespace cfrl::env {

/// CartPole state: cart position (m), cart velocity (m/s), pole angle (rad),
/// pole angular velocity (rad/s).
struct CartState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;

  static constexpr std::size_t kDim = 4;

  std::array<double, kDim> to_array() const { return {x, x_dot, theta, theta_dot}; }
  static CartState from_array(const std::array<double, kDim>& a) { return {a[0], a[1], a[2], a[3]}; }

  template <class Vec>
  static CartState from_vector(const Vec& v) {
    if (static_cast<std::size_t>(v.size()) != kDim) throw DimensionError("CartState needs 4 components");
    return {v[0], v[1], v[2], v[3]};
  }

  bool finite() const {
    return std::isfinite(x) && std::isfinite(x_dot) && std::isfinite(theta) && std::isfinite(theta_dot);
  }

  friend bool operator==(const CartState&, const CartState&) = default;
};

/// Planetary gravities of the hybrid benchmark, in m/s^2:
/// Jupiter, Earth, Mercury, Neptune, Pluto.
inline constexpr std::array<double, 5> kHybridGravities{24.79, 9.8, 3.7, 11.15, 0.62};

struct EnvConfig {
  double gravity = 9.8;
  double noise_frac = 0.05;
  int action_levels = 11;
  int max_steps = 20;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force_mag = 10.0;
  double dt = 0.02;
  double x_threshold = 2.4;
  double theta_threshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(gravity > 0.0, "EnvConfig: gravity must be positive");
    require(noise_frac >= 0.0 && noise_frac < 1.0, "EnvConfig: noise_frac must lie in [0, 1)");
    require(action_levels >= 2, "EnvConfig: need at least 2 action levels");
    require(max_steps >= 1, "EnvConfig: max_steps must be at least 1");
    require(cart_mass > 0.0 && pole_mass > 0.0 && half_length > 0.0 && dt > 0.0,
            "EnvConfig: physical constants must be positive");
  }

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EnvConfig, gravity, noise_frac, action_levels, max_steps,
                                                cart_mass, pole_mass, half_length, force_mag, dt,
                                                x_threshold, theta_threshold, rng_seed)

/// Multiplicative noise realization of one step: the applied force is scaled by
/// (1 + force) and next-state component j by (1 + state[j]).
struct StepNoise {
  double force = 0.0;
  std::array<double, CartState::kDim> state{};

  static StepNoise draw(double noise_frac, Rng& rng) {
    StepNoise n;
    if (noise_frac <= 0.0) return n;
    std::normal_distribution<double> dist(0.0, noise_frac);
    n.force = dist(rng);
    for (auto& e : n.state) e = dist(rng);
    return n;
  }
};

struct StepResult {
  CartState next;
  double reward = 0.0;
  bool done = false;
  StepNoise noise;
};

inline double action_level(int index, int levels) {
  return static_cast<double>(index) / static_cast<double>(levels - 1);
}

/// Nearest discrete level index of an action in [0, 1].
inline int action_index(double action, int levels) {
  const long idx = std::lround(action * static_cast<double>(levels - 1));
  if (idx < 0 || idx >= levels) throw PreconditionError("action outside [0, 1]: " + std::to_string(action));
  return static_cast<int>(idx);
}

inline bool is_action_level(double action, int levels) {
  const double scaled = action * static_cast<double>(levels - 1);
  return scaled >= -1e-9 && scaled <= levels - 1 + 1e-9 && std::abs(scaled - std::round(scaled)) < 1e-9;
}

/// Linear force map: a = 0 pushes left with full force, a = 1 right, a = 0.5 applies none.
inline double force_of(double action, const EnvConfig& cfg) { return cfg.force_mag * (2.0 * action - 1.0); }

inline bool is_terminal(const CartState& s, const EnvConfig& cfg) {
  return std::abs(s.x) > cfg.x_threshold || std::abs(s.theta) > cfg.theta_threshold;
}

/// Noise-free explicit Euler step of the classic cart-pole equations, with the
/// applied force scaled by (1 + force_noise).
inline CartState euler_step(const CartState& s, double action, const EnvConfig& cfg, double force_noise = 0.0) {
  const double force = force_of(action, cfg) * (1.0 + force_noise);
  const double total_mass = cfg.cart_mass + cfg.pole_mass;
  const double polemass_length = cfg.pole_mass * cfg.half_length;
  const double cos_t = std::cos(s.theta);
  const double sin_t = std::sin(s.theta);
  const double temp = (force + polemass_length * s.theta_dot * s.theta_dot * sin_t) / total_mass;
  const double theta_acc = (cfg.gravity * sin_t - cos_t * temp) /
                           (cfg.half_length * (4.0 / 3.0 - cfg.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;
  return {s.x + cfg.dt * s.x_dot, s.x_dot + cfg.dt * x_acc, s.theta + cfg.dt * s.theta_dot,
          s.theta_dot + cfg.dt * theta_acc};
}

/// Deterministic step under a given noise realization.
inline CartState step_with_noise(const CartState& s, double action, const EnvConfig& cfg, const StepNoise& noise) {
  const auto next = euler_step(s, action, cfg, noise.force).to_array();
  std::array<double, CartState::kDim> out{};
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = next[j] * (1.0 + noise.state[j]);
  return CartState::from_array(out);
}

inline StepResult step(const CartState& s, double action, const EnvConfig& cfg, Rng& rng) {
  if (is_terminal(s, cfg)) throw PreconditionError("episode finished");
  if (!is_action_level(action, cfg.action_levels)) {
    throw PreconditionError("action " + std::to_string(action) + " is not one of the discrete levels");
  }
  StepResult r;
  r.noise = StepNoise::draw(cfg.noise_frac, rng);
  r.next = step_with_noise(s, action, cfg, r.noise);
  r.reward = 1.0;
  r.done = is_terminal(r.next, cfg);
  return r;
}

inline CartState initial_state(Rng& rng) {
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  CartState s;
  s.x = dist(rng);
  s.x_dot = dist(rng);
  s.theta = dist(rng);
  s.theta_dot = dist(rng);
  return s;
}

/// Maps a state to an action level in [0, 1].
using Policy = std::function<double(const CartState&, Rng&)>;

inline Policy uniform_random_policy(int action_levels) {
  return [action_levels](const CartState&, Rng& rng) {
    return action_level(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(action_levels))),
                        action_levels);
  };
}

}  // namespace cfrl::env
