#pragma once

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfrl/augment/augment.hpp"
#include "cfrl/env/dataset.hpp"
#include "cfrl/numerics/checkpoint.hpp"
#include "cfrl/numerics/losses.hpp"
#include "cfrl/numerics/mlp.hpp"
#include "cfrl/numerics/optim.hpp"

namespace cfrl::baselines {

using nn::Tensor2;
using nn::Vector;

/// D: deterministic regression. S: diagonal Gaussian. M: mixture of diagonal Gaussians.
enum class Variant { D, S, M };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::D: return "base_d";
    case Variant::S: return "base_s";
    case Variant::M: return "base_m";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "base_d" || s == "D") return Variant::D;
  if (s == "base_s" || s == "S") return Variant::S;
  if (s == "base_m" || s == "M") return Variant::M;
  throw PreconditionError("unknown baseline variant: " + s);
}

/// Output layout of the network in standardized next-state residual space.
/// D: [mean d]. S: [mean d | raw_var d]. M: [logits K | means K*d | raw_vars K*d].
/// Variances are exp(raw) + floor.
struct HeadLayout {
  Variant variant = Variant::D;
  Eigen::Index dim = 0;
  int components = 1;
  double variance_floor = 1e-6;

  Eigen::Index width() const {
    switch (variant) {
      case Variant::D: return dim;
      case Variant::S: return 2 * dim;
      case Variant::M: return components * (1 + 2 * dim);
    }
    return 0;
  }
  int k() const { return variant == Variant::M ? components : 1; }
  Eigen::Index logit_col(int c) const { return c; }
  Eigen::Index mean_col(int c, Eigen::Index j) const {
    return variant == Variant::M ? components + c * dim + j : j;
  }
  Eigen::Index var_col(int c, Eigen::Index j) const {
    return variant == Variant::M ? components + components * dim + c * dim + j : dim + j;
  }
};

/// Per-row mixture parameters decoded from raw network output.
struct Mixture {
  Tensor2 weights;  // n x K
  std::vector<Tensor2> means;  // K of n x d
  std::vector<Tensor2> vars;  // K of n x d
};

inline Mixture decode(const HeadLayout& h, const Tensor2& out) {
  nn::check_cols(out, h.width(), "baseline head");
  const Eigen::Index n = out.rows();
  Mixture m;
  const int K = h.k();
  m.weights.resize(n, K);
  if (h.variant == Variant::M) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto logits = out.row(i).head(K);
      const double mx = logits.maxCoeff();
      const Eigen::RowVectorXd e = (logits.array() - mx).exp().matrix();
      m.weights.row(i) = e / e.sum();
    }
  } else {
    m.weights.setOnes();
  }
  for (int c = 0; c < K; ++c) {
    Tensor2 mu(n, h.dim), var(n, h.dim);
    for (Eigen::Index j = 0; j < h.dim; ++j) {
      mu.col(j) = out.col(h.mean_col(c, j));
      if (h.variant == Variant::D) {
        var.col(j).setZero();
      } else {
        var.col(j) = (out.col(h.var_col(c, j)).array().exp() + h.variance_floor).matrix();
      }
    }
    m.means.push_back(std::move(mu));
    m.vars.push_back(std::move(var));
  }
  return m;
}

/// Mean loss and d(loss)/d(raw output): squared error for D, negative
/// log-likelihood for S and M.
inline nn::LossGrad head_loss(const HeadLayout& h, const Tensor2& out, const Tensor2& y) {
  nn::check_cols(y, h.dim, "baseline target");
  if (h.variant == Variant::D) return nn::mse(out, y);
  const Eigen::Index n = out.rows();
  const int K = h.k();
  const Mixture m = decode(h, out);
  nn::LossGrad res{0.0, Tensor2::Zero(n, h.width())};
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Eigen::VectorXd logp(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < K; ++c) {
      double lp = std::log(m.weights(i, c));
      for (Eigen::Index j = 0; j < h.dim; ++j) {
        const double v = m.vars[static_cast<std::size_t>(c)](i, j);
        const double d = y(i, j) - m.means[static_cast<std::size_t>(c)](i, j);
        lp += -0.5 * (log2pi + std::log(v) + d * d / v);
      }
      logp(c) = lp;
    }
    const double mx = logp.maxCoeff();
    const double lse = mx + std::log((logp.array() - mx).exp().sum());
    res.value -= lse;
    for (int c = 0; c < K; ++c) {
      const double resp = std::exp(logp(c) - lse);
      if (h.variant == Variant::M) res.grad(i, h.logit_col(c)) = (m.weights(i, c) - resp) / static_cast<double>(n);
      for (Eigen::Index j = 0; j < h.dim; ++j) {
        const double v = m.vars[static_cast<std::size_t>(c)](i, j);
        const double d = y(i, j) - m.means[static_cast<std::size_t>(c)](i, j);
        res.grad(i, h.mean_col(c, j)) = -resp * d / v / static_cast<double>(n);
        const double dv_draw = v - h.variance_floor;
        res.grad(i, h.var_col(c, j)) = -resp * 0.5 * (d * d / (v * v) - 1.0 / v) * dv_draw / static_cast<double>(n);
      }
    }
  }
  res.value /= static_cast<double>(n);
  return res;
}

struct BaselineConfig {
  std::vector<Eigen::Index> hidden{300, 300};
  int components = 5;
  double variance_floor = 1e-6;
  double lr = 1e-3;
  double final_lr_fraction = 0.01;  // lr decays exponentially to lr * this by the last iteration
  int batch_size = 256;
  int iterations = 5000;
  double holdout_fraction = 0.1;
  int log_every = 500;

  void validate() const {
    require(!hidden.empty(), "BaselineConfig: hidden must be non-empty");
    require(components >= 1, "BaselineConfig: components must be at least 1");
    require(variance_floor >= 0.0, "BaselineConfig: variance_floor must be non-negative");
    require(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0, "BaselineConfig: final_lr_fraction must lie in (0, 1]");
    require(lr > 0.0 && batch_size >= 1 && iterations >= 0 && log_every >= 1,
            "BaselineConfig: lr, batch_size and log_every must be positive");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "BaselineConfig: holdout_fraction must lie in [0, 1)");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BaselineConfig, hidden, components, variance_floor, lr, final_lr_fraction, batch_size,
                                                iterations, holdout_fraction, log_every)

/// Observational dynamics model s' ~ P(. | s, a). It has no exogenous noise
/// input, so it can only sample, never abduct.
class DynamicsModel {
 public:
  static constexpr const char* kKind = "baseline";

  DynamicsModel() = default;
  DynamicsModel(Variant v, Eigen::Index state_dim, const BaselineConfig& cfg, Rng& rng) {
    head = {v, state_dim, v == Variant::M ? cfg.components : 1, cfg.variance_floor};
    nn::MlpSpec spec;
    spec.input = state_dim + 1;
    spec.hidden = cfg.hidden;
    spec.output = head.width();
    net = nn::Mlp(spec, rng);
    state_std = delta_std = nn::Standardizer::identity(state_dim);
  }

  HeadLayout head;
  nn::Mlp net;
  nn::Standardizer state_std;
  nn::Standardizer delta_std;

  Variant variant() const { return head.variant; }
  Eigen::Index state_dim() const { return head.dim; }

  Tensor2 input(const Tensor2& s, const Tensor2& a) const {
    nn::check_cols(a, 1, "DynamicsModel: action");
    const Tensor2 sz = state_std.apply(s);
    return nn::hcat({&sz, &a});
  }

  /// Mixture parameters in standardized residual space.
  Mixture distribution(const Tensor2& s, const Tensor2& a) const { return decode(head, net.predict(input(s, a))); }

  /// Conditional mean in raw units.
  Tensor2 mean_next(const Tensor2& s, const Tensor2& a) const {
    const Mixture m = distribution(s, a);
    Tensor2 mu = Tensor2::Zero(s.rows(), state_dim());
    for (int c = 0; c < head.k(); ++c) {
      mu += (m.means[static_cast<std::size_t>(c)].array().colwise() * m.weights.col(c).array()).matrix();
    }
    return s + delta_std.invert(mu);
  }

  /// Total predictive variance per coordinate in raw units (zero for D).
  Tensor2 predictive_variance(const Tensor2& s, const Tensor2& a) const {
    if (variant() == Variant::D) return Tensor2::Zero(s.rows(), state_dim());
    const Mixture m = distribution(s, a);
    Tensor2 mean = Tensor2::Zero(s.rows(), state_dim()), second = Tensor2::Zero(s.rows(), state_dim());
    for (int c = 0; c < head.k(); ++c) {
      const auto& mu = m.means[static_cast<std::size_t>(c)];
      const auto& var = m.vars[static_cast<std::size_t>(c)];
      mean += (mu.array().colwise() * m.weights.col(c).array()).matrix();
      second += ((var.array() + mu.array().square()).colwise() * m.weights.col(c).array()).matrix();
    }
    const Tensor2 var_z = (second.array() - mean.array().square()).max(0.0).matrix();
    return (var_z.array().rowwise() * delta_std.scale.array().square()).matrix();
  }

  /// One draw per row: D returns the mean, S a Gaussian draw, M a component
  /// draw followed by a Gaussian draw.
  Tensor2 sample_next(const Tensor2& s, const Tensor2& a, Rng& rng) const {
    const Mixture m = distribution(s, a);
    Tensor2 z(s.rows(), state_dim());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      int c = 0;
      if (head.k() > 1) {
        double r = uniform01(rng);
        c = head.k() - 1;
        for (int k = 0; k < head.k(); ++k) {
          r -= m.weights(i, k);
          if (r < 0.0) {
            c = k;
            break;
          }
        }
      }
      for (Eigen::Index j = 0; j < state_dim(); ++j) {
        const double mu = m.means[static_cast<std::size_t>(c)](i, j);
        const double sd = std::sqrt(m.vars[static_cast<std::size_t>(c)](i, j));
        z(i, j) = head.variant == Variant::D ? mu : mu + sd * standard_normal(rng);
      }
    }
    return s + delta_std.invert(z);
  }

  /// Mean per-row negative log-likelihood (D: mean squared error) on raw data,
  /// measured in standardized residual space.
  double loss(const Tensor2& s, const Tensor2& a, const Tensor2& s_next) const {
    return head_loss(head, net.predict(input(s, a)), delta_std.apply(s_next - s)).value;
  }

  nlohmann::json to_json() const {
    nlohmann::json arch{{"variant", to_string(head.variant)},
                        {"state_dim", head.dim},
                        {"components", head.components},
                        {"variance_floor", head.variance_floor}};
    nlohmann::json body{{"net", net.to_json()}, {"state_std", state_std.to_json()}, {"delta_std", delta_std.to_json()}};
    return nn::make_checkpoint(kKind, arch, body);
  }

  static DynamicsModel from_json(const nlohmann::json& j) {
    const nlohmann::json ck = nn::open_checkpoint(j, kKind);
    const auto& arch = ck.at("architecture");
    const nlohmann::json body = ck.at("body");
    DynamicsModel m;
    m.head = {variant_from_string(arch.at("variant").get<std::string>()), arch.at("state_dim").get<Eigen::Index>(),
              arch.at("components").get<int>(), arch.at("variance_floor").get<double>()};
    m.net = nn::Mlp::from_json(body.at("net"));
    m.state_std = nn::Standardizer::from_json(body.at("state_std"));
    m.delta_std = nn::Standardizer::from_json(body.at("delta_std"));
    if (m.net.output_dim() != m.head.width()) throw IoError("baseline checkpoint: head width mismatch");
    return m;
  }
};

struct BaselineReport {
  std::vector<std::pair<int, double>> train_loss;  // (iteration, mean loss since last log)
  double heldout_loss = std::numeric_limits<double>::quiet_NaN();
  double heldout_rmse = std::numeric_limits<double>::quiet_NaN();  // conditional mean vs s', raw units
  std::size_t n_train = 0;
  std::size_t n_heldout = 0;
  bool diverged = false;
  std::string message;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"train_loss", train_loss}, {"heldout_loss", num(heldout_loss)}, {"heldout_rmse", num(heldout_rmse)},
            {"n_train", n_train},       {"n_heldout", n_heldout},           {"diverged", diverged},
            {"message", message},       {"seconds", seconds}};
  }
};

struct BaselineResult {
  DynamicsModel model;
  BaselineReport report;
};

namespace detail {

struct Arrays {
  Tensor2 s, a, s_next;
};

inline Arrays arrays_of(const std::vector<const env::Transition*>& src, Eigen::Index d) {
  Arrays out{Tensor2(static_cast<Eigen::Index>(src.size()), d), Tensor2(static_cast<Eigen::Index>(src.size()), 1),
             Tensor2(static_cast<Eigen::Index>(src.size()), d)};
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < d; ++j) {
      out.s(r, j) = src[i]->s[static_cast<std::size_t>(j)];
      out.s_next(r, j) = src[i]->s_next[static_cast<std::size_t>(j)];
    }
    out.a(r, 0) = src[i]->a;
  }
  return out;
}

}  // namespace detail

/// Fits one baseline on the observed records, holding out whole trials for
/// evaluation. A non-finite loss or gradient restores the last logged weights.
inline BaselineResult train_baseline(Variant variant, const env::Dataset& data, const BaselineConfig& cfg,
                                     std::uint64_t seed) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const env::Transition*> observed;
  for (const auto& tr : data)
    if (tr.provenance == env::Provenance::Observed) observed.push_back(&tr);
  require(!observed.empty(), "train_baseline: dataset has no observed records");
  const auto d = static_cast<Eigen::Index>(observed.front()->s.size());

  Rng rng(seed);
  Rng split_rng(derive_seed(seed, 1));
  const auto held = env::holdout_trials(data, cfg.holdout_fraction, split_rng);
  std::vector<const env::Transition*> train_set, held_set;
  for (const auto* tr : observed) {
    if (static_cast<Eigen::Index>(tr->s.size()) != d || tr->s_next.size() != tr->s.size()) {
      throw DimensionError("train_baseline: inconsistent state dimensions");
    }
    (held.count(tr->trial_id) ? held_set : train_set).push_back(tr);
  }
  if (train_set.empty()) train_set.swap(held_set);
  const auto tr = detail::arrays_of(train_set, d);
  if (!tr.s.allFinite() || !tr.s_next.allFinite() || !tr.a.allFinite()) {
    throw NumericalError("train_baseline: dataset holds non-finite values");
  }

  BaselineResult res;
  res.model = DynamicsModel(variant, d, cfg, rng);
  res.model.state_std = nn::Standardizer::fit(tr.s);
  res.model.delta_std = nn::Standardizer::fit(tr.s_next - tr.s);
  const Tensor2 x_all = res.model.input(tr.s, tr.a);
  const Tensor2 y_all = res.model.delta_std.apply(tr.s_next - tr.s);
  res.report.n_train = train_set.size();
  res.report.n_heldout = held_set.size();

  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.clip_norm = 10.0;
  nn::Adam opt(ac);
  auto params = res.model.net.params("net");
  nn::Mlp snapshot = res.model.net;
  const auto n = x_all.rows();
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);
  Tensor2 x(bs, x_all.cols()), y(bs, y_all.cols());
  double running = 0.0;
  int since = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (Eigen::Index k = 0; k < bs; ++k) {
      const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
      x.row(k) = x_all.row(i);
      y.row(k) = y_all.row(i);
    }
    opt.set_lr(cfg.lr * std::pow(cfg.final_lr_fraction, static_cast<double>(it - 1) / std::max(cfg.iterations - 1, 1)));
    try {
      res.model.net.zero_grad();
      const auto loss = head_loss(res.model.head, res.model.net.forward(x), y);
      if (!std::isfinite(loss.value)) throw NumericalError("non-finite baseline loss");
      res.model.net.backward(loss.grad);
      opt.step(params);
      running += loss.value;
      ++since;
    } catch (const NumericalError& e) {
      res.model.net = snapshot;
      params = res.model.net.params("net");
      res.report.diverged = true;
      res.report.message = std::string(e.what()) + " at iteration " + std::to_string(it) + "; restored last snapshot";
      break;
    }
    if (it % cfg.log_every == 0 || it == cfg.iterations) {
      res.report.train_loss.emplace_back(it, running / std::max(since, 1));
      running = 0.0;
      since = 0;
      snapshot = res.model.net;
    }
  }

  if (!held_set.empty()) {
    const auto h = detail::arrays_of(held_set, d);
    res.report.heldout_loss = res.model.loss(h.s, h.a, h.s_next);
    const Tensor2 diff = res.model.mean_next(h.s, h.a) - h.s_next;
    res.report.heldout_rmse = std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
  }
  res.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Baseline augmentation: keep s_t, draw alternative actions with the same
/// sampler as the counterfactual path, and sample s_{t+1} from the learned
/// conditional. No noise is carried over from the observed transition.
inline augment::AugmentedDataset augment_baseline(const env::Dataset& data, const DynamicsModel& model,
                                                  const augment::RewardFn& reward, const augment::AugmentOptions& opt,
                                                  std::uint64_t seed) {
  opt.validate();
  require(static_cast<bool>(reward), "augment_baseline: reward function required");
  augment::AugmentedDataset out;
  out.source_model_hash = opt.model_hash;
  out.k_cf = opt.sampling == augment::ActionSampling::Exhaustive ? opt.support.levels - 1 : opt.k_cf;
  out.records = data;
  out.n_observed = data.size();
  std::int64_t next_id = augment::detail::next_record_id(data);
  for (const auto& parent : data) {
    if (parent.provenance != env::Provenance::Observed) {
      throw PreconditionError("augment_baseline: input record " + std::to_string(parent.record_id) + " is not observed");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(parent.record_id)));
    const auto acts = augment::detail::alternatives(parent.a, opt, rng);
    if (acts.empty()) continue;
    const auto m = static_cast<Eigen::Index>(acts.size());
    Tensor2 s(m, model.state_dim()), a(m, 1);
    for (Eigen::Index k = 0; k < m; ++k) {
      for (Eigen::Index j = 0; j < model.state_dim(); ++j) s(k, j) = parent.s[static_cast<std::size_t>(j)];
      a(k, 0) = acts[static_cast<std::size_t>(k)];
    }
    const Tensor2 next = model.sample_next(s, a, rng);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (opt.cf_keep_fraction < 1.0 && uniform01(rng) >= opt.cf_keep_fraction) continue;
      if (!next.row(k).allFinite()) {
        ++out.n_skipped;
        continue;
      }
      env::Transition cf;
      cf.record_id = next_id++;
      cf.parent_id = parent.record_id;
      cf.subject_id = parent.subject_id;
      cf.trial_id = parent.trial_id;
      cf.t = parent.t;
      cf.s = parent.s;
      cf.a = acts[static_cast<std::size_t>(k)];
      cf.s_next.assign(next.row(k).data(), next.row(k).data() + next.cols());
      std::tie(cf.r, cf.done) = reward(cf.s, cf.a, cf.s_next);
      cf.provenance = env::Provenance::Counterfactual;
      out.records.push_back(std::move(cf));
      ++out.n_counterfactual;
    }
  }
  if (out.n_skipped) out.warnings.push_back(std::to_string(out.n_skipped) + " non-finite sample(s) dropped");
  return out;
}

}  // namespace cfrl::baselines
