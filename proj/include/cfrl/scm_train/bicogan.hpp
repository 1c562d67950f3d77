#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cfrl/numerics/losses.hpp"
#include "cfrl/numerics/optim.hpp"
#include "cfrl/scm_train/learned_scm.hpp"

namespace cfrl::scm_train {

/// Hyperparameters of both BiCoGAN variants. Widths default to the published
/// architecture; the acceptance suite overrides them with desk-size values.
struct GanConfig {
  std::vector<Eigen::Index> generator_hidden{200, 400, 600, 600};
  std::vector<Eigen::Index> encoder_hidden{600, 600, 400, 200};
  std::vector<Eigen::Index> discriminator_hidden{600, 600, 400, 200};
  Eigen::Index monotone_width = 8;
  bool batch_norm = false;
  double lambda = 1.0;
  int batch_size = 256;
  int iterations = 8000;
  double lr_d = 1e-4;
  double lr_g = 1e-4;
  double beta1 = 0.5;
  bool non_saturating = true;
  double holdout_fraction = 0.1;
  int log_every = 500;
  int monotonicity_probes = 1000;
  // personalized variant
  int tau = 5;
  Eigen::Index theta_dim = 2;
  Eigen::Index lstm_hidden = 32;
  double theta_penalty = 1.0;
  int windows_per_subject = 4;

  void validate() const {
    require(batch_size >= 2, "GanConfig: batch_size must be at least 2");
    require(iterations >= 1, "GanConfig: iterations must be positive");
    require(lambda >= 0.0, "GanConfig: lambda must be non-negative");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "GanConfig: holdout_fraction must lie in [0, 1)");
    require(monotone_width >= 1, "GanConfig: monotone_width must be positive");
    require(tau >= 2, "GanConfig: tau must be at least 2");
    require(theta_dim >= 1 && lstm_hidden >= 1, "GanConfig: theta network sizes must be positive");
    require(windows_per_subject >= 1 && batch_size % windows_per_subject == 0,
            "GanConfig: batch_size must be a multiple of windows_per_subject");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GanConfig, generator_hidden, encoder_hidden, discriminator_hidden,
                                                monotone_width, batch_norm, lambda, batch_size, iterations, lr_d,
                                                lr_g, beta1, non_saturating, holdout_fraction, log_every,
                                                monotonicity_probes, tau, theta_dim, lstm_hidden, theta_penalty,
                                                windows_per_subject)

struct TrainLogEntry {
  int iteration = 0;
  double d_loss = 0.0;
  double ge_loss = 0.0;
  double value = 0.0;  // V(D, G, E) = E log D(real) + E log(1 - D(fake))
  double regularizer = 0.0;
  double theta_penalty = 0.0;
  double d_real = 0.0;  // mean D on real joints
  double d_fake = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainLogEntry, iteration, d_loss, ge_loss, value, regularizer, theta_penalty,
                                   d_real, d_fake)

struct TrainReport {
  std::string variant;
  std::vector<TrainLogEntry> log;
  std::size_t n_train = 0;
  std::size_t n_heldout = 0;
  std::size_t skipped_subjects = 0;  // trajectories shorter than tau
  double reconstruction_rmse = 0.0;  // held-out |G(s, a, theta, E(.)) - s'|, raw units
  double cycle_rmse = 0.0;  // held-out |G(E(s', s, a)) - s'| using E's (s_hat, a_hat)
  double sa_reconstruction_rmse = 0.0;  // held-out (s_hat, a_hat) vs (s, a), standardized units
  std::vector<double> state_scale;  // std of s' per dimension
  double monotonicity_pass_rate = 0.0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
  bool diverged = false;
  std::string message;
  std::vector<std::string> warnings;
  double seconds = 0.0;

  bool all_finite() const {
    for (const auto& e : log) {
      for (double v : {e.d_loss, e.ge_loss, e.value, e.regularizer, e.theta_penalty, e.d_real, e.d_fake}) {
        if (!std::isfinite(v)) return false;
      }
    }
    return std::isfinite(reconstruction_rmse) && std::isfinite(cycle_rmse);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainReport, variant, log, n_train, n_heldout, skipped_subjects,
                                   reconstruction_rmse, cycle_rmse, sa_reconstruction_rmse, state_scale,
                                   monotonicity_pass_rate, d_real_mean, d_fake_mean, diverged, message, warnings,
                                   seconds)

struct TrainResult {
  LearnedScm model;
  nn::Mlp discriminator;
  TrainReport report;
};

namespace detail {

/// Row-stacked training examples. For the personalized variant every example
/// is the last transition of a window and `windows` holds the window itself.
struct Examples {
  Tensor2 s, a, s_next;
  std::vector<int> subject;
  std::vector<env::Window> windows;

  Eigen::Index size() const { return s.rows(); }

  void push(const env::Transition& tr, Eigen::Index row) {
    for (std::size_t j = 0; j < tr.s.size(); ++j) {
      s(row, static_cast<Eigen::Index>(j)) = tr.s[j];
      s_next(row, static_cast<Eigen::Index>(j)) = tr.s_next[j];
    }
    a(row, 0) = tr.a;
  }

  static Examples allocate(std::size_t n, Eigen::Index d) {
    Examples e;
    e.s.resize(static_cast<Eigen::Index>(n), d);
    e.s_next.resize(static_cast<Eigen::Index>(n), d);
    e.a.resize(static_cast<Eigen::Index>(n), 1);
    return e;
  }

  Examples rows(const std::vector<Eigen::Index>& idx) const {
    Examples out = allocate(idx.size(), s.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      out.s.row(r) = s.row(idx[k]);
      out.a.row(r) = a.row(idx[k]);
      out.s_next.row(r) = s_next.row(idx[k]);
      if (!subject.empty()) out.subject.push_back(subject[static_cast<std::size_t>(idx[k])]);
      if (!windows.empty()) out.windows.push_back(windows[static_cast<std::size_t>(idx[k])]);
    }
    return out;
  }
};

/// Held-out trials drawn by seed; every record of a trial lands on one side.
inline double rmse(const Tensor2& a, const Tensor2& b) {
  if (a.size() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

/// Within-subject / total variance ratio of theta over a batch made of
/// consecutive blocks of `block` rows from the same subject. The ratio is
/// scale-free, so shrinking theta towards a constant does not satisfy it.
inline nn::LossGrad theta_variance_ratio(const Tensor2& theta, int block) {
  const Eigen::Index n = theta.rows();
  const double eps = 1e-6;
  const Eigen::RowVectorXd global = theta.colwise().mean();
  Tensor2 within(n, theta.cols()), total(n, theta.cols());
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index len = std::min<Eigen::Index>(block, n - start);
    const Eigen::RowVectorXd m = theta.middleRows(start, len).colwise().mean();
    within.middleRows(start, len) = theta.middleRows(start, len).rowwise() - m;
  }
  total = theta.rowwise() - global;
  const double w = within.squaredNorm() / static_cast<double>(n);
  const double t = total.squaredNorm() / static_cast<double>(n);
  nn::LossGrad out;
  out.value = w / (t + eps);
  out.grad = (2.0 / static_cast<double>(n)) * (within / (t + eps) - total * (w / ((t + eps) * (t + eps))));
  return out;
}

}  // namespace detail

/// Adversarial trainer shared by the population (no theta) and personalized
/// (LSTM theta) variants.
class BiCoGanTrainer {
 public:
  BiCoGanTrainer(GanConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
  }

  TrainResult train_population(const env::Dataset& data) {
    std::vector<const env::Transition*> observed;
    for (const auto& tr : data) {
      if (tr.provenance == env::Provenance::Observed) observed.push_back(&tr);
    }
    require(!observed.empty(), "train_ctrl_g: dataset has no observed transitions");
    const auto d = static_cast<Eigen::Index>(observed.front()->s.size());
    Rng split_rng(derive_seed(seed_, 1));
    const auto held = env::holdout_trials(data, config_.holdout_fraction, split_rng);
    std::vector<const env::Transition*> train_set, held_set;
    for (const auto* tr : observed) {
      if (static_cast<Eigen::Index>(tr->s.size()) != d || tr->s_next.size() != tr->s.size()) {
        throw DimensionError("train_ctrl_g: inconsistent state dimensions");
      }
      (held.count(tr->trial_id) ? held_set : train_set).push_back(tr);
    }
    if (train_set.empty()) train_set.swap(held_set);
    auto fill = [d](const std::vector<const env::Transition*>& src) {
      auto ex = detail::Examples::allocate(src.size(), d);
      for (std::size_t i = 0; i < src.size(); ++i) ex.push(*src[i], static_cast<Eigen::Index>(i));
      return ex;
    };
    return run("ctrl_g", fill(train_set), fill(held_set), 0);
  }

  TrainResult train_personalized(const env::Dataset& data) {
    const auto windows = env::window(data, config_.tau);
    require(!windows.empty(), "train_ctrl_p: no trajectory has at least tau steps");
    std::map<std::pair<int, int>, int> lengths;
    for (const auto& tr : data) {
      if (tr.provenance == env::Provenance::Observed) ++lengths[{tr.subject_id, tr.trial_id}];
    }
    std::size_t skipped = 0;
    for (const auto& [key, len] : lengths) skipped += len < config_.tau ? 1 : 0;

    const auto d = static_cast<Eigen::Index>(windows.front().steps.back().s.size());
    Rng split_rng(derive_seed(seed_, 1));
    const auto held = env::holdout_trials(data, config_.holdout_fraction, split_rng);
    std::vector<const env::Window*> train_w, held_w;
    for (const auto& w : windows) (held.count(w.steps.back().trial_id) ? held_w : train_w).push_back(&w);
    if (train_w.empty()) train_w.swap(held_w);
    auto fill = [d](const std::vector<const env::Window*>& src) {
      auto ex = detail::Examples::allocate(src.size(), d);
      for (std::size_t i = 0; i < src.size(); ++i) {
        ex.push(src[i]->steps.back(), static_cast<Eigen::Index>(i));
        ex.subject.push_back(src[i]->subject_id);
        ex.windows.push_back(*src[i]);
      }
      return ex;
    };
    auto result = run("ctrl_p", fill(train_w), fill(held_w), config_.theta_dim);
    result.report.skipped_subjects = skipped;
    if (skipped) {
      result.report.warnings.push_back(std::to_string(skipped) + " trajectories shorter than tau = " +
                                       std::to_string(config_.tau) + " were skipped");
    }
    return result;
  }

 private:
  TrainResult run(const std::string& variant, const detail::Examples& train, const detail::Examples& held,
                  Eigen::Index theta_dim) {
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index d = train.s.cols();
    const bool personalized = theta_dim > 0;
    Rng rng(derive_seed(seed_, 2));

    TrainResult res;
    LearnedScm& m = res.model;
    m.state_std = nn::Standardizer::fit(train.s);
    m.delta_std = nn::Standardizer::fit(train.s_next - train.s);
    const Eigen::Index cond_dim = d + 1 + theta_dim;
    m.generator = Generator(cond_dim, d, config_.generator_hidden, config_.monotone_width, config_.batch_norm, rng);
    m.encoder = nn::Mlp(nn::MlpSpec{2 * d + 1, config_.encoder_hidden, 2 * d + 1, nn::ActivationKind::Relu,
                                    nn::ActivationKind::Identity, config_.batch_norm},
                        rng);
    if (personalized) m.theta_net = ThetaNet(d + 1, config_.lstm_hidden, theta_dim, config_.tau, rng);
    nn::Mlp& disc = res.discriminator;
    disc = nn::Mlp(nn::MlpSpec{cond_dim + 2 * d, config_.discriminator_hidden, 1, nn::ActivationKind::Relu,
                               nn::ActivationKind::Identity, config_.batch_norm},
                   rng);

    const Tensor2 train_sz = m.state_std.apply(train.s);
    const Tensor2 train_nz = m.state_std.apply(train.s_next);
    const Tensor2 train_dz = m.delta_std.apply(train.s_next - train.s);

    std::vector<nn::ParamRef> d_params = disc.params("D");
    std::vector<nn::ParamRef> g_params;
    m.generator.collect(g_params, "G");
    m.encoder.collect(g_params, "E");
    if (personalized) m.theta_net->collect(g_params, "theta");
    nn::Adam opt_d({config_.lr_d, config_.beta1, 0.999, 1e-8, 0.0});
    nn::Adam opt_g({config_.lr_g, config_.beta1, 0.999, 1e-8, 0.0});

    // Subjects with their training rows, for block sampling in the personalized variant.
    std::vector<std::vector<Eigen::Index>> subject_rows;
    if (personalized) {
      std::map<int, std::vector<Eigen::Index>> by_subject;
      for (Eigen::Index i = 0; i < train.size(); ++i) by_subject[train.subject[static_cast<std::size_t>(i)]].push_back(i);
      for (auto& [sid, rows] : by_subject) subject_rows.push_back(std::move(rows));
    }

    const int B = config_.batch_size;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(B));
    LearnedScm snapshot = m;
    TrainLogEntry acc;
    int acc_n = 0;

    for (int it = 1; it <= config_.iterations; ++it) {
      if (personalized) {
        const int per = config_.windows_per_subject;
        for (int b = 0; b < B / per; ++b) {
          const auto& rows = subject_rows[uniform_index(rng, subject_rows.size())];
          for (int k = 0; k < per; ++k) idx[static_cast<std::size_t>(b * per + k)] = rows[uniform_index(rng, rows.size())];
        }
      } else {
        for (auto& i : idx) i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(train.size())));
      }
      Tensor2 sz(B, d), nz(B, d), dz(B, d), a(B, 1);
      for (int r = 0; r < B; ++r) {
        sz.row(r) = train_sz.row(idx[static_cast<std::size_t>(r)]);
        nz.row(r) = train_nz.row(idx[static_cast<std::size_t>(r)]);
        dz.row(r) = train_dz.row(idx[static_cast<std::size_t>(r)]);
        a(r, 0) = train.a(idx[static_cast<std::size_t>(r)], 0);
      }

      try {
        Tensor2 theta(B, 0);
        std::vector<Tensor2> seq;
        if (personalized) {
          std::vector<env::Window> wins;
          wins.reserve(static_cast<std::size_t>(B));
          for (auto i : idx) wins.push_back(train.windows[static_cast<std::size_t>(i)]);
          seq = m.window_sequence(wins);
          m.theta_net->zero_grad();
          theta = m.theta_net->forward(seq);
        }
        const Tensor2 cond = nn::hcat({&sz, &a, &theta});
        const Tensor2 enc_in = nn::hcat({&nz, &sz, &a});
        const Tensor2 e = m.encoder.forward(enc_in);
        const Tensor2 eu = e.rightCols(d);
        const Tensor2 u = nn::randn(B, d, rng);
        const Tensor2 fake = m.generator.forward(cond, u);
        const Tensor2 real_in = nn::hcat({&cond, &eu, &dz});
        const Tensor2 fake_in = nn::hcat({&cond, &u, &fake});

        // Discriminator step.
        disc.zero_grad();
        const Tensor2 logit_real = disc.forward(real_in);
        const auto l_real = nn::bce_with_logits(logit_real, 1.0);
        disc.backward(l_real.grad);
        const Tensor2 logit_fake = disc.forward(fake_in);
        const auto l_fake = nn::bce_with_logits(logit_fake, 0.0);
        disc.backward(l_fake.grad);
        opt_d.step(d_params);
        const double value = nn::mean_log_sigmoid(logit_real).value + nn::mean_log_sigmoid(-logit_fake).value;

        // Generator / encoder (/ theta) step against the updated discriminator.
        disc.zero_grad();
        m.generator.zero_grad();
        m.encoder.zero_grad();
        double ge_loss = 0.0;
        const Tensor2 lr2 = disc.forward(real_in);
        Tensor2 d_real_in;
        if (config_.non_saturating) {
          const auto l = nn::bce_with_logits(lr2, 0.0);
          ge_loss += l.value;
          d_real_in = disc.backward(l.grad);
        } else {
          const auto l = nn::mean_log_sigmoid(lr2);
          ge_loss += l.value;
          d_real_in = disc.backward(l.grad);
        }
        const Tensor2 lf2 = disc.forward(fake_in);
        Tensor2 d_fake_in;
        if (config_.non_saturating) {
          const auto l = nn::bce_with_logits(lf2, 1.0);
          ge_loss += l.value;
          d_fake_in = disc.backward(l.grad);
        } else {
          const auto l = nn::mean_log_sigmoid(-lf2);
          ge_loss += l.value;
          d_fake_in = disc.backward(-l.grad);
        }

        const auto r_s = nn::mse(e.leftCols(d), sz);
        const auto r_a = nn::mse(e.middleCols(d, 1), a);
        const double reg = r_s.value + r_a.value;
        ge_loss += config_.lambda * reg;
        Tensor2 d_e(B, 2 * d + 1);
        d_e.leftCols(d) = config_.lambda * r_s.grad;
        d_e.middleCols(d, 1) = config_.lambda * r_a.grad;
        d_e.rightCols(d) = d_real_in.middleCols(cond_dim, d);
        m.encoder.backward(d_e);
        Tensor2 d_cond = d_real_in.leftCols(cond_dim) + d_fake_in.leftCols(cond_dim);
        d_cond += m.generator.backward(d_fake_in.rightCols(d));

        double penalty = 0.0;
        if (personalized) {
          Tensor2 d_theta = d_cond.rightCols(theta_dim);
          if (config_.theta_penalty > 0.0) {
            const auto p = detail::theta_variance_ratio(theta, config_.windows_per_subject);
            penalty = p.value;
            ge_loss += config_.theta_penalty * p.value;
            d_theta += config_.theta_penalty * p.grad;
          }
          m.theta_net->backward(d_theta);
        }
        opt_g.step(g_params);

        if (!std::isfinite(ge_loss) || !std::isfinite(value)) throw NumericalError("non-finite training loss");
        acc.d_loss += l_real.value + l_fake.value;
        acc.ge_loss += ge_loss;
        acc.value += value;
        acc.regularizer += reg;
        acc.theta_penalty += penalty;
        acc.d_real += mean_sigmoid(logit_real);
        acc.d_fake += mean_sigmoid(logit_fake);
        ++acc_n;
      } catch (const NumericalError& err) {
        res.report.diverged = true;
        res.report.message = "training diverged at iteration " + std::to_string(it) + ": " + err.what() +
                             "; returning the last finite snapshot";
        m = snapshot;
        break;
      }

      if (it % config_.log_every == 0 || it == config_.iterations) {
        const double n = static_cast<double>(acc_n);
        res.report.log.push_back({it, acc.d_loss / n, acc.ge_loss / n, acc.value / n, acc.regularizer / n,
                                  acc.theta_penalty / n, acc.d_real / n, acc.d_fake / n});
        acc = {};
        acc_n = 0;
        snapshot = m;
      }
    }

    res.report.variant = variant;
    res.report.n_train = static_cast<std::size_t>(train.size());
    res.report.n_heldout = static_cast<std::size_t>(held.size());
    evaluate(res, held.size() > 0 ? held : train, train, rng);
    res.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

  static double mean_sigmoid(const Tensor2& logits) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) s += nn::sigmoid(logits.data()[i]);
    return s / static_cast<double>(logits.size());
  }

  void evaluate(TrainResult& res, const detail::Examples& eval, const detail::Examples& train, Rng& rng) const {
    const LearnedScm& m = res.model;
    const Eigen::Index d = m.state_dim();
    const Tensor2 theta = m.uses_theta() ? m.estimate_theta(eval.windows) : Tensor2(eval.size(), 0);
    const Tensor2 enc = m.encode_all(eval.s, eval.a, eval.s_next);
    const Tensor2 u_hat = enc.rightCols(d);
    res.report.reconstruction_rmse = detail::rmse(m.predict(eval.s, eval.a, theta, u_hat), eval.s_next);

    const Tensor2 s_hat = m.state_std.invert(enc.leftCols(d));
    const Tensor2 a_hat = enc.middleCols(d, 1);
    res.report.cycle_rmse = detail::rmse(m.predict(s_hat, a_hat, theta, u_hat), eval.s_next);
    const Tensor2 sa_hat = enc.leftCols(d + 1);
    const Tensor2 sz = m.state_std.apply(eval.s);
    res.report.sa_reconstruction_rmse = detail::rmse(sa_hat, nn::hcat({&sz, &eval.a}));

    res.report.state_scale.clear();
    const nn::Standardizer next_std = nn::Standardizer::fit(eval.s_next);
    for (Eigen::Index j = 0; j < d; ++j) res.report.state_scale.push_back(next_std.scale(j));

    const Tensor2 train_theta = m.uses_theta() ? m.estimate_theta(train.windows) : Tensor2(train.size(), 0);
    res.report.monotonicity_pass_rate = monotonicity_pass_rate(
        m.generator, m.generator_input(train.s, train.a, train_theta), config_.monotonicity_probes, rng);

    const Tensor2 cond = m.generator_input(eval.s, eval.a, theta);
    const Tensor2 dz = m.delta_std.apply(eval.s_next - eval.s);
    const Tensor2 u = nn::randn(eval.size(), d, rng);
    const Tensor2 fake = m.generator.predict(cond, u);
    res.report.d_real_mean = mean_sigmoid(res.discriminator.predict(nn::hcat({&cond, &u_hat, &dz})));
    res.report.d_fake_mean = mean_sigmoid(res.discriminator.predict(nn::hcat({&cond, &u, &fake})));
  }

  GanConfig config_;
  std::uint64_t seed_;
};

inline TrainResult train_ctrl_g(const env::Dataset& data, const GanConfig& config, std::uint64_t seed) {
  return BiCoGanTrainer(config, seed).train_population(data);
}

inline TrainResult train_ctrl_p(const env::Dataset& data, const GanConfig& config, std::uint64_t seed) {
  return BiCoGanTrainer(config, seed).train_personalized(data);
}

}  // namespace cfrl::scm_train
