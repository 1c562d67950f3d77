#include <gtest/gtest.h>

#include <cmath>

#include "cfrl/numerics/gradcheck.hpp"
#include "cfrl/scm/inference.hpp"
#include "cfrl/scm_train/bicogan.hpp"

namespace cfrl::scm_train {
namespace {

using nn::Tensor2;

GanConfig small_config(int iterations) {
  GanConfig c;
  c.generator_hidden = {32, 32};
  c.encoder_hidden = {32, 32};
  c.discriminator_hidden = {32, 32};
  c.batch_size = 64;
  c.iterations = iterations;
  c.lr_d = c.lr_g = 1e-3;
  c.log_every = 100;
  c.monotonicity_probes = 1000;
  return c;
}

// s' = 0.9 s + a (1, -1) + 0.1 u on a 2-d state; every record is its own trial.
env::Dataset linear_gaussian(int n, std::uint64_t seed) {
  Rng rng(seed);
  env::Dataset data;
  for (int i = 0; i < n; ++i) {
    env::Transition tr;
    tr.record_id = i;
    tr.trial_id = i;
    tr.subject_id = i;
    tr.s = {standard_normal(rng), standard_normal(rng)};
    tr.a = static_cast<double>(uniform_index(rng, 11)) / 10.0;
    tr.s_next = {0.9 * tr.s[0] + tr.a + 0.1 * standard_normal(rng), 0.9 * tr.s[1] - tr.a + 0.1 * standard_normal(rng)};
    data.push_back(tr);
  }
  return data;
}

TEST(MonotoneNoiseHead, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  MonotoneNoiseHead head(3, 4, rng);
  const Tensor2 c = nn::randn(5, head.conditioning_dim(), rng);
  const Tensor2 u = nn::randn(5, 3, rng);
  const Tensor2 w = nn::randn(5, 3, rng);
  std::vector<nn::ParamRef> params;
  head.collect(params, "head");
  Tensor2 c_param = c, c_grad = Tensor2::Zero(c.rows(), c.cols());
  params.push_back({"c", &c_param, &c_grad});
  auto loss = [&] { return head.predict(c_param, u).cwiseProduct(w).sum(); };
  auto analytic = [&] {
    head.zero_grad();
    const double l = head.forward(c_param, u).cwiseProduct(w).sum();
    c_grad = head.backward(w);
    return l;
  };
  const auto r = nn::gradcheck(params, analytic, loss);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Generator, GradientsIncludingInputsMatchFiniteDifferences) {
  Rng rng(2);
  Generator g(4, 2, {6, 5}, 3, false, rng);
  Tensor2 x = nn::randn(4, 4, rng), x_grad = Tensor2::Zero(4, 4);
  const Tensor2 u = nn::randn(4, 2, rng), w = nn::randn(4, 2, rng);
  std::vector<nn::ParamRef> params;
  g.collect(params, "G");
  params.push_back({"x", &x, &x_grad});
  auto loss = [&] { return g.predict(x, u).cwiseProduct(w).sum(); };
  auto analytic = [&] {
    g.zero_grad();
    const double l = g.forward(x, u).cwiseProduct(w).sum();
    x_grad = g.backward(w);
    return l;
  };
  const auto r = nn::gradcheck(params, analytic, loss);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Generator, NoisePathIsStrictlyIncreasingAtInitialization) {
  Rng rng(3);
  Generator g(5, 4, {16}, 8, false, rng);
  EXPECT_EQ(monotonicity_pass_rate(g, nn::randn(50, 5, rng), 1000, rng), 1.0);
}

TEST(Generator, NoisePathStaysMonotoneUnderExtremeConditioning) {
  Rng rng(4);
  MonotoneNoiseHead head(1, 4, rng);
  head.raw_out.setConstant(3.0);
  head.raw_skip.setConstant(-10.0);
  const Tensor2 c = 50.0 * nn::randn(1, head.conditioning_dim(), rng);
  double prev = -1e300;
  for (int k = -400; k <= 400; ++k) {
    const double y = head.predict(c, Tensor2::Constant(1, 1, 0.05 * k))(0, 0);
    ASSERT_GT(y, prev);
    prev = y;
  }
}

TEST(ThetaPenalty, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor2 theta = nn::randn(12, 2, rng), grad = Tensor2::Zero(12, 2);
  std::vector<nn::ParamRef> params{{"theta", &theta, &grad}};
  auto loss = [&] { return detail::theta_variance_ratio(theta, 4).value; };
  auto analytic = [&] {
    const auto l = detail::theta_variance_ratio(theta, 4);
    grad = l.grad;
    return l.value;
  };
  const auto r = nn::gradcheck(params, analytic, loss);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(ThetaPenalty, IsScaleFree) {
  Rng rng(6);
  const Tensor2 theta = nn::randn(8, 3, rng);
  EXPECT_NEAR(detail::theta_variance_ratio(theta, 4).value, detail::theta_variance_ratio(10.0 * theta, 4).value,
              1e-6);
}

TEST(TrainCtrlG, EmptyDatasetRejected) {
  EXPECT_THROW(train_ctrl_g({}, small_config(10), 1), PreconditionError);
}

TEST(TrainCtrlG, LinearGaussianReconstructionWithinTenthOfStateScale) {
  const auto data = linear_gaussian(10000, 7);
  auto cfg = small_config(6000);
  cfg.batch_size = 256;
  const auto res = train_ctrl_g(data, cfg, 11);
  const auto& rep = res.report;
  ASSERT_FALSE(rep.diverged) << rep.message;
  EXPECT_TRUE(rep.all_finite());
  const double scale = (rep.state_scale[0] + rep.state_scale[1]) / 2.0;
  EXPECT_LE(rep.reconstruction_rmse, 0.1 * scale);
  EXPECT_EQ(rep.monotonicity_pass_rate, 1.0);
  EXPECT_GT(rep.d_real_mean, 0.0);
  EXPECT_LT(rep.d_real_mean, 1.0);

  // Bisection on the learned model reproduces the evidence exactly.
  auto ev = scm::evidence_of(env::Dataset(data.begin(), data.begin() + 500), false);
  const auto cf = scm::counterfactual(res.model, ev, ev.a);
  EXPECT_EQ(cf.abduction.n_failed, 0u);
  EXPECT_LE((cf.s_cf - ev.s_next).cwiseAbs().maxCoeff(), 1e-8);

  // Encoder abduction is close to bisection abduction on the learned model.
  const auto enc = scm::abduct(res.model, ev, scm::AbductionMethod::Encoder);
  const double enc_rmse = std::sqrt(enc.residual.squaredNorm() / static_cast<double>(enc.residual.size()));
  EXPECT_LE(enc_rmse, 2.0 * rep.reconstruction_rmse + 1e-3);
}

TEST(TrainCtrlG, RegularizerImprovesInputReconstruction) {
  const auto data = linear_gaussian(3000, 9);
  double with = 0.0, without = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = small_config(600);
    cfg.lambda = 1.0;
    with += train_ctrl_g(data, cfg, seed).report.sa_reconstruction_rmse;
    cfg.lambda = 0.0;
    without += train_ctrl_g(data, cfg, seed).report.sa_reconstruction_rmse;
  }
  EXPECT_LE(with, without);
}

TEST(TrainCtrlG, NonFiniteDataAbortsWithSnapshot) {
  auto data = linear_gaussian(200, 3);
  data[5].s_next[0] = std::numeric_limits<double>::quiet_NaN();
  const auto res = train_ctrl_g(data, small_config(50), 1);
  EXPECT_TRUE(res.report.diverged);
  EXPECT_NE(res.report.message.find("diverged"), std::string::npos);
}

TEST(TrainCtrlG, DeterministicUnderSeed) {
  const auto data = linear_gaussian(500, 4);
  const auto a = train_ctrl_g(data, small_config(50), 5);
  const auto b = train_ctrl_g(data, small_config(50), 5);
  EXPECT_EQ(a.model.to_json().dump(), b.model.to_json().dump());
}

TEST(LearnedScm, CheckpointRoundTripPreservesPredictions) {
  const auto data = linear_gaussian(500, 4);
  const auto res = train_ctrl_g(data, small_config(50), 5);
  const auto loaded = LearnedScm::from_json(nlohmann::json::parse(res.model.to_json().dump()));
  Rng rng(1);
  const Tensor2 s = nn::randn(10, 2, rng), u = nn::randn(10, 2, rng);
  const Tensor2 a = Tensor2::Constant(10, 1, 0.3);
  EXPECT_EQ(res.model.predict(s, a, Tensor2(10, 0), u), loaded.predict(s, a, Tensor2(10, 0), u));
  EXPECT_THROW(res.model.predict(s, a, Tensor2(10, 1), u), DimensionError);
}

env::Dataset two_gravity_subjects(int trials_per_gravity, std::uint64_t seed) {
  env::EnvConfig cfg;
  return env::generate_hybrid(cfg, {9.8, 24.79}, trials_per_gravity, seed);
}

GanConfig small_personalized(int iterations) {
  auto c = small_config(iterations);
  c.batch_size = 64;
  c.windows_per_subject = 4;
  c.lstm_hidden = 16;
  return c;
}

TEST(TrainCtrlP, SingleSubjectStillTrains) {
  env::EnvConfig cfg;
  auto data = env::generate_trials(cfg, 1, env::uniform_random_policy(11), 3);
  const auto res = train_ctrl_p(data, small_personalized(30), 1);
  EXPECT_FALSE(res.report.diverged) << res.report.message;
  EXPECT_TRUE(res.model.uses_theta());
}

TEST(TrainCtrlP, ShortTrajectoriesAreSkippedWithWarning) {
  env::EnvConfig cfg;
  auto data = env::generate_trials(cfg, 6, env::uniform_random_policy(11), 3);
  env::EnvConfig short_cfg = cfg;
  short_cfg.max_steps = 3;
  auto shorts = env::generate_trials(short_cfg, 2, env::uniform_random_policy(11), 4, 0, 100);
  for (auto& tr : shorts) tr.subject_id += 500;
  data.insert(data.end(), shorts.begin(), shorts.end());
  const auto res = train_ctrl_p(data, small_personalized(10), 1);
  EXPECT_EQ(res.report.skipped_subjects, 2u);
  EXPECT_FALSE(res.report.warnings.empty());
}

TEST(TrainCtrlP, ThetaIsDeterministicAndChecksWindowLength) {
  const auto data = two_gravity_subjects(3, 1);
  const auto res = train_ctrl_p(data, small_personalized(20), 1);
  const auto windows = env::window(data, 5);
  EXPECT_EQ(res.model.estimate_theta(windows[0]), res.model.estimate_theta(windows[0]));
  env::Window bad = windows[0];
  bad.steps.pop_back();
  EXPECT_THROW(res.model.estimate_theta(bad), PreconditionError);
  const auto loaded = LearnedScm::from_json(res.model.to_json());
  EXPECT_EQ(loaded.estimate_theta(windows[3]), res.model.estimate_theta(windows[3]));
}

TEST(TrainCtrlP, SubjectsFromDifferentGravitiesSeparate) {
  // One long-lived subject per gravity: windows of a subject should sit closer
  // together in theta than windows of different subjects.
  env::EnvConfig cfg;
  cfg.max_steps = 200;
  env::Dataset data;
  for (int g = 0; g < 2; ++g) {
    cfg.gravity = g == 0 ? 9.8 : 24.79;
    auto part = env::generate_trials(cfg, 10, env::uniform_random_policy(11), 40 + g, g, g * 10);
    for (auto& tr : part) tr.subject_id = g;
    data.insert(data.end(), part.begin(), part.end());
  }
  const auto res = train_ctrl_p(data, small_personalized(1500), 2);
  const auto windows = env::window(data, 5);
  const Tensor2 theta = res.model.estimate_theta(windows);
  double within = 0.0, between = 0.0;
  int n_within = 0, n_between = 0;
  for (std::size_t i = 0; i < windows.size(); i += 3) {
    for (std::size_t j = i + 1; j < windows.size(); j += 3) {
      const double dist = (theta.row(static_cast<Eigen::Index>(i)) - theta.row(static_cast<Eigen::Index>(j))).norm();
      if (windows[i].subject_id == windows[j].subject_id) {
        within += dist;
        ++n_within;
      } else {
        between += dist;
        ++n_between;
      }
    }
  }
  EXPECT_LT(within / n_within, between / n_between);
}

}  // namespace
}  // namespace cfrl::scm_train
