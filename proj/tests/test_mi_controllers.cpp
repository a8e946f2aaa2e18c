#include <catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "disent/controllers.hpp"
#include "disent/mi.hpp"
#include "helpers.hpp"

using namespace disent;

TEST_CASE("kl bound closed form") {
  Tensor<double> zeros(4, 1, 1, 16);
  REQUIRE(kl_to_standard_prior(zeros) == 0.0);

  Tensor<double> ones(1, 1, 1, 16);
  for (auto& v : ones.data) v = 1.0;
  REQUIRE(kl_to_standard_prior(ones) == Catch::Approx(8.0).margin(1e-12));

  Tensor<double> pm(2, 1, 1, 4), pp(2, 1, 1, 4);
  Rng rng(3);
  for (int i = 0; i < 4; ++i) {
    const double v = rng.normal();
    pm.at(0, 0, 0, i) = v;
    pm.at(1, 0, 0, i) = -v;
    pp.at(0, 0, 0, i) = v;
    pp.at(1, 0, 0, i) = v;
  }
  REQUIRE(kl_to_standard_prior(pm) == Catch::Approx(kl_to_standard_prior(pp)).margin(1e-12));
}

TEST_CASE("kl bound matches Monte-Carlo estimates") {
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor<double> mean(1, 1, 1, 16);
    // keep ||m|| <= 3
    double norm2 = 0.0;
    for (auto& v : mean.data) {
      v = rng.normal();
      norm2 += v * v;
    }
    const double scale = rng.uniform(0.3, 1.0) * 3.0 / std::sqrt(norm2);
    for (auto& v : mean.data) v *= scale;

    // KL = E_{z~N(m,I)} [ log N(z; m, I) - log N(z; 0, I) ] = E[ (||z||^2 - ||z-m||^2)/2 ]
    const int samples = 1000000;
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
      double term = 0.0;
      for (int d = 0; d < 16; ++d) {
        const double e = rng.normal();
        const double z = mean.data[d] + e;
        term += 0.5 * (z * z - e * e);
      }
      acc += term / samples;
    }
    REQUIRE(kl_to_standard_prior(mean) == Catch::Approx(acc).margin(1e-2));
  }
}

TEST_CASE("kl gradient is mean over batch size") {
  Tensor<double> mean(4, 1, 1, 8);
  Rng rng(5);
  rng.fill_normal(mean.data.data(), mean.size());
  Tensor<double> g = kl_to_standard_prior_grad(mean);
  auto eval = [&] { return double(kl_to_standard_prior(mean)); };
  auto fd = testutil::fd_grad(mean.data, eval);
  std::vector<double> got(g.data.begin(), g.data.end());
  REQUIRE(testutil::max_abs_diff(fd, got) < 1e-9);
}

TEST_CASE("pair classifier loss at zero logits is 2 ln 2") {
  std::vector<double> joint(16, 0.0), marg(16, 0.0);
  auto r = classifier_loss_and_grads(joint, marg);
  REQUIRE(r.loss == Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
  REQUIRE(r.joint_logit_mean == 0.0);
  for (double g : r.djoint) REQUIRE(g == Catch::Approx(-0.5 / 16).margin(1e-12));
  for (double g : r.dmarginal) REQUIRE(g == Catch::Approx(0.5 / 16).margin(1e-12));
}

TEST_CASE("pair classifier loss vanishes for a perfect separator") {
  std::vector<double> joint(8, 40.0), marg(8, -40.0);
  auto r = classifier_loss_and_grads(joint, marg);
  REQUIRE(r.loss < 1e-12);
  REQUIRE(r.joint_logit_mean == Catch::Approx(40.0));
}

TEST_CASE("pair classifier loss gradients match finite differences") {
  Rng rng(7);
  std::vector<double> joint(6), marg(6);
  for (auto& v : joint) v = rng.normal();
  for (auto& v : marg) v = rng.normal();
  auto r = classifier_loss_and_grads(joint, marg);
  auto ej = [&] { return double(classifier_loss_and_grads(joint, marg).loss); };
  auto fdj = testutil::fd_grad(joint, ej);
  auto fdm = testutil::fd_grad(marg, ej);
  REQUIRE(testutil::max_abs_diff(fdj, r.djoint) < 1e-9);
  REQUIRE(testutil::max_abs_diff(fdm, r.dmarginal) < 1e-9);
}

TEST_CASE("pair classifier loss rejects empty batches") {
  std::vector<double> some(4, 0.0), none;
  REQUIRE_THROWS_AS(classifier_loss_and_grads(none, some), ValidationError);
  REQUIRE_THROWS_AS(classifier_loss_and_grads(some, none), ValidationError);
}

TEST_CASE("ema tracker warm start and recurrence") {
  MiEstimate e;
  e.update(1.0);
  REQUIRE(e.ema_value == 1.0);
  e.update(1.0);
  e.update(1.0);
  REQUIRE(e.ema_value == Catch::Approx(1.0).margin(1e-15));

  MiEstimate f;
  f.update(0.0);
  f.update(1.0);
  REQUIRE(f.ema_value == Catch::Approx(0.01).margin(1e-15));
  REQUIRE(f.batch_value == 1.0);
}

TEST_CASE("marginal pairing equals an independently drawn derangement") {
  Rng a(mix_seed(12, 34));
  auto pairs = make_marginal_pairs(4, a);
  Rng b(mix_seed(12, 34));
  REQUIRE(pairs == b.derangement(4));
  for (int i = 0; i < 4; ++i) REQUIRE(pairs[i] != i);
}

TEST_CASE("gaussian mi oracle closed form") {
  REQUIRE(gaussian_mi_oracle(0.0) == 0.0);
  REQUIRE(gaussian_mi_oracle(0.8) == Catch::Approx(0.5108256238).margin(1e-9));
  REQUIRE(gaussian_mi_oracle(-0.8) == gaussian_mi_oracle(0.8));
  REQUIRE_THROWS_AS(gaussian_mi_oracle(1.0), ValidationError);
  REQUIRE_THROWS_AS(gaussian_mi_oracle(-1.2), ValidationError);
}

TEST_CASE("mi penalty hand values and seam continuity") {
  DualControllerState s;
  s.lambda = 0.0;
  REQUIRE(loss_mi(s.epsilon, s) == 0.0);

  s.lambda = 0.5;
  REQUIRE(loss_mi(s.epsilon + 0.2, s) == Catch::Approx(0.102).margin(1e-15));

  s.lambda = 1.0;
  // i - eps = -lambda/mu = -10: both branches agree.
  REQUIRE(loss_mi(s.epsilon - 10.0, s) == Catch::Approx(-5.0).margin(1e-12));

  Rng rng(21);
  for (int t = 0; t < 50; ++t) {
    DualControllerState r;
    r.lambda = rng.uniform(0.0, 1.0);
    r.mu = rng.uniform(0.05, 0.5);
    r.epsilon = rng.uniform(-0.5, 0.5);
    const double d = -r.lambda / r.mu;  // seam location in (i - eps)
    const double active = r.lambda * d + 0.5 * r.mu * d * d;
    const double flat = -r.lambda * r.lambda / (2.0 * r.mu);
    REQUIRE(std::abs(active - flat) < 1e-12);
    const double dactive = r.lambda + r.mu * d;
    REQUIRE(std::abs(dactive - 0.0) < 1e-12);
    // the implementation agrees with whichever branch applies just off the seam
    const double lo = loss_mi(r.epsilon + d - 1e-9, r);
    const double hi = loss_mi(r.epsilon + d + 1e-9, r);
    REQUIRE(std::abs(lo - hi) < 1e-8);
  }
}

TEST_CASE("mi penalty derivative is nonnegative and matches finite differences") {
  Rng rng(22);
  int checked = 0;
  while (checked < 100) {
    DualControllerState s;
    s.lambda = rng.uniform(0.0, 2.0);
    s.mu = rng.uniform(0.05, 1.0);
    const double i = rng.uniform(-3.0, 3.0);
    const double g = dloss_mi_di(i, s);
    REQUIRE(g >= 0.0);
    const double seam = s.epsilon - s.lambda / s.mu;
    const double h = 1e-6;
    if (std::abs(i - seam) < 10 * h) continue;  // FD invalid across the seam
    const double fd = (loss_mi(i + h, s) - loss_mi(i - h, s)) / (2.0 * h);
    REQUIRE(fd == Catch::Approx(g).epsilon(1e-4).margin(1e-9));
    ++checked;
  }
}

TEST_CASE("multiplier update hand values") {
  DualControllerState s;
  REQUIRE(updated_lambda(s, s.epsilon) == 0.0);
  s.lambda = 0.2;
  REQUIRE(updated_lambda(s, s.epsilon - 3.0) == 0.0);
  s.lambda = 0.0;
  REQUIRE(updated_lambda(s, s.epsilon + 0.5) == Catch::Approx(0.05).margin(1e-15));
}

TEST_CASE("kl weight update hand values") {
  DualControllerState s;
  REQUIRE(updated_gamma(s, 0.3, 0.3) == 0.0);

  s.gamma = 0.05;
  REQUIRE(updated_gamma(s, 0.1254, 0.8727) == Catch::Approx(0.057373).margin(1e-12));

  s.gamma = 0.001;
  REQUIRE(updated_gamma(s, 0.5 + 0.5 - 0.01, 0.5) == 0.0);  // gap - bias = -0.5
}

TEST_CASE("variational kl weight update hand values and mode guard") {
  DualControllerState s;
  REQUIRE(updated_gamma_variational(s, s.epsilon, AblationMode::variational_only) == 0.0);
  s.gamma = 0.1;
  REQUIRE(updated_gamma_variational(s, 0.625, AblationMode::variational_only) ==
          Catch::Approx(0.105).margin(1e-12));
  s.gamma = 0.001;
  REQUIRE(updated_gamma_variational(s, 0.0, AblationMode::variational_only) == 0.0);
  REQUIRE_THROWS_AS(updated_gamma_variational(s, 0.5, AblationMode::full), ConfigError);
}

TEST_CASE("controller values stay nonnegative under random updates") {
  Rng rng(23);
  DualControllerState s;
  for (int t = 0; t < 100000; ++t) {
    const double i_t = rng.uniform(-5.0, 5.0);
    const double i_tp = rng.uniform(-5.0, 5.0);
    s.lambda = updated_lambda(s, i_t);
    s.gamma = updated_gamma(s, i_t, i_tp);
    REQUIRE(s.lambda >= 0.0);
    REQUIRE(s.gamma >= 0.0);
  }
}

TEST_CASE("kl weight decays to exactly zero under a closed gap") {
  DualControllerState s;
  s.gamma = 0.05;
  int steps = 0;
  while (s.gamma > 0.0 && steps < 1000) {
    s.gamma = updated_gamma(s, 0.2, 0.2);  // gap 0 < b_gamma
    ++steps;
  }
  REQUIRE(s.gamma == 0.0);
  REQUIRE(steps == 500);  // 0.05 / (l_gamma * b_gamma)
  s.gamma = updated_gamma(s, 0.2, 0.2);
  REQUIRE(s.gamma == 0.0);
}

TEST_CASE("kkt toy problem converges to the analytic multiplier") {
  // minimize -x subject to x <= eps; optimum x* = eps with multiplier 1.
  DualControllerState s;
  double x = -1.0;
  const double step = 0.02;
  int t = 0;
  for (; t < 10000; ++t) {
    const double g = -1.0 + dloss_mi_di(x, s);
    x -= step * g;
    s.lambda = updated_lambda(s, x);
    if (std::abs(x - s.epsilon) < 1e-3 && std::abs(s.lambda - 1.0) < 1e-2) break;
  }
  INFO("steps=" << t << " x=" << x << " lambda=" << s.lambda);
  REQUIRE(std::abs(x - s.epsilon) < 1e-3);
  REQUIRE(std::abs(s.lambda - 1.0) < 1e-2);
}

TEST_CASE("mode table: parse, print, and per-mode controller behavior") {
  REQUIRE(parse_ablation_mode("a") == AblationMode::variational_only);
  REQUIRE(parse_ablation_mode("e") == AblationMode::full);
  REQUIRE(to_string(AblationMode::no_gap_bias) == "c");
  REQUIRE_THROWS_AS(parse_ablation_mode("z"), ConfigError);

  REQUIRE(uses_mi_loss(AblationMode::full));
  REQUIRE(!uses_mi_loss(AblationMode::variational_only));
  REQUIRE(uses_kl_term(AblationMode::variational_only));
  REQUIRE(!uses_kl_term(AblationMode::adversarial_only));

  auto sc = make_controller_state(AblationMode::no_gap_bias, 0.1, 0.125, 0.01, 0.01);
  REQUIRE(sc.b_gamma == 0.0);
  auto sd = make_controller_state(AblationMode::fixed_unit, 0.1, 0.125, 0.01, 0.01);
  REQUIRE(sd.gamma == 1.0);
  REQUIRE_THROWS_AS(make_controller_state(AblationMode::full, 0.0, 0.125, 0.01, 0.01),
                    ConfigError);

  // b pins gamma at zero, d pins it at one, a never moves lambda.
  DualControllerState sb = make_controller_state(AblationMode::adversarial_only, 0.1, 0.125,
                                                 0.01, 0.01);
  update_controllers(sb, AblationMode::adversarial_only, 1.0, 2.0);
  REQUIRE(sb.gamma == 0.0);
  REQUIRE(sb.lambda > 0.0);

  update_controllers(sd, AblationMode::fixed_unit, 1.0, 2.0);
  REQUIRE(sd.gamma == 1.0);

  DualControllerState sa = make_controller_state(AblationMode::variational_only, 0.1, 0.125,
                                                 0.01, 0.01);
  update_controllers(sa, AblationMode::variational_only, 1.0, 2.0);
  REQUIRE(sa.lambda == 0.0);
  REQUIRE(sa.gamma == Catch::Approx(0.01 * (2.0 - 0.125)).margin(1e-15));
}

TEST_CASE("classifier training drives the loss below chance on correlated pairs") {
  const double rho = 0.8;
  Classifier<float> clf("t", 16, 1);
  Rng init(41);
  clf.init(init);
  Adam<float> opt(clf.params());
  Rng data(42);

  const int batch = 64;
  float last_loss = 0.0f;
  for (int step = 0; step < 300; ++step) {
    Tensor<float> a(batch, 1, 1, 1), b(batch, 1, 1, 1);
    for (int i = 0; i < batch; ++i) {
      const double z = data.normal();
      a.data[i] = float(z);
      b.data[i] = float(rho * z + std::sqrt(1.0 - rho * rho) * data.normal());
    }
    auto marg = make_marginal_pairs(batch, data);
    auto r = train_classifier_step(clf, opt, a, b, marg, 1e-3f);
    last_loss = r.loss;
  }
  REQUIRE(last_loss < 2.0f * std::log(2.0f) - 0.05f);
}
