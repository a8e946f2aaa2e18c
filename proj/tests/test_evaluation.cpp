#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "disent/evaluation.hpp"
#include "disent/hash.hpp"
#include "helpers.hpp"

using namespace disent;

namespace {

Tensor<float> extract_cell(const Tensor<float>& grid, int r, int c, int h, int w, int pad = 2) {
  Tensor<float> out(1, h, w, 3);
  const int oy = pad + r * (h + pad), ox = pad + c * (w + pad);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) out.at(0, y, x, k) = grid.at(0, oy + y, ox + x, k);
  return out;
}

Tensor<float> random_codes(Rng& rng, int b) {
  Tensor<float> t(b, 4, 4, kCodeChannels);
  rng.fill_normal(t.data.data(), t.size());
  return t;
}

}  // namespace

TEST_CASE("error distribution percentiles use linear interpolation") {
  ErrorDistribution d;
  d.per_triplet_mse = {5.0, 1.0, 3.0, 2.0, 4.0};  // order must not matter
  d.summarize();
  REQUIRE(d.mean == Catch::Approx(3.0).margin(1e-14));
  REQUIRE(d.median == Catch::Approx(3.0).margin(1e-14));
  REQUIRE(d.p5 == Catch::Approx(1.2).margin(1e-14));
  REQUIRE(d.p25 == Catch::Approx(2.0).margin(1e-14));
  REQUIRE(d.p75 == Catch::Approx(4.0).margin(1e-14));
  REQUIRE(d.p95 == Catch::Approx(4.8).margin(1e-14));

  ErrorDistribution single;
  single.per_triplet_mse = {7.5};
  single.summarize();
  REQUIRE(single.mean == 7.5);
  REQUIRE(single.p5 == 7.5);
  REQUIRE(single.p95 == 7.5);

  ErrorDistribution empty;
  REQUIRE_THROWS_AS(empty.summarize(), ValidationError);
}

TEST_CASE("summary statistics are invariant to sample order") {
  Rng rng(9);
  ErrorDistribution a;
  for (int i = 0; i < 101; ++i) a.per_triplet_mse.push_back(rng.uniform(0.0, 4.0));
  ErrorDistribution b = a;
  std::reverse(b.per_triplet_mse.begin(), b.per_triplet_mse.end());
  a.summarize();
  b.summarize();
  REQUIRE(a.mean == b.mean);
  REQUIRE(a.median == b.median);
  REQUIRE(a.p5 == b.p5);
  REQUIRE(a.p95 == b.p95);
}

TEST_CASE("per-sample mse matches a hand computation") {
  Tensor<double> a(2, 1, 2, 1), b(2, 1, 2, 1);
  a.data = {0.0, 0.0, 1.0, 1.0};
  b.data = {1.0, 3.0, 1.0, 0.0};
  auto mse = per_sample_mse(a, b);
  REQUIRE(mse.size() == 2);
  REQUIRE(mse[0] == Catch::Approx((1.0 + 9.0) / 2.0).margin(1e-15));
  REQUIRE(mse[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("triplet transfer error is zero for the ground-truth renderer") {
  const auto pool = all_appearance_combos();
  auto t = sample_triplet_batch<double>(5, 12, 32, pool);
  // oracle: ignore the pixels and re-render from the true factors
  auto oracle = [&](const Tensor<double>&, const Tensor<double>&) {
    Tensor<double> out(12, 32, 32, 3);
    for (int i = 0; i < 12; ++i)
      render_sprite_into(out, i, t.shared_appearance[i], t.shared_pose[i], 32);
    return out;
  };
  auto dist = triplet_transfer_mse(t, oracle);
  REQUIRE(dist.mean == 0.0);
  REQUIRE(dist.p95 == 0.0);
}

TEST_CASE("triplet transfer error matches a constant-offset oracle") {
  const auto pool = all_appearance_combos();
  auto t = sample_triplet_batch<double>(6, 10, 32, pool);
  auto offset = [&](const Tensor<double>&, const Tensor<double>&) {
    Tensor<double> out = t.x2;
    for (auto& v : out.data) v += 0.2;
    return out;
  };
  auto dist = triplet_transfer_mse(t, offset);
  REQUIRE(dist.mean == Catch::Approx(0.04).margin(1e-12));
  REQUIRE(dist.p5 == Catch::Approx(0.04).margin(1e-12));

  auto bad_shape = [&](const Tensor<double>&, const Tensor<double>&) {
    return Tensor<double>(10, 16, 16, 3);
  };
  REQUIRE_THROWS_AS(triplet_transfer_mse(t, bad_shape), ValidationError);
}

TEST_CASE("model transfer evaluation is deterministic and leaves weights unchanged") {
  Model<float> model(32);
  model.init(123);
  const auto pool = train_test_split_factors(0.25, 9).test;
  const std::string before = hash_params(model.params());

  auto ev1 = evaluate_transfer(model, 31, 120, pool);
  auto ev2 = evaluate_transfer(model, 31, 120, pool);
  REQUIRE(ev1.transfer.per_triplet_mse.size() == 120);
  REQUIRE(ev1.reconstruction.per_triplet_mse.size() == 120);
  REQUIRE(ev1.transfer.mean == ev2.transfer.mean);
  REQUIRE(ev1.transfer.p95 == ev2.transfer.p95);
  REQUIRE(std::isfinite(ev1.transfer.mean));
  REQUIRE(ev1.transfer.mean > 0.0);  // an untrained model cannot be perfect

  auto other = evaluate_transfer(model, 32, 120, pool);
  REQUIRE(other.transfer.mean != ev1.transfer.mean);

  REQUIRE(hash_params(model.params()) == before);
  REQUIRE_THROWS_AS(evaluate_transfer(model, 1, 0, pool), ValidationError);
}

TEST_CASE("the probe detects fully dependent codes") {
  ProbeOptions opt;
  opt.steps = 700;
  opt.channels = 16;
  opt.seed = 5;
  auto dependent = [](std::int64_t step, int b) {
    Rng rng(mix_seed(0xF00D, std::uint64_t(step)));
    Tensor<float> pose(b, 4, 4, kCodeChannels);
    rng.fill_normal(pose.data.data(), pose.size());
    Tensor<float> app = pose;  // appearance carries the pose code verbatim
    return std::make_pair(std::move(pose), std::move(app));
  };
  const double mi = train_probe_mi<float>(dependent, opt);
  REQUIRE(mi > 0.5);
}

TEST_CASE("the probe reports near-zero for independent codes") {
  ProbeOptions opt;
  opt.steps = 700;
  opt.channels = 16;
  opt.seed = 5;
  auto independent = [](std::int64_t step, int b) {
    Rng rng(mix_seed(0xBEEF, std::uint64_t(step)));
    Tensor<float> pose(b, 4, 4, kCodeChannels);
    Tensor<float> app(b, 4, 4, kCodeChannels);
    rng.fill_normal(pose.data.data(), pose.size());
    rng.fill_normal(app.data.data(), app.size());
    return std::make_pair(std::move(pose), std::move(app));
  };
  const double mi = train_probe_mi<float>(independent, opt);
  REQUIRE(std::abs(mi) < 0.1);
}

TEST_CASE("probe training is seed reproducible") {
  ProbeOptions opt;
  opt.steps = 120;
  opt.channels = 8;
  opt.seed = 21;
  auto source = [](std::int64_t step, int b) {
    Rng rng(mix_seed(0xCAFE, std::uint64_t(step)));
    Tensor<float> pose(b, 4, 4, kCodeChannels);
    Tensor<float> app(b, 4, 4, kCodeChannels);
    rng.fill_normal(pose.data.data(), pose.size());
    rng.fill_normal(app.data.data(), app.size());
    for (std::size_t i = 0; i < app.size(); ++i) app.data[i] += 0.5f * pose.data[i];
    return std::make_pair(std::move(pose), std::move(app));
  };
  const double a = train_probe_mi<float>(source, opt);
  const double b = train_probe_mi<float>(source, opt);
  REQUIRE(a == b);
  opt.seed = 22;
  const double c = train_probe_mi<float>(source, opt);
  REQUIRE(c != a);
}

TEST_CASE("model code source emits sampled pose codes") {
  Model<float> model(32);
  model.init(7);
  const auto pool = all_appearance_combos();
  auto source = model_code_source(model, pool, 99);
  auto [pose, app] = source(0, 6);
  REQUIRE(pose.b == 6);
  REQUIRE(pose.h == 4);
  REQUIRE(pose.w == 4);
  REQUIRE(pose.c == kCodeChannels);
  REQUIRE(app.same_shape(pose));

  auto [pose2, app2] = source(0, 6);
  REQUIRE(pose.data == pose2.data);  // same step, same codes
  REQUIRE(app.data == app2.data);
  auto [pose3, app3] = source(1, 6);
  REQUIRE(pose.data != pose3.data);

  // the pose stream must carry the reparameterization noise, not the mean
  PairBatch<float> pair = sample_pair_batch<float>(mix_seed(99, std::uint64_t(0), 0x9B0D), 6,
                                                   32, pool);
  Tensor<float> mean = model.encode_pose(pair.x2).mean;
  REQUIRE(pose.data != mean.data);
}

TEST_CASE("the marginal decoder learns a conditional mean") {
  MarginalTrainOptions opt;
  opt.steps = 700;
  opt.seed = 3;
  auto source = [](std::int64_t step, int b) {
    Rng rng(mix_seed(0xAB, std::uint64_t(step)));
    Tensor<float> codes(b, 4, 4, kCodeChannels);
    rng.fill_normal(codes.data.data(), codes.size());
    Tensor<float> targets(b, 32, 32, 3);
    for (auto& v : targets.data) v = 0.37f;
    return std::make_pair(std::move(codes), std::move(targets));
  };
  auto dec = train_marginal_decoder_fn<float>(32, source, opt);
  Rng rng(55);
  Tensor<float> out = dec.forward(random_codes(rng, 4));
  REQUIRE(out.b == 4);
  REQUIRE(out.h == 32);
  REQUIRE(out.c == 3);
  double acc = 0;
  for (float v : out.data) acc += v;
  REQUIRE(acc / out.size() == Catch::Approx(0.37).margin(0.05));
}

TEST_CASE("model-bound marginal decoders run on both factors") {
  Model<float> model(32);
  model.init(5);
  const auto pool = all_appearance_combos();
  MarginalTrainOptions opt;
  opt.steps = 12;
  for (auto factor : {MarginalFactor::pose, MarginalFactor::appearance}) {
    auto dec = train_marginal_decoder(model, factor, pool, opt);
    Tensor<float> code = model.encode_pose(sample_pair_batch<float>(1, 2, 32, pool).x2).mean;
    Tensor<float> out = dec.forward(code);
    REQUIRE(out.h == 32);
    for (float v : out.data) REQUIRE(std::isfinite(v));
  }
  REQUIRE(parse_marginal_factor("pose") == MarginalFactor::pose);
  REQUIRE(parse_marginal_factor("appearance") == MarginalFactor::appearance);
  REQUIRE_THROWS_AS(parse_marginal_factor("style"), ConfigError);
}

TEST_CASE("the transfer grid places headers and recombinations correctly") {
  Model<float> model(32);
  model.init(11);
  const auto pool = all_appearance_combos();
  std::vector<Tensor<float>> pose_targets, app_targets;
  for (int j = 0; j < 3; ++j)
    pose_targets.push_back(render_sprite<float>(pool[j], {0.2 + 0.3 * j, 0.5, 0.0}, 32));
  for (int i = 0; i < 2; ++i)
    app_targets.push_back(render_sprite<float>(pool[10 + i], {0.5, 0.3 + 0.4 * i, 1.0}, 32));

  Tensor<float> grid = transfer_grid(model, pose_targets, app_targets);
  REQUIRE(grid.h == 3 * (32 + 2) + 2);
  REQUIRE(grid.w == 4 * (32 + 2) + 2);

  // top-left stays at the background value
  auto corner = extract_cell(grid, 0, 0, 32, 32);
  for (float v : corner.data) REQUIRE(v == 0.25f);

  for (int j = 0; j < 3; ++j)
    REQUIRE(extract_cell(grid, 0, j + 1, 32, 32).data == pose_targets[j].data);
  for (int i = 0; i < 2; ++i)
    REQUIRE(extract_cell(grid, i + 1, 0, 32, 32).data == app_targets[i].data);

  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      Tensor<float> expect = model_transfer(model, app_targets[i], pose_targets[j]);
      REQUIRE(extract_cell(grid, i + 1, j + 1, 32, 32).data == expect.data);
    }

  REQUIRE_THROWS_AS(transfer_grid(model, {}, app_targets), ValidationError);
  REQUIRE_THROWS_AS(transfer_grid(model, pose_targets, {}), ValidationError);
}

TEST_CASE("a one-by-one grid against the same image reduces to reconstruction") {
  Model<float> model(32);
  model.init(13);
  auto img = render_sprite<float>({1, 4, 1}, {0.6, 0.4, 2.0}, 32);
  Tensor<float> grid = transfer_grid(model, {img}, {img});
  Tensor<float> cell = extract_cell(grid, 1, 1, 32, 32);
  Tensor<float> recon = model_reconstruct(model, img);
  REQUIRE(cell.data == recon.data);
}

TEST_CASE("held-out reconstruction loss is deterministic and positive") {
  Model<float> model(32);
  model.init(3);
  const auto pool = train_test_split_factors(0.25, 3).test;
  const double a = test_reconstruction_loss(model, pool, 17, 120);
  const double b = test_reconstruction_loss(model, pool, 17, 120);
  REQUIRE(a == b);
  REQUIRE(a > 0.0);
  REQUIRE(std::isfinite(a));
  REQUIRE(test_reconstruction_loss(model, pool, 18, 120) != a);
}

TEST_CASE("the ablation driver reports one row per mode and isolates failures") {
  TrainConfig base;
  base.total_steps = 3;
  base.batch_size = 4;
  base.classifier_channels = 8;
  base.seed = 5;
  ProbeOptions probe;
  probe.steps = 6;
  probe.eval_batches = 2;

  std::vector<std::string> trained;
  auto rows = run_ablation_suite<float>(
      base, {"e", "z", "b"},
      [&](Trainer<float>& t) {
        for (std::int64_t s = 0; s < t.config().total_steps; ++s) t.train_step(s);
        trained.push_back(t.config().ablation_mode);
      },
      probe);

  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].mode == "e");
  REQUIRE(rows[0].ok);
  REQUIRE(std::isfinite(rows[0].I_T_probe));
  REQUIRE(std::isfinite(rows[0].L_rec_test));
  REQUIRE(rows[0].gap == Catch::Approx(rows[0].I_T_probe - rows[0].I_T_ema).margin(1e-12));

  REQUIRE(rows[1].mode == "z");
  REQUIRE_FALSE(rows[1].ok);
  REQUIRE_FALSE(rows[1].error.empty());

  REQUIRE(rows[2].mode == "b");
  REQUIRE(rows[2].ok);
  REQUIRE(trained == std::vector<std::string>{"e", "b"});  // the bad mode never trains
}
