// Command-line front end: training runs, evaluations, the ablation suite,
// transfer grids, and dataset export. Every command writes into its own run
// directory under the output root and finishes by emitting a manifest; a
// command whose manifest is already complete is a no-op unless --force.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "disent/disent.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string code_version() {
#ifdef DISENT_CODE_VERSION
  return DISENT_CODE_VERSION;
#else
  return "unknown";
#endif
}

fs::path output_root() {
  if (const char* env = std::getenv("DISENT_OUT_ROOT")) return fs::path(env);
  return fs::path("runs");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw disent::IoError("cannot write " + path.string());
  out << text;
}

std::optional<json> read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) return std::nullopt;
  json j;
  in >> j;
  return j;
}

bool manifest_complete(const fs::path& dir) {
  const auto m = read_manifest(dir);
  return m && m->value("complete", false);
}

// Every listed file must exist when the manifest is written.
void write_manifest(const fs::path& dir, ordered_json manifest,
                    const std::vector<std::string>& files) {
  for (const auto& f : files)
    if (!fs::exists(dir / f))
      throw disent::IoError("manifest lists missing file: " + (dir / f).string());
  manifest["files"] = files;
  manifest["complete"] = true;
  manifest["code_version"] = code_version();
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct StepCheckpoint {
  std::int64_t step;
  fs::path path;
};

std::vector<StepCheckpoint> list_checkpoints(const fs::path& dir) {
  std::vector<StepCheckpoint> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("step_") && name.ends_with(".ckpt"))
      out.push_back({std::stoll(name.substr(5, name.size() - 10)), e.path()});
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.step < b.step; });
  return out;
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%08lld.ckpt", static_cast<long long>(step));
  return buf;
}

// Keeps metrics records up to and including `step`, drops the rest.
void truncate_metrics(const fs::path& path, std::int64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<std::int64_t>() <= step) kept += line + "\n";
  }
  in.close();
  write_text(path, kept);
}

// Shared by train and ablate: bring the run directory to a completed state,
// resuming from the newest checkpoint when one exists.
void ensure_trained(disent::Trainer<float>& trainer, const fs::path& dir, bool force) {
  const auto& cfg = trainer.config();
  if (force) fs::remove_all(dir);
  fs::create_directories(dir / "checkpoints");
  write_text(dir / "config.txt", disent::config_to_kv(cfg));

  std::int64_t start_step = 0;
  const auto ckpts = list_checkpoints(dir / "checkpoints");
  if (!ckpts.empty()) {
    const auto& latest = ckpts.back();
    disent::CheckpointMeta meta = disent::peek_checkpoint(latest.path.string());
    if (disent::config_to_json(meta.config) != disent::config_to_json(cfg))
      throw disent::ConfigError("checkpoint config in " + dir.string() +
                                " does not match the requested run; use --force to retrain");
    disent::load_checkpoint(latest.path.string(), trainer.all_params());
    trainer.restore(meta);
    start_step = meta.step;
    truncate_metrics(dir / "metrics.jsonl", start_step);
    std::cout << "resuming from step " << start_step << "\n";
  } else {
    write_text(dir / "metrics.jsonl", "");
  }
  if (start_step >= cfg.total_steps) return;

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::app);
  if (!metrics) throw disent::IoError("cannot open metrics log in " + dir.string());
  disent::RunHooks hooks;
  hooks.on_metrics = [&](const disent::StepMetrics& m) {
    metrics << m.to_json().dump() << "\n";
    if (m.step % 500 == 0) {
      metrics.flush();
      std::cout << "step " << m.step << "/" << cfg.total_steps << " L=" << m.L
                << " I_T=" << m.I_T_ema << " I_T'=" << m.I_Tprime_ema
                << " lambda=" << m.lambda << " gamma=" << m.gamma << std::endl;
    }
  };
  hooks.on_checkpoint = [&](std::int64_t done) {
    metrics.flush();
    disent::save_checkpoint((dir / "checkpoints" / checkpoint_name(done)).string(),
                            trainer.meta(done), trainer.all_params());
  };
  disent::run_training(trainer, start_step, hooks);
}

void finish_train_manifest(const fs::path& dir, const disent::TrainConfig& cfg,
                           const std::string& started) {
  std::vector<std::string> files{"config.txt", "metrics.jsonl"};
  for (const auto& c : list_checkpoints(dir / "checkpoints"))
    files.push_back("checkpoints/" + c.path.filename().string());
  ordered_json m{{"command", "train"},
                 {"config", disent::config_to_json(cfg)},
                 {"seed", cfg.seed},
                 {"started_at", started},
                 {"finished_at", now_iso8601()},
                 {"metrics", "metrics.jsonl"},
                 {"final_checkpoint",
                  "checkpoints/" + checkpoint_name(cfg.total_steps)},
                 {"completed_steps", cfg.total_steps}};
  write_manifest(dir, std::move(m), files);
}

struct ConfigCli {
  std::string config_path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key=value lines)");
    cmd->add_option("--set", overrides, "override, key=value (repeatable)")
        ->type_name("KEY=VALUE");
    // mirror the config fields as flags; stored as overrides to keep
    // precedence uniform (file, then --set, then explicit flags)
    for (const char* key :
         {"resolution", "batch_size", "total_steps", "steps", "learning_rate", "adam_beta1",
          "adam_beta2", "epsilon", "mu", "l_gamma", "b_gamma", "ema_decay", "ablation_mode",
          "seed", "checkpoint_interval", "holdout_fraction", "classifier_channels"}) {
      cmd->add_option_function<std::string>(
             std::string("--") + key,
             [this, key](const std::string& v) { flag_overrides.push_back(std::string(key) + "=" + v); },
             std::string("config field ") + key)
          ->type_name("VALUE");
    }
  }

  disent::TrainConfig resolve() const {
    disent::TrainConfig cfg;
    if (!config_path.empty()) cfg = disent::load_config_file(config_path);
    for (const auto& kv : overrides) disent::apply_config_line(cfg, kv);
    for (const auto& kv : flag_overrides) disent::apply_config_line(cfg, kv);
    cfg.validate();
    return cfg;
  }

  std::vector<std::string> flag_overrides;
};

std::string default_run_name(const disent::TrainConfig& cfg) {
  return "train_" + cfg.ablation_mode + "_s" + std::to_string(cfg.seed) + "_r" +
         std::to_string(cfg.resolution) + "_t" + std::to_string(cfg.total_steps);
}

int cmd_train(const ConfigCli& cc, std::string out_dir, bool force) {
  const disent::TrainConfig cfg = cc.resolve();
  const fs::path dir =
      out_dir.empty() ? output_root() / default_run_name(cfg) : fs::path(out_dir);
  if (!force && manifest_complete(dir)) {
    std::cout << "run already complete: " << dir.string() << "\n";
    return 0;
  }
  const std::string started = now_iso8601();
  disent::Trainer<float> trainer(cfg);
  ensure_trained(trainer, dir, force);
  finish_train_manifest(dir, cfg, started);
  std::cout << "done: " << dir.string() << "\n";
  return 0;
}

// Rebuilds the trainer a checkpoint was written by and restores its state.
std::unique_ptr<disent::Trainer<float>> trainer_from_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw disent::ConfigError("checkpoint not found: " + path);
  disent::CheckpointMeta meta = disent::peek_checkpoint(path);
  auto trainer = std::make_unique<disent::Trainer<float>>(meta.config);
  disent::load_checkpoint(path, trainer->all_params());
  trainer->restore(meta);
  return trainer;
}

int cmd_eval(const std::string& checkpoint, const std::string& metric, std::string out_dir,
             int n, std::int64_t probe_steps, std::int64_t marginal_steps, int rows, int cols,
             std::uint64_t seed, bool force) {
  static const std::vector<std::string> known{"triplet_mse", "probe", "marginal_pose",
                                              "marginal_appearance", "grid"};
  if (std::find(known.begin(), known.end(), metric) == known.end())
    throw disent::ConfigError("unknown metric '" + metric + "'");

  auto trainer = trainer_from_checkpoint(checkpoint);
  const auto& cfg = trainer->config();
  const fs::path dir = out_dir.empty()
                           ? output_root() / ("eval_" + metric + "_" +
                                              disent::sha256_hex(checkpoint).substr(0, 8))
                           : fs::path(out_dir);
  if (!force && manifest_complete(dir)) {
    std::cout << "evaluation already complete: " << dir.string() << "\n";
    return 0;
  }
  fs::create_directories(dir);
  const std::string started = now_iso8601();
  const std::uint64_t eval_seed = seed ? seed : disent::mix_seed(cfg.seed, 0xEA1);

  ordered_json result{{"metric", metric}, {"checkpoint", checkpoint}, {"seed", eval_seed}};
  std::vector<std::string> files{"result.json"};

  if (metric == "triplet_mse") {
    auto ev = disent::evaluate_transfer(trainer->model(), eval_seed, n,
                                        trainer->split().test);
    result["transfer"] = {{"mean", ev.transfer.mean},   {"median", ev.transfer.median},
                          {"p5", ev.transfer.p5},       {"p25", ev.transfer.p25},
                          {"p75", ev.transfer.p75},     {"p95", ev.transfer.p95},
                          {"count", ev.transfer.per_triplet_mse.size()}};
    result["reconstruction"] = {{"mean", ev.reconstruction.mean},
                                {"median", ev.reconstruction.median},
                                {"p5", ev.reconstruction.p5},
                                {"p25", ev.reconstruction.p25},
                                {"p75", ev.reconstruction.p75},
                                {"p95", ev.reconstruction.p95}};
  } else if (metric == "probe") {
    disent::ProbeOptions opt;
    opt.steps = probe_steps;
    opt.seed = eval_seed;
    opt.channels = cfg.resolved_classifier_channels();
    auto rep = disent::probe_entanglement(trainer->model(), trainer->i_t().ema_value,
                                          trainer->split().test, opt);
    result["I_T_train_critic"] = rep.I_T_train_critic;
    result["I_T_probe"] = rep.I_T_probe;
    result["gap"] = rep.gap;
  } else if (metric == "marginal_pose" || metric == "marginal_appearance") {
    const auto factor = metric == "marginal_pose" ? disent::MarginalFactor::pose
                                                  : disent::MarginalFactor::appearance;
    disent::MarginalTrainOptions opt;
    opt.steps = marginal_steps;
    opt.seed = eval_seed;
    auto dec = disent::train_marginal_decoder(trainer->model(), factor,
                                              trainer->split().test, opt);
    // render a strip of marginal reconstructions beside their sources
    auto pair = disent::sample_pair_batch<float>(disent::mix_seed(eval_seed, 0x51DE), 8,
                                                 cfg.resolution, trainer->split().test);
    const auto& src = factor == disent::MarginalFactor::pose ? pair.x2 : pair.x1;
    disent::Tensor<float> codes =
        factor == disent::MarginalFactor::pose
            ? trainer->model().encode_pose(pair.x2).mean
            : trainer->model().encode_appearance(pair.x1).feature_map;
    disent::Tensor<float> out = dec.forward(codes);
    std::vector<disent::Tensor<float>> cells;
    for (int i = 0; i < 8; ++i) {
      disent::Tensor<float> a(1, cfg.resolution, cfg.resolution, 3);
      disent::Tensor<float> b(1, cfg.resolution, cfg.resolution, 3);
      std::copy(src.sample(i), src.sample(i) + src.sample_size(), a.data.begin());
      std::copy(out.sample(i), out.sample(i) + out.sample_size(), b.data.begin());
      cells.push_back(std::move(a));
      cells.push_back(std::move(b));
    }
    disent::write_png((dir / "marginal.png").string(), disent::compose_grid(cells, 8, 2));
    files.push_back("marginal.png");
    result["image"] = "marginal.png";
  } else {  // grid
    if (rows < 1 || cols < 1)
      throw disent::ConfigError("grid needs rows >= 1 and cols >= 1");
    disent::Rng rng(disent::mix_seed(eval_seed, 0x62D));
    const auto& pool = trainer->split().test;
    auto draw = [&] {
      disent::AppearanceFactors a = pool[rng.below(pool.size())];
      disent::PoseFactors p{rng.uniform(), rng.uniform(),
                            rng.uniform(0.0, 2.0 * std::numbers::pi)};
      return disent::render_sprite<float>(a, p, cfg.resolution);
    };
    std::vector<disent::Tensor<float>> pose_targets, app_targets;
    for (int j = 0; j < cols; ++j) pose_targets.push_back(draw());
    for (int i = 0; i < rows; ++i) app_targets.push_back(draw());
    auto grid = disent::transfer_grid(trainer->model(), pose_targets, app_targets);
    disent::write_png((dir / "grid.png").string(), grid);
    files.push_back("grid.png");
    result["image"] = "grid.png";
    result["rows"] = rows;
    result["cols"] = cols;
  }

  write_text(dir / "result.json", result.dump(2) + "\n");
  write_manifest(dir,
                 ordered_json{{"command", "eval"},
                              {"metric", metric},
                              {"checkpoint", checkpoint},
                              {"started_at", started},
                              {"finished_at", now_iso8601()}},
                 files);
  std::cout << result.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const ConfigCli& cc, const std::string& modes_csv, std::string out_dir,
               std::int64_t probe_steps, bool force) {
  const disent::TrainConfig base = cc.resolve();
  std::vector<std::string> modes;
  std::stringstream ss(modes_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    disent::parse_ablation_mode(item);  // validate every letter before any training
    modes.push_back(item);
  }
  if (modes.empty()) throw disent::ConfigError("no ablation modes given");

  const fs::path dir = out_dir.empty()
                           ? output_root() / ("ablate_s" + std::to_string(base.seed) + "_t" +
                                              std::to_string(base.total_steps))
                           : fs::path(out_dir);
  if (!force && manifest_complete(dir)) {
    std::cout << "ablation already complete: " << dir.string() << "\n";
    return 0;
  }
  fs::create_directories(dir);
  const std::string started = now_iso8601();

  disent::ProbeOptions probe;
  probe.steps = probe_steps;
  auto rows = disent::run_ablation_suite<float>(
      base, modes,
      [&](disent::Trainer<float>& trainer) {
        const fs::path mode_dir = dir / ("mode_" + trainer.config().ablation_mode);
        ensure_trained(trainer, mode_dir, false);
      },
      probe);

  ordered_json table = ordered_json::array();
  bool all_ok = true;
  for (const auto& r : rows) {
    table.push_back(ordered_json{{"mode", r.mode},
                                 {"ok", r.ok},
                                 {"error", r.error},
                                 {"I_T_ema", r.I_T_ema},
                                 {"I_T_probe", r.I_T_probe},
                                 {"gap", r.gap},
                                 {"L_rec_test", r.L_rec_test}});
    all_ok = all_ok && r.ok;
    std::cout << "mode " << r.mode << ": "
              << (r.ok ? "I_T=" + std::to_string(r.I_T_ema) +
                             " I_T_probe=" + std::to_string(r.I_T_probe) +
                             " L_rec_test=" + std::to_string(r.L_rec_test)
                       : "FAILED " + r.error)
              << "\n";
  }
  write_text(dir / "table.json", table.dump(2) + "\n");
  if (all_ok)
    write_manifest(dir,
                   ordered_json{{"command", "ablate"},
                                {"config", disent::config_to_json(base)},
                                {"modes", modes},
                                {"started_at", started},
                                {"finished_at", now_iso8601()}},
                   {"table.json"});
  return all_ok ? 0 : 1;
}

int cmd_export(std::string out_dir, int count, int resolution, std::uint64_t seed,
               const std::string& split, double holdout, bool force) {
  const fs::path dir = out_dir.empty()
                           ? output_root() / ("dataset_s" + std::to_string(seed))
                           : fs::path(out_dir);
  if (!force && manifest_complete(dir)) {
    std::cout << "export already complete: " << dir.string() << "\n";
    return 0;
  }
  const std::string started = now_iso8601();
  std::vector<disent::AppearanceFactors> pool;
  if (split == "all") {
    pool = disent::all_appearance_combos();
  } else {
    auto s = disent::train_test_split_factors(holdout, disent::mix_seed(seed, 0x40));
    pool = split == "test" ? s.test : s.train;
    if (split != "test" && split != "train")
      throw disent::ConfigError("split must be train, test, or all");
  }
  auto files = disent::export_pair_dataset<float>(dir.string(), seed, count, resolution, pool);
  write_manifest(dir,
                 ordered_json{{"command", "export"},
                              {"seed", seed},
                              {"count", count},
                              {"resolution", resolution},
                              {"split", split},
                              {"started_at", started},
                              {"finished_at", now_iso8601()}},
                 files);
  std::cout << "exported " << count << " pairs to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangling laboratory"};
  app.require_subcommand(1);

  ConfigCli train_cfg;
  std::string train_out;
  bool train_force = false;
  auto* train = app.add_subcommand("train", "run or resume a training run");
  train_cfg.attach(train);
  train->add_option("--out", train_out, "run directory (default under output root)");
  train->add_flag("--force", train_force, "retrain even if the run is complete");

  std::string eval_ckpt, eval_metric = "triplet_mse", eval_out;
  int eval_n = 1000, eval_rows = 6, eval_cols = 6;
  std::int64_t eval_probe_steps = 5000, eval_marginal_steps = 2000;
  std::uint64_t eval_seed = 0;
  bool eval_force = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--metric", eval_metric,
                   "triplet_mse | probe | marginal_pose | marginal_appearance | grid");
  eval->add_option("--n", eval_n, "number of evaluation triplets/pairs");
  eval->add_option("--probe_steps", eval_probe_steps, "probe training steps");
  eval->add_option("--marginal_steps", eval_marginal_steps, "marginal decoder training steps");
  eval->add_option("--rows", eval_rows, "grid rows (appearance targets)");
  eval->add_option("--cols", eval_cols, "grid cols (pose targets)");
  eval->add_option("--seed", eval_seed, "evaluation seed (default derived from config)");
  eval->add_option("--out", eval_out, "output directory");
  eval->add_flag("--force", eval_force, "re-evaluate even if complete");

  ConfigCli ablate_cfg;
  std::string ablate_modes = "a,b,c,d,e", ablate_out;
  std::int64_t ablate_probe_steps = 5000;
  bool ablate_force = false;
  auto* ablate = app.add_subcommand("ablate", "train and compare ablation modes");
  ablate_cfg.attach(ablate);
  ablate->add_option("--modes", ablate_modes, "comma-separated mode letters");
  ablate->add_option("--probe_steps", ablate_probe_steps, "probe training steps");
  ablate->add_option("--out", ablate_out, "suite directory");
  ablate->add_flag("--force", ablate_force, "redo even if complete");

  std::string grid_ckpt, grid_out;
  int grid_rows = 6, grid_cols = 6;
  std::uint64_t grid_seed = 0;
  bool grid_force = false;
  auto* grid = app.add_subcommand("grid", "render a pose/appearance transfer grid");
  grid->add_option("--checkpoint", grid_ckpt, "checkpoint file")->required();
  grid->add_option("--rows", grid_rows, "appearance targets");
  grid->add_option("--cols", grid_cols, "pose targets");
  grid->add_option("--seed", grid_seed, "target sampling seed");
  grid->add_option("--out", grid_out, "output directory");
  grid->add_flag("--force", grid_force, "re-render even if complete");

  std::string export_out, export_split = "all";
  int export_count = 64, export_resolution = 32;
  std::uint64_t export_seed = 1;
  double export_holdout = 0.25;
  bool export_force = false;
  auto* exp = app.add_subcommand("export", "write a sprite dataset to disk");
  exp->add_option("--out", export_out, "output directory");
  exp->add_option("--count", export_count, "number of pairs");
  exp->add_option("--resolution", export_resolution, "image resolution");
  exp->add_option("--seed", export_seed, "sampling seed");
  exp->add_option("--split", export_split, "train | test | all");
  exp->add_option("--holdout", export_holdout, "holdout fraction for the split");
  exp->add_flag("--force", export_force, "re-export even if complete");

  try {
    app.parse(argc, argv);
    if (*train) return cmd_train(train_cfg, train_out, train_force);
    if (*eval)
      return cmd_eval(eval_ckpt, eval_metric, eval_out, eval_n, eval_probe_steps,
                      eval_marginal_steps, eval_rows, eval_cols, eval_seed, eval_force);
    if (*ablate)
      return cmd_ablate(ablate_cfg, ablate_modes, ablate_out, ablate_probe_steps,
                        ablate_force);
    if (*grid)
      return cmd_eval(grid_ckpt, "grid", grid_out, 0, 0, 0, grid_rows, grid_cols, grid_seed,
                      grid_force);
    if (*exp)
      return cmd_export(export_out, export_count, export_resolution, export_seed,
                        export_split, export_holdout, export_force);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const disent::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const disent::ValidationError& e) {
    std::cerr << "invalid request: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
