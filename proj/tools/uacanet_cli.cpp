// uacanet: train, evaluate, predict, selftest, synth.
//
// Exit codes: 0 success, 1 verification or runtime failure, 2 usage or input error.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <unistd.h>

#include "uacanet/uacanet.hpp"
#include "uacanet/verify/checks.hpp"

namespace fs = std::filesystem;
using namespace uacanet;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

/// Raised for bad user input; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelFlags {
  std::int64_t width = 0;
  std::int64_t side = 0;
  bool no_paa = false;
  bool no_uncertainty = false;

  bool any() const { return width > 0 || side > 0 || no_paa || no_uncertainty; }

  void apply(ModelConfig& m) const {
    if (width > 0) m.width = width;
    if (side > 0) m.side = side;
    if (no_paa) m.disable_paa = true;
    if (no_uncertainty) m.disable_uncertainty = true;
  }
};

struct CommonFlags {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string schedule;
  std::uint64_t seed = 0;
  bool seed_given = false;
  ModelFlags model;
  std::vector<std::string> overrides;  // "section.key=value"
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  cmd->add_option("--width", m.width, "UACA / PAA channel width")->check(CLI::PositiveNumber);
  cmd->add_option("--side", m.side, "input side length S (multiple of 32)")->check(CLI::PositiveNumber);
  cmd->add_flag("--no-paa", m.no_paa, "replace PAA blocks with identities");
  cmd->add_flag("--no-uncertainty", m.no_uncertainty, "drop the uncertain-area context (CANet ablation)");
}

/// Collects `--section.key=value` / `--section.key value` leftovers.
std::vector<std::string> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) {
      throw UsageError("unexpected argument '" + a + "'");
    }
    std::string body = a.substr(2);
    if (body.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) throw UsageError("override '" + a + "' needs a value");
      body += "=" + extras[++i];
    }
    out.push_back(body);
  }
  return out;
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.apply(read_toml(f.config));
  for (const auto& o : f.overrides) cfg.apply_override(o);
  f.model.apply(cfg.model);
  if (f.seed_given) cfg.seed = f.seed;
  if (!f.schedule.empty()) cfg.set("train.schedule", f.schedule);
  if (!f.out.empty()) cfg.out_dir = f.out;
  cfg.validate();
  return cfg;
}

/// Model config for commands that read a checkpoint: the stored one with any
/// explicitly given model settings layered on top, so a conflicting setting
/// surfaces as a config mismatch when the checkpoint is applied.
ModelConfig model_for_checkpoint(const CommonFlags& f, const CheckpointData& ckpt) {
  RunConfig cfg;
  cfg.model = checkpoint_model_config(ckpt);
  if (!f.config.empty()) cfg.apply(read_toml(f.config));
  for (const auto& o : f.overrides) cfg.apply_override(o);
  f.model.apply(cfg.model);
  cfg.model.validate();
  return cfg.model;
}

void append_log(std::ofstream& log, const StepResult& r) {
  nlohmann::json j{{"iter", r.iter},
                   {"lr", r.lr},
                   {"loss", r.loss},
                   {"per_map", {{"decoder", r.per_map[0]}, {"uaca1", r.per_map[1]}, {"uaca2", r.per_map[2]}, {"uaca3", r.per_map[3]}}}};
  log << j.dump() << '\n';
  log.flush();
}

int cmd_train(const CommonFlags& f) {
  RunConfig cfg = build_config(f);
  if (!f.data.empty()) cfg.train_root = f.data;
  if (cfg.train_root.empty()) throw UsageError("train: no dataset; pass --data ROOT or set data.train");
  const auto samples = load_dataset(cfg.train_root);

  UACANet<float> model(cfg.model, cfg.seed);
  AdamState<float> adam;
  std::int64_t start = 0;
  if (!f.checkpoint.empty()) {
    start = static_cast<std::int64_t>(load_checkpoint(f.checkpoint, model, &adam));
    std::cerr << "resuming from " << f.checkpoint << " at iteration " << start << '\n';
  }

  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  {
    std::ofstream echo(out / "config.json");
    echo << std::setw(2) << cfg.to_json() << '\n';
  }
  std::ofstream log(out / "train_log.jsonl", std::ios::app);
  if (!log) throw std::runtime_error("cannot open " + (out / "train_log.jsonl").string());

  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch;
  opt.seed = cfg.seed;
  opt.base_lr = cfg.lr;
  opt.schedule = cfg.schedule;
  opt.reduction = cfg.reduction;
  if (cfg.augment) opt.augmentation = AugmentConfig{};
  opt.start_iter = start;
  const std::int64_t iter_max = opt.iter_max(samples.size());
  const std::int64_t every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : opt.steps_per_epoch(samples.size());
  if (start >= iter_max) {
    std::cerr << "checkpoint already at iteration " << start << " of " << iter_max << "; nothing to do\n";
    return kOk;
  }
  std::cerr << "training on " << samples.size() << " samples, iterations " << start << ".." << iter_max << '\n';

  const auto t0 = std::chrono::steady_clock::now();
  train(model, samples, adam, opt, [&](const StepResult& r) {
    append_log(log, r);
    const auto done = static_cast<std::uint64_t>(r.iter + 1);
    if (static_cast<std::int64_t>(done) % every == 0 || static_cast<std::int64_t>(done) == iter_max) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06llu.uack", static_cast<unsigned long long>(done));
      save_checkpoint(out / name, model, adam, done);
      save_checkpoint(out / "latest.uack", model, adam, done);
    }
    if (r.iter % 10 == 0 || r.iter + 1 == iter_max) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "iter " << r.iter << " lr " << r.lr << " loss " << r.loss << " (" << secs << " s)\n";
    }
  });
  std::cout << "wrote " << (out / "latest.uack").string() << '\n';
  return kOk;
}

int cmd_eval(const CommonFlags& f) {
  if (f.checkpoint.empty()) throw UsageError("eval: --checkpoint is required");
  const auto ckpt = read_checkpoint(f.checkpoint);
  const ModelConfig mc = model_for_checkpoint(f, ckpt);
  UACANet<float> model(mc, 0);
  apply_checkpoint(ckpt, model, static_cast<AdamState<float>*>(nullptr));

  std::string root = f.data;
  std::string out_dir = f.out;
  if (!f.config.empty()) {
    RunConfig cfg;
    cfg.apply(read_toml(f.config));
    if (root.empty()) root = cfg.test_root;
    if (out_dir.empty()) out_dir = cfg.out_dir;
  }
  if (root.empty()) throw UsageError("eval: no dataset; pass --data ROOT or set data.test");
  if (out_dir.empty()) out_dir = ".";
  const auto report = evaluate_dataset(model, list_dataset(root));
  fs::create_directories(out_dir);
  report.write_json(fs::path(out_dir) / "eval_report.json");
  report.write_csv(fs::path(out_dir) / "eval_per_image.csv");
  std::cout << std::fixed << std::setprecision(4) << "images " << report.count() << "  mDice " << report.mean_dice
            << "  mIoU " << report.mean_iou << "  MAE " << report.mean_mae << '\n';
  return kOk;
}

int cmd_predict(const CommonFlags& f, const std::string& image_path, bool debug_maps) {
  if (f.checkpoint.empty()) throw UsageError("predict: --checkpoint is required");
  if (image_path.empty()) throw UsageError("predict: --image is required");
  const auto ckpt = read_checkpoint(f.checkpoint);
  UACANet<float> model(model_for_checkpoint(f, ckpt), 0);
  apply_checkpoint(ckpt, model, static_cast<AdamState<float>*>(nullptr));

  const auto image = read_image(image_path);
  const auto h = image.dim(1), w = image.dim(2);
  const auto pred = predict(model, image);
  const fs::path out = f.out.empty() ? fs::path(".") : fs::path(f.out);
  fs::create_directories(out);
  const std::string stem = fs::path(image_path).stem().string();
  write_pgm(out / (stem + "_prob.pgm"), pred.probability.data(), h, w);
  std::cout << "wrote " << (out / (stem + "_prob.pgm")).string() << '\n';
  if (debug_maps) {
    // Area maps live in [0, 0.5]; stretched by 2 so 0.5 maps to 255.
    NoGradGuard no_grad;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& a = pred.raw.stages[s].areas;
      const std::pair<const char*, const Tensor<float>*> maps[] = {{"fg", &a.fg}, {"bg", &a.bg}, {"unc", &a.unc}};
      for (const auto& [tag, m] : maps) {
        const auto full = mul_scalar(bilinear_resize(*m, h, w), 2.0f);
        const auto path = out / (stem + "_uaca" + std::to_string(s + 1) + "_" + tag + ".pgm");
        write_pgm(path, full.data(), h, w);
      }
    }
    std::cout << "wrote 9 area maps to " << out.string() << '\n';
  }
  return kOk;
}

int cmd_selftest() {
  const auto scratch = fs::temp_directory_path() / ("uacanet_selftest_" + std::to_string(::getpid()));
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = verify::run_selftest(scratch);
  std::error_code ec;
  fs::remove_all(scratch, ec);
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(40) << r.name << std::setw(36) << r.detail
              << std::right << std::fixed << std::setprecision(2) << r.seconds << " s\n";
    failed += r.passed ? 0 : 1;
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << results.size() - failed << "/" << results.size() << " checks passed in " << std::setprecision(1)
            << total << " s\n";
  if (failed) {
    std::cerr << "failures:";
    for (const auto& r : results)
      if (!r.passed) std::cerr << "\n  " << r.name << ": " << r.detail;
    std::cerr << '\n';
    return kFailure;
  }
  return kOk;
}

int cmd_synth(const std::string& out, std::size_t count, std::int64_t side, std::uint64_t seed, std::size_t first) {
  if (out.empty()) throw UsageError("synth: --out is required");
  write_dataset(out, synth_blobs(count, side, seed, first));
  std::cout << "wrote " << count << " samples to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UACANet polyp segmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "uacanet 1.0");

  CommonFlags flags;
  std::string image;
  bool debug_maps = false;
  std::size_t synth_count = 64, synth_first = 0;
  std::int64_t synth_side = 64;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config, "TOML run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint to load (train: resume)");
    cmd->add_option("--data", flags.data, "dataset root with images/ and masks/");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--seed", flags.seed, "random seed")->each([&](const std::string&) { flags.seed_given = true; });
    add_model_flags(cmd, flags.model);
    cmd->allow_extras();
  };

  auto* train_cmd = app.add_subcommand("train", "train a model");
  common(train_cmd);
  train_cmd->add_option("--schedule", flags.schedule, "learning-rate schedule form")
      ->check(CLI::IsMember({"literal", "conventional"}));

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  common(eval_cmd);

  auto* predict_cmd = app.add_subcommand("predict", "write the probability map of one image");
  common(predict_cmd);
  predict_cmd->add_option("--image", image, "input PPM/PGM image");
  predict_cmd->add_flag("--debug-maps", debug_maps, "also write each stage's m_f, m_b, m_u");

  auto* selftest_cmd = app.add_subcommand("selftest", "run the built-in verification suite");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic blob dataset");
  synth_cmd->add_option("--out", flags.out, "dataset root to create")->required();
  synth_cmd->add_option("--count", synth_count, "number of samples")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--side", synth_side, "image side")->check(CLI::Range(32, 4096));
  synth_cmd->add_option("--seed", flags.seed, "random seed");
  synth_cmd->add_option("--first-index", synth_first, "index of the first sample");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (auto* cmd : {train_cmd, eval_cmd, predict_cmd})
      if (cmd->parsed()) flags.overrides = dotted_overrides(cmd->remaining());
    if (train_cmd->parsed()) return cmd_train(flags);
    if (eval_cmd->parsed()) return cmd_eval(flags);
    if (predict_cmd->parsed()) return cmd_predict(flags, image, debug_maps);
    if (selftest_cmd->parsed()) return cmd_selftest();
    if (synth_cmd->parsed()) return cmd_synth(flags.out, synth_count, synth_side, flags.seed, synth_first);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kUsage;
  } catch (const PnmError& e) {
    std::cerr << "image error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
