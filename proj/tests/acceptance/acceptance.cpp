// Runs the eight acceptance criteria and prints one PASS/FAIL line each.
#include <CLI11.hpp>

#include <cstdio>

#include "uacanet/uacanet.hpp"
#include "uacanet/verify/checks.hpp"

using namespace uacanet;
using verify::Clock;
using verify::seconds_since;

namespace {

struct Criterion {
  int id;
  std::string title;
  double budget_s;
  std::function<std::pair<bool, std::string>()> body;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

ModelConfig overfit_config() {
  ModelConfig c;
  c.width = 16;
  c.side = 64;
  return c;
}

double train_and_score(const ModelConfig& cfg, const std::vector<Sample>& train_set, const TrainOptions& opt,
                       std::uint64_t seed, const std::vector<Sample>& eval_set, UncertaintyProfile* profile) {
  UACANet<float> model(cfg, seed);
  AdamState<float> adam;
  train(model, train_set, adam, opt);
  if (profile) *profile = uncertainty_profile(model, eval_set);
  return evaluate_samples(model, eval_set).mean_dice;
}

std::pair<bool, std::string> ac1() {
  const auto e = verify::area_identity_errors(10000, 2024);
  return {e.sum_to_half <= 1e-6 && e.disjoint <= 1e-6 && e.reconstruction <= 1e-6 && e.negativity == 0.0,
          "sum " + sci(e.sum_to_half) + ", product " + sci(e.disjoint) + ", reconstruction " + sci(e.reconstruction)};
}

std::pair<bool, std::string> ac2() {
  const double e = verify::similarity_partition_error(100, 2025);
  return {e <= 1e-6, "max |s_f+s_b+s_u-1| " + sci(e)};
}

std::pair<bool, std::string> ac3() {
  const auto e = verify::oracle_errors(12, 2026);
  return {e.worst() <= 1e-5, "horizontal " + sci(e.horizontal) + ", vertical " + sci(e.vertical) + ", paa " +
                                 sci(e.paa) + ", context vectors " + sci(e.context_vectors) + ", similarity " + sci(e.similarity) +
                                 ", aggregate " + sci(std::max(e.aggregate, e.uaca_context))};
}

std::pair<bool, std::string> ac4() {
  double ops = 0, blocks = 0;
  std::string ops_name, blocks_name;
  for (const auto& r : verify::op_grad_checks(20, 4000))
    if (r.error >= ops) ops = r.error, ops_name = r.name;
  for (const auto& r : verify::block_grad_checks(4, 4100))
    if (r.error >= blocks) blocks = r.error, blocks_name = r.name;
  const auto model = verify::model_grad_check(20, 4200, 8, 32);
  return {ops < 1e-4 && blocks < 1e-4 && model.max_rel_error < 1e-3 && model.coordinates == 20,
          "ops " + sci(ops) + " (" + ops_name + "), blocks " + sci(blocks) + " (" + blocks_name +
              "), end-to-end " + sci(model.max_rel_error) + " over 20 params"};
}

std::pair<bool, std::string> ac5() {
  bool exact = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig cfg;
    cfg.width = 8;
    cfg.side = 64;
    cfg.backbone_widths = {8, 8, 16, 16};
    UACANet<float> model(cfg, seed);
    model.zero_uaca_heads();
    std::mt19937_64 rng(seed);
    const auto images = Tensor<float>::uniform({2, 3, 64, 64}, rng, 0.0f, 1.0f);
    NoGradGuard no_grad;
    const auto out = model.forward(images);
    Tensor<float> guidance = out.decoder_logit;
    for (const auto& stage : out.stages) {
      const auto expected = bilinear_resize(guidance, stage.logit.dim(2), stage.logit.dim(3));
      exact = exact && stage.logit.values() == expected.values();
      guidance = stage.logit;
    }
  }
  return {exact, exact ? "three stages bit-identical over 3 seeds" : "stage logit differs from resampled guidance"};
}

std::pair<bool, std::string> ac6() {
  const auto data = synth_blobs(8, 64, 42);
  TrainOptions opt;
  opt.epochs = 500;  // 8 samples, batch 8: one iteration per epoch
  opt.batch_size = 8;
  opt.seed = 42;
  opt.base_lr = 1e-3;
  const double full = train_and_score(overfit_config(), data, opt, 42, data, nullptr);
  std::string msg = "full mDice " + fixed(full);
  bool ablations_ok = true;
  for (int variant = 0; variant < 2; ++variant) {
    ModelConfig c = overfit_config();
    (variant == 0 ? c.disable_uncertainty : c.disable_paa) = true;
    try {
      const double d = train_and_score(c, data, opt, 42, data, nullptr);
      msg += std::string(variant == 0 ? ", no-uncertainty " : ", no-paa ") + fixed(d);
    } catch (const std::exception& e) {
      ablations_ok = false;
      msg += std::string(", ablation failed: ") + e.what();
    }
  }
  return {full >= 0.95 && ablations_ok, msg};
}

std::pair<bool, std::string> ac7() {
  const auto train_set = synth_blobs(64, 64, 7);
  const auto test_set = synth_blobs(32, 64, 7, 64);
  TrainOptions opt;
  opt.epochs = 100;
  opt.batch_size = 8;
  opt.seed = 7;
  opt.base_lr = 1e-3;
  opt.augmentation = AugmentConfig{};
  UncertaintyProfile profile;
  const double dice = train_and_score(overfit_config(), train_set, opt, 7, test_set, &profile);
  return {dice >= 0.85 && profile.ratio() >= 2.0,
          "held-out mDice " + fixed(dice) + ", m_u near boundary " + sci(profile.near_boundary) + " vs elsewhere " +
              sci(profile.elsewhere) + " (ratio " + fixed(profile.ratio()) + ")"};
}

std::pair<bool, std::string> ac8(const std::filesystem::path& scratch) {
  const PolySchedule s{1e-4, 1000};
  const bool lr_ok = poly_lr(0, s) == 1e-4 && poly_lr(1000, s) == 0.0 &&
                     std::abs(poly_lr(500, s) - 4.64113268731853e-5) < 1e-12;
  const std::vector<float> g{1, 0, 1, 1, 0, 0}, p{1, 1, 0, 0}, q{0, 1, 1, 0}, z(4, 0.0f);
  const bool metric_ok = dice_score<float>(g, g) == 1.0 && iou_score<float>(g, g) == 1.0 &&
                         mae<float>(g, g) == 0.0 && dice_score<float>(p, q) == 0.5 &&
                         std::abs(iou_score<float>(p, q) - 1.0 / 3.0) < 1e-15 && mae<float>(p, q) == 0.5 &&
                         dice_score<float>(z, z) == 1.0;
  std::string detail;
  const bool ckpt_ok = verify::checkpoint_roundtrip(scratch, &detail);
  return {lr_ok && metric_ok && ckpt_ok, std::string("poly_lr ") + (lr_ok ? "ok" : "WRONG") + ", metrics " +
                                             (metric_ok ? "ok" : "WRONG") + ", checkpoint " + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UACANet acceptance criteria"};
  std::string scratch = (std::filesystem::temp_directory_path() / "uacanet_acceptance").string();
  std::vector<int> only;
  app.add_option("--scratch", scratch, "directory for temporary files");
  app.add_option("--only", only, "run only these criterion numbers");
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(scratch);

  const std::vector<Criterion> criteria{
      {1, "area-map identities", 1, ac1},
      {2, "similarity partition of unity", 5, ac2},
      {3, "loop-oracle equivalence", 30, ac3},
      {4, "gradient checks", 120, ac4},
      {5, "zero-head residual chain", 60, ac5},
      {6, "overfit 8 samples + ablations", 600, ac6},
      {7, "generalization + boundary uncertainty", 1800, ac7},
      {8, "schedule, metrics, checkpoint", 60, [&] { return ac8(scratch); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = Clock::now();
    std::pair<bool, std::string> result;
    try {
      result = c.body();
    } catch (const std::exception& e) {
      result = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs < c.budget_s;
    const bool ok = result.first && in_time;
    failures += ok ? 0 : 1;
    std::printf("AC%d %s  %-40s %8.2fs (budget %.0fs)  %s%s\n", c.id, ok ? "PASS" : "FAIL", c.title.c_str(), secs,
                c.budget_s, result.second.c_str(), in_time ? "" : "  [over time budget]");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
