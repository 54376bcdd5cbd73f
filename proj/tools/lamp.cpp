// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0
//
// lamp — pruning toolkit CLI.
//
//   lamp score    <bundle> --kind lamp|magnitude --out scores.json [--mask DIR]
//   lamp prune    <bundle> --scheme S (--survival P | --kappa K) --mask-out DIR
//                 [--mask-in DIR] [--report FILE] [--format json|tsv]
//   lamp iterate  <bundle> --scheme S --rounds T --out-dir DIR [--fraction R]
//                 [--format json|tsv]
//   lamp apply    <bundle> --mask DIR --out DIR
//   lamp verify   --suite NAME [--trials N] [--seed N] [--samples N]
//
// Exit codes: 0 success, 1 property failure, 2 input/validation error.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lamp/allocation.hpp"
#include "lamp/errors.hpp"
#include "lamp/model.hpp"
#include "lamp/scoring.hpp"
#include "lamp/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitValidationError = 2;

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw lamp::IoError("cannot open " + tmp.string());
    out << text;
    if (!out) throw lamp::IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw lamp::IoError("rename failed for " + path.string());
}

struct ScoreOptions {
  std::string bundle_path;
  std::string mask_path;
  std::string kind = "lamp";
  std::string out_path;
};

int cmd_score(const ScoreOptions& opt) {
  lamp::ModelBundle bundle = lamp::load_bundle(opt.bundle_path);
  lamp::MaskBundle mask = opt.mask_path.empty()
                              ? lamp::MaskBundle::all_ones(bundle)
                              : lamp::load_mask(opt.mask_path, bundle);

  nlohmann::json doc;
  for (size_t i = 0; i < bundle.layers.size(); ++i) {
    const lamp::LayerSpec& layer = bundle.layers[i];
    if (!layer.prunable) continue;
    lamp::ScoreTensor scores =
        opt.kind == "lamp"
            ? lamp::lamp_scores(bundle.weights[i], mask.layers[i].bits, layer.name)
            : lamp::magnitude_scores(bundle.weights[i], mask.layers[i].bits, layer.name);
    doc[layer.name] = scores.values;
  }
  write_text_atomic(opt.out_path, doc.dump(2) + "\n");
  return kExitOk;
}

struct ApplyOptions {
  std::string bundle_path;
  std::string mask_path;
  std::string out_path;
};

int cmd_apply(const ApplyOptions& opt) {
  lamp::ModelBundle bundle = lamp::load_bundle(opt.bundle_path);
  lamp::MaskBundle mask = lamp::load_mask(opt.mask_path, bundle);
  lamp::save_bundle(lamp::apply_mask(bundle, mask), opt.out_path);
  return kExitOk;
}

struct PruneOptions {
  std::string bundle_path;
  std::string scheme = "lamp";
  double survival = 0.0;
  uint64_t kappa = 0;
  bool has_survival = false;
  bool has_kappa = false;
  std::string mask_in;
  std::string mask_out;
  std::string report_path;
  std::string format = "json";
};

lamp::SparsityBudget make_budget(const PruneOptions& opt, uint64_t total_prunable) {
  return opt.has_kappa ? lamp::SparsityBudget::from_kappa(opt.kappa, total_prunable)
                       : lamp::SparsityBudget::from_survival(opt.survival, total_prunable);
}

std::string render_report(const lamp::Allocation& alloc, const lamp::SurvivalReport& surv,
                          const std::string& format) {
  return format == "tsv" ? lamp::report_tsv(alloc, surv) : lamp::report_json(alloc, surv);
}

int cmd_prune(const PruneOptions& opt) {
  lamp::ModelBundle bundle = lamp::load_bundle(opt.bundle_path);
  std::optional<lamp::MaskBundle> mask_in;
  if (!opt.mask_in.empty()) mask_in = lamp::load_mask(opt.mask_in, bundle);

  auto scheme = lamp::parse_scheme(opt.scheme);
  if (!scheme) throw lamp::ParseError("unknown scheme '" + opt.scheme + "'");

  lamp::SparsityBudget budget = make_budget(opt, bundle.prunable_weights());
  lamp::AllocationResult result =
      lamp::allocate(bundle, mask_in ? &*mask_in : nullptr, budget, *scheme);

  lamp::save_mask(result.mask, opt.mask_out);
  if (!opt.report_path.empty()) {
    lamp::SurvivalReport surv = lamp::survival_report(bundle, result.mask);
    write_text_atomic(opt.report_path, render_report(result.allocation, surv, opt.format));
  }
  return kExitOk;
}

struct IterateOptions {
  std::string bundle_path;
  std::string scheme = "lamp";
  uint64_t rounds = 0;
  double fraction = 0.2;
  std::string out_dir;
  std::string format = "json";
};

int cmd_iterate(const IterateOptions& opt) {
  lamp::ModelBundle bundle = lamp::load_bundle(opt.bundle_path);
  auto scheme = lamp::parse_scheme(opt.scheme);
  if (!scheme) throw lamp::ParseError("unknown scheme '" + opt.scheme + "'");

  lamp::Schedule schedule = lamp::make_schedule(opt.rounds, opt.fraction);
  if (schedule.rounds.empty()) return kExitOk;

  std::filesystem::create_directories(opt.out_dir);
  uint64_t total = bundle.prunable_weights();
  lamp::MaskBundle mask = lamp::MaskBundle::all_ones(bundle);
  for (size_t t = 0; t < schedule.rounds.size(); ++t) {
    lamp::SparsityBudget budget =
        lamp::SparsityBudget::from_survival(schedule.rounds[t], total);
    lamp::AllocationResult result = lamp::allocate(bundle, &mask, budget, *scheme);
    mask = result.mask;

    char tag[32];
    std::snprintf(tag, sizeof(tag), "%02zu", t + 1);
    lamp::save_mask(mask, std::filesystem::path(opt.out_dir) / ("round_" + std::string(tag)));
    lamp::SurvivalReport surv = lamp::survival_report(bundle, mask);
    std::string name = opt.format == "tsv" ? ("report_" + std::string(tag) + ".tsv")
                                           : ("report_" + std::string(tag) + ".json");
    write_text_atomic(std::filesystem::path(opt.out_dir) / name,
                      render_report(result.allocation, surv, opt.format));
  }
  return kExitOk;
}

struct VerifyOptions {
  std::string suite;
  uint64_t trials = 0;  // 0 = suite default
  uint64_t seed = 0;
  uint64_t samples = 0;  // 0 = suite default
};

int cmd_verify(const VerifyOptions& opt) {
  auto result = lamp::verify::run_suite(opt.suite, opt.trials, opt.seed, opt.samples);
  if (!result) throw lamp::ParseError("unknown suite '" + opt.suite + "'");
  std::printf("suite=%s seed=%" PRIu64 " %s: %s\n", result->suite.c_str(), opt.seed,
              result->passed ? "pass" : "FAIL", result->detail.c_str());
  return result->passed ? kExitOk : kExitPropertyFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAMP pruning toolkit: importance scores, layerwise sparsity "
               "allocation, masks, and verification suites"};
  app.require_subcommand(1);

  ScoreOptions score_opt;
  CLI::App* score = app.add_subcommand("score", "Write per-layer importance scores");
  score->add_option("bundle", score_opt.bundle_path, "Bundle directory")->required();
  score->add_option("--mask", score_opt.mask_path, "Mask directory restricting survivors");
  score->add_option("--kind", score_opt.kind, "Score kind")
      ->check(CLI::IsMember({"lamp", "magnitude"}))
      ->capture_default_str();
  score->add_option("--out", score_opt.out_path, "Output scores.json path")->required();

  PruneOptions prune_opt;
  CLI::App* prune = app.add_subcommand("prune", "Allocate a budget and write a mask");
  prune->add_option("bundle", prune_opt.bundle_path, "Bundle directory")->required();
  prune->add_option("--scheme", prune_opt.scheme,
                    "lamp | global | uniform | uniform+ | erk")
      ->capture_default_str();
  CLI::Option* surv_flag =
      prune->add_option("--survival", prune_opt.survival, "Global survival rate in (0, 1]");
  CLI::Option* kappa_flag =
      prune->add_option("--kappa", prune_opt.kappa, "Surviving-weight budget");
  surv_flag->excludes(kappa_flag);
  kappa_flag->excludes(surv_flag);
  prune->add_option("--mask-in", prune_opt.mask_in, "Mask directory of current survivors");
  prune->add_option("--mask-out", prune_opt.mask_out, "Output mask directory")->required();
  prune->add_option("--report", prune_opt.report_path, "Output report path");
  prune->add_option("--format", prune_opt.format, "Report format")
      ->check(CLI::IsMember({"json", "tsv"}))
      ->capture_default_str();

  IterateOptions iter_opt;
  CLI::App* iterate = app.add_subcommand("iterate", "Iterative pruning schedule");
  iterate->add_option("bundle", iter_opt.bundle_path, "Bundle directory")->required();
  iterate->add_option("--scheme", iter_opt.scheme,
                      "lamp | global | uniform | uniform+ | erk")
      ->capture_default_str();
  iterate->add_option("--rounds", iter_opt.rounds, "Number of rounds")->required();
  iterate->add_option("--fraction", iter_opt.fraction,
                      "Fraction of surviving weights pruned per round")
      ->capture_default_str();
  iterate->add_option("--out-dir", iter_opt.out_dir, "Output directory")->required();
  iterate->add_option("--format", iter_opt.format, "Report format")
      ->check(CLI::IsMember({"json", "tsv"}))
      ->capture_default_str();

  ApplyOptions apply_opt;
  CLI::App* apply = app.add_subcommand("apply", "Write a bundle with the mask applied");
  apply->add_option("bundle", apply_opt.bundle_path, "Bundle directory")->required();
  apply->add_option("--mask", apply_opt.mask_path, "Mask directory")->required();
  apply->add_option("--out", apply_opt.out_path, "Output bundle directory")->required();

  VerifyOptions verify_opt;
  CLI::App* verify = app.add_subcommand("verify", "Run a randomized property suite");
  std::string suites;
  for (const std::string& s : lamp::verify::suite_names()) {
    suites += suites.empty() ? s : " | " + s;
  }
  verify->add_option("--suite", verify_opt.suite, suites)->required();
  verify->add_option("--trials", verify_opt.trials, "Trial count (0 = suite default)");
  verify->add_option("--seed", verify_opt.seed, "Random seed")->capture_default_str();
  verify->add_option("--samples", verify_opt.samples,
                     "Inputs per net for peeling-bound (0 = default 1000)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidationError;
  }

  try {
    if (score->parsed()) return cmd_score(score_opt);
    if (prune->parsed()) {
      prune_opt.has_survival = surv_flag->count() > 0;
      prune_opt.has_kappa = kappa_flag->count() > 0;
      if (!prune_opt.has_survival && !prune_opt.has_kappa) {
        throw lamp::InfeasibleBudget("one of --survival or --kappa is required");
      }
      return cmd_prune(prune_opt);
    }
    if (iterate->parsed()) return cmd_iterate(iter_opt);
    if (apply->parsed()) return cmd_apply(apply_opt);
    if (verify->parsed()) return cmd_verify(verify_opt);
  } catch (const lamp::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidationError;
  }
  return kExitOk;
}
