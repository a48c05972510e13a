// sfbnet command-line entry point: train, eval, gradcheck, bench, phantoms.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfbnet/app.hpp"
#include "sfbnet/errors.hpp"

namespace {

enum Exit : int { ok = 0, check_failed = 1, input_error = 2, numerical = 3 };

void write_report(const sfbnet::RunConfig& config, const std::string& name,
                  const std::string& text) {
  if (config.output_dir.empty()) return;
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / name) << text << "\n";
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SFB-net: U-Net with Swin Filtering Blocks for cardiac MRI segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config (default: tiny profile)");
    cmd->add_option("--set", overrides, "dotted key=value override, repeatable");
  };

  auto* train = app.add_subcommand("train", "train and write model.sfbn + metrics.jsonl");
  add_common(train);

  auto* eval = app.add_subcommand("eval", "per-class Dice of a checkpoint on data.val_dir");
  add_common(eval);
  std::string ckpt, eval_dir;
  bool tta = false, postprocess = false;
  eval->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--data", eval_dir, "split directory (overrides data.val_dir)");
  eval->add_flag("--tta", tta, "average predictions over the four mirrorings");
  eval->add_flag("--postprocess", postprocess, "keep the largest connected foreground component");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck);

  auto* bench = app.add_subcommand("bench", "parameters, Gflops and throughput per variant");
  add_common(bench);
  std::string variants;
  bench->add_option("--variants", variants, "comma-separated: full,no_sfb,no_trans");

  auto* phantoms = app.add_subcommand("phantoms", "write a synthetic split of RAWT samples");
  add_common(phantoms);
  std::string out_dir;
  int count = 8;
  std::uint64_t data_seed = 0;
  phantoms->add_option("--out", out_dir, "target directory")->required();
  phantoms->add_option("--count", count, "number of cases")->check(CLI::PositiveNumber);
  phantoms->add_option("--data-seed", data_seed, "phantom seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : input_error;
  }

  try {
    auto config = sfbnet::load_run_config(config_path, overrides);

    if (train->parsed()) {
      const auto summary = sfbnet::run_train(config, &std::cout);
      std::cerr << "checkpoint: " << summary.checkpoint.string() << " (" << summary.losses.size()
                << " steps, " << summary.seconds << " s)\n";
      return ok;
    }

    if (eval->parsed()) {
      if (!eval_dir.empty()) config.val_dir = eval_dir;
      const auto report = sfbnet::run_eval(config, ckpt, {tta, postprocess});
      const auto text = report.to_json();
      std::cout << text << "\n";
      write_report(config, "eval.json", text);
      return ok;
    }

    if (gradcheck->parsed()) {
      const auto report = sfbnet::run_gradcheck(config);
      for (const auto& e : report.entries) {
        std::cout << nlohmann::json{{"component", e.component},
                                    {"worst_relative_error", e.worst_relative_error},
                                    {"entries", e.entries_checked},
                                    {"passed", e.passed}}
                         .dump()
                  << "\n";
      }
      const nlohmann::json summary = {{"components", report.entries.size()},
                                      {"worst_relative_error", report.worst()},
                                      {"tolerance", report.tolerance},
                                      {"seconds", report.seconds},
                                      {"passed", report.passed()},
                                      {"failures", report.failures()}};
      std::cout << summary.dump() << "\n";
      write_report(config, "gradcheck.json", summary.dump(2));
      if (!report.passed()) {
        std::cerr << "gradcheck failed:";
        for (const auto& f : report.failures()) std::cerr << " " << f;
        std::cerr << "\n";
        return check_failed;
      }
      return ok;
    }

    if (bench->parsed()) {
      if (!variants.empty()) {
        config.bench.variants = split_csv(variants);
        config.validate();
      }
      const auto rows = sfbnet::run_bench(config, &std::cerr);
      std::cout << sfbnet::format_cost_table(rows);
      write_report(config, "bench.json", sfbnet::cost_json(rows, 2));
      return ok;
    }

    if (phantoms->parsed()) {
      sfbnet::generate_phantom_split(out_dir, count, config.model.height, config.model.width,
                                     data_seed);
      std::cerr << "wrote " << count << " cases to " << out_dir << "\n";
      return ok;
    }
  } catch (const sfbnet::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return numerical;
  } catch (const sfbnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return input_error;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return input_error;
  }
  return input_error;
}
