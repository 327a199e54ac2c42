// Command-line driver: run one experiment, sweep a grid, tabulate results, or
// inspect the block partition.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fcrec/experiment.hpp"

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Shorthand flags; any other field is reachable through --set key=value.
constexpr FlagSpec kFlags[] = {
    {"--dataset", "dataset", "interaction log (MovieLens u.data layout by default)"},
    {"--dataset-name", "dataset_name", "label written to result files"},
    {"--method", "method", "f3crec, ft, reg, kd, f3crec_wo_cc, f3crec_wo_arm, f3crec_wo_sc, f3crec_wo_itm"},
    {"--backbone", "backbone", "fedmf or fedncf1"},
    {"--rounds", "rounds", "rounds per incremental block"},
    {"--base-rounds", "base_rounds", "rounds on the base block"},
    {"--eps", "eps", "adaptive replay sensitivity"},
    {"--beta", "beta", "server retention strength in [0, 1)"},
    {"--lambda-kd", "lambda_kd", "distillation weight"},
    {"--lr", "lr", "local SGD learning rate"},
    {"--top-n", "top_n", "retained list length"},
    {"--noise", "noise", "Laplace scale of upload noise"},
    {"--client-fraction", "client_fraction", "fraction of eligible clients per round"},
    {"--seed", "seed", "root seed"},
    {"--threads", "threads", "worker threads (0 = hardware)"},
    {"--out", "out", "output directory"},
};

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  bool analyze = false;
};

void add_config_options(CLI::App* app, ConfigArgs& args) {
  app->add_option("--config", args.config_file, "key=value file; '#' starts a comment")->check(CLI::ExistingFile);
  app->add_option("--set", args.sets, "override any field, key=value (repeatable)");
  app->add_flag("--analyze", args.analyze, "run the degradation and item-change analyses");
  for (const auto& f : kFlags) app->add_option(f.flag, args.flags[f.key], f.help);
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + text + "'");
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

fcrec::ExperimentConfig build_config(const ConfigArgs& args, CLI::App* app) {
  fcrec::ExperimentConfig config;
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto [k, v] = split_assignment(line);
      config.set(k, v);
    }
  }
  for (const auto& s : args.sets) {
    auto [k, v] = split_assignment(s);
    config.set(k, v);
  }
  for (const auto& f : kFlags)
    if (app->count(f.flag) > 0) config.set(f.key, args.flags.at(f.key));
  if (args.analyze) config.analyze = true;
  if (config.dataset.empty()) throw std::invalid_argument("no dataset given (--dataset or dataset=...)");
  config.validate();
  return config;
}

std::filesystem::path default_out(const fcrec::ExperimentConfig& c) {
  if (!c.out.empty()) return c.out;
  return fmt::format("runs/{}-{}-s{}", fcrec::method_name(c.method), fcrec::backbone_name(c.backbone), c.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated continual recommendation simulator"};
  app.require_subcommand(1);

  ConfigArgs run_args;
  auto* run = app.add_subcommand("run", "train and evaluate one method over all blocks");
  add_config_options(run, run_args);

  ConfigArgs sweep_args;
  std::vector<std::string> grid_specs;
  auto* sw = app.add_subcommand("sweep", "grid search; every point reuses the prepared data");
  add_config_options(sw, sweep_args);
  sw->add_option("--grid", grid_specs, "key=v1,v2,... (repeatable)")->required();

  std::vector<std::string> report_files;
  auto* rep = app.add_subcommand("report", "tabulate results.tsv files");
  rep->add_option("files", report_files, "results.tsv files")->required()->check(CLI::ExistingFile);

  ConfigArgs block_args;
  std::string assignments;
  auto* blocks = app.add_subcommand("blocks", "print the block partition of a dataset");
  add_config_options(blocks, block_args);
  blocks->add_option("--assignments", assignments, "also write per-interaction split assignments here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto config = build_config(run_args, run);
      const auto start = std::chrono::steady_clock::now();
      const auto result = fcrec::run_experiment(config);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const auto dir = default_out(config);
      fcrec::write_results(config, result, dir);
      for (const auto& e : result.evals) fmt::print("D{}\t{}\t{:.4f}\t({} users)\n", e.block, e.metric, e.value, e.user_count);
      fmt::print("avg NDCG@{0} {1:.4f}  avg Recall@{0} {2:.4f}  failed updates {3}  {4:.1f}s\n", config.eval_k,
                 result.avg_ndcg, result.avg_recall, result.failed_updates, secs);
      if (const auto& d = result.degradation)
        fmt::print("degradation static {:.4f} dynamic {:.4f}\n", d->static_users.rate, d->dynamic_users.rate);
      fmt::print("results in {}\n", dir.string());
    } else if (*sw) {
      const auto config = build_config(sweep_args, sw);
      const auto grid = fcrec::parse_grid(grid_specs);
      const auto points = fcrec::sweep(config, grid);
      const auto dir = default_out(config);
      fcrec::write_sweep(config, points, dir);
      for (const auto& p : points) {
        for (const auto& [k, v] : p.values) fmt::print("{}={} ", k, v);
        fmt::print("valid NDCG@{0} {1:.4f}  test NDCG@{0} {2:.4f}\n", config.eval_k, p.result.avg_valid_ndcg,
                   p.result.avg_ndcg);
      }
      fmt::print("sweep in {}\n", (dir / "sweep.tsv").string());
    } else if (*rep) {
      std::vector<std::filesystem::path> paths(report_files.begin(), report_files.end());
      fmt::print("{}", fcrec::report(paths));
    } else if (*blocks) {
      const auto config = build_config(block_args, blocks);
      const auto data = fcrec::prepare_dataset(config.dataset_options());
      fmt::print("interactions {} after dedup, {} after filtering\n", data.raw_count, data.filtered_count);
      fcrec::write_block_summary(std::cout, data.blocks);
      if (!assignments.empty()) {
        std::ofstream out(assignments);
        if (!out) throw std::runtime_error("cannot write " + assignments);
        fcrec::write_split_assignments(out, data.blocks);
      }
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
