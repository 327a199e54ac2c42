#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fcrec/backbone.hpp"
#include "fcrec/client.hpp"
#include "fcrec/data.hpp"
#include "fcrec/evaluation.hpp"
#include "fcrec/server.hpp"

namespace fcrec {

enum class Method {
  kF3CRec,
  kFineTune,
  kReg,
  kKD,
  kWithoutClientCL,        // f3crec_wo_cc
  kWithoutAdaptiveReplay,  // f3crec_wo_arm
  kWithoutServerCL,        // f3crec_wo_sc
  kWithoutItemWiseMean,    // f3crec_wo_itm
};

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
std::string_view backbone_name(BackboneKind b);
BackboneKind parse_backbone(std::string_view name);

// How a method maps onto the client and server mechanisms.
struct MethodTraits {
  ReplayMode replay = ReplayMode::kAdaptive;
  RetentionMode retention = RetentionMode::kItemWise;
  bool regularize = false;
};
MethodTraits method_traits(Method m);

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::string dataset_name = "ml-100k";
  ColumnSchema schema;
  std::size_t min_user = 10;
  std::size_t min_item = 10;
  double base_fraction = 0.6;
  int n_incremental = 3;

  Method method = Method::kF3CRec;
  BackboneKind backbone = BackboneKind::kFedMF;
  Eigen::Index dim = 32;
  std::size_t top_n = 30;
  double eps = 5e-3;
  double beta = 0.7;
  double lambda_kd = 1.0;
  double reg_mu = 0.01;
  double lr = 0.5;
  int epochs = 1;
  int rounds = 40;
  int base_rounds = 40;
  double client_fraction = 1.0;
  std::size_t negative_ratio = 4;
  std::size_t batch_size = 512;
  bool mean_rec_loss = false;
  double init_scale = 0.01;
  double weight_decay = 0.0;
  double noise = 0.0;
  ShiftSchedule shift_schedule = ShiftSchedule::kPerBatch;
  bool top_n_excludes_train = true;
  bool exclude_valid = true;
  bool select_best_round = false;
  std::size_t eval_k = 20;
  bool analyze = false;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::filesystem::path out;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  ClientConfig client_config() const;
  ServerConfig server_config() const;
  DatasetOptions dataset_options() const;
  // Every field as (key, value), in a fixed order.
  std::vector<std::pair<std::string, std::string>> fields() const;
  // Assigns one field from its textual form (the keys of fields()).
  void set(std::string_view key, std::string_view value);
};

// Static/dynamic users by preference shift after the first incremental round,
// and their NDCG on the base block's test set before and after block 1.
struct SegmentDegradation {
  std::size_t users = 0;
  double before = 0.0;  // a_{0,0}
  double after = 0.0;   // a_{1,0}
  double rate = 0.0;
};
struct DegradationAnalysis {
  SegmentDegradation static_users;
  SegmentDegradation dynamic_users;
};

// Ranking change rates of static/dynamic items (by knowledge shift) for users
// trained on block t-1 but not on block t.
struct ItemChangeAnalysis {
  int block = 0;
  std::size_t users = 0;
  double static_rate = 0.0;
  double dynamic_rate = 0.0;
};

struct ExperimentResult {
  std::vector<EvalResult> evals;
  std::vector<RoundReport> rounds;
  double avg_ndcg = 0.0;    // mean over incremental blocks
  double avg_recall = 0.0;
  double avg_valid_ndcg = 0.0;  // same average on the validation splits (for tuning)
  std::size_t failed_updates = 0;
  std::optional<DegradationAnalysis> degradation;
  std::vector<ItemChangeAnalysis> item_changes;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const PreparedData& data);
ExperimentResult run_experiment(const ExperimentConfig& config);

// results.tsv, summary.tsv, rounds.tsv, manifest.txt (and analysis.tsv) under `dir`.
void write_results(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::filesystem::path& dir);

// Grid over any numeric config key. Points share prepared data unless the grid
// changes the seed, which also drives the split.
using ParameterGrid = std::vector<std::pair<std::string, std::vector<double>>>;
ParameterGrid parse_grid(std::span<const std::string> specs);
ExperimentConfig apply_grid_point(ExperimentConfig config, const std::vector<std::pair<std::string, double>>& point);

struct SweepPoint {
  std::vector<std::pair<std::string, double>> values;
  ExperimentResult result;
};
std::vector<SweepPoint> sweep(const ExperimentConfig& config, const ParameterGrid& grid);
std::vector<SweepPoint> sweep(const ExperimentConfig& config, const ParameterGrid& grid,
                              const PreparedData& data);
void write_sweep(const ExperimentConfig& config, std::span<const SweepPoint> points,
                 const std::filesystem::path& dir);

// Per-block and averaged NDCG/Recall per method from results.tsv files, with the
// relative improvement over "ft" where present.
std::string report(std::span<const std::filesystem::path> result_files);
double relative_improvement(double value, double baseline);

}  // namespace fcrec
