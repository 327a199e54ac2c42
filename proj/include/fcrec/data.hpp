#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "fcrec/rng.hpp"
#include "fcrec/types.hpp"

namespace fcrec {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One implicit-feedback event. Ordering is chronological with (user, item)
// tiebreak, which is also the canonical sort order of the pipeline.
struct Interaction {
  UserId user{};
  ItemId item{};
  std::int64_t timestamp = 0;

  friend auto operator<=>(const Interaction& a, const Interaction& b) {
    if (auto c = a.timestamp <=> b.timestamp; c != 0) return c;
    if (auto c = a.user <=> b.user; c != 0) return c;
    return a.item <=> b.item;
  }
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Column layout of a delimiter-separated interaction log. Defaults read
// MovieLens u.data: user<TAB>item<TAB>rating<TAB>timestamp.
struct ColumnSchema {
  char delimiter = '\t';
  int user_column = 0;
  int item_column = 1;
  int timestamp_column = 3;
  bool has_header = false;
};

std::vector<Interaction> parse_interactions(std::istream& in, const ColumnSchema& schema);
std::vector<Interaction> load_interactions(const std::filesystem::path& path,
                                           const ColumnSchema& schema = {});

// Item pass first, then user pass (a single sweep each, not a fixed point).
std::vector<Interaction> filter_min_interactions(std::span<const Interaction> interactions,
                                                 std::size_t min_user, std::size_t min_item);

using UserInteractions = std::map<UserId, std::vector<Interaction>>;

struct DataBlock {
  int index = 0;
  std::vector<Interaction> interactions;  // chronological
  UserInteractions train;
  UserInteractions valid;
  UserInteractions test;
  std::set<UserId> users;              // active in this block
  std::set<UserId> accumulated_users;  // U^t
  std::set<ItemId> accumulated_items;  // I^t
  std::vector<ItemId> new_items;       // I^t \ I^{t-1}, ascending id
  std::vector<UserId> new_users;       // U^t \ U^{t-1}, ascending id

  bool is_split() const { return !train.empty() || !valid.empty() || !test.empty(); }
  std::int64_t first_timestamp() const { return interactions.front().timestamp; }
  std::int64_t last_timestamp() const { return interactions.back().timestamp; }
};

std::vector<DataBlock> partition_blocks(std::span<const Interaction> interactions,
                                        double base_fraction, int n_incremental);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

enum class Split : std::uint8_t { kTrain, kValid, kTest };

// Per-user counts for n interactions: train = max(1, floor(train*n)), the
// remainder is shared between test and valid with test rounded up.
struct SplitCounts {
  std::size_t train = 0, valid = 0, test = 0;
};
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);

// Randomly assigns each user's interactions in the block to train/valid/test.
// Each user draws from its own stream derived from (seed, block, user).
DataBlock split_train_valid_test(DataBlock block, const SplitRatios& ratios, std::uint64_t seed);

// ratio * |positives| items drawn uniformly with replacement from
// universe \ positives. `positives` must be sorted ascending.
std::vector<ItemId> sample_negatives(std::span<const ItemId> positives,
                                     std::span<const ItemId> universe, std::size_t ratio, Rng& rng);

struct DatasetOptions {
  std::filesystem::path path;
  ColumnSchema schema;
  std::size_t min_user = 10;
  std::size_t min_item = 10;
  double base_fraction = 0.6;
  int n_incremental = 3;
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

struct PreparedData {
  std::size_t raw_count = 0;
  std::size_t filtered_count = 0;
  std::vector<DataBlock> blocks;
};

PreparedData prepare_dataset(const DatasetOptions& options);
PreparedData prepare_dataset(std::vector<Interaction> interactions, const DatasetOptions& options);

// Audit output: one summary line per block, then one line per interaction with
// its split assignment.
void write_block_summary(std::ostream& out, std::span<const DataBlock> blocks);
void write_split_assignments(std::ostream& out, std::span<const DataBlock> blocks);

}  // namespace fcrec
