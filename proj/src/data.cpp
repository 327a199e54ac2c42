#include "fcrec/data.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>

namespace fcrec {

namespace {

template <typename T>
bool parse_number(std::string_view field, T& out) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
  if (field.empty()) return false;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

std::vector<Interaction> parse_interactions(std::istream& in, const ColumnSchema& schema) {
  const int needed = std::max({schema.user_column, schema.item_column, schema.timestamp_column});
  if (std::min({schema.user_column, schema.item_column, schema.timestamp_column}) < 0)
    throw DataError("column indices must be non-negative");

  std::vector<Interaction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (schema.has_header && line_no == 1) continue;

    const auto fields = split_fields(line, schema.delimiter);
    if (static_cast<int>(fields.size()) <= needed)
      throw DataError(fmt::format("line {}: expected at least {} columns, got {}", line_no,
                                  needed + 1, fields.size()));
    std::uint32_t user = 0, item = 0;
    std::int64_t ts = 0;
    if (!parse_number(fields[schema.user_column], user))
      throw DataError(fmt::format("line {}: bad user id '{}'", line_no, fields[schema.user_column]));
    if (!parse_number(fields[schema.item_column], item))
      throw DataError(fmt::format("line {}: bad item id '{}'", line_no, fields[schema.item_column]));
    if (!parse_number(fields[schema.timestamp_column], ts) || ts < 0)
      throw DataError(
          fmt::format("line {}: bad timestamp '{}'", line_no, fields[schema.timestamp_column]));
    out.push_back({UserId{user}, ItemId{item}, ts});
  }
  if (out.empty()) throw DataError("empty result");

  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Interaction> load_interactions(const std::filesystem::path& path,
                                           const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  return parse_interactions(in, schema);
}

std::vector<Interaction> filter_min_interactions(std::span<const Interaction> interactions,
                                                 std::size_t min_user, std::size_t min_item) {
  if (min_user < 1 || min_item < 1) throw std::invalid_argument("minimum counts must be >= 1");

  std::unordered_map<ItemId, std::size_t> item_counts;
  for (const auto& x : interactions) ++item_counts[x.item];
  std::vector<Interaction> kept;
  kept.reserve(interactions.size());
  for (const auto& x : interactions)
    if (item_counts[x.item] >= min_item) kept.push_back(x);

  std::unordered_map<UserId, std::size_t> user_counts;
  for (const auto& x : kept) ++user_counts[x.user];
  std::erase_if(kept, [&](const Interaction& x) { return user_counts[x.user] < min_user; });

  if (kept.empty()) throw DataError("filtering removed all interactions");
  return kept;
}

std::vector<DataBlock> partition_blocks(std::span<const Interaction> interactions,
                                        double base_fraction, int n_incremental) {
  if (!(base_fraction > 0.0 && base_fraction < 1.0))
    throw std::invalid_argument("base_fraction must lie in (0, 1)");
  if (n_incremental < 1) throw std::invalid_argument("n_incremental must be >= 1");
  if (!std::is_sorted(interactions.begin(), interactions.end()))
    throw std::invalid_argument("interactions must be sorted chronologically");

  const std::size_t m = interactions.size();
  const auto base = static_cast<std::size_t>(std::floor(base_fraction * static_cast<double>(m)));
  const std::size_t rest = m - base;
  const std::size_t each = rest / static_cast<std::size_t>(n_incremental);
  if (base == 0 || each == 0)
    throw DataError(fmt::format("{} interactions cannot populate 1 + {} blocks", m, n_incremental));

  std::vector<std::size_t> sizes{base};
  for (int b = 0; b < n_incremental; ++b)
    sizes.push_back(b + 1 == n_incremental ? rest - each * (n_incremental - 1) : each);

  std::vector<DataBlock> blocks;
  std::set<UserId> users;
  std::set<ItemId> items;
  std::size_t offset = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    DataBlock block;
    block.index = static_cast<int>(b);
    block.interactions.assign(interactions.begin() + static_cast<std::ptrdiff_t>(offset),
                              interactions.begin() + static_cast<std::ptrdiff_t>(offset + sizes[b]));
    offset += sizes[b];
    for (const auto& x : block.interactions) {
      block.users.insert(x.user);
      if (users.insert(x.user).second) block.new_users.push_back(x.user);
      if (items.insert(x.item).second) block.new_items.push_back(x.item);
    }
    std::sort(block.new_users.begin(), block.new_users.end());
    std::sort(block.new_items.begin(), block.new_items.end());
    block.accumulated_users = users;
    block.accumulated_items = items;
    blocks.push_back(std::move(block));
  }
  return blocks;
}

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios) {
  SplitCounts c;
  if (n == 0) return c;
  constexpr double kSlack = 1e-9;
  c.train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n) + kSlack)));
  c.train = std::min(c.train, n);
  const std::size_t rest = n - c.train;
  const double held = ratios.test + ratios.valid;
  const double test_share = held > 0.0 ? ratios.test / held : 0.0;
  c.test = std::min(
      rest, static_cast<std::size_t>(std::ceil(test_share * static_cast<double>(rest) - kSlack)));
  c.valid = rest - c.test;
  return c;
}

DataBlock split_train_valid_test(DataBlock block, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");

  UserInteractions by_user;
  for (const auto& x : block.interactions) by_user[x.user].push_back(x);

  block.train.clear();
  block.valid.clear();
  block.test.clear();
  for (auto& [user, xs] : by_user) {
    Rng rng = make_stream(seed, "split", static_cast<std::uint64_t>(block.index), raw(user));
    for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[uniform_index(rng, i)]);
    const SplitCounts c = split_counts(xs.size(), ratios);
    auto cut = [&](std::size_t from, std::size_t count) {
      std::vector<Interaction> part(xs.begin() + static_cast<std::ptrdiff_t>(from),
                                    xs.begin() + static_cast<std::ptrdiff_t>(from + count));
      std::sort(part.begin(), part.end());
      return part;
    };
    block.train[user] = cut(0, c.train);
    if (c.test > 0) block.test[user] = cut(c.train, c.test);
    if (c.valid > 0) block.valid[user] = cut(c.train + c.test, c.valid);
  }
  return block;
}

std::vector<ItemId> sample_negatives(std::span<const ItemId> positives,
                                     std::span<const ItemId> universe, std::size_t ratio, Rng& rng) {
  std::vector<ItemId> candidates;
  candidates.reserve(universe.size());
  for (ItemId id : universe)
    if (!std::binary_search(positives.begin(), positives.end(), id)) candidates.push_back(id);
  if (candidates.empty()) throw std::invalid_argument("sample_negatives: empty candidate set");

  std::vector<ItemId> out(ratio * positives.size());
  for (auto& id : out) id = candidates[uniform_index(rng, candidates.size())];
  return out;
}

PreparedData prepare_dataset(std::vector<Interaction> interactions, const DatasetOptions& options) {
  PreparedData data;
  std::sort(interactions.begin(), interactions.end());
  interactions.erase(std::unique(interactions.begin(), interactions.end()), interactions.end());
  data.raw_count = interactions.size();
  auto filtered = filter_min_interactions(interactions, options.min_user, options.min_item);
  data.filtered_count = filtered.size();
  data.blocks = partition_blocks(filtered, options.base_fraction, options.n_incremental);
  for (auto& block : data.blocks)
    block = split_train_valid_test(std::move(block), options.ratios, options.seed);
  return data;
}

PreparedData prepare_dataset(const DatasetOptions& options) {
  return prepare_dataset(load_interactions(options.path, options.schema), options);
}

void write_block_summary(std::ostream& out, std::span<const DataBlock> blocks) {
  fmt::print(out, "block\tinteractions\tactive_users\taccumulated_users\taccumulated_items\t"
                  "train\tvalid\ttest\tfirst_ts\tlast_ts\n");
  auto total = [](const UserInteractions& m) {
    std::size_t n = 0;
    for (const auto& [u, xs] : m) n += xs.size();
    return n;
  };
  for (const auto& b : blocks)
    fmt::print(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", b.index, b.interactions.size(),
               b.users.size(), b.accumulated_users.size(), b.accumulated_items.size(),
               total(b.train), total(b.valid), total(b.test), b.first_timestamp(),
               b.last_timestamp());
}

void write_split_assignments(std::ostream& out, std::span<const DataBlock> blocks) {
  fmt::print(out, "block\tuser\titem\ttimestamp\tsplit\n");
  for (const auto& b : blocks) {
    auto emit = [&](const UserInteractions& m, const char* name) {
      for (const auto& [u, xs] : m)
        for (const auto& x : xs)
          fmt::print(out, "{}\t{}\t{}\t{}\t{}\n", b.index, raw(x.user), raw(x.item), x.timestamp,
                     name);
    };
    emit(b.train, "train");
    emit(b.valid, "valid");
    emit(b.test, "test");
  }
}

}  // namespace fcrec
