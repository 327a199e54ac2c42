#include "fcrec/server.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <optional>

#include "fcrec/backbone.hpp"
#include "fcrec/parallel.hpp"

namespace fcrec {

namespace {

// Uploads are summed in fixed-size chunks and the chunk sums are combined in
// order, so the aggregate does not depend on the thread count.
constexpr std::size_t kAggregationChunk = 16;

ItemTableD::Matrix fresh_rows(std::span<const ItemId> items, Eigen::Index dim, double scale,
                              std::uint64_t seed) {
  ItemTableD::Matrix rows(static_cast<Eigen::Index>(items.size()), dim);
  for (std::size_t i = 0; i < items.size(); ++i) {
    Rng rng = make_stream(seed, "init-item", raw(items[i]));
    for (Eigen::Index c = 0; c < dim; ++c)
      rows(static_cast<Eigen::Index>(i), c) = uniform(rng, -scale, scale);
  }
  return rows;
}

}  // namespace

std::vector<UserId> sample_clients(std::span<const UserId> users, double fraction, Rng& rng) {
  if (users.empty()) throw std::invalid_argument("sample_clients: empty user set");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("sample_clients: fraction must lie in (0, 1]");
  std::vector<UserId> pool(users.begin(), users.end());
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool.size()) + 1e-9)));
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(k);
  return pool;
}

GlobalState init_global(std::span<const ItemId> items, const ServerConfig& config) {
  std::vector<ItemId> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end());
  auto index = std::make_shared<const ItemIndex>(sorted);
  GlobalState g;
  g.current = ItemTableD(index, fresh_rows(sorted, config.dim, config.init_scale, config.seed));
  g.previous_block = g.current;
  g.block = 0;
  g.round = 0;
  return g;
}

RoundReport run_round(GlobalState& global, ClientRuntime& clients, const ServerConfig& config, Rng& rng) {
  const std::vector<UserId> eligible = clients.eligible_users();
  const std::vector<UserId> sampled = sample_clients(eligible, config.client_fraction, rng);

  RoundContext context{global.block, global.round + 1,
                       global.block > 0 ? &global.previous_block : nullptr};

  const std::size_t n_chunks = (sampled.size() + kAggregationChunk - 1) / kAggregationChunk;
  std::vector<std::optional<ItemTableD::Matrix>> chunk_sums(n_chunks);
  std::vector<std::size_t> chunk_counts(n_chunks, 0);

  parallel_for(n_chunks, config.threads, [&](std::size_t c) {
    const std::size_t end = std::min(sampled.size(), (c + 1) * kAggregationChunk);
    for (std::size_t i = c * kAggregationChunk; i < end; ++i) {
      std::optional<ClientUpload> upload = clients.train(sampled[i], global.current, context);
      if (!upload) continue;
      if (!upload->items.same_index(global.current))
        throw std::logic_error("run_round: upload does not match the broadcast item index");
      if (!chunk_sums[c])
        chunk_sums[c] = std::move(upload->items.rows());
      else
        *chunk_sums[c] += upload->items.rows();
      ++chunk_counts[c];
    }
  });

  std::size_t received = 0;
  std::optional<ItemTableD::Matrix> total;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    if (!chunk_sums[c]) continue;
    received += chunk_counts[c];
    if (!total)
      total = std::move(*chunk_sums[c]);
    else
      *total += *chunk_sums[c];
  }
  if (received == 0) throw std::runtime_error("run_round: every sampled client failed");
  *total /= static_cast<double>(received);
  ItemTableD pre(global.current.index_ptr(), std::move(*total));

  RoundReport report;
  report.block = global.block;
  report.round = context.round;
  report.participating_users = sampled.size();
  report.failed_users = sampled.size() - received;
  report.mean_loss = clients.mean_last_loss(sampled);
  report.mean_shift = clients.mean_last_shift(sampled);

  if (global.block == 0 || config.retention == RetentionMode::kNone) {
    global.current = std::move(pre);
  } else {
    auto mixed = temporal_mean(pre, global.previous_block, config.beta, config.retention);
    const Eigen::Index n_old = global.previous_block.size();
    if (n_old > 0) {
      report.mean_phi = mixed.phi.mean();
      report.mean_gamma = mixed.gamma.head(n_old).mean();
    }
    global.item_shift = std::move(mixed.phi);
    global.current = std::move(mixed.items);
  }
  global.round = context.round;
  return report;
}

void advance_block(GlobalState& global, ClientRuntime& clients, const DataBlock& next_block,
                   const ServerConfig& config) {
  clients.finalize_block(global.current);
  global.previous_block = global.current;
  global.item_shift.resize(0);

  auto index = std::make_shared<ItemIndex>(global.current.index());
  std::vector<ItemId> added;
  for (ItemId id : next_block.new_items)
    if (!index->contains(id)) {
      index->append(id);
      added.push_back(id);
    }
  ItemTableD::Matrix rows(index->size(), global.current.dim());
  rows.topRows(global.current.size()) = global.current.rows();
  if (!added.empty())
    rows.bottomRows(static_cast<Eigen::Index>(added.size())) =
        fresh_rows(added, global.current.dim(), config.init_scale, config.seed);
  global.current = ItemTableD(std::shared_ptr<const ItemIndex>(std::move(index)), std::move(rows));

  clients.register_users(next_block.new_users);
  global.block = next_block.index;
  global.round = 0;
}

void write_round_report_header(std::ostream& out) {
  fmt::print(out, "block\tround\tusers\tfailed\tmean_phi\tmean_gamma\tmean_loss\tmean_shift\n");
}

void write_round_report(std::ostream& out, const RoundReport& r) {
  fmt::print(out, "{}\t{}\t{}\t{}\t{:.8g}\t{:.8g}\t{:.8g}\t{:.8g}\n", r.block, r.round,
             r.participating_users, r.failed_users, r.mean_phi, r.mean_gamma, r.mean_loss, r.mean_shift);
}

}  // namespace fcrec
