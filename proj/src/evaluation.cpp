#include "fcrec/evaluation.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fcrec/backbone.hpp"

namespace fcrec {

double recall_at_k(std::span<const ItemId> ranked, const ItemSet& relevant, std::size_t k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (relevant.empty()) throw std::invalid_argument("recall_at_k: empty relevant set");
  const std::size_t n = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += relevant.count(ranked[i]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const ItemId> ranked, const ItemSet& relevant, std::size_t k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  if (relevant.empty()) throw std::invalid_argument("ndcg_at_k: empty relevant set");
  const std::size_t n = std::min(k, ranked.size());
  double dcg = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (relevant.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

EvalReport full_ranking_eval(const UserScorer& scorer, const ItemIndex& index,
                             const UserInteractions& test, const ExclusionMap& exclusions,
                             std::size_t k, int block) {
  EvalReport report;
  double ndcg_sum = 0.0, recall_sum = 0.0;
  for (const auto& [user, xs] : test) {
    if (xs.empty()) continue;
    ItemSet relevant;
    for (const auto& x : xs) relevant.insert(x.item);
    std::optional<Eigen::VectorXd> logits = scorer(user);
    if (!logits) {
      ++report.skipped_users;
      continue;
    }
    if (logits->size() != index.size()) throw std::invalid_argument("full_ranking_eval: scorer size mismatch");
    std::span<const ItemId> excluded;
    if (auto it = exclusions.find(user); it != exclusions.end()) excluded = it->second;
    const auto ranked = top_n_from_scores(*logits, index, k, excluded);
    UserMetrics m{user, ndcg_at_k(ranked, relevant, k), recall_at_k(ranked, relevant, k)};
    ndcg_sum += m.ndcg;
    recall_sum += m.recall;
    report.per_user.push_back(m);
  }
  if (report.per_user.empty()) return report;
  const auto n = static_cast<double>(report.per_user.size());
  const std::string suffix = "@" + std::to_string(k);
  report.results.push_back({block, "NDCG" + suffix, ndcg_sum / n, report.per_user.size()});
  report.results.push_back({block, "Recall" + suffix, recall_sum / n, report.per_user.size()});
  return report;
}

double degradation_rate(double a_prev, double a_now) {
  if (a_prev == 0.0) throw std::domain_error("degradation_rate: a_prev is zero");
  return (a_prev - a_now) / a_prev;
}

UserSegments segment_users_by_shift(const std::map<UserId, double>& shifts, double quantile) {
  if (shifts.empty()) throw std::invalid_argument("segment_users_by_shift: no users");
  if (!(quantile > 0.0 && quantile <= 0.5))
    throw std::invalid_argument("segment_users_by_shift: quantile must lie in (0, 0.5]");
  std::vector<std::pair<double, UserId>> order;
  for (const auto& [u, s] : shifts) order.emplace_back(s, u);
  std::sort(order.begin(), order.end());
  const auto c = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(order.size()) + 1e-9));
  UserSegments out;
  for (std::size_t i = 0; i < c; ++i) out.static_users.push_back(order[i].second);
  for (std::size_t i = order.size() - c; i < order.size(); ++i) out.dynamic_users.push_back(order[i].second);
  return out;
}

double item_ranking_change_rate(std::span<const std::pair<std::size_t, std::size_t>> ranks) {
  if (ranks.empty()) throw std::invalid_argument("item_ranking_change_rate: empty population");
  double total = 0.0;
  for (const auto& [prev, now] : ranks) {
    if (prev < 1) throw std::invalid_argument("item_ranking_change_rate: rank must be >= 1");
    const double p = static_cast<double>(prev), q = static_cast<double>(now);
    total += std::abs(p - q) / p;
  }
  return total / static_cast<double>(ranks.size());
}

void write_eval_header(std::ostream& out) {
  fmt::print(out, "method\tbackbone\tdataset\tblock\tmetric\tvalue\tseed\n");
}

void write_eval_row(std::ostream& out, std::string_view method, std::string_view backbone,
                    std::string_view dataset, const EvalResult& r, std::uint64_t seed) {
  fmt::print(out, "{}\t{}\t{}\t{}\t{}\t{:.6f}\t{}\n", method, backbone, dataset, r.block, r.metric,
             r.value, seed);
}

}  // namespace fcrec
