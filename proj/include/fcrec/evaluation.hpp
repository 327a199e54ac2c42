#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fcrec/data.hpp"
#include "fcrec/item_table.hpp"
#include "fcrec/types.hpp"

namespace fcrec {

using ItemSet = std::unordered_set<ItemId>;

double recall_at_k(std::span<const ItemId> ranked, const ItemSet& relevant, std::size_t k);

// Binary-relevance NDCG with gain 1/log2(pos + 1), normalized by the ideal DCG
// of min(|relevant|, k) hits.
double ndcg_at_k(std::span<const ItemId> ranked, const ItemSet& relevant, std::size_t k);

struct EvalResult {
  int block = 0;
  std::string metric;
  double value = 0.0;
  std::size_t user_count = 0;
};

struct UserMetrics {
  UserId user{};
  double ndcg = 0.0;
  double recall = 0.0;
};

struct EvalReport {
  std::vector<EvalResult> results;  // NDCG@k then Recall@k; empty if no test users
  std::vector<UserMetrics> per_user;
  std::size_t skipped_users = 0;    // test users without a model
};

// Item logits for one user over every row of the evaluated table; nullopt
// when the user has no model.
using UserScorer = std::function<std::optional<Eigen::VectorXd>(UserId)>;

// Exclusions per user, each list sorted ascending.
using ExclusionMap = std::map<UserId, std::vector<ItemId>>;

// Full ranking over every item of `index` minus the user's exclusions, metrics
// at k averaged uniformly over users with test items.
EvalReport full_ranking_eval(const UserScorer& scorer, const ItemIndex& index,
                             const UserInteractions& test, const ExclusionMap& exclusions,
                             std::size_t k, int block);

double degradation_rate(double a_prev, double a_now);

struct UserSegments {
  std::vector<UserId> static_users;
  std::vector<UserId> dynamic_users;
};

// Orders users by (shift, id); the first floor(q * n) are static, the last
// floor(q * n) dynamic.
UserSegments segment_users_by_shift(const std::map<UserId, double>& shifts, double quantile);

// Mean of |prev - now| / prev over the supplied (prev, now) rank pairs.
double item_ranking_change_rate(std::span<const std::pair<std::size_t, std::size_t>> ranks);

void write_eval_header(std::ostream& out);
void write_eval_row(std::ostream& out, std::string_view method, std::string_view backbone,
                    std::string_view dataset, const EvalResult& r, std::uint64_t seed);

}  // namespace fcrec
