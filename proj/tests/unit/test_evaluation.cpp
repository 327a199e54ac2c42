#include <doctest.h>

#include <cmath>
#include <sstream>

#include "../checks.hpp"
#include "fcrec/evaluation.hpp"

using namespace fcrec;

namespace {

std::vector<ItemId> ids(std::initializer_list<std::uint32_t> xs) {
  std::vector<ItemId> out;
  for (auto x : xs) out.push_back(ItemId{x});
  return out;
}

}  // namespace

TEST_CASE("NDCG and Recall by hand") {
  const auto ranked = ids({5, 3, 8});
  CHECK(ndcg_at_k(ranked, ItemSet{ItemId{3}}, 3) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK(ndcg_at_k(ranked, ItemSet{ItemId{5}}, 3) == 1.0);
  CHECK(ndcg_at_k(ranked, ItemSet{ItemId{9}}, 3) == 0.0);
  // hits at 1 and 3, ideal has two hits at 1 and 2
  const double dcg = 1.0 + 0.5, idcg = 1.0 + 1.0 / std::log2(3.0);
  CHECK(ndcg_at_k(ranked, ItemSet{ItemId{5}, ItemId{8}}, 3) == doctest::Approx(dcg / idcg).epsilon(1e-15));
  CHECK(recall_at_k(ranked, ItemSet{ItemId{5}, ItemId{8}, ItemId{1}, ItemId{2}}, 3) == 0.5);
  CHECK(recall_at_k(ranked, ItemSet{ItemId{8}}, 2) == 0.0);
  CHECK_THROWS(ndcg_at_k(ranked, ItemSet{}, 3));
  CHECK_THROWS(recall_at_k(ranked, ItemSet{ItemId{1}}, 0));
}

TEST_CASE("full ranking metrics match a brute-force oracle") {
  const auto o = checks::metric_oracle(41, 1000, 20, 1e-12);
  CHECK(o.instances == 1000);
  CHECK_MESSAGE(o.ok(), o.failure.value_or(""));
}

TEST_CASE("full ranking evaluation on a toy population") {
  ItemIndex index(ids({1, 2, 3, 4, 5, 6}));
  Eigen::VectorXd logits(6);
  logits << -1, -2, -3, -4, -5, -6;
  const UserScorer scorer = [&](UserId u) -> std::optional<Eigen::VectorXd> {
    if (raw(u) == 6) return std::nullopt;
    return logits;
  };
  UserInteractions test;
  auto add = [&](std::uint32_t u, std::initializer_list<std::uint32_t> items) {
    for (auto i : items) test[UserId{u}].push_back(Interaction{UserId{u}, ItemId{i}, 0});
  };
  add(1, {1});
  add(2, {2});
  add(3, {3});
  add(4, {1, 2});
  add(5, {3});
  add(6, {1});
  ExclusionMap excl{{UserId{5}, ids({1})}};
  const EvalReport r = full_ranking_eval(scorer, index, test, excl, 2, 2);
  REQUIRE(r.results.size() == 2);
  const double g = 1.0 / std::log2(3.0);
  CHECK(r.results[0].metric == "NDCG@2");
  CHECK(r.results[0].value == doctest::Approx((2.0 + 2.0 * g) / 5.0).epsilon(1e-14));
  CHECK(r.results[1].metric == "Recall@2");
  CHECK(r.results[1].value == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(r.results[0].user_count == 5);
  CHECK(r.results[0].block == 2);
  CHECK(r.skipped_users == 1);

  const UserScorer wrong = [](UserId) -> std::optional<Eigen::VectorXd> { return Eigen::VectorXd::Zero(3); };
  CHECK_THROWS(full_ranking_eval(wrong, index, test, {}, 2, 0));
  CHECK(full_ranking_eval(scorer, index, UserInteractions{}, {}, 2, 0).results.empty());
}

TEST_CASE("degradation rate") {
  CHECK(degradation_rate(0.2, 0.15) == doctest::Approx(0.25));
  CHECK(degradation_rate(0.2, 0.3) == doctest::Approx(-0.5));
  CHECK_THROWS_AS(degradation_rate(0.0, 0.1), std::domain_error);
}

TEST_CASE("users are segmented by shift quantile") {
  std::map<UserId, double> shifts;
  for (std::uint32_t u = 1; u <= 10; ++u) shifts[UserId{u}] = double((u * 7) % 10);
  shifts[UserId{11}] = 0.0;  // ties broken by id
  const auto s = segment_users_by_shift(shifts, 0.2);
  // 11 users, floor(2.2) = 2 per segment; shift 0 belongs to users 10 and 11
  CHECK(s.static_users == std::vector<UserId>{UserId{10}, UserId{11}});
  // shifts 9 (user 7) and 8 (user 4) are the largest
  REQUIRE(s.dynamic_users.size() == 2);
  CHECK(std::find(s.dynamic_users.begin(), s.dynamic_users.end(), UserId{7}) != s.dynamic_users.end());
  CHECK(std::find(s.dynamic_users.begin(), s.dynamic_users.end(), UserId{4}) != s.dynamic_users.end());
  CHECK_THROWS(segment_users_by_shift({}, 0.2));
  CHECK_THROWS(segment_users_by_shift(shifts, 0.6));
}

TEST_CASE("item ranking change rate") {
  const std::vector<std::pair<std::size_t, std::size_t>> ranks{{1, 3}, {4, 2}, {10, 10}};
  CHECK(item_ranking_change_rate(ranks) == doctest::Approx((2.0 + 0.5 + 0.0) / 3.0));
  CHECK_THROWS(item_ranking_change_rate({}));
  const std::vector<std::pair<std::size_t, std::size_t>> zero{{0, 1}};
  CHECK_THROWS(item_ranking_change_rate(zero));
}

TEST_CASE("eval rows are tab separated") {
  std::ostringstream out;
  write_eval_header(out);
  write_eval_row(out, "f3crec", "fedmf", "ml-100k", EvalResult{1, "NDCG@20", 0.1234, 50}, 3);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("f3crec\tfedmf\tml-100k") != std::string::npos);
}
