#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "../checks.hpp"
#include "fcrec/client.hpp"

using namespace fcrec;

namespace {

std::shared_ptr<const ItemIndex> index_of(std::uint32_t n) {
  std::vector<ItemId> ids;
  for (std::uint32_t i = 1; i <= n; ++i) ids.push_back(ItemId{i});
  return std::make_shared<const ItemIndex>(ids);
}

// One-dimensional table whose row r has value `v[r]`; with phi = 1 the logits
// are exactly these values.
ItemTableD line_table(const std::vector<double>& v) {
  ItemTableD::Matrix m(Eigen::Index(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(Eigen::Index(i), 0) = v[i];
  return ItemTableD(index_of(std::uint32_t(v.size())), m);
}

RetainedKnowledge retained_of(std::vector<ItemId> top) {
  RetainedKnowledge r;
  r.top_items = std::move(top);
  for (std::size_t k = 0; k < r.top_items.size(); ++k) {
    r.teacher_scores[r.top_items[k]] = 0.5;
    r.prev_ranks[r.top_items[k]] = k + 1;
  }
  return r;
}

}  // namespace

TEST_CASE("preference shift on hand cases") {
  const PrivateParams phi{Eigen::VectorXd::Ones(1), std::nullopt};
  // item k+1 scores -k, so the ranking is 1, 2, ..., 5
  const ItemTableD items = line_table({0, -1, -2, -3, -4});
  CHECK(preference_shift(phi, retained_of({ItemId{1}, ItemId{2}, ItemId{3}}), items) == 0);
  // stored 2, 1: each is off by one
  CHECK(preference_shift(phi, retained_of({ItemId{2}, ItemId{1}}), items) == 2);
  // stored 5, 4, 3, 2, 1: |5-1| + |4-2| + 0 + |2-4| + |1-5|
  CHECK(preference_shift(phi, retained_of({ItemId{5}, ItemId{4}, ItemId{3}, ItemId{2}, ItemId{1}}), items) == 12);

  // 60 items in reverse: the stored top-30 now sits at ranks 60..31
  std::vector<double> v(60);
  for (int i = 0; i < 60; ++i) v[std::size_t(i)] = i;
  std::vector<ItemId> top;
  for (std::uint32_t i = 1; i <= 30; ++i) top.push_back(ItemId{i});
  std::size_t expected = 0;
  for (std::size_t k = 0; k < 30; ++k) expected += (60 - k) - (k + 1);
  CHECK(expected == 900);
  CHECK(preference_shift(phi, retained_of(top), line_table(v)) == expected);

  ClientState empty;
  empty.phi = phi;
  CHECK_THROWS(preference_shift(empty, items));
}

TEST_CASE("preference shift and sampling rate oracles") {
  const auto shift = checks::preference_shift_oracle(21, 200, 1e-12);
  CHECK_MESSAGE(shift.ok(), shift.failure.value_or(""));
  const auto rate = checks::sampling_rate_oracle(22, 200, 1e-12);
  CHECK_MESSAGE(rate.ok(), rate.failure.value_or(""));
  CHECK(sampling_rate(0.0, 0.005) == 1.0);
  CHECK(sampling_rate(200.0, 0.005) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK_THROWS(sampling_rate(-1.0, 0.1));
}

TEST_CASE("replay memory is a floor-sized subset without replacement") {
  std::vector<ItemId> top;
  for (std::uint32_t i = 1; i <= 30; ++i) top.push_back(ItemId{i});
  const auto retained = retained_of(top);
  Rng rng = make_stream(0, "memory");
  const auto half = build_replay_memory(retained, 0.5, rng);
  CHECK(half.size() == 15);
  CHECK(std::set<ItemId>(half.begin(), half.end()).size() == 15);
  for (ItemId id : half) CHECK(std::find(top.begin(), top.end(), id) != top.end());
  CHECK(build_replay_memory(retained, 1.0, rng).size() == 30);
  CHECK(build_replay_memory(retained, 0.0334, rng).size() == 1);
  CHECK(build_replay_memory(retained, 0.03, rng).empty());
  CHECK_THROWS(build_replay_memory(retained, 0.0, rng));
  CHECK_THROWS(build_replay_memory(retained, 1.5, rng));

  const auto sizes = checks::replay_memory_size(23, 300);
  CHECK_MESSAGE(sizes.ok(), sizes.failure.value_or(""));
}

TEST_CASE("distillation loss") {
  // student logit 0 and teacher 0.5 on every item: each term is ln 2
  const PrivateParams phi{Eigen::VectorXd::Zero(1), std::nullopt};
  const ItemTableD items = line_table({0.3, -0.7, 1.1});
  const auto retained = retained_of({ItemId{1}, ItemId{3}});
  const std::vector<ItemId> one{ItemId{3}};
  CHECK(kd_loss(phi, retained, items, one) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(kd_loss(phi, retained, items, retained.top_items) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
  const std::vector<ItemId> unknown{ItemId{2}};
  CHECK_THROWS(kd_loss(phi, retained, items, unknown));

  const auto oracle = checks::kd_loss_oracle(24, 200, 1e-12);
  CHECK_MESSAGE(oracle.ok(), oracle.failure.value_or(""));
}

TEST_CASE("finalize_block keeps teacher scores of the final model") {
  Rng rng = make_stream(4, "finalize");
  ClientState state;
  state.phi = init_private(BackboneKind::kFedNCF, 4, 0.5, rng);
  Eigen::MatrixXd m(12, 4);
  init_rows(m, 0.5, rng);
  const ItemTableD items(index_of(12), m);
  state.train_items = {ItemId{2}, ItemId{5}};

  const auto all = finalize_block(state, items, 5, false);
  CHECK(all.top_items == top_n(state.phi, items, 5));
  for (std::size_t k = 0; k < all.top_items.size(); ++k) {
    const ItemId id = all.top_items[k];
    CHECK(all.teacher_scores.at(id) == score(state.phi, items.row(id)));
    CHECK(all.prev_ranks.at(id) == k + 1);
  }
  const auto fresh = finalize_block(state, items, 5, true);
  CHECK(fresh.top_items == top_n(state.phi, items, 5, state.train_items));
}

TEST_CASE("Laplace draws have the right mean and variance") {
  Rng rng = make_stream(7, "laplace");
  const double lambda = 0.3;
  const std::size_t n = 1'000'000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = sample_laplace(lambda, rng);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / double(n);
  const double var = sq / double(n) - mean * mean;
  const double sd = std::sqrt(2.0) * lambda;
  CHECK(std::abs(mean) < 3.0 * sd / std::sqrt(double(n)));
  CHECK(std::abs(var - 2.0 * lambda * lambda) / (2.0 * lambda * lambda) < 0.05);
}

TEST_CASE("zero noise leaves the table unchanged") {
  Rng rng = make_stream(1, "noise");
  Eigen::MatrixXd m(5, 3);
  init_rows(m, 1.0, rng);
  ItemTableD table(index_of(5), m);
  add_transmission_noise(table, 0.0, rng);
  CHECK(table.rows() == m);
  add_transmission_noise(table, 0.1, rng);
  CHECK(table.rows() != m);
  CHECK_THROWS(add_transmission_noise(table, -1.0, rng));
}

TEST_CASE("local update only touches positives and sampled negatives") {
  for (auto kind : {BackboneKind::kFedMF, BackboneKind::kFedNCF}) {
    ClientConfig config;
    config.backbone = kind;
    config.dim = 6;
    config.seed = 17;
    config.negative_ratio = 2;
    Rng rng = make_stream(2, "setup");
    ClientState state;
    state.user = UserId{9};
    state.phi = init_private(kind, 6, 0.1, rng);
    state.train_items = {ItemId{3}, ItemId{8}, ItemId{21}};
    Eigen::MatrixXd m(40, 6);
    init_rows(m, 0.1, rng);
    const ItemTableD global(index_of(40), m);
    const RoundContext ctx{0, 2, nullptr};

    // the negatives are the first draws from the same named stream
    Rng neg = make_stream(config.seed, "negatives", 9, 0, 2);
    const auto negs = sample_negatives(state.train_items, global.index().ids(), config.negative_ratio, neg);
    std::set<ItemId> touched(state.train_items.begin(), state.train_items.end());
    touched.insert(negs.begin(), negs.end());

    const auto result = client_update(state, global, ctx, config);
    CHECK(result.batches == 1);
    for (Eigen::Index r = 0; r < 40; ++r) {
      const ItemId id = global.index().id(r);
      const bool same = (result.items.rows().row(r).array() == global.rows().row(r).array()).all();
      CHECK(same == !touched.count(id));
    }
  }
}

TEST_CASE("a diverging client is dropped and keeps its parameters") {
  ClientConfig config;
  config.dim = 3;
  ClientPool pool(config);
  const std::vector<UserId> users{UserId{1}};
  pool.register_users(users);
  DataBlock block;
  block.train[UserId{1}] = {Interaction{UserId{1}, ItemId{2}, 0}};
  pool.begin_block(block);
  REQUIRE(pool.eligible_users() == users);

  ItemTableD::Matrix m = ItemTableD::Matrix::Constant(6, 3, std::numeric_limits<double>::quiet_NaN());
  const ItemTableD bad(index_of(6), m);
  const PrivateParams before = pool.state(UserId{1}).phi;
  CHECK_FALSE(pool.train(UserId{1}, bad, RoundContext{}).has_value());
  CHECK(pool.failures() == 1);
  CHECK(pool.state(UserId{1}).phi.user_embedding == before.user_embedding);

  const ItemTableD good(index_of(6), ItemTableD::Matrix::Constant(6, 3, 0.01));
  const auto upload = pool.train(UserId{1}, good, RoundContext{});
  REQUIRE(upload.has_value());
  CHECK(upload->items.all_finite());
  CHECK(pool.failures() == 1);
}

TEST_CASE("client pool lifecycle") {
  ClientConfig config;
  config.dim = 4;
  config.top_n = 3;
  ClientPool pool(config);
  const std::vector<UserId> users{UserId{1}, UserId{2}};
  pool.register_users(users);
  DataBlock block;
  block.train[UserId{1}] = {Interaction{UserId{1}, ItemId{1}, 0}, Interaction{UserId{1}, ItemId{4}, 1}};
  pool.begin_block(block);
  CHECK(pool.eligible_users() == std::vector<UserId>{UserId{1}});

  Rng rng = make_stream(0, "pool");
  Eigen::MatrixXd m(8, 4);
  init_rows(m, 0.1, rng);
  const ItemTableD global(index_of(8), m);
  REQUIRE(pool.train(UserId{1}, global, RoundContext{}).has_value());
  const std::vector<UserId> u1{UserId{1}};
  CHECK(std::isfinite(pool.mean_last_loss(u1)));
  CHECK(std::isnan(pool.mean_last_shift(u1)));

  pool.finalize_block(global);
  REQUIRE(pool.state(UserId{1}).retained.has_value());
  CHECK(pool.state(UserId{1}).retained->top_items.size() == 3);
  CHECK_FALSE(pool.state(UserId{2}).retained.has_value());
  CHECK(pool.current_shift(UserId{1}, global) == std::optional<std::size_t>{0});
  CHECK_FALSE(pool.current_shift(UserId{2}, global).has_value());

  DataBlock unknown;
  unknown.train[UserId{5}] = {Interaction{UserId{5}, ItemId{1}, 0}};
  CHECK_THROWS_AS(pool.begin_block(unknown), std::logic_error);
}
