#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "fcrec/data.hpp"
#include "fcrec/item_table.hpp"
#include "fcrec/protocol.hpp"
#include "fcrec/rng.hpp"

namespace fcrec {

struct GlobalState {
  ItemTableD current;         // Q_g^{t,r}
  ItemTableD previous_block;  // Q_g^{t-1}, frozen during block t
  Eigen::VectorXd item_shift; // phi_i of old items from the latest temporal mean
  int block = 0;
  int round = 0;
};

struct RoundReport {
  int block = 0;
  int round = 0;
  std::size_t participating_users = 0;
  std::size_t failed_users = 0;
  double mean_phi = 0.0;
  double mean_gamma = 0.0;
  double mean_loss = 0.0;
  double mean_shift = 0.0;  // NaN when no client computed a shift
};

enum class RetentionMode {
  kNone,      // Q_g <- Q_g' (plain federated averaging)
  kUniform,   // gamma_i = beta for every old item
  kItemWise,  // gamma_i = beta / (1 + phi_i)
};

struct ServerConfig {
  double client_fraction = 1.0;
  RetentionMode retention = RetentionMode::kItemWise;
  double beta = 0.7;
  double init_scale = 0.01;
  Eigen::Index dim = 32;
  std::uint64_t seed = 0;
  // Worker threads for the client section; 0 picks the hardware count.
  unsigned threads = 0;
};

std::vector<UserId> sample_clients(std::span<const UserId> users, double fraction, Rng& rng);

// Entrywise mean of uploads that share one item index.
template <typename Scalar>
ItemTable<Scalar> pre_aggregate(std::span<const ItemTable<Scalar>> uploads) {
  if (uploads.empty()) throw std::invalid_argument("pre_aggregate: no uploads");
  typename ItemTable<Scalar>::Matrix sum = uploads.front().rows();
  for (std::size_t i = 1; i < uploads.size(); ++i) {
    if (!uploads[i].same_index(uploads.front()) || uploads[i].dim() != uploads.front().dim())
      throw std::invalid_argument("pre_aggregate: item index mismatch");
    sum += uploads[i].rows();
  }
  sum /= static_cast<Scalar>(uploads.size());
  return ItemTable<Scalar>(uploads.front().index_ptr(), std::move(sum));
}

// phi_i = |a - b|^2 / sqrt(d) for two embeddings of one item.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar knowledge_shift(const Eigen::MatrixBase<DerivedA>& previous,
                                          const Eigen::MatrixBase<DerivedB>& current) {
  using Scalar = typename DerivedA::Scalar;
  if (previous.size() != current.size()) throw std::invalid_argument("knowledge_shift: dimension mismatch");
  return (previous - current).squaredNorm() / std::sqrt(static_cast<Scalar>(previous.size()));
}

template <typename Scalar>
Scalar knowledge_shift(const ItemTable<Scalar>& previous_block, const ItemTable<Scalar>& pre_aggregated,
                       ItemId item) {
  if (!previous_block.contains(item))
    throw std::invalid_argument("knowledge_shift: item " + std::to_string(raw(item)) +
                                " is new in this block");
  return knowledge_shift(previous_block.row(item), pre_aggregated.row(item));
}

template <typename Scalar>
Scalar retention_weight(Scalar phi, Scalar beta) {
  return beta / (Scalar(1) + phi);
}

template <typename Scalar>
struct TemporalMeanResult {
  ItemTable<Scalar> items;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gamma;  // |I^t|, zero on new items
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> phi;    // |I^{t-1}|
};

// Rowwise convex blend (1 - gamma) * Q_g' + gamma * pad(Q_g^{t-1}). New items
// (rows beyond the previous block) get gamma = 0 and so keep their Q_g' rows.
template <typename Scalar>
TemporalMeanResult<Scalar> temporal_mean(const ItemTable<Scalar>& pre_aggregated,
                                         const ItemTable<Scalar>& previous_block, Scalar beta,
                                         RetentionMode mode = RetentionMode::kItemWise) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = typename ItemTable<Scalar>::Matrix;
  if (pre_aggregated.dim() != previous_block.dim())
    throw std::invalid_argument("temporal_mean: dimension mismatch");
  if (!previous_block.index().is_prefix_of(pre_aggregated.index()))
    throw std::invalid_argument("temporal_mean: previous items are not a prefix of current items");
  if (!(beta >= Scalar(0) && beta < Scalar(1)))
    throw std::invalid_argument("temporal_mean: beta must lie in [0, 1)");

  const Eigen::Index n_old = previous_block.size();
  const Eigen::Index n_all = pre_aggregated.size();
  const Matrix& current = pre_aggregated.rows();

  Vector phi(n_old);
  for (Eigen::Index r = 0; r < n_old; ++r)
    phi[r] = knowledge_shift(previous_block.rows().row(r), current.row(r));

  Vector gamma = Vector::Zero(n_all);
  if (mode == RetentionMode::kItemWise)
    for (Eigen::Index r = 0; r < n_old; ++r) gamma[r] = retention_weight(phi[r], beta);
  else if (mode == RetentionMode::kUniform)
    gamma.head(n_old).setConstant(beta);

  Matrix padded = Matrix::Zero(n_all, current.cols());
  padded.topRows(n_old) = previous_block.rows();

  Matrix mixed = (Vector::Ones(n_all) - gamma).asDiagonal() * current + gamma.asDiagonal() * padded;
  return {ItemTable<Scalar>(pre_aggregated.index_ptr(), std::move(mixed)), std::move(gamma),
          std::move(phi)};
}

// Q_g^0 over the base block's items (ascending id), uniformly initialized.
GlobalState init_global(std::span<const ItemId> items, const ServerConfig& config);

// One federated round: sample, dispatch, pre-aggregate, then either adopt the
// mean (base block / kNone) or apply the temporal mean.
RoundReport run_round(GlobalState& global, ClientRuntime& clients, const ServerConfig& config, Rng& rng);

// Block transition: clients finalize against Q_g^t, Q_g^t is frozen, new items
// get fresh rows, new users are registered, and the block counter advances.
void advance_block(GlobalState& global, ClientRuntime& clients, const DataBlock& next_block,
                   const ServerConfig& config);

void write_round_report_header(std::ostream& out);
void write_round_report(std::ostream& out, const RoundReport& report);

}  // namespace fcrec
