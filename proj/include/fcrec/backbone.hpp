#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fcrec/item_table.hpp"
#include "fcrec/rng.hpp"
#include "fcrec/types.hpp"

namespace fcrec {

enum class BackboneKind { kFedMF, kFedNCF };

// Private dense layer of the neural scorer: hidden = logistic(W^T q + b),
// W is d x h with h = d.
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

// Phi_u. Never leaves the client.
struct PrivateParams {
  Eigen::VectorXd user_embedding;
  std::optional<DenseLayer> mlp;

  BackboneKind kind() const { return mlp ? BackboneKind::kFedNCF : BackboneKind::kFedMF; }
  Eigen::Index dim() const { return user_embedding.size(); }
  bool all_finite() const {
    return user_embedding.allFinite() && (!mlp || (mlp->weights.allFinite() && mlp->bias.allFinite()));
  }
};

inline constexpr double kProbClamp = 1e-7;

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Uniform in [-scale, scale] for every parameter.
PrivateParams init_private(BackboneKind kind, Eigen::Index dim, double scale, Rng& rng);
void init_rows(Eigen::Ref<Eigen::MatrixXd> rows, double scale, Rng& rng);

// Pre-sigmoid score of one item.
template <typename Derived>
double logit(const PrivateParams& phi, const Eigen::MatrixBase<Derived>& q) {
  if (q.size() != phi.dim()) throw std::invalid_argument("score: dimension mismatch");
  const Eigen::VectorXd qv = q.derived().template cast<double>().reshaped();
  if (!phi.mlp) return phi.user_embedding.dot(qv);
  const Eigen::VectorXd a = phi.mlp->weights.transpose() * qv + phi.mlp->bias;
  return phi.user_embedding.dot(a.unaryExpr([](double v) { return logistic(v); }));
}

template <typename Derived>
double score(const PrivateParams& phi, const Eigen::MatrixBase<Derived>& q) {
  return logistic(logit(phi, q));
}

// Logits for every row of the table, in row order.
Eigen::VectorXd logits_all(const PrivateParams& phi, const ItemTableD::Matrix& rows);
Eigen::VectorXd scores_all(const PrivateParams& phi, const ItemTableD::Matrix& rows);

double bce_loss(double pred, double label);

// Gradient of weight * BCE(score(phi, q), label) where label may be soft.
struct ParamGradient {
  Eigen::VectorXd user;
  std::optional<DenseLayer> mlp;

  static ParamGradient zeros_like(const PrivateParams& phi);
  void set_zero();
};

// Adds the gradient of weight * BCE to `grad` (for phi) and `q_grad`. Returns
// the unweighted BCE.
double accumulate_gradient(const PrivateParams& phi, const Eigen::Ref<const Eigen::RowVectorXd>& q,
                           double label, double weight, ParamGradient& grad,
                           Eigen::Ref<Eigen::RowVectorXd> q_grad);

// In-place descent on phi: phi -= lr * grad.
void apply_gradient(PrivateParams& phi, const ParamGradient& grad, double lr);

// One SGD step on weight * BCE for a single (user, item) pair. Throws
// DivergenceError on a non-finite gradient.
void grad_step(PrivateParams& phi, Eigen::Ref<Eigen::RowVectorXd> q, double label, double weight,
               double lr);

// Rankings order items by logit (equivalently by score, without saturation ties).
// Rank (1-based) of `target_row` among all rows given their scores: one plus the
// number of rows that score strictly higher or tie with a lower item id.
std::size_t rank_in(const Eigen::VectorXd& scores, const ItemIndex& index, Eigen::Index target_row);

std::size_t rank_of(const PrivateParams& phi, const ItemTableD& table, ItemId target,
                    std::span<const ItemId> candidates);

// The n best items by (-score, id) outside `exclude` (sorted ascending).
std::vector<ItemId> top_n_from_scores(const Eigen::VectorXd& scores, const ItemIndex& index,
                                      std::size_t n, std::span<const ItemId> exclude = {});
std::vector<ItemId> top_n(const PrivateParams& phi, const ItemTableD& table, std::size_t n,
                          std::span<const ItemId> exclude = {});

}  // namespace fcrec
