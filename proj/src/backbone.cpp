#include "fcrec/backbone.hpp"

#include <algorithm>
#include <numeric>

namespace fcrec {

void init_rows(Eigen::Ref<Eigen::MatrixXd> rows, double scale, Rng& rng) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(r, c) = uniform(rng, -scale, scale);
}

PrivateParams init_private(BackboneKind kind, Eigen::Index dim, double scale, Rng& rng) {
  PrivateParams phi;
  phi.user_embedding.resize(dim);
  for (Eigen::Index i = 0; i < dim; ++i) phi.user_embedding[i] = uniform(rng, -scale, scale);
  if (kind == BackboneKind::kFedNCF) {
    DenseLayer layer{Eigen::MatrixXd(dim, dim), Eigen::VectorXd(dim)};
    init_rows(layer.weights, scale, rng);
    for (Eigen::Index i = 0; i < dim; ++i) layer.bias[i] = uniform(rng, -scale, scale);
    phi.mlp = std::move(layer);
  }
  return phi;
}

Eigen::VectorXd logits_all(const PrivateParams& phi, const ItemTableD::Matrix& rows) {
  if (rows.cols() != phi.dim()) throw std::invalid_argument("score: dimension mismatch");
  if (!phi.mlp) return rows * phi.user_embedding;
  Eigen::MatrixXd hidden = (rows * phi.mlp->weights).rowwise() + phi.mlp->bias.transpose();
  hidden = hidden.unaryExpr([](double v) { return logistic(v); });
  return hidden * phi.user_embedding;
}

Eigen::VectorXd scores_all(const PrivateParams& phi, const ItemTableD::Matrix& rows) {
  return logits_all(phi, rows).unaryExpr([](double v) { return logistic(v); });
}

double bce_loss(double pred, double label) {
  const double p = std::clamp(pred, kProbClamp, 1.0 - kProbClamp);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

ParamGradient ParamGradient::zeros_like(const PrivateParams& phi) {
  ParamGradient g;
  g.user = Eigen::VectorXd::Zero(phi.dim());
  if (phi.mlp)
    g.mlp = DenseLayer{Eigen::MatrixXd::Zero(phi.mlp->weights.rows(), phi.mlp->weights.cols()),
                       Eigen::VectorXd::Zero(phi.mlp->bias.size())};
  return g;
}

void ParamGradient::set_zero() {
  user.setZero();
  if (mlp) {
    mlp->weights.setZero();
    mlp->bias.setZero();
  }
}

double accumulate_gradient(const PrivateParams& phi, const Eigen::Ref<const Eigen::RowVectorXd>& q,
                           double label, double weight, ParamGradient& grad,
                           Eigen::Ref<Eigen::RowVectorXd> q_grad) {
  if (q.size() != phi.dim()) throw std::invalid_argument("gradient: dimension mismatch");

  if (!phi.mlp) {
    const double p = logistic(phi.user_embedding.dot(q.transpose()));
    if (weight == 0.0) return bce_loss(p, label);
    // d/ds BCE(sigmoid(s), y) = sigmoid(s) - y
    const double g = weight * (p - label);
    grad.user.noalias() += g * q.transpose();
    q_grad.noalias() += g * phi.user_embedding.transpose();
    return bce_loss(p, label);
  }

  const DenseLayer& layer = *phi.mlp;
  const Eigen::VectorXd a = layer.weights.transpose() * q.transpose() + layer.bias;
  const Eigen::VectorXd z = a.unaryExpr([](double v) { return logistic(v); });
  const double p = logistic(phi.user_embedding.dot(z));
  if (weight == 0.0) return bce_loss(p, label);
  const double g = weight * (p - label);
  const Eigen::VectorXd da = (g * phi.user_embedding).cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
  grad.user.noalias() += g * z;
  grad.mlp->weights.noalias() += q.transpose() * da.transpose();
  grad.mlp->bias += da;
  q_grad.noalias() += (layer.weights * da).transpose();
  return bce_loss(p, label);
}

void apply_gradient(PrivateParams& phi, const ParamGradient& grad, double lr) {
  phi.user_embedding.noalias() -= lr * grad.user;
  if (phi.mlp) {
    phi.mlp->weights.noalias() -= lr * grad.mlp->weights;
    phi.mlp->bias.noalias() -= lr * grad.mlp->bias;
  }
}

void grad_step(PrivateParams& phi, Eigen::Ref<Eigen::RowVectorXd> q, double label, double weight,
               double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("grad_step: lr must be positive");
  ParamGradient grad = ParamGradient::zeros_like(phi);
  Eigen::RowVectorXd q_grad = Eigen::RowVectorXd::Zero(q.size());
  accumulate_gradient(phi, q, label, weight, grad, q_grad);
  const bool finite = grad.user.allFinite() && q_grad.allFinite() &&
                      (!grad.mlp || (grad.mlp->weights.allFinite() && grad.mlp->bias.allFinite()));
  if (!finite) throw DivergenceError("grad_step: non-finite gradient");
  apply_gradient(phi, grad, lr);
  q.noalias() -= lr * q_grad;
}

std::size_t rank_in(const Eigen::VectorXd& scores, const ItemIndex& index, Eigen::Index target_row) {
  const double s = scores[target_row];
  const ItemId id = index.id(target_row);
  std::size_t better = 0;
  for (Eigen::Index r = 0; r < scores.size(); ++r) {
    const double v = scores[r];
    if (v > s || (v == s && index.id(r) < id)) ++better;
  }
  return better + 1;
}

std::size_t rank_of(const PrivateParams& phi, const ItemTableD& table, ItemId target,
                    std::span<const ItemId> candidates) {
  if (std::find(candidates.begin(), candidates.end(), target) == candidates.end())
    throw std::invalid_argument("rank_of: target not among candidates");
  const double s = logit(phi, table.row(target));
  std::size_t better = 0;
  for (ItemId c : candidates) {
    if (c == target) continue;
    const double v = logit(phi, table.row(c));
    if (v > s || (v == s && c < target)) ++better;
  }
  return better + 1;
}

std::vector<ItemId> top_n_from_scores(const Eigen::VectorXd& scores, const ItemIndex& index,
                                      std::size_t n, std::span<const ItemId> exclude) {
  if (n < 1) throw std::invalid_argument("top_n: n must be >= 1");
  std::vector<Eigen::Index> rows;
  rows.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index r = 0; r < scores.size(); ++r)
    if (!std::binary_search(exclude.begin(), exclude.end(), index.id(r))) rows.push_back(r);
  auto before = [&](Eigen::Index a, Eigen::Index b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.id(a) < index.id(b);
  };
  const std::size_t k = std::min(n, rows.size());
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end(), before);
  std::vector<ItemId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(index.id(rows[i]));
  return out;
}

std::vector<ItemId> top_n(const PrivateParams& phi, const ItemTableD& table, std::size_t n,
                          std::span<const ItemId> exclude) {
  return top_n_from_scores(logits_all(phi, table.rows()), table.index(), n, exclude);
}

}  // namespace fcrec
