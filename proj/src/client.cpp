#include "fcrec/client.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fcrec {

std::size_t preference_shift(const PrivateParams& phi, const RetainedKnowledge& retained,
                             const ItemTableD& items) {
  const Eigen::VectorXd logits = logits_all(phi, items.rows());
  std::size_t shift = 0;
  for (std::size_t k = 0; k < retained.top_items.size(); ++k) {
    const std::size_t now = rank_in(logits, items.index(), items.index().row(retained.top_items[k]));
    const std::size_t then = k + 1;
    shift += now > then ? now - then : then - now;
  }
  return shift;
}

std::size_t preference_shift(const ClientState& state, const ItemTableD& items) {
  if (!state.retained || state.retained->top_items.empty())
    throw std::invalid_argument("preference_shift: no retained knowledge");
  return preference_shift(state.phi, *state.retained, items);
}

double sampling_rate(double shift, double eps) {
  if (shift < 0 || eps < 0) throw std::invalid_argument("sampling_rate: negative input");
  return std::exp(-eps * shift);
}

std::vector<ItemId> build_replay_memory(const RetainedKnowledge& retained, double rate, Rng& rng) {
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("replay rate must lie in (0, 1]");
  std::vector<ItemId> pool = retained.top_items;
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(pool.size())));
  // partial Fisher-Yates: the first k slots are a uniform sample without replacement
  for (std::size_t i = 0; i < k; ++i)
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(k);
  return pool;
}

double kd_loss(const PrivateParams& phi, const RetainedKnowledge& retained, const ItemTableD& items,
               std::span<const ItemId> memory, double weight, ParamGradient& grad,
               Eigen::Ref<ItemTableD::Matrix> q_grad, std::vector<Eigen::Index>* touched) {
  double loss = 0.0;
  for (ItemId id : memory) {
    auto it = retained.teacher_scores.find(id);
    if (it == retained.teacher_scores.end())
      throw std::invalid_argument("kd_loss: item " + std::to_string(raw(id)) + " has no teacher score");
    const Eigen::Index row = items.index().row(id);
    loss += accumulate_gradient(phi, items.rows().row(row), it->second, weight, grad, q_grad.row(row));
    if (touched) touched->push_back(row);
  }
  return loss;
}

namespace {

bool finite(const ParamGradient& g) {
  return g.user.allFinite() && (!g.mlp || (g.mlp->weights.allFinite() && g.mlp->bias.allFinite()));
}

void add_scaled_difference(ParamGradient& grad, const PrivateParams& phi, const PrivateParams& ref,
                           double scale) {
  grad.user.noalias() += scale * (phi.user_embedding - ref.user_embedding);
  if (grad.mlp && phi.mlp && ref.mlp) {
    grad.mlp->weights.noalias() += scale * (phi.mlp->weights - ref.mlp->weights);
    grad.mlp->bias.noalias() += scale * (phi.mlp->bias - ref.mlp->bias);
  }
}

double squared_distance(const PrivateParams& a, const PrivateParams& b) {
  double d = (a.user_embedding - b.user_embedding).squaredNorm();
  if (a.mlp && b.mlp)
    d += (a.mlp->weights - b.mlp->weights).squaredNorm() + (a.mlp->bias - b.mlp->bias).squaredNorm();
  return d;
}

struct Sample {
  ItemId item;
  double label;
};

}  // namespace

LocalTrainingResult client_update(ClientState& state, const ItemTableD& global,
                                  const RoundContext& context, const ClientConfig& config) {
  if (state.train_items.empty()) throw std::invalid_argument("client_update: no local data");
  if (!(config.lr > 0.0)) throw std::invalid_argument("client_update: lr must be positive");

  LocalTrainingResult result{global, 0.0, 0, std::nullopt};
  ItemTableD& items = result.items;
  ItemTableD::Matrix& q = items.rows();
  for (ItemId id : state.train_items)
    if (!items.contains(id)) throw std::invalid_argument("client_update: item missing from Q_g");

  const std::uint64_t user = raw(state.user);
  const auto block = static_cast<std::uint64_t>(context.block);
  const auto round = static_cast<std::uint64_t>(context.round);
  Rng neg_rng = make_stream(config.seed, "negatives", user, block, round);
  Rng replay_rng = make_stream(config.seed, "replay", user, block, round);

  const bool distill = context.block > 0 && config.replay != ReplayMode::kNone &&
                       config.lambda_kd > 0.0 && state.retained &&
                       !state.retained->top_items.empty();
  const bool regularize = config.reg_mu > 0.0 && context.block > 0;
  const ItemTableD* anchor_items = regularize ? context.previous_block_items : nullptr;
  if (anchor_items && !anchor_items->index().is_prefix_of(items.index()))
    throw std::invalid_argument("client_update: previous block table is not a prefix of Q_g");

  ParamGradient grad = ParamGradient::zeros_like(state.phi);
  ItemTableD::Matrix q_grad = ItemTableD::Matrix::Zero(q.rows(), q.cols());
  std::vector<Eigen::Index> touched;
  std::vector<char> marked(static_cast<std::size_t>(q.rows()), 0);

  const std::vector<ItemId>& universe = items.index().ids();
  double loss_sum = 0.0;
  double rate = 1.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<Sample> samples;
    samples.reserve(state.train_items.size() * (1 + config.negative_ratio));
    for (ItemId id : state.train_items) samples.push_back({id, 1.0});
    for (ItemId id : sample_negatives(state.train_items, universe, config.negative_ratio, neg_rng))
      samples.push_back({id, 0.0});
    for (std::size_t i = samples.size(); i > 1; --i)
      std::swap(samples[i - 1], samples[uniform_index(neg_rng, i)]);

    if (distill && config.shift_schedule == ShiftSchedule::kPerEpoch && config.replay == ReplayMode::kAdaptive) {
      result.last_shift = preference_shift(state.phi, *state.retained, items);
      rate = sampling_rate(static_cast<double>(*result.last_shift), config.eps);
    }

    const std::size_t batch_size = std::max<std::size_t>(1, config.batch_size);
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
      const std::size_t end = std::min(samples.size(), begin + batch_size);
      const double rec_weight = config.mean_rec_loss ? 1.0 / static_cast<double>(end - begin) : 1.0;

      grad.set_zero();
      for (Eigen::Index r : touched) {
        q_grad.row(r).setZero();
        marked[static_cast<std::size_t>(r)] = 0;
      }
      touched.clear();
      auto touch = [&](Eigen::Index r) {
        if (!marked[static_cast<std::size_t>(r)]) {
          marked[static_cast<std::size_t>(r)] = 1;
          touched.push_back(r);
        }
      };

      double loss = 0.0;
      for (std::size_t s = begin; s < end; ++s) {
        const Eigen::Index row = items.index().row(samples[s].item);
        loss += rec_weight * accumulate_gradient(state.phi, q.row(row), samples[s].label,
                                                 rec_weight, grad, q_grad.row(row));
        touch(row);
      }

      if (distill) {
        if (config.replay == ReplayMode::kAdaptive && config.shift_schedule == ShiftSchedule::kPerBatch) {
          result.last_shift = preference_shift(state.phi, *state.retained, items);
          rate = sampling_rate(static_cast<double>(*result.last_shift), config.eps);
        } else if (config.replay == ReplayMode::kFull) {
          rate = 1.0;
        }
        const auto memory = build_replay_memory(*state.retained, rate, replay_rng);
        std::vector<Eigen::Index> kd_rows;
        loss += config.lambda_kd * kd_loss(state.phi, *state.retained, items, memory,
                                           config.lambda_kd, grad, q_grad, &kd_rows);
        for (Eigen::Index r : kd_rows) touch(r);
      }

      if (config.weight_decay > 0.0) {
        grad.user.noalias() += config.weight_decay * state.phi.user_embedding;
        for (Eigen::Index r : touched) q_grad.row(r).noalias() += config.weight_decay * q.row(r);
      }

      if (regularize && state.anchor) {
        loss += config.reg_mu * squared_distance(state.phi, *state.anchor);
        add_scaled_difference(grad, state.phi, *state.anchor, 2.0 * config.reg_mu);
      }

      if (!std::isfinite(loss) || !finite(grad))
        throw DivergenceError("client_update: non-finite loss for user " + std::to_string(user));

      apply_gradient(state.phi, grad, config.lr);
      for (Eigen::Index r : touched) q.row(r).noalias() -= config.lr * q_grad.row(r);

      if (anchor_items) {
        const Eigen::Index n_prev = anchor_items->size();
        auto old_rows = q.topRows(n_prev);
        loss += config.reg_mu * (old_rows - anchor_items->rows()).squaredNorm();
        old_rows -= (config.lr * 2.0 * config.reg_mu) * (old_rows - anchor_items->rows());
      }

      if (!q.allFinite())
        throw DivergenceError("client_update: non-finite item table for user " + std::to_string(user));
      loss_sum += loss;
      ++result.batches;
    }
  }

  result.mean_loss = result.batches ? loss_sum / static_cast<double>(result.batches) : 0.0;
  return result;
}

RetainedKnowledge finalize_block(const ClientState& state, const ItemTableD& final_items,
                                 std::size_t n, bool exclude_train) {
  const Eigen::VectorXd logits = logits_all(state.phi, final_items.rows());
  std::span<const ItemId> exclude;
  if (exclude_train) exclude = state.train_items;
  RetainedKnowledge out;
  out.top_items = top_n_from_scores(logits, final_items.index(), n, exclude);
  for (std::size_t k = 0; k < out.top_items.size(); ++k) {
    const ItemId id = out.top_items[k];
    out.teacher_scores[id] = score(state.phi, final_items.row(id));
    out.prev_ranks[id] = k + 1;
  }
  return out;
}

double sample_laplace(double scale, Rng& rng) {
  for (;;) {
    const double u = uniform01(rng) - 0.5;
    const double tail = 1.0 - 2.0 * std::abs(u);
    if (tail <= 0.0) continue;
    return (u < 0 ? scale : -scale) * std::log(tail);
  }
}

void add_transmission_noise(ItemTableD& items, double lambda, Rng& rng) {
  if (lambda < 0) throw std::invalid_argument("noise scale must be non-negative");
  if (lambda == 0) return;
  auto& m = items.rows();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += sample_laplace(lambda, rng);
}

ClientPool::ClientPool(ClientConfig config) : config_(std::move(config)) {}

void ClientPool::register_users(std::span<const UserId> users) {
  for (UserId u : users) {
    if (clients_.count(u)) continue;
    Rng rng = make_stream(config_.seed, "init-user", raw(u));
    ClientState state;
    state.user = u;
    state.phi = init_private(config_.backbone, config_.dim, config_.init_scale, rng);
    clients_.emplace(u, std::move(state));
  }
}

void ClientPool::begin_block(const DataBlock& block) {
  eligible_.clear();
  for (auto& [u, state] : clients_) state.train_items.clear();
  for (const auto& [u, xs] : block.train) {
    auto it = clients_.find(u);
    if (it == clients_.end()) throw std::logic_error("begin_block: unregistered user " + std::to_string(raw(u)));
    auto& ids = it->second.train_items;
    for (const auto& x : xs) ids.push_back(x.item);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (!ids.empty()) eligible_.push_back(u);
  }
}

std::optional<ClientUpload> ClientPool::train(UserId user, const ItemTableD& global,
                                              const RoundContext& context) {
  ClientState& state = clients_.at(user);
  const PrivateParams backup = state.phi;
  try {
    LocalTrainingResult local = client_update(state, global, context, config_);
    state.last_loss = local.mean_loss;
    state.last_shift = local.last_shift;
    if (config_.noise_lambda > 0.0) {
      Rng noise = make_stream(config_.seed, "noise", raw(user), static_cast<std::uint64_t>(context.block),
                              static_cast<std::uint64_t>(context.round));
      add_transmission_noise(local.items, config_.noise_lambda, noise);
    }
    return ClientUpload{std::move(local.items)};
  } catch (const DivergenceError&) {
    state.phi = backup;
    ++failures_;
    return std::nullopt;
  }
}

void ClientPool::finalize_block(const ItemTableD& final_global) {
  for (auto& [u, state] : clients_) {
    if (state.train_items.empty()) {
      state.retained.reset();
      state.anchor.reset();
      continue;
    }
    state.retained = fcrec::finalize_block(state, final_global, config_.top_n, config_.top_n_excludes_train);
    state.anchor = state.phi;
  }
}

std::vector<UserId> ClientPool::eligible_users() const { return eligible_; }

double ClientPool::mean_last_loss(std::span<const UserId> users) const {
  if (users.empty()) return 0.0;
  double total = 0.0;
  for (UserId u : users) total += clients_.at(u).last_loss;
  return total / static_cast<double>(users.size());
}

double ClientPool::mean_last_shift(std::span<const UserId> users) const {
  double total = 0.0;
  std::size_t n = 0;
  for (UserId u : users)
    if (const auto& s = clients_.at(u).last_shift) {
      total += static_cast<double>(*s);
      ++n;
    }
  return n ? total / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

Eigen::VectorXd ClientPool::logits(UserId user, const ItemTableD& items) const {
  return logits_all(clients_.at(user).phi, items.rows());
}

std::optional<std::size_t> ClientPool::current_shift(UserId user, const ItemTableD& items) const {
  const ClientState& state = clients_.at(user);
  if (!state.retained || state.retained->top_items.empty()) return std::nullopt;
  return preference_shift(state, items);
}

std::map<UserId, PrivateParams> ClientPool::snapshot() const {
  std::map<UserId, PrivateParams> out;
  for (const auto& [u, state] : clients_) out.emplace(u, state.phi);
  return out;
}

void ClientPool::restore(const std::map<UserId, PrivateParams>& params) {
  for (const auto& [u, phi] : params) clients_.at(u).phi = phi;
}

}  // namespace fcrec
