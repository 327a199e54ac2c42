#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fcrec/backbone.hpp"
#include "fcrec/data.hpp"
#include "fcrec/item_table.hpp"
#include "fcrec/protocol.hpp"
#include "fcrec/rng.hpp"

namespace fcrec {

enum class ReplayMode {
  kNone,      // no distillation
  kAdaptive,  // |M| = floor(exp(-eps * shift) * |S|)
  kFull,      // the whole previous top-N list
};

enum class ShiftSchedule { kPerBatch, kPerEpoch };

struct ClientConfig {
  BackboneKind backbone = BackboneKind::kFedMF;
  Eigen::Index dim = 32;
  double init_scale = 0.01;
  double lr = 0.5;
  int epochs = 1;
  std::size_t batch_size = 512;
  std::size_t negative_ratio = 4;
  // Recommendation loss summed over the batch (false) or averaged.
  bool mean_rec_loss = false;
  ReplayMode replay = ReplayMode::kAdaptive;
  double lambda_kd = 1.0;
  double eps = 5e-3;
  std::size_t top_n = 30;
  bool top_n_excludes_train = true;
  ShiftSchedule shift_schedule = ShiftSchedule::kPerBatch;
  // Reg baseline: mu * (|Phi - Phi^{t-1}|^2 + |Q_u - Q_g^{t-1}|^2).
  double reg_mu = 0.0;
  double weight_decay = 0.0;
  // Laplace scale of the upload noise; 0 disables it.
  double noise_lambda = 0.0;
  std::uint64_t seed = 0;
};

// What a client keeps from the previous block: S_u^{t-1} in rank order, the
// teacher's scores for those items and their positional ranks.
struct RetainedKnowledge {
  std::vector<ItemId> top_items;
  std::unordered_map<ItemId, double> teacher_scores;
  std::unordered_map<ItemId, std::size_t> prev_ranks;
};

struct ClientState {
  UserId user{};
  PrivateParams phi;
  std::optional<RetainedKnowledge> retained;
  // Phi^{t-1}, the Reg anchor.
  std::optional<PrivateParams> anchor;
  // Training positives of the current block, ascending id.
  std::vector<ItemId> train_items;
  double last_loss = 0.0;
  std::optional<std::size_t> last_shift;
};

// Sum over the retained list of |current rank - stored position|, ranks taken
// over every row of `items`.
std::size_t preference_shift(const PrivateParams& phi, const RetainedKnowledge& retained,
                             const ItemTableD& items);
std::size_t preference_shift(const ClientState& state, const ItemTableD& items);

double sampling_rate(double shift, double eps);

std::vector<ItemId> build_replay_memory(const RetainedKnowledge& retained, double rate, Rng& rng);

// Distillation loss: BCE of the student's score against the teacher's soft
// label, summed over the memory. Gradients are added (scaled by `weight`) to
// `grad` and to the rows of `q_grad`; `touched` collects modified rows.
double kd_loss(const PrivateParams& phi, const RetainedKnowledge& retained, const ItemTableD& items,
               std::span<const ItemId> memory, double weight, ParamGradient& grad,
               Eigen::Ref<ItemTableD::Matrix> q_grad, std::vector<Eigen::Index>* touched = nullptr);

inline double kd_loss(const PrivateParams& phi, const RetainedKnowledge& retained,
                      const ItemTableD& items, std::span<const ItemId> memory) {
  ParamGradient grad = ParamGradient::zeros_like(phi);
  ItemTableD::Matrix q_grad = ItemTableD::Matrix::Zero(items.size(), items.dim());
  return kd_loss(phi, retained, items, memory, 1.0, grad, q_grad);
}

struct LocalTrainingResult {
  ItemTableD items;
  double mean_loss = 0.0;
  std::size_t batches = 0;
  std::optional<std::size_t> last_shift;
};

// Local update: copy Q_g, then E epochs of minibatch SGD on
// Rec + lambda_KD * KD over the user's training positives and fresh negatives.
// Phi is updated in place; throws DivergenceError on a non-finite loss.
LocalTrainingResult client_update(ClientState& state, const ItemTableD& global,
                                  const RoundContext& context, const ClientConfig& config);

RetainedKnowledge finalize_block(const ClientState& state, const ItemTableD& final_items,
                                 std::size_t n, bool exclude_train = false);

void add_transmission_noise(ItemTableD& items, double lambda, Rng& rng);
double sample_laplace(double scale, Rng& rng);

// Owns every client's private state and local data.
class ClientPool final : public ClientRuntime {
 public:
  explicit ClientPool(ClientConfig config);

  std::optional<ClientUpload> train(UserId user, const ItemTableD& global,
                                    const RoundContext& context) override;
  void finalize_block(const ItemTableD& final_global) override;
  void register_users(std::span<const UserId> users) override;
  std::vector<UserId> eligible_users() const override;
  double mean_last_loss(std::span<const UserId> users) const override;
  double mean_last_shift(std::span<const UserId> users) const override;

  // Hands each registered client its slice of the block's training data.
  void begin_block(const DataBlock& block);

  // Simulator hooks (evaluation and analyses run on the client side).
  bool has_user(UserId user) const { return clients_.count(user) != 0; }
  Eigen::VectorXd logits(UserId user, const ItemTableD& items) const;
  std::optional<std::size_t> current_shift(UserId user, const ItemTableD& items) const;
  const ClientState& state(UserId user) const { return clients_.at(user); }
  std::size_t failures() const { return failures_; }
  const ClientConfig& config() const { return config_; }

  // Copies and restores of all private parameters (best-round selection).
  std::map<UserId, PrivateParams> snapshot() const;
  void restore(const std::map<UserId, PrivateParams>& params);

 private:
  ClientConfig config_;
  std::map<UserId, ClientState> clients_;
  std::vector<UserId> eligible_;
  std::atomic<std::size_t> failures_{0};
};

}  // namespace fcrec
