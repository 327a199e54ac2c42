#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fcrec/item_table.hpp"
#include "fcrec/types.hpp"

namespace fcrec {

// The only thing a client ever sends to the server: its locally trained copy
// of the public item table. Private parameters and interactions have no
// representation here.
struct ClientUpload {
  ItemTableD items;
};

// Read-only broadcast that accompanies Q_g for one round.
struct RoundContext {
  int block = 0;
  int round = 0;
  // Q_g^{t-1}, frozen for the block; null during the base block.
  const ItemTableD* previous_block_items = nullptr;
};

// Server-side view of the client population. Implementations own every
// client's private state; the server only sees uploads.
class ClientRuntime {
 public:
  virtual ~ClientRuntime() = default;

  // Local training for one sampled client. Returns nullopt when the client
  // aborted (divergence). Must be safe to call concurrently for distinct users.
  virtual std::optional<ClientUpload> train(UserId user, const ItemTableD& global,
                                            const RoundContext& context) = 0;

  // Block end: each client trained during the block snapshots its retained
  // knowledge against the final global table.
  virtual void finalize_block(const ItemTableD& final_global) = 0;

  // Registers clients first seen in the next block with fresh private state.
  virtual void register_users(std::span<const UserId> users) = 0;

  // Users holding training data in the current block.
  virtual std::vector<UserId> eligible_users() const = 0;

  // Mean local loss of the given clients in their last call to train().
  virtual double mean_last_loss(std::span<const UserId> users) const = 0;

  // Mean preference shift of the given clients in their last call to train(),
  // over clients that computed one; NaN when none did.
  virtual double mean_last_shift(std::span<const UserId> users) const = 0;
};

}  // namespace fcrec
