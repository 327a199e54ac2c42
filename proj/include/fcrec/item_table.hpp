#pragma once

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fcrec/types.hpp"

namespace fcrec {

// Bijection ItemId <-> row. Rows are assigned in insertion order, so the index
// of an earlier block is always a prefix of the index of a later one.
class ItemIndex {
 public:
  ItemIndex() = default;
  explicit ItemIndex(std::span<const ItemId> ids) {
    for (ItemId id : ids) append(id);
  }

  Eigen::Index append(ItemId id) {
    auto [it, inserted] = rows_.emplace(id, static_cast<Eigen::Index>(ids_.size()));
    if (!inserted) throw std::invalid_argument("ItemIndex: duplicate item id " + std::to_string(raw(id)));
    ids_.push_back(id);
    return it->second;
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(ids_.size()); }
  bool contains(ItemId id) const { return rows_.count(id) != 0; }
  Eigen::Index row(ItemId id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) throw std::out_of_range("ItemIndex: unknown item " + std::to_string(raw(id)));
    return it->second;
  }
  ItemId id(Eigen::Index row) const { return ids_[static_cast<std::size_t>(row)]; }
  const std::vector<ItemId>& ids() const { return ids_; }

  bool is_prefix_of(const ItemIndex& other) const {
    if (size() > other.size()) return false;
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] != other.ids_[i]) return false;
    return true;
  }

  friend bool operator==(const ItemIndex& a, const ItemIndex& b) { return a.ids_ == b.ids_; }

 private:
  std::vector<ItemId> ids_;
  std::unordered_map<ItemId, Eigen::Index> rows_;
};

// Item embedding table: |I| x d dense rows addressed through a shared index.
template <typename Scalar>
class ItemTable {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  ItemTable() = default;
  ItemTable(std::shared_ptr<const ItemIndex> index, Matrix rows)
      : index_(std::move(index)), rows_(std::move(rows)) {
    if (!index_) throw std::invalid_argument("ItemTable: null index");
    if (rows_.rows() != index_->size())
      throw std::invalid_argument("ItemTable: row count does not match index size");
  }

  static ItemTable zeros(std::shared_ptr<const ItemIndex> index, Eigen::Index dim) {
    const Eigen::Index n = index->size();
    return ItemTable(std::move(index), Matrix::Zero(n, dim));
  }

  const ItemIndex& index() const { return *index_; }
  const std::shared_ptr<const ItemIndex>& index_ptr() const { return index_; }

  Eigen::Index size() const { return rows_.rows(); }
  Eigen::Index dim() const { return rows_.cols(); }

  Matrix& rows() { return rows_; }
  const Matrix& rows() const { return rows_; }

  auto row(ItemId id) { return rows_.row(index_->row(id)); }
  auto row(ItemId id) const { return rows_.row(index_->row(id)); }

  bool contains(ItemId id) const { return index_ && index_->contains(id); }

  bool same_index(const ItemTable& other) const {
    return index_ == other.index_ || (index_ && other.index_ && *index_ == *other.index_);
  }

  bool all_finite() const { return rows_.allFinite(); }

 private:
  std::shared_ptr<const ItemIndex> index_;
  Matrix rows_;
};

using ItemTableD = ItemTable<double>;

}  // namespace fcrec
