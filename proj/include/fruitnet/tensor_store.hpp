#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fruitnet/tensor.hpp"

namespace fruitnet {

/// Named tensors in insertion order. Names are unique.
template <typename Scalar>
class TensorStore {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  /// Inserts or replaces; replacement keeps the original position.
  void set(const std::string& name, Tensor<Scalar> tensor) {
    if (auto it = index_.find(name); it != index_.end()) {
      entries_[it->second].second = std::move(tensor);
      return;
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(tensor));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Tensor<Scalar>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }
  Tensor<Scalar>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  const Tensor<Scalar>& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw LoadError("no tensor named '" + name + "'");
  }
  Tensor<Scalar>& at(const std::string& name) {
    if (auto* t = find(name)) return *t;
    throw LoadError("no tensor named '" + name + "'");
  }

  void erase(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) return;
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  Index parameter_count() const {
    Index total = 0;
    for (const auto& [name, t] : entries_) total += t.size();
    return total;
  }

  template <typename Other>
  TensorStore<Other> cast() const {
    TensorStore<Other> out;
    for (const auto& [name, t] : entries_) out.set(name, t.template cast<Other>());
    return out;
  }

  friend bool operator==(const TensorStore& a, const TensorStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using WeightStore = TensorStore<float>;

}  // namespace fruitnet
