#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmlm/tensor.hpp"

namespace cmlm {

// Named, ordered collection of learnable tensors. Indices are stable for the
// lifetime of the store and double as parameter ids on a tape.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor<T>& operator[](std::size_t i) const { return values_.at(i); }
  Tensor<T>& operator[](std::size_t i) { return values_.at(i); }
  const Tensor<T>& get(std::string_view name) const { return values_[index(name)]; }
  Tensor<T>& get(std::string_view name) { return values_[index(name)]; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cmlm
