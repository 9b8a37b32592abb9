#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amdc/autodiff.hpp"
#include "amdc/tensor.hpp"

namespace amdc {

/// Named parameter tensors in insertion order.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  void erase_prefix(std::string_view prefix);

  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Total number of stored reals.
  std::size_t count() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  void reindex();
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using NamedGrads = std::map<std::string, Tensor>;

/// A ParamSet registered on a tape as leaves.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParamSet& params, bool requires_grad);
  ad::Var operator()(std::string_view name) const;
  bool contains(std::string_view name) const { return vars_.count(std::string(name)) != 0; }
  /// One gradient per bound parameter; zeros where the root does not depend on it.
  void collect(const ad::GradMap& grads, NamedGrads& out) const;
  /// Replaces the Var bound to an existing name.
  void rebind(std::string_view name, ad::Var v);

 private:
  std::vector<std::pair<std::string, ad::Var>> order_;
  std::unordered_map<std::string, ad::Var> vars_;
};

/// Stable 64-bit mix of a base seed with a label (FNV-1a + splitmix finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

/// Uniform on [-sqrt(1/fan_in), +sqrt(1/fan_in)].
Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed);

}  // namespace amdc
