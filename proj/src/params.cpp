#include "amdc/params.hpp"

#include <cmath>

#include "amdc/error.hpp"

namespace amdc {

void ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Tensor& ParamSet::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return entries_[it->second].second;
}

const Tensor& ParamSet::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + std::string(name));
  return entries_[it->second].second;
}

void ParamSet::erase_prefix(std::string_view prefix) {
  std::erase_if(entries_, [&](const auto& e) { return e.first.starts_with(prefix); });
  reindex();
}

void ParamSet::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

BoundParams::BoundParams(ad::Tape& tape, const ParamSet& params, bool requires_grad) {
  for (const auto& [name, t] : params.entries()) {
    ad::Var v = tape.leaf(t, requires_grad);
    order_.emplace_back(name, v);
    vars_.emplace(name, v);
  }
}

ad::Var BoundParams::operator()(std::string_view name) const {
  auto it = vars_.find(std::string(name));
  if (it == vars_.end()) throw ContractError("parameter not bound: " + std::string(name));
  return it->second;
}

void BoundParams::collect(const ad::GradMap& grads, NamedGrads& out) const {
  for (const auto& [name, v] : order_) out.insert_or_assign(name, grads.get(v));
}

void BoundParams::rebind(std::string_view name, ad::Var v) {
  auto it = vars_.find(std::string(name));
  if (it == vars_.end()) throw ContractError("parameter not bound: " + std::string(name));
  it->second = v;
  for (auto& entry : order_)
    if (entry.first == name) entry.second = v;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : label) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ull;
  }
  return splitmix(base ^ splitmix(h));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix(splitmix(splitmix(splitmix(base) ^ a) ^ b) ^ c);
}

Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform(shape, seed, -bound, bound);
}

}  // namespace amdc
