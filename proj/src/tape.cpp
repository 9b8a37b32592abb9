#include <algorithm>
#include <optional>

#include "amdc/autodiff.hpp"
#include "amdc/error.hpp"

namespace amdc::ad {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Tensor* GradMap::find(const Var& leaf) const {
  auto it = grads_.find(leaf.id());
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradMap::get(const Var& leaf) const {
  if (const Tensor* g = find(leaf)) return *g;
  return Tensor::zeros(leaf.shape());
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  n.op = requires_grad ? "leaf" : "const";
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs,
                 BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  bool any = false;
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError("op mixes Vars from different tapes");
    n.inputs.push_back(v.id());
    any = any || nodes_[v.id()].requires_grad;
  }
  n.requires_grad = grad_enabled_ && any;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(const Var& root) const {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  const Node& r = nodes_.at(root.id());
  if (r.value.numel() != 1) {
    throw ContractError("backward root must be a scalar, got shape " + r.value.shape().str());
  }
  GradMap out;
  if (!r.requires_grad) return out;

  std::vector<std::optional<Tensor>> grads(root.id() + 1);
  grads[root.id()] = Tensor::full(r.value.shape(), 1.0);

  std::vector<const Tensor*> in_vals;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    if (!grads[id]) continue;
    const Node& n = nodes_[id];
    if (n.is_leaf) {
      out.grads_.emplace(id, std::move(*grads[id]));
      grads[id].reset();
      continue;
    }
    if (!n.backward) {
      grads[id].reset();
      continue;
    }
    in_vals.clear();
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      in_vals.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (!grads[in]) grads[in] = Tensor::zeros(nodes_[in].value.shape());
        in_grads.push_back(&*grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    // An op may list the same input twice; both slots then share one buffer.
    n.backward(BackwardCtx{*grads[id], n.value, in_vals, in_grads});
    grads[id].reset();
  }
  return out;
}

}  // namespace amdc::ad
