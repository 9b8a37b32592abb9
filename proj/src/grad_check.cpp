#include <algorithm>
#include <cmath>

#include "amdc/autodiff.hpp"
#include "amdc/error.hpp"

namespace amdc::ad {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  NoGradGuard guard(tape);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  if (out.value().numel() != 1) throw ContractError("grad_check: function must be scalar");
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
    const Var root = f(tape, vars);
    const GradMap grads = tape.backward(root);
    for (const Var& v : vars) analytic.push_back(grads.get(v));
  }

  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double orig = inputs[k][i];
      probe[k][i] = orig + eps;
      const double fp = evaluate(f, probe);
      probe[k][i] = orig - eps;
      const double fm = evaluate(f, probe);
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k][i];
      const double diff = std::abs(a - numeric);
      double err = 0.0;
      if (diff >= kGradCheckAbsFloor) err = diff / std::max(std::abs(a), std::abs(numeric));
      if (!(err <= result.max_rel_error)) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace amdc::ad
