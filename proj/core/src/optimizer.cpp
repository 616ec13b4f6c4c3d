#include "ccmt/optimizer.hpp"

#include <cmath>

#include "ccmt/error.hpp"

namespace ccmt {

Optimizer::Optimizer(OptimizerKind kind, AdamSettings adam) : kind_(kind), adam_(adam) {}

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr,
                     std::span<const std::string> names) {
  if (params.size() != grads.size()) {
    throw ContractError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ShapeError("optimizer: parameter " + shape_string(params[i]->shape()) +
                       " vs gradient " + shape_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) {
      const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
      throw NumericError("non-finite gradient for parameter " + name + " at optimizer step " +
                         std::to_string(state_.step + 1));
    }
  }

  if (kind_ == OptimizerKind::adam) {
    if (state_.first_moment.empty()) {
      for (auto* p : params) {
        state_.first_moment.emplace_back(p->shape());
        state_.second_moment.emplace_back(p->shape());
      }
    } else if (state_.first_moment.size() != params.size()) {
      throw ContractError("optimizer: parameter set changed between steps");
    }
  }

  ++state_.step;
  state_.lr = lr;

  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] = static_cast<float>(double(p[j]) - lr * double(grads[i][j]));
      }
    }
    return;
  }

  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(adam_.beta1, t);
  const double c2 = 1.0 - std::pow(adam_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      const double mj = adam_.beta1 * m[j] + (1.0 - adam_.beta1) * g;
      const double vj = adam_.beta2 * v[j] + (1.0 - adam_.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + adam_.epsilon);
      p[j] = static_cast<float>(double(p[j]) - update);
    }
  }
}

}  // namespace ccmt
