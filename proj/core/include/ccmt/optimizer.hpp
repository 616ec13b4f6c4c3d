#ifndef CCMT_OPTIMIZER_HPP_
#define CCMT_OPTIMIZER_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccmt/tensor.hpp"

namespace ccmt {

enum class OptimizerKind { adam, sgd };

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moments plus the step counter. Moments are allocated on the
/// first step with the shape of their parameter.
struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double lr = 0.0;
};

/// Gradient-descent updater (Adam by default, plain SGD for deterministic
/// tests). Updates are computed in double and stored back as float.
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::adam, AdamSettings adam = {});

  /// One descent step. `params[i]` and `grads[i]` must have equal shapes; the
  /// parameter set must stay the same across calls. A non-finite gradient
  /// throws NumericError naming the offending parameter (names optional).
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr,
            std::span<const std::string> names = {});

  const OptimizerState& state() const noexcept { return state_; }
  OptimizerKind kind() const noexcept { return kind_; }

 private:
  OptimizerKind kind_;
  AdamSettings adam_;
  OptimizerState state_;
};

}  // namespace ccmt

#endif  // CCMT_OPTIMIZER_HPP_
