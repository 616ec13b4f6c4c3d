#ifndef CCMT_AUTODIFF_HPP_
#define CCMT_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ccmt/tensor.hpp"

namespace ccmt {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// that produced it is alive and not cleared.
template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Counters for numerical guards that fired during a forward pass.
struct TapeDiagnostics {
  std::size_t clamped_logs = 0;        // log-likelihood arguments clamped at 1e-12
  std::size_t zero_power_batches = 0;  // power normalization hit the epsilon guard
};

/// Linear record of a forward pass. Nodes are appended in execution order, so
/// the record is already topologically sorted and backward() is a single
/// reverse sweep.
template <class T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(TensorT value);
  Var<T> parameter(TensorT value);

  /// Appends the output of an op. `backward` is only kept (and only called)
  /// when at least one input requires a gradient.
  Var<T> record(TensorT value, std::span<const Var<T>> inputs, BackwardFn backward);

  const TensorT& value(std::size_t id) const { return nodes_[id].value; }
  const TensorT& value(Var<T> v) const { return nodes_[v.id()].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() root w.r.t. `v`; zeros if `v` was never
  /// reached.
  TensorT grad(Var<T> v) const;

  /// Gradient buffer of node `id`, zero-allocated on first use. Ops call this
  /// from their backward functions to accumulate into inputs.
  TensorT& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Reverse sweep from a scalar root. Throws ContractError otherwise.
  void backward(Var<T> root);

  std::size_t size() const noexcept { return nodes_.size(); }
  TapeDiagnostics& diagnostics() noexcept { return diagnostics_; }
  const TapeDiagnostics& diagnostics() const noexcept { return diagnostics_; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  TapeDiagnostics diagnostics_;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

enum class Activation { relu, tanh, sigmoid, softmax };

namespace ops {

/// 3x3, stride 1, zero padding 1. Input [B,H,W,Cin] or [H,W,Cin]; kernel
/// [3,3,Cin,Cout]; bias [Cout].
template <class T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Var<T> bias);

/// maxpool2(activation(conv2d(input, kernel, bias), relu)) as one op; same
/// values and gradients, fewer passes over memory.
template <class T>
Var<T> conv_relu_pool(Var<T> input, Var<T> kernel, Var<T> bias);

/// 2x2 window, stride 2; a trailing odd row/column is dropped.
template <class T>
Var<T> maxpool2(Var<T> input);

/// Affine map. Input [B,n] or [n]; weights [n,m]; bias [m].
template <class T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias);

/// Elementwise for relu/tanh/sigmoid; softmax normalizes the last axis.
template <class T>
Var<T> activation(Var<T> input, Activation kind);

template <class T>
Var<T> reshape(Var<T> input, Shape shape);

/// Concatenation of [B,n_k] inputs along the last axis.
template <class T>
Var<T> concat(std::span<const Var<T>> inputs);

template <class T>
Var<T> add(Var<T> a, Var<T> b);

/// a + c with c held constant (no gradient to c).
template <class T>
Var<T> add_constant(Var<T> a, const BasicTensor<T>& c);

template <class T>
Var<T> scale(Var<T> a, T factor);

/// Sum of all entries, shape [1].
template <class T>
Var<T> sum(Var<T> a);

/// Mean over the batch of -log p(label), with p the sigmoid output of shape
/// [B,1] (or [B]). Arguments below 1e-12 are clamped.
template <class T>
Var<T> nll_binary(Var<T> prob, std::span<const int> labels);

/// Mean over the batch of -log p[label], p of shape [B,C].
template <class T>
Var<T> nll_categorical(Var<T> prob, std::span<const int> labels);

inline constexpr double kLogClamp = 1e-12;

}  // namespace ops

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ccmt

#endif  // CCMT_AUTODIFF_HPP_
