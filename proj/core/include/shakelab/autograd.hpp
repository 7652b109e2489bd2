#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shakelab/tensor.hpp"

namespace shakelab {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value, accumulated by backward
  bool decay = true;
};

// Trainable parameters of a model in registration order. Each parameter owns
// exactly one gradient accumulator of identical shape.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor<T> value, bool decay);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  std::optional<std::size_t> find(std::string_view name) const;
  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;

  void zero_grad();
  // Total number of trainable scalars.
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter<T>> params_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Tape;

// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run reverse-mode graph. Nodes are appended in evaluation order,
// so reverse insertion order is a reverse topological order. A tape runs
// backward at most once.
template <typename T>
class Tape {
 public:
  // Receives the tape and the id of the node whose adjoint is being
  // propagated; reads tape.grad(self) and accumulates into its inputs.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = false);
  // Leaf bound to a parameter: reads its value in place and accumulates its
  // adjoint straight into parameter.grad. The parameter must outlive the tape.
  Var<T> parameter(Parameter<T>& parameter);

  // Records an op output. Throws NumericError if value is not finite.
  Var<T> record(std::string_view op, Tensor<T> value,
                std::initializer_list<Var<T>> inputs, Backward backward);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Adjoint of a node, zero-initialised on first access.
  Tensor<T>& grad(std::size_t id);
  const Tensor<T>* find_grad(std::size_t id) const;
  const Tensor<T>& grad(Var<T> v) { return grad(v.id()); }

  // Seeds d(root)/d(root) = 1; root must hold a single value.
  void backward(Var<T> root);
  void backward(Var<T> root, const Tensor<T>& seed);

  std::size_t size() const noexcept { return nodes_.size(); }
  // Name passed to record(), "input" or "parameter" for leaves.
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    Tensor<T> grad;
    const Tensor<T>* external_value = nullptr;
    Tensor<T>* external_grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  void check_owned(Var<T> v, std::string_view op) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace shakelab
