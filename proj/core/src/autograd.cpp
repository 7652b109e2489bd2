#include "shakelab/autograd.hpp"

#include "shakelab/errors.hpp"

namespace shakelab {

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Tensor<T> value, bool decay) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor<T> grad(value.shape());
  params_.push_back({std::move(name), std::move(value), std::move(grad), decay});
  return params_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParamSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
Parameter<T>& ParamSet<T>::get(std::string_view name) {
  auto idx = find(name);
  if (!idx) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return params_[*idx];
}

template <typename T>
const Parameter<T>& ParamSet<T>::get(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw ConfigError("no parameter named '" + std::string(name) + "'");
  return params_[*idx];
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad) {
  if (consumed_) throw UsageError("tape already ran backward");
  Node node;
  node.op = "input";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& parameter) {
  if (consumed_) throw UsageError("tape already ran backward");
  Node node;
  node.op = "parameter";
  node.external_value = &parameter.value;
  node.external_grad = &parameter.grad;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::check_owned(Var<T> v, std::string_view op) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw UsageError("op '" + std::string(op) +
                     "' received a value that was not recorded on this tape");
  }
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value,
                       std::initializer_list<Var<T>> inputs,
                       Backward backward) {
  if (consumed_) throw UsageError("tape already ran backward");
  bool needs_grad = false;
  for (const Var<T>& in : inputs) {
    check_owned(in, op);
    needs_grad = needs_grad || nodes_[in.id()].requires_grad;
  }
  if (!value.all_finite()) {
    throw NumericError("op '" + std::string(op) + "' produced a non-finite value");
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.requires_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external_value ? *n.external_value : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.external_grad) return *n.external_grad;
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::find_grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.external_grad) return n.external_grad;
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (!root.valid() || &root.tape() != this || root.id() >= nodes_.size()) {
    throw UsageError("backward called before a forward pass recorded its root");
  }
  if (value(root.id()).size() != 1) {
    throw UsageError("backward without a seed needs a scalar root, got " +
                     shape_string(value(root.id()).shape()));
  }
  backward(root, Tensor<T>(value(root.id()).shape(), T{1}));
}

template <typename T>
void Tape<T>::backward(Var<T> root, const Tensor<T>& seed) {
  if (!root.valid() || &root.tape() != this || root.id() >= nodes_.size()) {
    throw UsageError("backward called before a forward pass recorded its root");
  }
  if (consumed_) throw UsageError("tape already ran backward");
  if (seed.shape() != value(root.id()).shape()) {
    throw ConfigError("backward seed shape " + shape_string(seed.shape()) +
                      " does not match root " +
                      shape_string(value(root.id()).shape()));
  }
  consumed_ = true;
  grad(root.id()) += seed;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (!find_grad(i)) continue;  // not on a path to the root
    n.backward(*this, i);
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace shakelab
