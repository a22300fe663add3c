#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "raslf/error.hpp"

namespace raslf {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// Runtime switches shared by all primitives. Debug checks make every primitive
// verify that its output is finite.
struct RuntimeFlags {
  bool debug_checks = false;
  // Test fixture: scales the matmul input gradient so gradient checks fail.
  bool corrupt_matmul_grad = false;
  // Test fixture: perturbs every layer_norm output by a counter-driven amount.
  bool nondeterministic_layer_norm = false;
  std::uint64_t nondeterminism_counter = 0;
};

inline RuntimeFlags& runtime_flags() {
  thread_local RuntimeFlags flags;
  return flags;
}

/// Accumulates analytic FLOPs (multiply-accumulate = 2) of every primitive
/// evaluated on this thread while at least one FlopCounter is alive.
class FlopCounter {
 public:
  FlopCounter() : previous_(active()) { active() = this; }
  ~FlopCounter() { active() = previous_; }
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t total() const { return total_; }
  void reset() { total_ = 0; }

  static void add(std::uint64_t flops) {
    for (FlopCounter* c = active(); c != nullptr; c = c->previous_) {
      c->total_ += flops;
    }
  }

 private:
  static FlopCounter*& active() {
    thread_local FlopCounter* current = nullptr;
    return current;
  }

  FlopCounter* previous_;
  std::uint64_t total_ = 0;
};

template <class T>
class Tensor;
template <class T>
class Tape;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <class T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace detail

/// Dense row-major tensor handle. The values are immutable once the tensor
/// has been produced; copies share the same storage.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> values,
                          bool requires_grad = false) {
    if (raslf::numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(raslf::numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T fill) {
    const std::size_t n = raslf::numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, fill));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor scalar(T value) { return from_data({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + to_string(shape()) +
                       " is not a scalar");
    }
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::string_view op() const { return node_->op; }

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Ordered record of primitive applications. Primitives append to the tape
/// installed by the innermost TapeScope on the calling thread.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::Node<T>> node) {
    nodes_.push_back(std::move(node));
  }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Reverse traversal from a scalar loss. Leaf gradients accumulate across
  /// calls; interior gradients are recomputed each time.
  void backward(const Tensor<T>& loss) {
    if (nodes_.empty()) throw Error("backward: tape is empty");
    if (!loss.defined() || loss.numel() != 1) {
      throw ShapeError("backward: loss must be a scalar, got shape " +
                       (loss.defined() ? to_string(loss.shape()) : "<none>"));
    }
    const auto& target = loss.node();
    const auto it = std::find(nodes_.begin(), nodes_.end(), target);
    if (it == nodes_.end()) {
      throw Error("backward: loss was not produced on this tape");
    }
    for (auto& n : nodes_) n->grad.clear();
    target->grad.assign(1, T(1));
    for (auto rit = std::make_reverse_iterator(it + 1); rit != nodes_.rend();
         ++rit) {
      auto& node = **rit;
      if (node.grad.empty() || !node.backward) continue;
      node.backward(node);
    }
  }

 private:
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
};

/// Installs a tape for the current thread for the lifetime of the scope.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape<T>()) {
    detail::active_tape<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Disables recording for the current thread (inference, finite differences).
template <class T>
class NoTapeScope {
 public:
  NoTapeScope() : previous_(detail::active_tape<T>()) {
    detail::active_tape<T>() = nullptr;
  }
  ~NoTapeScope() { detail::active_tape<T>() = previous_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Learnable tensor with a persistent gradient accumulator. Copies are deep.
template <class T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Shape shape)
      : name_(std::move(name)),
        tensor_(Tensor<T>::from_data(shape, std::vector<T>(raslf::numel(shape)),
                                     true)) {
    tensor_.node()->grad.assign(tensor_.numel(), T(0));
  }
  Parameter(const Parameter& other)
      : Parameter(other.name_, other.shape()) {
    std::copy(other.value().begin(), other.value().end(), value().begin());
    std::copy(other.grad().begin(), other.grad().end(), grad().begin());
  }
  Parameter& operator=(const Parameter& other) {
    if (this != &other) *this = Parameter(other);
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  void rename(std::string name) { name_ = std::move(name); }
  const Shape& shape() const { return tensor_.shape(); }
  std::size_t numel() const { return tensor_.numel(); }
  const Tensor<T>& tensor() const { return tensor_; }

  std::span<T> value() { return tensor_.node()->value; }
  std::span<const T> value() const { return tensor_.node()->value; }
  std::span<T> grad() { return tensor_.node()->grad; }
  std::span<const T> grad() const { return tensor_.node()->grad; }
  void zero_grad() { std::fill(grad().begin(), grad().end(), T(0)); }

 private:
  std::string name_;
  Tensor<T> tensor_;
};

template <class T>
using ParameterList = std::vector<Parameter<T>*>;

template <class T>
std::size_t count_scalars(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->numel();
  return n;
}

template <class T>
void zero_grads(const ParameterList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace raslf
