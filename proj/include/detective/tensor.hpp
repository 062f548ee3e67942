#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace detective {

using Shape = std::vector<std::size_t>;

// Fixed 64-byte alignment keeps Eigen's vectorised reductions on the same
// summation order regardless of where the heap places a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), alignment));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Rank-3 tensors are laid out h x w x c.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (shape_size(shape_) != data_.size()) {
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " +
                                  shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // h x w x c indexing
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const {
    if (data_.size() != 1) {
      throw std::logic_error("item() on non-scalar tensor " +
                             shape_string(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Buffer data_;
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so the node list is already a topological order and backward simply walks
/// it in reverse.
class Tape {
 public:
  // Receives the node's own output value and the gradient flowing into it.
  using BackwardFn =
      std::function<void(Tape&, const Tensor&, std::span<const double>)>;

  explicit Tape(bool record_gradients = true)
      : record_gradients_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_gradients_; }

  Var constant(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.ref = &n.owned;
    return Var{this, nodes_.size() - 1};
  }

  /// Leaf owned by the tape that receives a gradient.
  Var variable(Tensor value) {
    Var v = constant(std::move(value));
    nodes_[v.id].requires_grad = record_gradients_;
    return v;
  }

  /// Leaf referencing externally owned storage (a model parameter). The
  /// referenced tensor must outlive the tape. Registering the same tensor
  /// twice returns the same node.
  Var parameter(const Tensor& value) {
    if (auto it = parameters_.find(&value); it != parameters_.end()) {
      return Var{this, it->second};
    }
    Node& n = nodes_.emplace_back();
    n.ref = &value;
    n.requires_grad = record_gradients_;
    parameters_.emplace(&value, nodes_.size() - 1);
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return *node(v).ref; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records the output of an op. The backward function is kept only if one
  /// of the inputs needs a gradient.
  Var record(Tensor value, bool requires_grad, BackwardFn backward) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.ref = &n.owned;
    n.requires_grad = requires_grad && record_gradients_;
    if (n.requires_grad) n.backward = std::move(backward);
    return Var{this, nodes_.size() - 1};
  }

  bool any_requires_grad(std::initializer_list<Var> vars) const {
    if (!record_gradients_) return false;
    for (Var v : vars) {
      if (node(v).requires_grad) return true;
    }
    return false;
  }

  /// Gradient buffer of a node, allocated as zeros on first use.
  std::span<double> grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.ref->size(), 0.0);
    return n.grad;
  }

  /// Computes d(loss)/d(node) for every node. Gradients from a previous
  /// backward call are discarded, not accumulated.
  void backward(Var loss) {
    if (loss.tape != this || loss.id >= nodes_.size()) {
      throw std::logic_error("backward called before a forward pass on this tape");
    }
    if (value(loss).size() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got " +
                                  shape_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, *n.ref, n.grad);
    }
    has_gradients_ = true;
  }

  /// Gradient of the last backward pass; zeros for nodes the loss does not
  /// depend on.
  Tensor grad(Var v) const {
    if (!has_gradients_) throw std::logic_error("no backward pass has run");
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.ref->shape());
    Tensor g(n.ref->shape());
    std::copy(n.grad.begin(), n.grad.end(), g.data().begin());
    return g;
  }

  /// Gradient for an externally owned parameter; zeros if it was never used.
  Tensor grad_for(const Tensor& parameter) const {
    auto it = parameters_.find(&parameter);
    if (it == parameters_.end()) return Tensor(parameter.shape());
    return grad(Var{const_cast<Tape*>(this), it->second});
  }

  /// Adds the parameter's gradient into `sink` without materialising a copy.
  void accumulate_grad_for(const Tensor& parameter, std::span<double> sink) const {
    auto it = parameters_.find(&parameter);
    if (it == parameters_.end()) return;
    const Node& n = nodes_[it->second];
    for (std::size_t i = 0; i < n.grad.size(); ++i) sink[i] += n.grad[i];
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    bool requires_grad = false;
    Buffer grad;
    BackwardFn backward;
  };

  const Node& node(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw std::logic_error("variable does not belong to this tape");
    }
    return nodes_[v.id];
  }

  bool record_gradients_;
  bool has_gradients_ = false;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> parameters_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace detective
