#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sfbnet/errors.hpp"

namespace sfbnet {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node;

/// Propagates `self.grad` into the gradients of `self.parents`.
template <typename T>
using BackwardFn = std::function<void(Node<T>& self)>;

/// Storage and graph record behind a Tensor. Nodes are shared; a result node
/// keeps its parents alive until it is itself released.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<T>>> parents;
  BackwardFn<T> backward;

  Node(Shape s, std::vector<T> d);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  /// Zero-initialised gradient buffer, allocated on first use.
  std::vector<T>& ensure_grad();

 private:
  std::size_t tracked_bytes_ = 0;
};

/// Thread-local switch for graph recording. Ops executed while recording is
/// disabled produce leaf results.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with optional participation in reverse-mode
/// differentiation. Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Extent of `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty span when nothing has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const;

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable tensor that requires them.
  void backward() const;

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of an op. When recording is enabled and any parent
/// requires gradients the node is linked into the graph with `backward`;
/// otherwise it is returned as a plain leaf.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents, BackwardFn<T> backward);

/// Ordered record of the graph reachable from a root. Nodes are stored in
/// topological order (inputs before consumers); `backward` replays them in
/// reverse, visiting each node exactly once.
template <typename T>
class GradTape {
 public:
  static GradTape record(const Tensor<T>& root);

  void backward();
  const std::vector<Node<T>*>& nodes() const noexcept { return order_; }

 private:
  Node<T>* root_ = nullptr;
  std::vector<Node<T>*> order_;
};

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace sfbnet
