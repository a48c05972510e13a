#include "sfbnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "sfbnet/instrument.hpp"

namespace sfbnet {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool recording = true;

void check_shape(const Shape& shape, std::size_t count) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor", "non-positive extent in " + to_string(shape));
  }
  if (static_cast<std::size_t>(numel(shape)) != count) {
    throw ShapeError("tensor", "shape " + to_string(shape) + " does not match " +
                                   std::to_string(count) + " values");
  }
}
}  // namespace

bool grad_enabled() noexcept { return recording; }

NoGradGuard::NoGradGuard() noexcept : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

template <typename T>
Node<T>::Node(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
  tracked_bytes_ = data.size() * sizeof(T);
  memory::allocate(tracked_bytes_);
}

template <typename T>
Node<T>::~Node() {
  memory::release(tracked_bytes_);
}

template <typename T>
std::vector<T>& Node<T>::ensure_grad() {
  if (grad.empty()) {
    grad.assign(data.size(), T(0));
    memory::allocate(grad.size() * sizeof(T));
    tracked_bytes_ += grad.size() * sizeof(T);
  }
  return grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape, data.size());
  node_ = std::make_shared<Node<T>>(std::move(shape), std::move(data));
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = sfbnet::numel(shape);
  if (n <= 0) throw ShapeError("tensor", "non-positive extent in " + to_string(shape));
  return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("dim", "axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(r));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " +
                                        to_string(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != rank()) throw ShapeError("at", "index rank mismatch");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    const auto extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw ShapeError("at", "index out of range");
    flat = flat * extent + i;
  }
  return node_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (flag) node_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(shape()));
  }
  GradTape<T>::record(*this).backward();
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>(std::move(shape), std::move(data));
  node->op = op;
  const bool needs_grad =
      grad_enabled() && std::any_of(parents.begin(), parents.end(), [](const auto& p) {
        return p && p->requires_grad;
      });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
GradTape<T> GradTape<T>::record(const Tensor<T>& root) {
  GradTape tape;
  tape.root_ = root.node();
  // Iterative post-order DFS yields inputs before consumers.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(tape.root_, 0);
  visited.insert(tape.root_);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void GradTape<T>::backward() {
  if (root_ == nullptr || !root_->requires_grad) return;
  root_->ensure_grad()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   std::vector<std::shared_ptr<Node<float>>>, BackwardFn<float>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    BackwardFn<double>);

}  // namespace sfbnet
