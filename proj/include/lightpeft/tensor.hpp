#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lightpeft {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// Allocator whose value-construction leaves doubles uninitialised, so op
// outputs that are fully overwritten skip a redundant zero fill.
template <class T>
struct UninitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <class U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

using Buffer = std::vector<double, UninitAllocator<double>>;

// One value in the define-by-run graph. Leaves (parameters, inputs) have no
// backward function; op outputs hold their inputs and a closure that pushes
// the output gradient into them.
struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty means "no gradient yet"
  Buffer saved;  // op-specific values kept for backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();

  // Re-reads buffer capacities into the live-byte counter.
  void sync_accounting();
  double* ensure_grad();

 private:
  std::int64_t accounted_bytes_ = 0;
};

}  // namespace detail

// Handle to a dense row-major float64 array with an optional gradient.
// Copies share storage; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  // Deep copy as a fresh leaf (keeps requires_grad, drops grad and graph).
  Tensor clone() const;
  // Same values, cut from the graph, never requires grad.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Graph recording is on by default; a live guard turns it off on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Allocator-level accounting of every tensor buffer (values, grads, saved
// activations). Counts are process-wide.
struct MemoryStats {
  static std::int64_t live_bytes();
  static std::int64_t peak_bytes();
  static void reset_peak();
};

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
// Leaf gradients accumulate across calls; intermediate ones are rebuilt.
void backward(const Tensor& loss);

}  // namespace lightpeft
