#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pat {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One vertex of the computation graph. Leaves have no inputs and no backward
// rule. A node only records its inputs when it requires a gradient.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major double tensor with reverse-mode gradient tracking.
// Handles share their node: copying a Tensor aliases the same values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutable access is reserved for leaves (parameters, inputs under test).
  std::span<double> leaf_values();
  double item() const;
  double value(std::size_t flat_index) const { return values()[flat_index]; }
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  // Gradient buffer; all zeros when nothing flowed into this tensor.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const;
  void zero_grad();

  // Reverse pass from a single-element tensor.
  void backward() const;

  const char* op_name() const;
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
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

// Counters for the last backward pass on this thread.
struct BackwardStats {
  std::size_t nodes_visited = 0;
  std::size_t max_visits_per_node = 0;
};
BackwardStats last_backward_stats();

// Stop-gradient tape. In Record mode every detach() stores its value; in
// Replay mode detach() returns the recorded values in call order. Finite
// differences evaluated under Replay differentiate the same surrogate
// function that backward() differentiates, with all discrete decisions
// (nearest-code assignments, matchings) frozen at the base point.
enum class DetachMode { Pass, Record, Replay };

class DetachTapeScope {
 public:
  explicit DetachTapeScope(DetachMode mode);
  ~DetachTapeScope();
  DetachTapeScope(const DetachTapeScope&) = delete;
  DetachTapeScope& operator=(const DetachTapeScope&) = delete;

  void set_mode(DetachMode mode);
  std::size_t recorded() const { return values_.size(); }
  DetachMode mode() const { return mode_; }

 private:
  friend Tensor detach(const Tensor& x);
  DetachMode mode_;
  std::vector<std::vector<double>> values_;
  std::size_t cursor_ = 0;
  DetachTapeScope* previous_;
};

DetachMode current_detach_mode();

// Records the op name of every node created on this thread while alive.
class ActivationTrace {
 public:
  ActivationTrace();
  ~ActivationTrace();
  ActivationTrace(const ActivationTrace&) = delete;
  ActivationTrace& operator=(const ActivationTrace&) = delete;

  void record(const char* op);
  const std::vector<std::string>& ops() const { return ops_; }
  std::size_t count(const std::string& op) const;
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> ops_;
  ActivationTrace* previous_;
};

// Marks a semantic event (e.g. "hs_attn") in the active trace, if any.
void trace_event(const char* name);

namespace detail {

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace detail

}  // namespace pat
