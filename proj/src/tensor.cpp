#include "pat/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pat/error.hpp"

namespace pat {

namespace {

thread_local bool t_grad_enabled = true;
thread_local BackwardStats t_backward_stats;
thread_local DetachTapeScope* t_tape = nullptr;
thread_local ActivationTrace* t_trace = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) {
    n *= extent;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) {
    grad.assign(data.size(), 0.0);
  }
  return grad;
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  if (t_trace) {
    t_trace->record("leaf");
  }
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_vector({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::values() const { return node_->data; }

std::span<double> Tensor::leaf_values() {
  if (!node_->inputs.empty() || node_->backward) {
    throw PipelineError("leaf_values() called on a non-leaf tensor");
  }
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

std::vector<double> Tensor::to_vector() const { return node_->data; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) {
    throw PipelineError("requires_grad can only be toggled on leaves");
  }
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_->inputs.empty() && !node_->backward; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) {
    return std::vector<double>(numel(), 0.0);
  }
  return node_->grad;
}

std::span<const double> Tensor::grad_view() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

const char* Tensor::op_name() const { return node_->op; }

void Tensor::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() requires a single-element tensor, got " +
                         shape_str(shape()));
  }
  t_backward_stats = {};
  if (!node_->requires_grad) {
    return;
  }

  // Iterative post-order DFS gives a topological order of the subgraph that
  // requires gradients.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<detail::Node*, std::size_t> visits;
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    const auto count = ++visits[node];
    t_backward_stats.nodes_visited += 1;
    t_backward_stats.max_visits_per_node =
        std::max(t_backward_stats.max_visits_per_node, count);
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

BackwardStats last_backward_stats() { return t_backward_stats; }

DetachTapeScope::DetachTapeScope(DetachMode mode) : mode_(mode), previous_(t_tape) {
  t_tape = this;
}

DetachTapeScope::~DetachTapeScope() { t_tape = previous_; }

void DetachTapeScope::set_mode(DetachMode mode) {
  mode_ = mode;
  cursor_ = 0;
  if (mode == DetachMode::Record) {
    values_.clear();
  }
}

DetachMode current_detach_mode() { return t_tape ? t_tape->mode() : DetachMode::Pass; }

ActivationTrace::ActivationTrace() : previous_(t_trace) { t_trace = this; }
ActivationTrace::~ActivationTrace() { t_trace = previous_; }

void ActivationTrace::record(const char* op) { ops_.emplace_back(op); }

std::size_t ActivationTrace::count(const std::string& op) const {
  return static_cast<std::size_t>(std::count(ops_.begin(), ops_.end(), op));
}

std::uint64_t ActivationTrace::fingerprint() const {
  // FNV-1a over the op sequence.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& op : ops_) {
    for (unsigned char c : op) {
      h = (h ^ c) * 0x100000001b3ULL;
    }
    h = (h ^ 0xff) * 0x100000001b3ULL;
  }
  return h;
}

void trace_event(const char* name) {
  if (t_trace) {
    t_trace->record(name);
  }
}

Tensor detail::make_result(const char* op, Shape shape, std::vector<double> data,
                           std::vector<Tensor> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (t_trace) {
    t_trace->record(op);
  }
  if (t_grad_enabled && backward) {
    bool any = false;
    for (const auto& in : inputs) {
      any = any || in.requires_grad();
    }
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) {
        node->inputs.push_back(in.node_ptr());
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// detach() lives here because it needs the tape internals.
Tensor detach(const Tensor& x) {
  DetachTapeScope* tape = t_tape;
  std::vector<double> values;
  if (tape && tape->mode_ == DetachMode::Replay) {
    if (tape->cursor_ >= tape->values_.size()) {
      throw PipelineError("detach tape replay ran past the recorded values");
    }
    values = tape->values_[tape->cursor_++];
    if (values.size() != x.numel()) {
      throw PipelineError("detach tape replay shape drift");
    }
  } else {
    values.assign(x.values().begin(), x.values().end());
    if (tape && tape->mode_ == DetachMode::Record) {
      tape->values_.push_back(values);
    }
  }
  return detail::make_result("detach", x.shape(), std::move(values), {}, nullptr);
}

}  // namespace pat
