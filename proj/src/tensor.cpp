#include "dpmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dpmamba/autograd.hpp"

namespace dpm {

namespace {

thread_local bool g_grad_mode = true;

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw GraphError("use of an undefined Tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() {
  auto& impl = checked();
  if (impl.backward_fn) throw GraphError("in-place write to a non-leaf tensor");
  return impl.data;
}

double Tensor::item() const {
  const auto& impl = checked();
  if (impl.data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(impl.shape));
  }
  return impl.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& impl = checked();
  if (index.size() != impl.shape.size()) {
    throw ShapeError("at(): index rank does not match " + shape_str(impl.shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl.shape[axis]) throw ShapeError("at(): index out of range for " + shape_str(impl.shape));
    flat = flat * impl.shape[axis] + i;
    ++axis;
  }
  return impl.data[flat];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& impl = checked();
  if (impl.backward_fn && !on) throw GraphError("cannot stop tracking a recorded op output");
  impl.requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !checked().backward_fn; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const { return checked().grad; }

void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = checked().shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw GraphError("backward() on a loss that is not connected to any tracked tensor");
  }

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root.grad.empty()) root.grad.assign(1, 0.0);
  root.grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (!node->backward_fn) continue;
    if (!node->grad.empty()) node->backward_fn(*node);
    // Intermediate gradients are scratch; only leaves keep theirs.
    std::vector<double>().swap(node->grad);
  }
}

namespace autograd {

namespace {

Tensor make_result_impl(std::string_view op, Shape shape, std::vector<double> values,
                        std::span<const Tensor> inputs, BackwardFn backward) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(std::string(op) + ": internal shape " + shape_str(shape) +
                     " does not match value count " + std::to_string(values.size()));
  }
  if (g_finite_checks) {
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericalError(std::string(op) + " produced a non-finite value");
    }
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  const bool track =
      g_grad_mode && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (track && backward) {
    impl->requires_grad = true;
    for (const auto& t : inputs) {
      if (t.defined()) impl->parents.push_back(t.impl());
    }
    impl->backward_fn = [fn = std::move(backward)](const detail::TensorImpl& out) {
      fn(out.grad, out.data);
    };
  }
  return Tensor(std::move(impl));
}

}  // namespace

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(values),
                          std::span<const Tensor>(inputs.begin(), inputs.size()),
                          std::move(backward));
}

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(values), inputs, std::move(backward));
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  auto& impl = *t.impl();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void require_shape(std::string_view op, const Tensor& t, const Shape& expected) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(op) + ": expected shape " + shape_str(expected) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace autograd

}  // namespace dpm
