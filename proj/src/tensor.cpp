#include "hublab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace hublab {

namespace {
thread_local bool g_grad_mode = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

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

std::vector<float>& detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= impl_->shape.size()) throw DimensionError("dimension index out of range");
  return impl_->shape[i];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const float> Tensor::data() const { return impl_->data; }

std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const { return impl_->grad; }

std::span<float> Tensor::mutable_grad() { return impl_->grad_buffer(); }

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
  return from(impl_->shape, impl_->data, false);
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!impl_->node) {
    if (!impl_->requires_grad) throw UsageError("backward() on a tensor that is not part of a graph");
    impl_->grad_buffer()[0] += 1.0f;
    return;
  }
  if (impl_->node->consumed) throw UsageError("backward() called twice on the same graph");

  // Iterative post-order DFS gives a topological order of graph tensors.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      detail::TensorImpl* child = t->node->inputs[next++].get();
      if (child->node && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  impl_->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (t->node->consumed) throw UsageError("backward() reached an already consumed graph node");
    t->grad_buffer();
    t->node->backward(*t);
    t->node->consumed = true;
  }
  // Release intermediates; leaves keep their gradients.
  for (auto* t : order) {
    t->node->inputs.clear();
    t->node->backward = nullptr;
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }

NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(const detail::TensorImpl& out)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!g_grad_mode) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

}  // namespace hublab
