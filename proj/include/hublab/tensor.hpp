#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hublab/errors.hpp"

namespace hublab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

// One recorded operation. `inputs` keeps the operands alive until backward
// has run; `backward` reads the output gradient and accumulates into inputs.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  std::vector<float>& grad_buffer();
};

}  // namespace detail

// Dense row-major float32 tensor with reverse-mode autodiff.
//
// A Tensor is a cheap handle; copies share storage. Operations never mutate
// their inputs, so a graph built by the ops in ops.hpp stays valid until
// backward() consumes it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const float> data() const;
  // Direct write access. Only meant for leaves (parameters, optimizer
  // updates, hook application on inference tensors).
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  // Same values, no graph history.
  Tensor detach() const;
  Tensor clone() const;

  // Populates gradients on every reachable requires_grad tensor. The loss
  // must be a single-element tensor; a graph can be consumed only once.
  void backward() const;

  // Internal plumbing for ops.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
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

bool grad_mode_enabled();

// Builds an op output. When recording is on and any input requires grad,
// attaches a node whose backward closure receives the finished output.
Tensor make_result(Shape shape, std::vector<float> values,
                   std::vector<Tensor> inputs,
                   std::function<void(const detail::TensorImpl& out)> backward);

}  // namespace hublab
