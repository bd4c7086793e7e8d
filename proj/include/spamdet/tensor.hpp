#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spamdet {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first touched by backward
  bool requires_grad = false;

  std::vector<float>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float32 tensor of rank 1 to 3.
///
/// A Tensor is a shared handle: copies alias the same storage, like the
/// tensors of most autograd libraries. Use clone() for an independent copy.
/// Values produced by ops are never mutated afterwards; only leaf parameters
/// are updated in place by the optimizer.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  // Accumulated gradient; all zeros if nothing has flowed into this tensor.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  Tensor clone() const;

  detail::TensorNode& node() const { return *node_; }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations executed on one thread.
///
/// Constructing a tape makes it the active tape for the current thread until
/// it is destroyed; ops whose inputs require gradients append a backward rule
/// to it. Without an active tape ops run in pure inference mode and record
/// nothing. A tape serves exactly one backward pass.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(const Tensor& output, std::function<void()> backward_rule);

  // Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse
  // execution order. Gradients accumulate into leaf tensors; the caller
  // clears them between steps.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward_rule;
  };

  std::vector<Record> records_;
  GradTape* previous_ = nullptr;
  bool consumed_ = false;
};

}  // namespace spamdet
