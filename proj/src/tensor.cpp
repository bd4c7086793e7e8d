#include "spamdet/tensor.hpp"

#include <numeric>
#include <sstream>
#include <utility>

#include "spamdet/errors.hpp"

namespace spamdet {

namespace {

thread_local GradTape* g_active_tape = nullptr;

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw DimensionError("tensor rank must be 1 to 3, got shape " + to_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in shape " + to_string(shape));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) {
  validate_shape(shape);
  node_ = std::make_shared<detail::TensorNode>();
  node_->data.assign(element_count(shape), 0.0f);
  node_->shape = std::move(shape);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t(std::move(shape));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  validate_shape(shape);
  if (element_count(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " elements, got " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().data.size(); }

std::span<const float> Tensor::data() const { return node().data; }

std::span<float> Tensor::mutable_data() { return node().data; }

float Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool on) {
  node().requires_grad = on;
  if (on) node_->grad_buffer();
}

std::span<const float> Tensor::grad() const { return node().grad_buffer(); }

std::span<float> Tensor::mutable_grad() { return node().grad_buffer(); }

void Tensor::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), 0.0f);
}

Tensor Tensor::clone() const {
  return Tensor(shape(), node_->data, node_->requires_grad);
}

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(const Tensor& output, std::function<void()> backward_rule) {
  records_.push_back({output.node_ptr(), std::move(backward_rule)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a loss that does not depend on any parameter");
  }
  consumed_ = true;
  loss.node().grad_buffer()[0] += 1.0f;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    // Outputs that never received gradient are off the loss path.
    if (it->output->grad.empty()) continue;
    it->backward_rule();
  }
}

}  // namespace spamdet
