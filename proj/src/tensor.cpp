#include "docformer/tensor.hpp"

#include <sstream>

#include "docformer/error.hpp"

namespace docformer {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t Tape::record(Backward fn) {
  if (consumed_) throw Error("tape already consumed by backward; reset before recording");
  nodes_.push_back(std::move(fn));
  return nodes_.size() - 1;
}

void Tape::run_backward(std::size_t last) {
  if (consumed_) throw Error("backward called twice on the same tape without reset");
  consumed_ = true;
  for (std::size_t i = last + 1; i-- > 0;) nodes_[i]();
}

void Tape::reset() {
  nodes_.clear();
  flops_ = 0;
  consumed_ = false;
}

namespace {
thread_local Tape default_tape;
thread_local Tape* active_tape = nullptr;
}  // namespace

Tape& current_tape() { return active_tape ? *active_tape : default_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }
TapeScope::~TapeScope() { active_tape = previous_; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto d = std::make_shared<detail::TensorData>();
  d->shape = shape;
  d->value = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->value.size(); }
std::span<const double> Tensor::data() const { return impl_->value; }
std::span<double> Tensor::mutable_data() { return impl_->value; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0, k = 0;
  for (auto i : index) {
    if (i >= s[k]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return impl_->value[flat];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t = from(shape(), impl_->value, false);
  t.impl_->detached = true;
  return t;
}

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl_->value, requires_grad); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& d = loss.impl();
  if (d->detached) throw Error("backward on a detached tensor");
  if (!d->requires_grad) return;  // constant loss: nothing depends on parameters
  if (!d->node) {
    // A leaf scalar parameter used directly as the loss.
    d->ensure_grad()[0] += 1.0;
    return;
  }
  d->ensure_grad()[0] = 1.0;
  d->tape->run_backward(*d->node);
}

}  // namespace docformer
