#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace docformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first gradient arrives
  bool requires_grad = false;
  bool detached = false;
  Tape* tape = nullptr;
  std::optional<std::size_t> node;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Append-only record of differentiable operations for one forward pass.
/// Backward closures run in strict reverse creation order.
class Tape {
 public:
  using Backward = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t record(Backward fn);
  void add_flops(std::uint64_t n) { flops_ += n; }
  std::uint64_t flops() const { return flops_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Runs nodes [0, last] in reverse. Marks the tape consumed.
  void run_backward(std::size_t last);
  void reset();

 private:
  std::vector<Backward> nodes_;
  std::uint64_t flops_ = 0;
  bool consumed_ = false;
};

// Tape that ops on the calling thread record onto.
Tape& current_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Dense row-major float64 tensor with an optional gradient buffer. Values
/// are fixed after creation except for leaf parameters, which the optimizer
/// updates in place through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, cut from the tape. Calling backward on it is an error.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::TensorData>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorData> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorData> impl_;
};

// Populates gradients of every requires_grad tensor reachable from loss.
void backward(const Tensor& loss);

}  // namespace docformer
