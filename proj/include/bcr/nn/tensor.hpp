#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcr::nn {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when an op receives operands whose shapes it cannot combine.
/// The message names the op and every offending shape.
class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& op, const std::vector<Shape>& shapes,
             const std::string& detail = {});

  const std::string& op() const noexcept { return op_; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }

 private:
  std::string op_;
  std::vector<Shape> shapes_;
};

/// Misuse of the autograd tape (double backward, non-scalar loss, ...).
class AutogradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl;

// Tape entry. `inputs` keeps the parents alive until backward runs;
// `backward` reads the output gradient and accumulates into the inputs.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
  const char* op = "";
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::shared_ptr<Node> node;

  std::vector<float>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

/// Dense row-major f32 tensor with optional reverse-mode gradient.
///
/// Copies share storage: a Tensor is a handle. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  /// Gradient buffer; zeros when the tensor never received a gradient.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// True when any element is NaN or +-Inf.
  bool has_non_finite() const;

  /// Deep copy of data (no grad, no tape).
  Tensor clone() const;
  /// Shares data but drops the tape link and requires_grad.
  Tensor detach() const;

  /// Runs reverse-mode differentiation from this scalar. The tape is released
  /// afterwards; a second call on the same loss throws AutogradError.
  void backward();

  TensorImpl& impl() const;
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Whether newly created op outputs record tape entries (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Allocates an op output; attaches a node when any input requires grad and
// recording is enabled. The caller fills data and, if node != nullptr,
// sets node->backward.
Tensor make_output(Shape shape, const char* op,
                   std::initializer_list<const Tensor*> inputs);
Tensor make_output(Shape shape, const char* op,
                   const std::vector<Tensor>& inputs);

inline bool wants_grad(const TensorImpl& t) { return t.requires_grad; }

}  // namespace detail

}  // namespace bcr::nn
