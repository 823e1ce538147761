#include "bcr/nn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace bcr::nn {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("shape", {shape}, "negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace {

std::string shape_error_message(const std::string& op,
                                const std::vector<Shape>& shapes,
                                const std::string& detail) {
  std::ostringstream os;
  os << op << ": shape mismatch";
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    os << (i ? ", " : " ") << shape_str(shapes[i]);
  }
  if (!detail.empty()) os << " (" << detail << ')';
  return os.str();
}

thread_local bool g_grad_enabled = true;

}  // namespace

ShapeError::ShapeError(const std::string& op, const std::vector<Shape>& shapes,
                       const std::string& detail)
    : std::runtime_error(shape_error_message(op, shapes, detail)),
      op_(op),
      shapes_(shapes) {}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("from", {shape},
                     "got " + std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined Tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

int Tensor::dim(int axis) const {
  const auto& s = shape();
  const int n = static_cast<int>(s.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw ShapeError("dim", {s}, "axis out of range");
  return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const float> Tensor::data() const { return impl().data; }
std::span<float> Tensor::mutable_data() { return impl().data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item", {shape()}, "expected one element");
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl().requires_grad = flag; }

std::span<const float> Tensor::grad() const { return impl().ensure_grad(); }
std::span<float> Tensor::mutable_grad() { return impl().ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0f);
}

bool Tensor::has_non_finite() const {
  for (float v : impl().data) {
    if (!std::isfinite(v)) return true;
  }
  return false;
}

Tensor Tensor::clone() const {
  return Tensor::from(shape(), impl().data, false);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->data = this->impl().data;
  return Tensor(std::move(impl));
}

void Tensor::backward() {
  TensorImpl& root = impl();
  if (root.backward_done) {
    throw AutogradError("backward: graph already consumed by a previous call");
  }
  if (root.data.size() != 1) {
    throw AutogradError("backward: loss must be a scalar, got shape " +
                        shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw AutogradError("backward: loss is detached from any parameter");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorImpl* child = t->node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  root.ensure_grad()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->node || !t->node->backward) continue;
    t->ensure_grad();
    for (auto& in : t->node->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    t->node->backward(*t);
  }
  for (TensorImpl* t : order) {
    if (t->node) {
      t->node.reset();
      t->backward_done = true;
    }
  }
  root.backward_done = true;
}

namespace detail {

namespace {

Tensor make_output_impl(Shape shape, const char* op,
                        const std::vector<const Tensor*>& inputs) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), 0.0f);
  impl->shape = std::move(shape);
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    impl->requires_grad = true;
    impl->node = std::make_shared<Node>();
    impl->node->op = op;
    for (const Tensor* t : inputs) impl->node->inputs.push_back(t->impl_ptr());
  }
  return Tensor(std::move(impl));
}

}  // namespace

Tensor make_output(Shape shape, const char* op,
                   std::initializer_list<const Tensor*> inputs) {
  return make_output_impl(std::move(shape), op, std::vector<const Tensor*>(inputs));
}

Tensor make_output(Shape shape, const char* op, const std::vector<Tensor>& inputs) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) ptrs.push_back(&t);
  return make_output_impl(std::move(shape), op, ptrs);
}

}  // namespace detail

}  // namespace bcr::nn
