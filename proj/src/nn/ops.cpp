#include "bcr/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace bcr::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMatrix>;
using ConstMapMat = Eigen::Map<const RowMatrix>;

int normalize_axis(int axis, int ndim, const char* op, const Shape& shape) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw ShapeError(op, {shape}, "axis out of range");
  return axis;
}

// View of a shape as [outer, axis, inner] around `axis`.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(shape[i]);
  v.len = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    v.inner *= static_cast<std::size_t>(shape[i]);
  }
  return v;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class Binary { add, sub, mul, min, max };

Tensor binary_op(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) {
    throw ShapeError(name, {a.shape(), b.shape()});
  }
  const Shape out_shape = a_big ? a.shape() : b.shape();
  Tensor out = detail::make_output(out_shape, name, {&a, &b});
  const auto& ad = a.impl().data;
  const auto& bd = b.impl().data;
  auto& od = out.impl().data;
  const std::size_t n = od.size();
  const std::size_t na = ad.size();
  const std::size_t nb = bd.size();
  for (std::size_t i = 0; i < n; ++i) {
    const float x = ad[i % na];
    const float y = bd[i % nb];
    switch (kind) {
      case Binary::add: od[i] = x + y; break;
      case Binary::sub: od[i] = x - y; break;
      case Binary::mul: od[i] = x * y; break;
      case Binary::min: od[i] = std::min(x, y); break;
      case Binary::max: od[i] = std::max(x, y); break;
    }
  }
  if (auto node = out.impl().node) {
    TensorImpl* pa = node->inputs[0].get();
    TensorImpl* pb = node->inputs[1].get();
    node->backward = [pa, pb, kind, n, na, nb](const TensorImpl& o) {
      for (std::size_t i = 0; i < n; ++i) {
        const float g = o.grad[i];
        const float x = pa->data[i % na];
        const float y = pb->data[i % nb];
        float ga = 0.0f, gb = 0.0f;
        switch (kind) {
          case Binary::add: ga = g; gb = g; break;
          case Binary::sub: ga = g; gb = -g; break;
          case Binary::mul: ga = g * y; gb = g * x; break;
          // Ties route the gradient to the first operand.
          case Binary::min: (x <= y ? ga : gb) = g; break;
          case Binary::max: (x >= y ? ga : gb) = g; break;
        }
        if (pa->requires_grad) pa->grad[i % na] += ga;
        if (pb->requires_grad) pb->grad[i % nb] += gb;
      }
    };
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  Tensor out = detail::make_output(x.shape(), name, {&x});
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(xd[i]);
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, bwd](const TensorImpl& o) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        px->grad[i] += o.grad[i] * bwd(px->data[i], o.data[i]);
      }
    };
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul", {a.shape(), b.shape()}, "expected 2-D operands");
  const int m = a.dim(0), k = a.dim(1);
  const int bk = transpose_b ? b.dim(1) : b.dim(0);
  const int n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) throw ShapeError("matmul", {a.shape(), b.shape()}, transpose_b ? "a @ b^T" : "a @ b");

  Tensor out = detail::make_output({m, n}, "matmul", {&a, &b});
  ConstMapMat am(a.impl().data.data(), m, k);
  ConstMapMat bm(b.impl().data.data(), b.dim(0), b.dim(1));
  MapMat om(out.impl().data.data(), m, n);
  if (transpose_b) {
    om.noalias() = am * bm.transpose();
  } else {
    om.noalias() = am * bm;
  }
  if (auto node = out.impl().node) {
    TensorImpl* pa = node->inputs[0].get();
    TensorImpl* pb = node->inputs[1].get();
    node->backward = [pa, pb, m, k, n, transpose_b](const TensorImpl& o) {
      ConstMapMat g(o.grad.data(), m, n);
      ConstMapMat av(pa->data.data(), m, k);
      if (pa->requires_grad) {
        MapMat ga(pa->grad.data(), m, k);
        if (transpose_b) {
          ConstMapMat bv(pb->data.data(), n, k);
          ga.noalias() += g * bv;
        } else {
          ConstMapMat bv(pb->data.data(), k, n);
          ga.noalias() += g * bv.transpose();
        }
      }
      if (pb->requires_grad) {
        if (transpose_b) {
          MapMat gb(pb->grad.data(), n, k);
          gb.noalias() += g.transpose() * av;
        } else {
          MapMat gb(pb->grad.data(), k, n);
          gb.noalias() += av.transpose() * g;
        }
      }
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::mul, "mul"); }
Tensor minimum(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::min, "minimum"); }
Tensor maximum(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::max, "maximum"); }

Tensor scale(const Tensor& x, float factor) {
  return unary_op(
      x, "scale", [factor](float v) { return v * factor; },
      [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& x, float value) {
  return unary_op(
      x, "add_scalar", [value](float v) { return v + value; },
      [](float, float) { return 1.0f; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](float v) { return std::exp(v); },
      [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](float v) { return std::log(v); },
      [](float v, float) { return 1.0f / v; });
}

Tensor gelu(const Tensor& x) {
  // tanh approximation
  constexpr float k0 = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float k1 = 0.044715f;
  return unary_op(
      x, "gelu",
      [](float v) { return 0.5f * v * (1.0f + std::tanh(k0 * (v + k1 * v * v * v))); },
      [](float v, float) {
        const float u = k0 * (v + k1 * v * v * v);
        const float t = std::tanh(u);
        const float du = k0 * (1.0f + 3.0f * k1 * v * v);
        return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
      });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  return unary_op(
      x, "clamp", [lo, hi](float v) { return std::clamp(v, lo, hi); },
      [lo, hi](float v, float) { return (v < lo || v > hi) ? 0.0f : 1.0f; });
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("softmax", {x.shape()}, "needs at least one axis");
  const std::size_t cols = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = cols ? x.numel() / cols : 0;
  Tensor out = detail::make_output(x.shape(), "softmax", {&x});
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * cols;
    float* yr = od.data() + r * cols;
    const float mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, rows, cols](const TensorImpl& o) {
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = o.data.data() + r * cols;
        const float* g = o.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[c]) * y[c];
        float* gx = px->grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          gx[c] += y[c] * (g[c] - static_cast<float>(dot));
        }
      }
    };
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("log_softmax", {x.shape()}, "needs at least one axis");
  const std::size_t cols = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = cols ? x.numel() / cols : 0;
  Tensor out = detail::make_output(x.shape(), "log_softmax", {&x});
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * cols;
    float* yr = od.data() + r * cols;
    const float mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(xr[c] - mx));
    const float lse = mx + static_cast<float>(std::log(total));
    for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, rows, cols](const TensorImpl& o) {
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = o.data.data() + r * cols;
        const float* g = o.grad.data() + r * cols;
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
        float* gx = px->grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          gx[c] += g[c] - std::exp(y[c]) * static_cast<float>(gsum);
        }
      }
    };
  }
  return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
  if (x.ndim() < 1 || weight.ndim() != 1 || weight.dim(0) != x.dim(-1)) {
    throw ShapeError("rms_norm", {x.shape(), weight.shape()});
  }
  const std::size_t cols = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = cols ? x.numel() / cols : 0;
  Tensor out = detail::make_output(x.shape(), "rms_norm", {&x, &weight});
  const auto& xd = x.impl().data;
  const auto& wd = weight.impl().data;
  auto& od = out.impl().data;
  std::vector<float> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += static_cast<double>(xr[c]) * xr[c];
    const float inv = 1.0f / std::sqrt(static_cast<float>(ss / cols) + eps);
    inv_rms[r] = inv;
    float* yr = od.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] * inv * wd[c];
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    TensorImpl* pw = node->inputs[1].get();
    node->backward = [px, pw, rows, cols, inv_rms = std::move(inv_rms)](const TensorImpl& o) {
      for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = px->data.data() + r * cols;
        const float* g = o.grad.data() + r * cols;
        const float inv = inv_rms[r];
        if (pw->requires_grad) {
          for (std::size_t c = 0; c < cols; ++c) pw->grad[c] += g[c] * xr[c] * inv;
        }
        if (px->requires_grad) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dot += static_cast<double>(g[c]) * pw->data[c] * xr[c];
          }
          const float coeff = static_cast<float>(dot) * inv * inv * inv / static_cast<float>(cols);
          float* gx = px->grad.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            gx[c] += g[c] * pw->data[c] * inv - xr[c] * coeff;
          }
        }
      }
    };
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.ndim() != 2) throw ShapeError("embedding", {table.shape()}, "table must be 2-D");
  const int vocab = table.dim(0);
  const std::size_t width = static_cast<std::size_t>(table.dim(1));
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw ShapeError("embedding", {table.shape()}, "id " + std::to_string(id) + " out of range");
    }
  }
  Tensor out = detail::make_output({static_cast<int>(ids.size()), table.dim(1)}, "embedding", {&table});
  const auto& td = table.impl().data;
  auto& od = out.impl().data;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * width, width, od.data() + i * width);
  }
  if (auto node = out.impl().node) {
    TensorImpl* pt = node->inputs[0].get();
    node->backward = [pt, width, ids = std::vector<int>(ids.begin(), ids.end())](const TensorImpl& o) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        float* gt = pt->grad.data() + static_cast<std::size_t>(ids[i]) * width;
        const float* g = o.grad.data() + i * width;
        for (std::size_t c = 0; c < width; ++c) gt[c] += g[c];
      }
    };
  }
  return out;
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask,
                   const Shape& mask_shape, float value) {
  if (!is_suffix(mask_shape, x.shape()) || mask.size() != shape_numel(mask_shape)) {
    throw ShapeError("masked_fill", {x.shape(), mask_shape});
  }
  Tensor out = detail::make_output(x.shape(), "masked_fill", {&x});
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  const std::size_t nm = mask.size();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = mask[i % nm] ? value : xd[i];
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, m = std::vector<std::uint8_t>(mask.begin(), mask.end())](const TensorImpl& o) {
      const std::size_t n = m.size();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (!m[i % n]) px->grad[i] += o.grad[i];
      }
    };
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", {}, "no inputs");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "concat", first);
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat", shapes, "rank differs");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != first[i]) throw ShapeError("concat", shapes);
    }
    out_shape[axis] += s[axis];
  }
  Tensor out = detail::make_output(out_shape, "concat", parts);
  const AxisView ov = axis_view(out_shape, axis);
  auto& od = out.impl().data;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const AxisView pv = axis_view(p.shape(), axis);
    const auto& pd = p.impl().data;
    for (std::size_t o = 0; o < pv.outer; ++o) {
      std::copy_n(pd.data() + o * pv.len * pv.inner, pv.len * pv.inner,
                  od.data() + (o * ov.len + offset) * ov.inner);
    }
    offset += pv.len;
  }
  if (auto node = out.impl().node) {
    std::vector<TensorImpl*> ins;
    for (auto& in : node->inputs) ins.push_back(in.get());
    node->backward = [ins, offsets, ov](const TensorImpl& o) {
      for (std::size_t p = 0; p < ins.size(); ++p) {
        TensorImpl* in = ins[p];
        if (!in->requires_grad) continue;
        const std::size_t len = in->data.size() / (ov.outer * ov.inner);
        for (std::size_t q = 0; q < ov.outer; ++q) {
          const float* g = o.grad.data() + (q * ov.len + offsets[p]) * ov.inner;
          float* gi = in->grad.data() + q * len * ov.inner;
          for (std::size_t i = 0; i < len * ov.inner; ++i) gi[i] += g[i];
        }
      }
    };
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int begin, int end) {
  axis = normalize_axis(axis, x.ndim(), "slice", x.shape());
  const int len = x.dim(axis);
  if (begin < 0 || end > len || begin > end) {
    throw ShapeError("slice", {x.shape()},
                     "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " + std::to_string(axis));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor out = detail::make_output(out_shape, "slice", {&x});
  const AxisView xv = axis_view(x.shape(), axis);
  const std::size_t span_len = static_cast<std::size_t>(end - begin) * xv.inner;
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  for (std::size_t o = 0; o < xv.outer; ++o) {
    std::copy_n(xd.data() + (o * xv.len + begin) * xv.inner, span_len, od.data() + o * span_len);
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, xv, begin, span_len](const TensorImpl& o) {
      for (std::size_t q = 0; q < xv.outer; ++q) {
        float* gx = px->grad.data() + (q * xv.len + begin) * xv.inner;
        const float* g = o.grad.data() + q * span_len;
        for (std::size_t i = 0; i < span_len; ++i) gx[i] += g[i];
      }
    };
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", {x.shape(), shape});
  Tensor out = detail::make_output(std::move(shape), "reshape", {&x});
  out.impl().data = x.impl().data;
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px](const TensorImpl& o) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += o.grad[i];
    };
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = detail::make_output({}, "sum_all", {&x});
  double total = 0.0;
  for (float v : x.impl().data) total += v;
  out.impl().data[0] = static_cast<float>(total);
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px](const TensorImpl& o) {
      for (float& g : px->grad) g += o.grad[0];
    };
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all", {x.shape()}, "empty tensor");
  return scale(sum_all(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor sum(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.ndim(), "sum", x.shape());
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  const AxisView v = axis_view(x.shape(), axis);
  Tensor out = detail::make_output(out_shape, "sum", {&x});
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t l = 0; l < v.len; ++l) {
      const float* xr = xd.data() + (o * v.len + l) * v.inner;
      float* yr = od.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) yr[i] += xr[i];
    }
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, v](const TensorImpl& o) {
      for (std::size_t q = 0; q < v.outer; ++q) {
        for (std::size_t l = 0; l < v.len; ++l) {
          float* gx = px->grad.data() + (q * v.len + l) * v.inner;
          const float* g = o.grad.data() + q * v.inner;
          for (std::size_t i = 0; i < v.inner; ++i) gx[i] += g[i];
        }
      }
    };
  }
  return out;
}

Tensor mean(const Tensor& x, int axis) {
  const int len = x.dim(axis);
  if (len == 0) throw ShapeError("mean", {x.shape()}, "empty axis");
  return scale(sum(x, axis), 1.0f / static_cast<float>(len));
}

Tensor gather(const Tensor& x, std::span<const int> index, int k) {
  if (x.ndim() != 2 || k < 0 || index.size() != static_cast<std::size_t>(x.dim(0)) * static_cast<std::size_t>(k)) {
    throw ShapeError("gather", {x.shape(), {static_cast<int>(index.size())}}, "index must hold rows * k entries");
  }
  const int rows = x.dim(0);
  const int cols = x.dim(1);
  for (int id : index) {
    if (id < 0 || id >= cols) throw ShapeError("gather", {x.shape()}, "column " + std::to_string(id) + " out of range");
  }
  Tensor out = detail::make_output({rows, k}, "gather", {&x});
  const auto& xd = x.impl().data;
  auto& od = out.impl().data;
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < k; ++j) {
      const std::size_t idx = static_cast<std::size_t>(r) * k + j;
      od[idx] = xd[static_cast<std::size_t>(r) * cols + index[idx]];
    }
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, rows, cols, k, idx = std::vector<int>(index.begin(), index.end())](const TensorImpl& o) {
      for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < k; ++j) {
          const std::size_t i = static_cast<std::size_t>(r) * k + j;
          px->grad[static_cast<std::size_t>(r) * cols + idx[i]] += o.grad[i];
        }
      }
    };
  }
  return out;
}

namespace {

std::vector<double> rope_frequencies(int head_dim, float theta) {
  std::vector<double> freq(static_cast<std::size_t>(head_dim / 2));
  for (int i = 0; i < head_dim / 2; ++i) {
    freq[i] = std::pow(static_cast<double>(theta), -2.0 * i / head_dim);
  }
  return freq;
}

// Rotates pairs in one row; sign = -1 applies the inverse rotation.
void rotate_row(float* row, int width, int position, int n_heads,
                const std::vector<double>& freq, float sign) {
  const int head_dim = width / n_heads;
  for (int i = 0; i < head_dim / 2; ++i) {
    const double angle = static_cast<double>(position) * freq[i];
    const float c = static_cast<float>(std::cos(angle));
    const float s = sign * static_cast<float>(std::sin(angle));
    for (int h = 0; h < n_heads; ++h) {
      float* hr = row + h * head_dim;
      const float a = hr[2 * i];
      const float b = hr[2 * i + 1];
      hr[2 * i] = a * c - b * s;
      hr[2 * i + 1] = a * s + b * c;
    }
  }
}

}  // namespace

Tensor rope(const Tensor& x, std::span<const int> positions, int n_heads, float theta) {
  if (x.ndim() != 2 || positions.size() != static_cast<std::size_t>(x.dim(0)) || n_heads <= 0 ||
      x.dim(1) % n_heads != 0 || (x.dim(1) / n_heads) % 2 != 0) {
    throw ShapeError("rope", {x.shape(), {static_cast<int>(positions.size())}},
                     "need [N, heads * even head_dim] and N positions");
  }
  const int rows = x.dim(0);
  const int width = x.dim(1);
  Tensor out = detail::make_output(x.shape(), "rope", {&x});
  auto& od = out.impl().data;
  od = x.impl().data;
  auto freq = rope_frequencies(width / n_heads, theta);
  for (int r = 0; r < rows; ++r) {
    rotate_row(od.data() + static_cast<std::size_t>(r) * width, width, positions[r], n_heads, freq, 1.0f);
  }
  if (auto node = out.impl().node) {
    TensorImpl* px = node->inputs[0].get();
    node->backward = [px, rows, width, n_heads, freq = std::move(freq),
                      pos = std::vector<int>(positions.begin(), positions.end())](const TensorImpl& o) {
      std::vector<float> g(o.grad);
      for (int r = 0; r < rows; ++r) {
        rotate_row(g.data() + static_cast<std::size_t>(r) * width, width, pos[r], n_heads, freq, -1.0f);
      }
      for (std::size_t i = 0; i < g.size(); ++i) px->grad[i] += g[i];
    };
  }
  return out;
}

void rope_inplace(std::span<float> row, int position, int n_heads, float theta) {
  const int width = static_cast<int>(row.size());
  rotate_row(row.data(), width, position, n_heads, rope_frequencies(width / n_heads, theta), 1.0f);
}

}  // namespace bcr::nn
