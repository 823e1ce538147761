#include "bcr/nn/attention.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace bcr::nn {

AttentionMask AttentionMask::causal(int size) {
  AttentionMask m(size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

bool AttentionMask::is_lower_triangular() const {
  for (int i = 0; i < size_; ++i) {
    for (int j = i + 1; j < size_; ++j) {
      if (allows(i, j)) return false;
    }
  }
  return true;
}

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                 std::span<const AttentionSegment> segments) {
  if (q.ndim() != 2 || q.shape() != k.shape() || q.shape() != v.shape() || n_heads <= 0 ||
      q.dim(1) % n_heads != 0) {
    throw ShapeError("attention", {q.shape(), k.shape(), v.shape()});
  }
  const int rows = q.dim(0);
  const int width = q.dim(1);
  const int head_dim = width / n_heads;
  for (const auto& seg : segments) {
    if (seg.offset < 0 || seg.length < 0 || seg.offset + seg.length > rows) {
      throw ShapeError("attention", {q.shape()}, "segment outside packed rows");
    }
    if (seg.mask && seg.mask->size() != seg.length) {
      throw ShapeError("attention", {q.shape(), {seg.mask->size(), seg.mask->size()}},
                       "mask size differs from segment length " + std::to_string(seg.length));
    }
  }

  Tensor out = detail::make_output(q.shape(), "attention", {&q, &k, &v});
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
  const float neg_inf = -std::numeric_limits<float>::infinity();
  const auto& qd = q.impl().data;
  const auto& kd = k.impl().data;
  const auto& vd = v.impl().data;
  auto& od = out.impl().data;

  // Softmax probabilities per (segment, head), kept for backward.
  std::vector<RowMatrix> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(n_heads));
  for (const auto& seg : segments) {
    const int t = seg.length;
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t base = static_cast<std::size_t>(seg.offset) * width + static_cast<std::size_t>(h) * head_dim;
      Strided qh(qd.data() + base, t, head_dim, Eigen::OuterStride<>(width));
      Strided kh(kd.data() + base, t, head_dim, Eigen::OuterStride<>(width));
      Strided vh(vd.data() + base, t, head_dim, Eigen::OuterStride<>(width));
      RowMatrix p = (qh * kh.transpose()) * inv_sqrt;
      for (int i = 0; i < t; ++i) {
        float mx = neg_inf;
        for (int j = 0; j < t; ++j) {
          const bool ok = seg.mask ? seg.mask->allows(i, j) : j <= i;
          if (!ok) p(i, j) = neg_inf;
          mx = std::max(mx, p(i, j));
        }
        if (mx == neg_inf) {
          throw std::runtime_error("attention: row " + std::to_string(i) + " has no visible keys");
        }
        double total = 0.0;
        for (int j = 0; j < t; ++j) {
          const float e = p(i, j) == neg_inf ? 0.0f : std::exp(p(i, j) - mx);
          p(i, j) = e;
          total += e;
        }
        p.row(i) *= static_cast<float>(1.0 / total);
      }
      StridedMut oh(od.data() + base, t, head_dim, Eigen::OuterStride<>(width));
      oh.noalias() = p * vh;
      if (out.impl().node) probs.push_back(std::move(p));
    }
  }

  if (auto node = out.impl().node) {
    TensorImpl* pq = node->inputs[0].get();
    TensorImpl* pk = node->inputs[1].get();
    TensorImpl* pv = node->inputs[2].get();
    node->backward = [pq, pk, pv, width, head_dim, n_heads, inv_sqrt, probs = std::move(probs),
                      segs = std::vector<AttentionSegment>(segments.begin(), segments.end())](const TensorImpl& o) {
      std::size_t idx = 0;
      for (const auto& seg : segs) {
        const int t = seg.length;
        for (int h = 0; h < n_heads; ++h, ++idx) {
          const RowMatrix& p = probs[idx];
          const std::size_t base = static_cast<std::size_t>(seg.offset) * width + static_cast<std::size_t>(h) * head_dim;
          Strided go(o.grad.data() + base, t, head_dim, Eigen::OuterStride<>(width));
          Strided qh(pq->data.data() + base, t, head_dim, Eigen::OuterStride<>(width));
          Strided kh(pk->data.data() + base, t, head_dim, Eigen::OuterStride<>(width));
          Strided vh(pv->data.data() + base, t, head_dim, Eigen::OuterStride<>(width));
          if (pv->requires_grad) {
            StridedMut gv(pv->grad.data() + base, t, head_dim, Eigen::OuterStride<>(width));
            gv.noalias() += p.transpose() * go;
          }
          RowMatrix dp = go * vh.transpose();
          // dS = P * (dP - rowsum(dP * P))
          for (int i = 0; i < t; ++i) {
            const float dot = dp.row(i).dot(p.row(i));
            dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
          }
          dp *= inv_sqrt;
          if (pq->requires_grad) {
            StridedMut gq(pq->grad.data() + base, t, head_dim, Eigen::OuterStride<>(width));
            gq.noalias() += dp * kh;
          }
          if (pk->requires_grad) {
            StridedMut gk(pk->grad.data() + base, t, head_dim, Eigen::OuterStride<>(width));
            gk.noalias() += dp.transpose() * qh;
          }
        }
      }
    };
  }
  return out;
}

}  // namespace bcr::nn
