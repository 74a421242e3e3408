#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvad/rng.hpp"
#include "mvad/tensor.hpp"

namespace mvad {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const RowMat<S>>;

namespace detail {

template <typename S>
void require_valid(const Tensor<S>& t, const char* op) {
  if (!t.valid()) throw TensorError(std::string(op) + ": empty tensor handle");
}

// Views a tensor as [batch, rows, cols] where rank-2 tensors have batch 1.
struct BatchView {
  std::int64_t batch, rows, cols;
  bool batched;  // true when the tensor carries its own leading batch dim
};

template <typename S>
BatchView as_batch(const Tensor<S>& t, const char* op) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1), false};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2), true};
  throw TensorError(std::string(op) + ": expected rank 2 or 3, got " + shape_str(t.shape()));
}

// True when b is a broadcastable bias for a: shape [C] or [1, C] with C == a's last dim.
template <typename S>
bool is_bias_for(const Tensor<S>& a, const Tensor<S>& b) {
  std::int64_t c = a.shape().back();
  if (b.rank() == 1) return b.dim(0) == c;
  if (b.rank() == 2) return b.dim(0) == 1 && b.dim(1) == c;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [m,k]x[k,n], [B,m,k]x[k,n] (shared right operand), [B,m,k]x[B,k,n].
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_valid(a, "matmul");
  detail::require_valid(b, "matmul");
  auto av = detail::as_batch(a, "matmul");
  auto bv = detail::as_batch(b, "matmul");
  if (bv.batched && !av.batched)
    throw TensorError("matmul: rank-2 left with rank-3 right is unsupported, shapes " +
                      shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (bv.batched && av.batch != bv.batch)
    throw TensorError("matmul: batch dims differ, shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  if (av.cols != bv.rows)
    throw TensorError("matmul: inner dims differ, shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::int64_t batch = av.batch, m = av.rows, k = av.cols, n = bv.cols;
  Shape out_shape = av.batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<S> out(out_shape);
  for (std::int64_t i = 0; i < batch; ++i) {
    CMapMat<S> A(a.data().data() + (av.batched ? i * m * k : 0), m, k);
    CMapMat<S> B(b.data().data() + (bv.batched ? i * k * n : 0), k, n);
    MapMat<S> C(out.data().data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  out.check_finite("matmul");
  out.attach("matmul", {a, b}, [a, b, av, bv, m, k, n](Node<S>& node) {
    for (std::int64_t i = 0; i < av.batch; ++i) {
      CMapMat<S> dC(node.grad.data() + i * m * n, m, n);
      if (a.requires_grad()) {
        CMapMat<S> B(b.data().data() + (bv.batched ? i * k * n : 0), k, n);
        MapMat<S> dA(a.node()->grad.data() + (av.batched ? i * m * k : 0), m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (b.requires_grad()) {
        CMapMat<S> A(a.data().data() + (av.batched ? i * m * k : 0), m, k);
        MapMat<S> dB(b.node()->grad.data() + (bv.batched ? i * k * n : 0), k, n);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
  return out;
}

// matmul_nt: C = A * B^T over the last two dims; [B,m,k]x[B,n,k] -> [B,m,n].
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_valid(a, "matmul_nt");
  detail::require_valid(b, "matmul_nt");
  auto av = detail::as_batch(a, "matmul_nt");
  auto bv = detail::as_batch(b, "matmul_nt");
  if (av.batched != bv.batched || (av.batched && av.batch != bv.batch))
    throw TensorError("matmul_nt: batch dims differ, shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  if (av.cols != bv.cols)
    throw TensorError("matmul_nt: inner dims differ, shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::int64_t batch = av.batch, m = av.rows, k = av.cols, n = bv.rows;
  Shape out_shape = av.batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<S> out(out_shape);
  for (std::int64_t i = 0; i < batch; ++i) {
    CMapMat<S> A(a.data().data() + i * m * k, m, k);
    CMapMat<S> B(b.data().data() + i * n * k, n, k);
    MapMat<S> C(out.data().data() + i * m * n, m, n);
    C.noalias() = A * B.transpose();
  }
  out.check_finite("matmul_nt");
  out.attach("matmul_nt", {a, b}, [a, b, batch, m, k, n](Node<S>& node) {
    for (std::int64_t i = 0; i < batch; ++i) {
      CMapMat<S> dC(node.grad.data() + i * m * n, m, n);
      if (a.requires_grad()) {
        CMapMat<S> B(b.data().data() + i * n * k, n, k);
        MapMat<S> dA(a.node()->grad.data() + i * m * k, m, k);
        dA.noalias() += dC * B;
      }
      if (b.requires_grad()) {
        CMapMat<S> A(a.data().data() + i * m * k, m, k);
        MapMat<S> dB(b.node()->grad.data() + i * n * k, n, k);
        dB.noalias() += dC.transpose() * A;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// add: same-shape elementwise, or bias broadcast [..,C] + [C]/[1,C].
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_valid(a, "add");
  detail::require_valid(b, "add");
  if (a.shape() == b.shape()) {
    Tensor<S> out(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    out.check_finite("add");
    out.attach("add", {a, b}, [a, b](Node<S>& node) {
      if (a.requires_grad())
        for (std::size_t i = 0; i < node.grad.size(); ++i) a.node()->grad[i] += node.grad[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < node.grad.size(); ++i) b.node()->grad[i] += node.grad[i];
    });
    return out;
  }
  if (a.rank() >= 1 && detail::is_bias_for(a, b)) {
    const std::int64_t c = a.shape().back();
    const std::int64_t rows = a.numel() / c;
    Tensor<S> out(a.shape());
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < c; ++j)
        out.data()[r * c + j] = a.data()[r * c + j] + b.data()[j];
    out.check_finite("add");
    out.attach("add", {a, b}, [a, b, rows, c](Node<S>& node) {
      if (a.requires_grad())
        for (std::size_t i = 0; i < node.grad.size(); ++i) a.node()->grad[i] += node.grad[i];
      if (b.requires_grad())
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < c; ++j) b.node()->grad[j] += node.grad[r * c + j];
    });
    return out;
  }
  throw TensorError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
}

// mul: same-shape elementwise product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_valid(a, "mul");
  detail::require_valid(b, "mul");
  if (a.shape() != b.shape())
    throw TensorError("mul: shapes differ, " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  Tensor<S> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  out.check_finite("mul");
  out.attach("mul", {a, b}, [a, b](Node<S>& node) {
    if (a.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        a.node()->grad[i] += node.grad[i] * b.data()[i];
    if (b.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        b.node()->grad[i] += node.grad[i] * a.data()[i];
  });
  return out;
}

// scale: multiply every element by a compile-time-known constant.
template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  detail::require_valid(x, "scale");
  Tensor<S> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * factor;
  out.check_finite("scale");
  out.attach("scale", {x}, [x, factor](Node<S>& node) {
    if (x.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        x.node()->grad[i] += node.grad[i] * factor;
  });
  return out;
}

// scale_rows: y[.., r, :] = x[.., r, :] * g[.., r]; g's shape is x's without the last dim.
template <typename S>
Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& g) {
  detail::require_valid(x, "scale_rows");
  detail::require_valid(g, "scale_rows");
  if (x.rank() < 2 || g.rank() != x.rank() - 1 ||
      !std::equal(g.shape().begin(), g.shape().end(), x.shape().begin()))
    throw TensorError("scale_rows: gate shape " + shape_str(g.shape()) +
                      " must equal row shape of " + shape_str(x.shape()));
  const std::int64_t c = x.shape().back();
  const std::int64_t rows = x.numel() / c;
  Tensor<S> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const S gr = g.data()[r];
    for (std::int64_t j = 0; j < c; ++j) out.data()[r * c + j] = x.data()[r * c + j] * gr;
  }
  out.check_finite("scale_rows");
  out.attach("scale_rows", {x, g}, [x, g, rows, c](Node<S>& node) {
    if (x.requires_grad())
      for (std::int64_t r = 0; r < rows; ++r) {
        const S gr = g.data()[r];
        for (std::int64_t j = 0; j < c; ++j)
          x.node()->grad[r * c + j] += node.grad[r * c + j] * gr;
      }
    if (g.requires_grad())
      for (std::int64_t r = 0; r < rows; ++r) {
        S acc = S(0);
        for (std::int64_t j = 0; j < c; ++j)
          acc += node.grad[r * c + j] * x.data()[r * c + j];
        g.node()->grad[r] += acc;
      }
  });
  return out;
}

// concat_lastdim: concatenates two tensors along the last dim.
template <typename S>
Tensor<S> concat_lastdim(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_valid(a, "concat_lastdim");
  detail::require_valid(b, "concat_lastdim");
  if (a.rank() != b.rank() || a.rank() < 1 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin()))
    throw TensorError("concat_lastdim: shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()) + " differ outside the last dim");
  const std::int64_t ca = a.shape().back(), cb = b.shape().back();
  const std::int64_t rows = a.numel() / ca;
  Shape out_shape = a.shape();
  out_shape.back() = ca + cb;
  Tensor<S> out(out_shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < ca; ++j) out.data()[r * (ca + cb) + j] = a.data()[r * ca + j];
    for (std::int64_t j = 0; j < cb; ++j)
      out.data()[r * (ca + cb) + ca + j] = b.data()[r * cb + j];
  }
  out.check_finite("concat_lastdim");
  out.attach("concat_lastdim", {a, b}, [a, b, rows, ca, cb](Node<S>& node) {
    if (a.requires_grad())
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < ca; ++j)
          a.node()->grad[r * ca + j] += node.grad[r * (ca + cb) + j];
    if (b.requires_grad())
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < cb; ++j)
          b.node()->grad[r * cb + j] += node.grad[r * (ca + cb) + ca + j];
  });
  return out;
}

// slice_lastdim: y[.., :] = x[.., offset : offset+len].
template <typename S>
Tensor<S> slice_lastdim(const Tensor<S>& x, std::int64_t offset, std::int64_t len) {
  detail::require_valid(x, "slice_lastdim");
  const std::int64_t c = x.shape().back();
  if (offset < 0 || len <= 0 || offset + len > c)
    throw TensorError("slice_lastdim: range [" + std::to_string(offset) + ", " +
                      std::to_string(offset + len) + ") out of last dim " + std::to_string(c));
  const std::int64_t rows = x.numel() / c;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  Tensor<S> out(out_shape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < len; ++j)
      out.data()[r * len + j] = x.data()[r * c + offset + j];
  out.attach("slice_lastdim", {x}, [x, rows, c, offset, len](Node<S>& node) {
    if (x.requires_grad())
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < len; ++j)
          x.node()->grad[r * c + offset + j] += node.grad[r * len + j];
  });
  return out;
}

// reshape: same element count, new shape, row-major order preserved.
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  detail::require_valid(x, "reshape");
  if (shape_numel(new_shape) != x.numel())
    throw TensorError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                      shape_str(new_shape));
  Tensor<S> out(new_shape, x.data());
  out.attach("reshape", {x}, [x](Node<S>& node) {
    if (x.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i) x.node()->grad[i] += node.grad[i];
  });
  return out;
}

// embedding_lookup: rows of a [V,d] table gathered by integer-valued ids.
// Output shape is ids.shape + [d]. Gradients scatter-add into the table.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const Tensor<S>& ids) {
  detail::require_valid(table, "embedding_lookup");
  detail::require_valid(ids, "embedding_lookup");
  if (table.rank() != 2)
    throw TensorError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.requires_grad())
    throw TensorError("embedding_lookup: ids must not require grad");
  const std::int64_t v = table.dim(0), d = table.dim(1);
  const std::int64_t n = ids.numel();
  std::vector<std::int64_t> rows(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double raw = static_cast<double>(ids.data()[i]);
    std::int64_t id = static_cast<std::int64_t>(raw);
    if (static_cast<double>(id) != raw || id < 0 || id >= v)
      throw TensorError("embedding_lookup: id " + std::to_string(raw) +
                        " is not an integer in [0, " + std::to_string(v) + ")");
    rows[static_cast<std::size_t>(i)] = id;
  }
  Shape out_shape = ids.shape();
  out_shape.push_back(d);
  Tensor<S> out(out_shape);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = table.data()[rows[static_cast<std::size_t>(i)] * d + j];
  out.attach("embedding_lookup", {table, ids}, [table, rows, n, d](Node<S>& node) {
    if (table.requires_grad())
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
          table.node()->grad[rows[static_cast<std::size_t>(i)] * d + j] += node.grad[i * d + j];
  });
  return out;
}

// sigmoid, numerically stable on both tails.
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  detail::require_valid(x, "sigmoid");
  Tensor<S> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S v = x.data()[i];
    if (v >= S(0)) {
      out.data()[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      out.data()[i] = e / (S(1) + e);
    }
  }
  out.check_finite("sigmoid");
  // The backward arg is the output node itself, so y's values are node.data.
  out.attach("sigmoid", {x}, [x](Node<S>& node) {
    if (x.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        const S s = node.data[i];
        x.node()->grad[i] += node.grad[i] * s * (S(1) - s);
      }
  });
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  detail::require_valid(x, "relu");
  Tensor<S> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  out.attach("relu", {x}, [x](Node<S>& node) {
    if (x.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        if (x.data()[i] > S(0)) x.node()->grad[i] += node.grad[i];
  });
  return out;
}

// softmax over the last dim, with max-shift for stability. Rows whose entries
// are all heavily masked (very negative) still sum to 1 because the row max is
// subtracted first.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
  detail::require_valid(x, "softmax_lastdim");
  if (x.rank() < 1) throw TensorError("softmax_lastdim: rank must be >= 1");
  const std::int64_t c = x.shape().back();
  const std::int64_t rows = x.numel() / c;
  Tensor<S> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * c;
    S* o = out.data().data() + r * c;
    S mx = in[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    S sum = S(0);
    for (std::int64_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::int64_t j = 0; j < c; ++j) o[j] /= sum;
  }
  out.check_finite("softmax_lastdim");
  out.attach("softmax_lastdim", {x}, [x, rows, c](Node<S>& node) {
    if (!x.requires_grad()) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* yr = node.data.data() + r * c;
      const S* dy = node.grad.data() + r * c;
      S dot = S(0);
      for (std::int64_t j = 0; j < c; ++j) dot += dy[j] * yr[j];
      for (std::int64_t j = 0; j < c; ++j)
        x.node()->grad[r * c + j] += yr[j] * (dy[j] - dot);
    }
  });
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

// layer_norm over the last dim with affine params gamma/beta of shape [d] or [1,d].
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta) {
  detail::require_valid(x, "layer_norm");
  detail::require_valid(gamma, "layer_norm");
  detail::require_valid(beta, "layer_norm");
  if (x.rank() < 2)
    throw TensorError("layer_norm: input must be rank >= 2, got " + shape_str(x.shape()));
  const std::int64_t c = x.shape().back();
  if (!detail::is_bias_for(x, gamma) || !detail::is_bias_for(x, beta))
    throw TensorError("layer_norm: affine params " + shape_str(gamma.shape()) + ", " +
                      shape_str(beta.shape()) + " must be [" + std::to_string(c) + "] for input " +
                      shape_str(x.shape()));
  const std::int64_t rows = x.numel() / c;
  Tensor<S> out(x.shape());
  std::vector<S> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<S> invstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * c;
    S mean = S(0);
    for (std::int64_t j = 0; j < c; ++j) mean += in[j];
    mean /= S(c);
    S var = S(0);
    for (std::int64_t j = 0; j < c; ++j) {
      const S d = in[j] - mean;
      var += d * d;
    }
    var /= S(c);
    const S is = S(1) / std::sqrt(var + S(kLayerNormEps));
    invstd[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < c; ++j) {
      const S xh = (in[j] - mean) * is;
      xhat[static_cast<std::size_t>(r * c + j)] = xh;
      out.data()[r * c + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  out.check_finite("layer_norm");
  out.attach("layer_norm", {x, gamma, beta},
             [x, gamma, beta, rows, c, xhat = std::move(xhat),
              invstd = std::move(invstd)](Node<S>& node) {
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* dy = node.grad.data() + r * c;
      const S* xh = xhat.data() + r * c;
      if (gamma.requires_grad())
        for (std::int64_t j = 0; j < c; ++j) gamma.node()->grad[j] += dy[j] * xh[j];
      if (beta.requires_grad())
        for (std::int64_t j = 0; j < c; ++j) beta.node()->grad[j] += dy[j];
      if (x.requires_grad()) {
        S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
        for (std::int64_t j = 0; j < c; ++j) {
          const S dxh = dy[j] * gamma.data()[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= S(c);
        mean_dxhat_xhat /= S(c);
        const S is = invstd[static_cast<std::size_t>(r)];
        for (std::int64_t j = 0; j < c; ++j) {
          const S dxh = dy[j] * gamma.data()[j];
          x.node()->grad[r * c + j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

// mean_over_time: masked mean over the middle dim, [B,T,d] with mask [B,T] of
// exact 0/1 values -> [B,d]. A batch row with no unmasked position is an error.
template <typename S>
Tensor<S> mean_over_time(const Tensor<S>& x, const Tensor<S>& mask) {
  detail::require_valid(x, "mean_over_time");
  detail::require_valid(mask, "mean_over_time");
  if (x.rank() != 3 || mask.rank() != 2 || mask.dim(0) != x.dim(0) || mask.dim(1) != x.dim(1))
    throw TensorError("mean_over_time: expected [B,T,d] with mask [B,T], got " +
                      shape_str(x.shape()) + " and " + shape_str(mask.shape()));
  if (mask.requires_grad()) throw TensorError("mean_over_time: mask must not require grad");
  const std::int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<S> counts(static_cast<std::size_t>(b), S(0));
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < t; ++j) {
      const S m = mask.data()[i * t + j];
      if (m != S(0) && m != S(1))
        throw TensorError("mean_over_time: mask values must be exactly 0 or 1");
      counts[static_cast<std::size_t>(i)] += m;
    }
  for (std::int64_t i = 0; i < b; ++i)
    if (counts[static_cast<std::size_t>(i)] == S(0))
      throw TensorError("mean_over_time: batch row " + std::to_string(i) +
                        " has zero unmasked positions");
  Tensor<S> out({b, d});
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t j = 0; j < t; ++j) {
      if (mask.data()[i * t + j] == S(0)) continue;
      for (std::int64_t k = 0; k < d; ++k)
        out.data()[i * d + k] += x.data()[(i * t + j) * d + k];
    }
    for (std::int64_t k = 0; k < d; ++k) out.data()[i * d + k] /= counts[static_cast<std::size_t>(i)];
  }
  out.check_finite("mean_over_time");
  out.attach("mean_over_time", {x, mask}, [x, mask, counts, b, t, d](Node<S>& node) {
    if (!x.requires_grad()) return;
    for (std::int64_t i = 0; i < b; ++i) {
      const S inv = S(1) / counts[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < t; ++j) {
        if (mask.data()[i * t + j] == S(0)) continue;
        for (std::int64_t k = 0; k < d; ++k)
          x.node()->grad[(i * t + j) * d + k] += node.grad[i * d + k] * inv;
      }
    }
  });
  return out;
}

inline constexpr double kBceClampLo = 1e-7;
inline constexpr double kBceClampHi = 1.0 - 1e-7;

// bce: mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].
// Labels must be exactly 0 or 1 and never require grad. Output is scalar [1].
template <typename S>
Tensor<S> bce(const Tensor<S>& yhat, const Tensor<S>& y) {
  detail::require_valid(yhat, "bce");
  detail::require_valid(y, "bce");
  if (yhat.shape() != y.shape())
    throw TensorError("bce: shapes differ, " + shape_str(yhat.shape()) + " and " +
                      shape_str(y.shape()));
  if (y.requires_grad()) throw TensorError("bce: labels must not require grad");
  const std::int64_t n = yhat.numel();
  const S lo = S(kBceClampLo), hi = S(kBceClampHi);
  S total = S(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const S label = y.data()[i];
    if (label != S(0) && label != S(1))
      throw TensorError("bce: labels must be exactly 0 or 1");
    S c = yhat.data()[i];
    c = std::min(hi, std::max(lo, c));
    total += label == S(1) ? -std::log(c) : -std::log(S(1) - c);
  }
  Tensor<S> out({1}, std::vector<S>{total / S(n)});
  out.check_finite("bce");
  out.attach("bce", {yhat, y}, [yhat, y, n, lo, hi](Node<S>& node) {
    if (!yhat.requires_grad()) return;
    const S g0 = node.grad[0] / S(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const S p = yhat.data()[i];
      if (p < lo || p > hi) continue;  // clamp region: zero slope
      const S label = y.data()[i];
      yhat.node()->grad[i] += g0 * (label == S(1) ? -S(1) / p : S(1) / (S(1) - p));
    }
  });
  return out;
}

// dropout (inverted scaling). Call sites skip this op entirely in eval mode, so
// it only ever appears in training graphs; the mask comes from the caller's
// deterministic stream.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
  detail::require_valid(x, "dropout");
  if (p < 0.0 || p >= 1.0)
    throw TensorError("dropout: rate must be in [0, 1), got " + std::to_string(p));
  const double keep = 1.0 - p;
  std::vector<S> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = rng.uniform() < keep ? S(1.0 / keep) : S(0);
  Tensor<S> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] * mask[static_cast<std::size_t>(i)];
  out.check_finite("dropout");
  out.attach("dropout", {x}, [x, mask = std::move(mask)](Node<S>& node) {
    if (x.requires_grad())
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        x.node()->grad[i] += node.grad[i] * mask[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Public primitive catalog. Model code composes exactly these through the
// typed free functions; this dispatcher is the enumerable surface for tests.
// ---------------------------------------------------------------------------
enum class OpKind {
  kMatmul,
  kAdd,
  kMul,
  kScaleRows,
  kConcatLastDim,
  kEmbeddingLookup,
  kSigmoid,
  kRelu,
  kSoftmaxLastDim,
  kLayerNorm,
  kMeanOverTime,
  kBce,
};

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScaleRows: return "scale_rows";
    case OpKind::kConcatLastDim: return "concat_lastdim";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmaxLastDim: return "softmax_lastdim";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kMeanOverTime: return "mean_over_time";
    case OpKind::kBce: return "bce";
  }
  return "unknown";
}

template <typename S>
Tensor<S> primitive_forward(OpKind op, const std::vector<Tensor<S>>& inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw TensorError(std::string(op_kind_name(op)) + ": expected " + std::to_string(n) +
                        " inputs, got " + std::to_string(inputs.size()));
  };
  switch (op) {
    case OpKind::kMatmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::kAdd: need(2); return add(inputs[0], inputs[1]);
    case OpKind::kMul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::kScaleRows: need(2); return scale_rows(inputs[0], inputs[1]);
    case OpKind::kConcatLastDim: need(2); return concat_lastdim(inputs[0], inputs[1]);
    case OpKind::kEmbeddingLookup: need(2); return embedding_lookup(inputs[0], inputs[1]);
    case OpKind::kSigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::kRelu: need(1); return relu(inputs[0]);
    case OpKind::kSoftmaxLastDim: need(1); return softmax_lastdim(inputs[0]);
    case OpKind::kLayerNorm: need(3); return layer_norm(inputs[0], inputs[1], inputs[2]);
    case OpKind::kMeanOverTime: need(2); return mean_over_time(inputs[0], inputs[1]);
    case OpKind::kBce: need(2); return bce(inputs[0], inputs[1]);
  }
  throw TensorError("primitive_forward: unknown op kind");
}

template <typename S>
Tensor<S> primitive_forward(OpKind op, std::initializer_list<Tensor<S>> inputs) {
  return primitive_forward(op, std::vector<Tensor<S>>(inputs));
}

}  // namespace mvad
