#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records a computation as a list of nodes in creation order; backward()
// walks them in reverse and accumulates gradients into every node that depends on
// a trainable parameter. The scalar type is a template parameter so the same
// graph can run in float (training) and double (gradient checking).

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "logmilp/errors.hpp"
#include "logmilp/tensor.hpp"

namespace logmilp::ad {

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Mat<T> value) {
    Node n;
    n.own = std::move(value);
    return push(std::move(n));
  }

  /// Leaf that references external storage; the referenced matrix must outlive the tape.
  Var parameter(const Mat<T>& value, bool trainable = true) {
    Node n;
    n.ext = &value;
    n.needs_grad = trainable;
    return push(std::move(n));
  }

  const Mat<T>& value(Var v) const { return nodes_[v.id].val(); }
  T scalar(Var v) const { return value(v).data[0]; }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient accumulated so far; empty if nothing reached this node.
  const Mat<T>& grad(Var v) const { return nodes_[v.id].grad; }

  /// Adds `g` to the output gradient of `v` before backward().
  void seed(Var v, const Mat<T>& g) {
    if (!nodes_[v.id].needs_grad) return;
    Mat<T>& dst = acc(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
  }
  void seed_scalar(Var v, T g) {
    if (!nodes_[v.id].needs_grad) return;
    acc(v.id).data[0] += g;
  }

  void backward() {
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.empty()) n.back();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // ---------------------------------------------------------------- linear algebra

  /// C = A·B
  Var matmul(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (A.cols != B.rows) throw ShapeMismatch("matmul: inner dimensions differ");
    Mat<T> C(A.rows, B.cols);
    gemm_nn(A, B, C);
    Var out = push_op(std::move(C), {a, b});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, b, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        if (needs_grad(a)) gemm_nt(dC, value(b), acc(a.id));
        if (needs_grad(b)) gemm_tn(value(a), dC, acc(b.id));
      };
    }
    return out;
  }

  /// C = A·Bᵀ
  Var matmul_nt(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (A.cols != B.cols) throw ShapeMismatch("matmul_nt: inner dimensions differ");
    Mat<T> C(A.rows, B.rows);
    gemm_nt(A, B, C);
    Var out = push_op(std::move(C), {a, b});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, b, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        if (needs_grad(a)) gemm_nn(dC, value(b), acc(a.id));
        if (needs_grad(b)) gemm_tn(dC, value(a), acc(b.id));
      };
    }
    return out;
  }

  Var transpose(Var a) {
    const Mat<T>& A = value(a);
    Mat<T> C(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) C(j, i) = A(i, j);
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        Mat<T>& dA = acc(a.id);
        for (int i = 0; i < dA.rows; ++i)
          for (int j = 0; j < dA.cols; ++j) dA(i, j) += dC(j, i);
      };
    }
    return out;
  }

  // ---------------------------------------------------------------- elementwise

  Var add(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("add: shapes differ");
    Mat<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    Var out = push_op(std::move(C), {a, b});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, b, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        for (Var v : {a, b}) {
          if (!needs_grad(v)) continue;
          Mat<T>& d = acc(v.id);
          for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dC.data[i];
        }
      };
    }
    return out;
  }

  /// Adds the 1×n row vector `r` to every row of `a`.
  Var add_row(Var a, Var r) {
    const Mat<T>& A = value(a);
    const Mat<T>& R = value(r);
    if (R.rows != 1 || R.cols != A.cols) throw ShapeMismatch("add_row: bias shape");
    Mat<T> C = A;
    for (int i = 0; i < C.rows; ++i)
      for (int j = 0; j < C.cols; ++j) C(i, j) += R.data[j];
    Var out = push_op(std::move(C), {a, r});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, r, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        if (needs_grad(a)) {
          Mat<T>& dA = acc(a.id);
          for (std::size_t i = 0; i < dA.size(); ++i) dA.data[i] += dC.data[i];
        }
        if (needs_grad(r)) {
          Mat<T>& dR = acc(r.id);
          for (int i = 0; i < dC.rows; ++i)
            for (int j = 0; j < dC.cols; ++j) dR.data[j] += dC(i, j);
        }
      };
    }
    return out;
  }

  /// alpha·a + beta
  Var affine(Var a, T alpha, T beta) {
    Mat<T> C = value(a);
    for (auto& x : C.data) x = alpha * x + beta;
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, alpha] {
        const Mat<T>& dC = nodes_[out.id].grad;
        Mat<T>& dA = acc(a.id);
        for (std::size_t i = 0; i < dA.size(); ++i) dA.data[i] += alpha * dC.data[i];
      };
    }
    return out;
  }

  /// s·a for a 1×1 variable s.
  Var scale_by(Var a, Var s) {
    const Mat<T>& A = value(a);
    const T sv = scalar(s);
    Mat<T> C = A;
    for (auto& x : C.data) x *= sv;
    Var out = push_op(std::move(C), {a, s});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, s, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        const Mat<T>& A = value(a);
        if (needs_grad(a)) {
          const T sv = scalar(s);
          Mat<T>& dA = acc(a.id);
          for (std::size_t i = 0; i < dA.size(); ++i) dA.data[i] += sv * dC.data[i];
        }
        if (needs_grad(s)) {
          T sum = 0;
          for (std::size_t i = 0; i < A.size(); ++i) sum += A.data[i] * dC.data[i];
          acc(s.id).data[0] += sum;
        }
      };
    }
    return out;
  }

  Var tanh(Var a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
  }

  /// GELU, tanh approximation.
  Var gelu(Var a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    return unary(
        a, [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
        [](T x, T) {
          const T t = std::tanh(c * (x + k * x * x * x));
          return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
        });
  }

  Var softplus(Var a) {
    return unary(
        a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
        [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
  }

  /// 1 / (1 + a)
  Var reciprocal_one_plus(Var a) {
    return unary(a, [](T x) { return T(1) / (T(1) + x); }, [](T, T y) { return -y * y; });
  }

  /// Clamp to [lo, hi]; gradient is zero where the clamp is active.
  Var clamp(Var a, T lo, T hi) {
    return unary(
        a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
  }

  // ---------------------------------------------------------------- structural

  Var slice_cols(Var a, int start, int n) {
    const Mat<T>& A = value(a);
    if (start < 0 || start + n > A.cols) throw ShapeMismatch("slice_cols: out of range");
    Mat<T> C(A.rows, n);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < n; ++j) C(i, j) = A(i, start + j);
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, start, n] {
        const Mat<T>& dC = nodes_[out.id].grad;
        Mat<T>& dA = acc(a.id);
        for (int i = 0; i < dC.rows; ++i)
          for (int j = 0; j < n; ++j) dA(i, start + j) += dC(i, j);
      };
    }
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    int rows = value(parts.front()).rows;
    int cols = 0;
    for (Var p : parts) {
      if (value(p).rows != rows) throw ShapeMismatch("concat_cols: row counts differ");
      cols += value(p).cols;
    }
    Mat<T> C(rows, cols);
    int off = 0;
    for (Var p : parts) {
      const Mat<T>& P = value(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < P.cols; ++j) C(i, off + j) = P(i, j);
      off += P.cols;
    }
    Var out = push_op(std::move(C), parts);
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, parts, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        int off = 0;
        for (Var p : parts) {
          const int pc = value(p).cols;
          if (needs_grad(p)) {
            Mat<T>& dP = acc(p.id);
            for (int i = 0; i < dP.rows; ++i)
              for (int j = 0; j < pc; ++j) dP(i, j) += dC(i, off + j);
          }
          off += pc;
        }
      };
    }
    return out;
  }

  // ---------------------------------------------------------------- row-wise ops

  /// Row-wise layer normalization with learnable gain and shift (both 1×n).
  Var layer_norm(Var a, Var gain, Var shift, T eps = T(1e-5)) {
    const Mat<T>& A = value(a);
    const Mat<T>& G = value(gain);
    const Mat<T>& B = value(shift);
    const int n = A.cols;
    Mat<T> C(A.rows, n);
    Mat<T> xhat(A.rows, n);
    std::vector<T> rstd(A.rows);
    for (int i = 0; i < A.rows; ++i) {
      T mean = 0;
      for (int j = 0; j < n; ++j) mean += A(i, j);
      mean /= T(n);
      T var = 0;
      for (int j = 0; j < n; ++j) var += (A(i, j) - mean) * (A(i, j) - mean);
      var /= T(n);
      rstd[i] = T(1) / std::sqrt(var + eps);
      for (int j = 0; j < n; ++j) {
        xhat(i, j) = (A(i, j) - mean) * rstd[i];
        C(i, j) = xhat(i, j) * G.data[j] + B.data[j];
      }
    }
    Var out = push_op(std::move(C), {a, gain, shift});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, gain, shift, out, xhat = std::move(xhat), rstd = std::move(rstd)] {
        const Mat<T>& dC = nodes_[out.id].grad;
        const Mat<T>& G = value(gain);
        const int n = dC.cols;
        if (needs_grad(gain) || needs_grad(shift)) {
          for (int i = 0; i < dC.rows; ++i)
            for (int j = 0; j < n; ++j) {
              if (needs_grad(gain)) acc(gain.id).data[j] += dC(i, j) * xhat(i, j);
              if (needs_grad(shift)) acc(shift.id).data[j] += dC(i, j);
            }
        }
        if (needs_grad(a)) {
          Mat<T>& dA = acc(a.id);
          for (int i = 0; i < dC.rows; ++i) {
            T mean_d = 0;
            T mean_dx = 0;
            for (int j = 0; j < n; ++j) {
              const T dxh = dC(i, j) * G.data[j];
              mean_d += dxh;
              mean_dx += dxh * xhat(i, j);
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (int j = 0; j < n; ++j) {
              const T dxh = dC(i, j) * G.data[j];
              dA(i, j) += rstd[i] * (dxh - mean_d - xhat(i, j) * mean_dx);
            }
          }
        }
      };
    }
    return out;
  }

  /// Softmax along each row restricted to columns with col_mask set. Rows with
  /// row_mask cleared, and all masked columns, are exactly zero.
  Var masked_softmax(Var a, std::span<const unsigned char> row_mask, std::span<const unsigned char> col_mask) {
    const Mat<T>& A = value(a);
    if (static_cast<int>(row_mask.size()) != A.rows || static_cast<int>(col_mask.size()) != A.cols)
      throw ShapeMismatch("masked_softmax: mask length");
    Mat<T> C(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
      if (!row_mask[i]) continue;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < A.cols; ++j)
        if (col_mask[j]) mx = std::max(mx, A(i, j));
      T sum = 0;
      for (int j = 0; j < A.cols; ++j) {
        if (!col_mask[j]) continue;
        C(i, j) = std::exp(A(i, j) - mx);
        sum += C(i, j);
      }
      for (int j = 0; j < A.cols; ++j) C(i, j) /= sum;
    }
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out] {
        const Mat<T>& dC = nodes_[out.id].grad;
        const Mat<T>& Y = value(out);
        Mat<T>& dA = acc(a.id);
        for (int i = 0; i < Y.rows; ++i) {
          T dot = 0;
          for (int j = 0; j < Y.cols; ++j) dot += Y(i, j) * dC(i, j);
          for (int j = 0; j < Y.cols; ++j) dA(i, j) += Y(i, j) * (dC(i, j) - dot);
        }
      };
    }
    return out;
  }

  /// Divides each row by max(‖row‖₂, floor).
  Var row_normalize(Var a, T floor) {
    const Mat<T>& A = value(a);
    Mat<T> C(A.rows, A.cols);
    std::vector<T> norms(A.rows);
    for (int i = 0; i < A.rows; ++i) {
      T ss = 0;
      for (T x : A.row(i)) ss += x * x;
      const T nrm = std::sqrt(ss);
      norms[i] = nrm;
      const T div = std::max(nrm, floor);
      for (int j = 0; j < A.cols; ++j) C(i, j) = A(i, j) / div;
    }
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, floor, norms = std::move(norms)] {
        const Mat<T>& dC = nodes_[out.id].grad;
        const Mat<T>& Y = value(out);
        Mat<T>& dA = acc(a.id);
        for (int i = 0; i < Y.rows; ++i) {
          if (norms[i] < floor) {
            for (int j = 0; j < Y.cols; ++j) dA(i, j) += dC(i, j) / floor;
            continue;
          }
          T dot = 0;
          for (int j = 0; j < Y.cols; ++j) dot += Y(i, j) * dC(i, j);
          for (int j = 0; j < Y.cols; ++j) dA(i, j) += (dC(i, j) - Y(i, j) * dot) / norms[i];
        }
      };
    }
    return out;
  }

  /// D(i,j) = ‖a_i − b_j‖₂ for rows a_i of A and b_j of B.
  Var pairwise_distance(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (A.cols != B.cols) throw ShapeMismatch("pairwise_distance: widths differ");
    Mat<T> D(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < B.rows; ++j) {
        T ss = 0;
        for (int c = 0; c < A.cols; ++c) {
          const T diff = A(i, c) - B(j, c);
          ss += diff * diff;
        }
        D(i, j) = std::sqrt(ss);
      }
    Var out = push_op(std::move(D), {a, b});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, b, out] {
        const Mat<T>& dD = nodes_[out.id].grad;
        const Mat<T>& D = value(out);
        const Mat<T>& A = value(a);
        const Mat<T>& B = value(b);
        for (int i = 0; i < A.rows; ++i)
          for (int j = 0; j < B.rows; ++j) {
            // The distance is not differentiable at zero; take the zero subgradient.
            if (D(i, j) <= T(1e-12) || dD(i, j) == T(0)) continue;
            const T f = dD(i, j) / D(i, j);
            for (int c = 0; c < A.cols; ++c) {
              const T g = f * (A(i, c) - B(j, c));
              if (needs_grad(a)) acc(a.id)(i, c) += g;
              if (needs_grad(b)) acc(b.id)(j, c) -= g;
            }
          }
      };
    }
    return out;
  }

  /// Row maxima as an m×1 column; ties resolve to the lowest column index.
  Var row_max(Var a) {
    const Mat<T>& A = value(a);
    Mat<T> C(A.rows, 1);
    std::vector<int> arg(A.rows, 0);
    for (int i = 0; i < A.rows; ++i) {
      for (int j = 1; j < A.cols; ++j)
        if (A(i, j) > A(i, arg[i])) arg[i] = j;
      C(i, 0) = A(i, arg[i]);
    }
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, arg = std::move(arg)] {
        const Mat<T>& dC = nodes_[out.id].grad;
        Mat<T>& dA = acc(a.id);
        for (int i = 0; i < dC.rows; ++i) dA(i, arg[i]) += dC(i, 0);
      };
    }
    return out;
  }

  /// Maximum over the masked entries of an m×1 column, as a 1×1 value.
  Var masked_max(Var a, std::span<const unsigned char> mask) {
    const Mat<T>& A = value(a);
    int arg = -1;
    for (int i = 0; i < A.rows; ++i)
      if (mask[i] && (arg < 0 || A(i, 0) > A(arg, 0))) arg = i;
    if (arg < 0) throw ShapeMismatch("masked_max: empty mask");
    Mat<T> C(1, 1, A(arg, 0));
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, arg] { acc(a.id)(arg, 0) += nodes_[out.id].grad.data[0]; };
    }
    return out;
  }

  /// Mean of the masked rows, as a 1×n row.
  Var masked_mean_rows(Var a, std::span<const unsigned char> mask) {
    const Mat<T>& A = value(a);
    int count = 0;
    Mat<T> C(1, A.cols);
    for (int i = 0; i < A.rows; ++i) {
      if (!mask[i]) continue;
      ++count;
      for (int j = 0; j < A.cols; ++j) C.data[j] += A(i, j);
    }
    if (count == 0) throw ShapeMismatch("masked_mean_rows: empty mask");
    for (auto& x : C.data) x /= T(count);
    std::vector<unsigned char> m(mask.begin(), mask.end());
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, m = std::move(m), count] {
        const Mat<T>& dC = nodes_[out.id].grad;
        Mat<T>& dA = acc(a.id);
        for (int i = 0; i < dA.rows; ++i) {
          if (!m[i]) continue;
          for (int j = 0; j < dA.cols; ++j) dA(i, j) += dC.data[j] / T(count);
        }
      };
    }
    return out;
  }

  /// −Σ_j a_j ln(a_j + eps) / denom over all entries, as a 1×1 value.
  Var entropy(Var a, T eps, T denom) {
    const Mat<T>& A = value(a);
    T h = 0;
    for (T x : A.data) h -= x * std::log(x + eps);
    Mat<T> C(1, 1, h / denom);
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, eps, denom] {
        const T g = nodes_[out.id].grad.data[0];
        const Mat<T>& A = value(a);
        Mat<T>& dA = acc(a.id);
        for (std::size_t i = 0; i < A.size(); ++i) {
          const T x = A.data[i];
          dA.data[i] += -g * (std::log(x + eps) + x / (x + eps)) / denom;
        }
      };
    }
    return out;
  }

  // Raw GEMM kernels accumulate into C (C += op(A)·op(B)).
  static void gemm_nn(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
    const int n = B.cols;
    for (int i = 0; i < A.rows; ++i) {
      T* c = C.data.data() + static_cast<std::size_t>(i) * n;
      for (int k = 0; k < A.cols; ++k) {
        const T aik = A(i, k);
        if (aik == T(0)) continue;
        const T* b = B.data.data() + static_cast<std::size_t>(k) * n;
        for (int j = 0; j < n; ++j) c[j] += aik * b[j];
      }
    }
  }
  static void gemm_nt(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
    // Transpose B once so the inner loop is a contiguous axpy.
    const int kdim = A.cols;
    const int n = B.rows;
    thread_local std::vector<T> bt;
    bt.assign(static_cast<std::size_t>(kdim) * n, T(0));
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < kdim; ++k) bt[static_cast<std::size_t>(k) * n + j] = B(j, k);
    for (int i = 0; i < A.rows; ++i) {
      T* c = C.data.data() + static_cast<std::size_t>(i) * n;
      for (int k = 0; k < kdim; ++k) {
        const T aik = A(i, k);
        if (aik == T(0)) continue;
        const T* b = bt.data() + static_cast<std::size_t>(k) * n;
        for (int j = 0; j < n; ++j) c[j] += aik * b[j];
      }
    }
  }
  static void gemm_tn(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
    const int n = B.cols;
    for (int k = 0; k < A.rows; ++k) {
      const T* b = B.data.data() + static_cast<std::size_t>(k) * n;
      for (int i = 0; i < A.cols; ++i) {
        const T aki = A(k, i);
        if (aki == T(0)) continue;
        T* c = C.data.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) c[j] += aki * b[j];
      }
    }
  }

 private:
  struct Node {
    Mat<T> own;
    const Mat<T>* ext = nullptr;
    Mat<T> grad;
    std::function<void()> back;
    bool needs_grad = false;
    const Mat<T>& val() const { return ext ? *ext : own; }
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push_op(Mat<T> value, std::initializer_list<Var> inputs) {
    Node n;
    n.own = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    return push(std::move(n));
  }
  Var push_op(Mat<T> value, const std::vector<Var>& inputs) {
    Node n;
    n.own = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    return push(std::move(n));
  }

  Mat<T>& acc(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Mat<T>(n.val().rows, n.val().cols);
    return n.grad;
  }

  template <class F, class DF>
  Var unary(Var a, F f, DF df) {
    Mat<T> C = value(a);
    for (auto& x : C.data) x = f(x);
    Var out = push_op(std::move(C), {a});
    if (nodes_[out.id].needs_grad) {
      nodes_[out.id].back = [this, a, out, df] {
        const Mat<T>& dC = nodes_[out.id].grad;
        const Mat<T>& X = value(a);
        const Mat<T>& Y = value(out);
        Mat<T>& dA = acc(a.id);
        for (std::size_t i = 0; i < dA.size(); ++i) dA.data[i] += dC.data[i] * df(X.data[i], Y.data[i]);
      };
    }
    return out;
  }

  std::vector<Node> nodes_;
};

}  // namespace logmilp::ad
