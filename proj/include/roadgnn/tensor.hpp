#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "roadgnn/error.hpp"
#include "roadgnn/rng.hpp"

namespace roadgnn::ad {

// Row-major dense matrix of 64-bit floats. Scalars are 1x1, row vectors 1xn.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat full(int r, int c, double x) {
    Mat m(r, c);
    std::fill(m.a.begin(), m.a.end(), x);
    return m;
  }
  static Mat row(std::initializer_list<double> xs) {
    Mat m(1, static_cast<int>(xs.size()));
    std::copy(xs.begin(), xs.end(), m.a.begin());
    return m;
  }
  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
  std::size_t size() const { return a.size(); }
  bool empty() const { return a.empty(); }
};

namespace kernel {

// C += A * B, A[mxk] B[kxn]
inline void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C += A * B^T, A[mxk] B[nxk]
inline void matmul_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * k;
      double dot = 0.0;
      for (int p = 0; p < k; ++p) dot += a[p] * b[p];
      c[j] += dot;
    }
  }
}

// C += A^T * B, A[mxk] B[mxn], C[kxn]
inline void matmul_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    const double* b = B + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      double* c = C + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace kernel

struct Node;
using NodeP = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::vector<NodeP> inputs;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.rows != value.rows || grad.cols != value.cols) grad = Mat::zeros(value.rows, value.cols);
  }
};

// Value-semantic handle onto the recorded computation graph.
class Var {
 public:
  Var() = default;
  explicit Var(NodeP n) : node_(std::move(n)) {}

  static Var leaf(Mat m, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(m);
    n->requires_grad = requires_grad;
    return Var(n);
  }

  bool valid() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& value_mut() { return node_->value; }
  Mat& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const Mat& grad_or_empty() const { return node_->grad; }
  int rows() const { return node_->value.rows; }
  int cols() const { return node_->value.cols; }
  double scalar() const {
    if (rows() != 1 || cols() != 1) throw engine_error("scalar() on non-scalar tensor");
    return node_->value.a[0];
  }
  NodeP node() const { return node_; }

 private:
  NodeP node_;
};

inline Var constant(Mat m) { return Var::leaf(std::move(m), false); }

namespace detail {

inline void check_finite(const Mat& m, const char* op) {
  for (double x : m.a)
    if (!std::isfinite(x)) throw engine_error(std::string("non-finite value produced by op '") + op + "'");
}

inline Var make_op(const char* op, Mat value, std::vector<Var> inputs,
                   std::function<void(Node&)> backprop) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->backprop = std::move(backprop);
  n->inputs.reserve(inputs.size());
  for (auto& v : inputs) n->inputs.push_back(v.node());
  return Var(n);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw engine_error(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops

inline Var matmul(Var a, Var b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat out(a.rows(), b.cols());
  kernel::matmul_acc(a.value().a.data(), b.value().a.data(), out.a.data(), a.rows(), a.cols(),
                     b.cols());
  return detail::make_op("matmul", std::move(out), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    A.ensure_grad();
    B.ensure_grad();
    kernel::matmul_nt_acc(n.grad.a.data(), B.value.a.data(), A.grad.a.data(), n.grad.rows,
                          n.grad.cols, A.value.cols);
    kernel::matmul_tn_acc(A.value.a.data(), n.grad.a.data(), B.grad.a.data(), A.value.rows,
                          A.value.cols, n.grad.cols);
  });
}

inline Var add(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.a[i] += b.value().a[i];
  return detail::make_op("add", std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *n.inputs[k];
      in.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) in.grad.a[i] += n.grad.a[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.a[i] -= b.value().a[i];
  return detail::make_op("sub", std::move(out), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      A.grad.a[i] += n.grad.a[i];
      B.grad.a[i] -= n.grad.a[i];
    }
  });
}

// a[mxn] + b[1xn] broadcast over rows
inline Var add_rowvec(Var a, Var b) {
  detail::require(b.rows() == 1 && b.cols() == a.cols(), "add_rowvec: bias must be 1 x cols");
  Mat out = a.value();
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += b.value().at(0, j);
  return detail::make_op("add_rowvec", std::move(out), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad.a[i] += n.grad.a[i];
    for (int i = 0; i < n.grad.rows; ++i)
      for (int j = 0; j < n.grad.cols; ++j) B.grad.at(0, j) += n.grad.at(i, j);
  });
}

inline Var scale(Var a, double c) {
  Mat out = a.value();
  for (auto& x : out.a) x *= c;
  return detail::make_op("scale", std::move(out), {a}, [c](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad.a[i] += c * n.grad.a[i];
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var identity(Var a) { return a; }

// Hadamard product
inline Var mul(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.a[i] *= b.value().a[i];
  return detail::make_op("mul", std::move(out), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      A.grad.a[i] += n.grad.a[i] * B.value.a[i];
      B.grad.a[i] += n.grad.a[i] * A.value.a[i];
    }
  });
}

// Row i of a scaled by c[i], c is m x 1
inline Var mul_colvec(Var a, Var c) {
  detail::require(c.rows() == a.rows() && c.cols() == 1, "mul_colvec: scale must be rows x 1");
  Mat out = a.value();
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) *= c.value().at(i, 0);
  return detail::make_op("mul_colvec", std::move(out), {a, c}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& C = *n.inputs[1];
    A.ensure_grad();
    C.ensure_grad();
    for (int i = 0; i < n.grad.rows; ++i) {
      const double ci = C.value.at(i, 0);
      double dot = 0.0;
      for (int j = 0; j < n.grad.cols; ++j) {
        A.grad.at(i, j) += n.grad.at(i, j) * ci;
        dot += n.grad.at(i, j) * A.value.at(i, j);
      }
      C.grad.at(i, 0) += dot;
    }
  });
}

// a scaled by a 1x1 tensor (learnable scalar)
inline Var mul_scalar(Var a, Var s) {
  detail::require(s.rows() == 1 && s.cols() == 1, "mul_scalar: scale must be 1 x 1");
  const double sv = s.value().a[0];
  Mat out = a.value();
  for (auto& x : out.a) x *= sv;
  return detail::make_op("mul_scalar", std::move(out), {a, s}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& S = *n.inputs[1];
    A.ensure_grad();
    S.ensure_grad();
    const double sv = S.value.a[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      A.grad.a[i] += sv * n.grad.a[i];
      acc += n.grad.a[i] * A.value.a[i];
    }
    S.grad.a[0] += acc;
  });
}

inline Var concat_cols(Var a, Var b) {
  detail::require(a.rows() == b.rows(), "concat_cols: row counts differ");
  Mat out(a.rows(), a.cols() + b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.value().at(i, j);
    for (int j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.value().at(i, j);
  }
  const int ac = a.cols();
  return detail::make_op("concat_cols", std::move(out), {a, b}, [ac](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    A.ensure_grad();
    B.ensure_grad();
    for (int i = 0; i < n.grad.rows; ++i) {
      for (int j = 0; j < ac; ++j) A.grad.at(i, j) += n.grad.at(i, j);
      for (int j = 0; j < B.value.cols; ++j) B.grad.at(i, j) += n.grad.at(i, ac + j);
    }
  });
}

inline Var slice_cols(Var a, int c0, int c1) {
  detail::require(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  Mat out(a.rows(), c1 - c0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = a.value().at(i, j);
  return detail::make_op("slice_cols", std::move(out), {a}, [c0](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (int i = 0; i < n.grad.rows; ++i)
      for (int j = 0; j < n.grad.cols; ++j) A.grad.at(i, c0 + j) += n.grad.at(i, j);
  });
}

// Each row repeated `times` consecutively: [m x n] -> [m*times x n]
inline Var repeat_rows(Var a, int times) {
  detail::require(times >= 1, "repeat_rows: times must be >= 1");
  Mat out(a.rows() * times, a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int t = 0; t < times; ++t)
      for (int j = 0; j < a.cols(); ++j) out.at(i * times + t, j) = a.value().at(i, j);
  return detail::make_op("repeat_rows", std::move(out), {a}, [times](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (int i = 0; i < A.value.rows; ++i)
      for (int t = 0; t < times; ++t)
        for (int j = 0; j < A.value.cols; ++j) A.grad.at(i, j) += n.grad.at(i * times + t, j);
  });
}

// Interleaves one self row ahead of each group of g neighbor rows:
// [m x d], [m*g x d] -> [m*(g+1) x d]
inline Var group_prepend(Var self, Var neigh, int g) {
  detail::require(self.cols() == neigh.cols(), "group_prepend: column mismatch");
  detail::require(neigh.rows() == self.rows() * g, "group_prepend: neighbor rows != m*g");
  const int m = self.rows(), d = self.cols();
  Mat out(m * (g + 1), d);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) out.at(i * (g + 1), j) = self.value().at(i, j);
    for (int t = 0; t < g; ++t)
      for (int j = 0; j < d; ++j) out.at(i * (g + 1) + 1 + t, j) = neigh.value().at(i * g + t, j);
  }
  return detail::make_op("group_prepend", std::move(out), {self, neigh}, [g](Node& n) {
    Node& S = *n.inputs[0];
    Node& N = *n.inputs[1];
    S.ensure_grad();
    N.ensure_grad();
    const int m = S.value.rows, d = S.value.cols;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < d; ++j) S.grad.at(i, j) += n.grad.at(i * (g + 1), j);
      for (int t = 0; t < g; ++t)
        for (int j = 0; j < d; ++j) N.grad.at(i * g + t, j) += n.grad.at(i * (g + 1) + 1 + t, j);
    }
  });
}

inline Var gather_rows(Var a, std::vector<int> idx) {
  for (int i : idx) detail::require(0 <= i && i < a.rows(), "gather_rows: index out of range");
  Mat out(static_cast<int>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < a.cols(); ++j) out.at(static_cast<int>(r), j) = a.value().at(idx[r], j);
  return detail::make_op("gather_rows", std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < n.grad.cols; ++j)
        A.grad.at(idx[r], j) += n.grad.at(static_cast<int>(r), j);
  });
}

// ---------------------------------------------------------------------------
// Grouped reductions over blocks of g consecutive rows.

inline Var group_sum(Var a, int g) {
  detail::require(g >= 1 && a.rows() % g == 0, "group_sum: rows not divisible by group");
  const int m = a.rows() / g, d = a.cols();
  Mat out(m, d);
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < g; ++t)
      for (int j = 0; j < d; ++j) out.at(i, j) += a.value().at(i * g + t, j);
  return detail::make_op("group_sum", std::move(out), {a}, [g](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (int i = 0; i < n.grad.rows; ++i)
      for (int t = 0; t < g; ++t)
        for (int j = 0; j < n.grad.cols; ++j) A.grad.at(i * g + t, j) += n.grad.at(i, j);
  });
}

inline Var group_mean(Var a, int g) { return scale(group_sum(a, g), 1.0 / g); }

inline Var group_max(Var a, int g) {
  detail::require(g >= 1 && a.rows() % g == 0, "group_max: rows not divisible by group");
  const int m = a.rows() / g, d = a.cols();
  Mat out(m, d);
  std::vector<int> arg(static_cast<std::size_t>(m) * d, 0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) {
      double best = a.value().at(i * g, j);
      int bt = 0;
      for (int t = 1; t < g; ++t) {
        const double x = a.value().at(i * g + t, j);
        if (x > best) {
          best = x;
          bt = t;
        }
      }
      out.at(i, j) = best;
      arg[static_cast<std::size_t>(i) * d + j] = bt;
    }
  return detail::make_op("group_max", std::move(out), {a}, [g, arg = std::move(arg)](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    const int d = n.grad.cols;
    for (int i = 0; i < n.grad.rows; ++i)
      for (int j = 0; j < d; ++j)
        A.grad.at(i * g + arg[static_cast<std::size_t>(i) * d + j], j) += n.grad.at(i, j);
  });
}

// Softmax within each block of g consecutive rows of a column vector.
inline Var group_softmax(Var s, int g) {
  detail::require(s.cols() == 1, "group_softmax: expects a column vector");
  detail::require(g >= 1 && s.rows() % g == 0, "group_softmax: rows not divisible by group");
  const int m = s.rows() / g;
  Mat out(s.rows(), 1);
  for (int i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < g; ++t) mx = std::max(mx, s.value().at(i * g + t, 0));
    double z = 0.0;
    for (int t = 0; t < g; ++t) {
      const double e = std::exp(s.value().at(i * g + t, 0) - mx);
      out.at(i * g + t, 0) = e;
      z += e;
    }
    for (int t = 0; t < g; ++t) out.at(i * g + t, 0) /= z;
  }
  return detail::make_op("group_softmax", std::move(out), {s}, [g](Node& n) {
    Node& S = *n.inputs[0];
    S.ensure_grad();
    const int m = n.value.rows / g;
    for (int i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int t = 0; t < g; ++t) dot += n.grad.at(i * g + t, 0) * n.value.at(i * g + t, 0);
      for (int t = 0; t < g; ++t) {
        const double y = n.value.at(i * g + t, 0);
        S.grad.at(i * g + t, 0) += y * (n.grad.at(i * g + t, 0) - dot);
      }
    }
  });
}

// Softmax along rows (axis 1) or columns (axis 0).
inline Var softmax(Var a, int axis) {
  detail::require(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  detail::require(a.rows() > 0 && a.cols() > 0, "softmax over empty axis");
  Mat out = a.value();
  if (axis == 1) {
    for (int i = 0; i < out.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < out.cols; ++j) mx = std::max(mx, out.at(i, j));
      double z = 0.0;
      for (int j = 0; j < out.cols; ++j) {
        out.at(i, j) = std::exp(out.at(i, j) - mx);
        z += out.at(i, j);
      }
      for (int j = 0; j < out.cols; ++j) out.at(i, j) /= z;
    }
  } else {
    for (int j = 0; j < out.cols; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < out.rows; ++i) mx = std::max(mx, out.at(i, j));
      double z = 0.0;
      for (int i = 0; i < out.rows; ++i) {
        out.at(i, j) = std::exp(out.at(i, j) - mx);
        z += out.at(i, j);
      }
      for (int i = 0; i < out.rows; ++i) out.at(i, j) /= z;
    }
  }
  return detail::make_op("softmax", std::move(out), {a}, [axis](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    if (axis == 1) {
      for (int i = 0; i < n.value.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n.value.cols; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
        for (int j = 0; j < n.value.cols; ++j)
          A.grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
      }
    } else {
      for (int j = 0; j < n.value.cols; ++j) {
        double dot = 0.0;
        for (int i = 0; i < n.value.rows; ++i) dot += n.grad.at(i, j) * n.value.at(i, j);
        for (int i = 0; i < n.value.rows; ++i)
          A.grad.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Axis reductions. axis 0 -> 1 x n, axis 1 -> m x 1.

inline Var sum_axis(Var a, int axis) {
  detail::require(axis == 0 || axis == 1, "sum_axis: axis must be 0 or 1");
  Mat out = axis == 0 ? Mat(1, a.cols()) : Mat(a.rows(), 1);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      if (axis == 0)
        out.at(0, j) += a.value().at(i, j);
      else
        out.at(i, 0) += a.value().at(i, j);
    }
  return detail::make_op("sum_axis", std::move(out), {a}, [axis](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (int i = 0; i < A.value.rows; ++i)
      for (int j = 0; j < A.value.cols; ++j)
        A.grad.at(i, j) += axis == 0 ? n.grad.at(0, j) : n.grad.at(i, 0);
  });
}

inline Var mean_axis(Var a, int axis) {
  const int denom = axis == 0 ? a.rows() : a.cols();
  detail::require(denom > 0, "mean_axis over empty axis");
  return scale(sum_axis(a, axis), 1.0 / denom);
}

inline Var max_axis(Var a, int axis) {
  detail::require(axis == 0 || axis == 1, "max_axis: axis must be 0 or 1");
  detail::require(a.rows() > 0 && a.cols() > 0, "max_axis over empty axis");
  const int m = a.rows(), d = a.cols();
  Mat out = axis == 0 ? Mat(1, d) : Mat(m, 1);
  std::vector<int> arg(axis == 0 ? d : m, 0);
  if (axis == 0) {
    for (int j = 0; j < d; ++j) {
      double best = a.value().at(0, j);
      int bi = 0;
      for (int i = 1; i < m; ++i)
        if (a.value().at(i, j) > best) {
          best = a.value().at(i, j);
          bi = i;
        }
      out.at(0, j) = best;
      arg[j] = bi;
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double best = a.value().at(i, 0);
      int bj = 0;
      for (int j = 1; j < d; ++j)
        if (a.value().at(i, j) > best) {
          best = a.value().at(i, j);
          bj = j;
        }
      out.at(i, 0) = best;
      arg[i] = bj;
    }
  }
  return detail::make_op("max_axis", std::move(out), {a}, [axis, arg = std::move(arg)](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    if (axis == 0)
      for (int j = 0; j < A.value.cols; ++j) A.grad.at(arg[j], j) += n.grad.at(0, j);
    else
      for (int i = 0; i < A.value.rows; ++i) A.grad.at(i, arg[i]) += n.grad.at(i, 0);
  });
}

inline Var sum_all(Var a) {
  Mat out(1, 1);
  for (double x : a.value().a) out.a[0] += x;
  return detail::make_op("sum_all", std::move(out), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (auto& g : A.grad.a) g += n.grad.a[0];
  });
}

inline Var mean_all(Var a) {
  detail::require(a.value().size() > 0, "mean_all of empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

namespace detail {

template <typename F, typename DF>
inline Var unary(const char* name, Var a, F f, DF df) {
  Mat out = a.value();
  for (auto& x : out.a) x = f(x);
  return make_op(name, std::move(out), {a}, [df](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      A.grad.a[i] += n.grad.a[i] * df(A.value.a[i], n.value.a[i]);
  });
}

}  // namespace detail

inline Var sigmoid(Var a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh_op(Var a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var elu(Var a, double alpha = 1.0) {
  return detail::unary(
      "elu", a, [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  return detail::unary("leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                       [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var log_op(Var a) {
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

// Clamp with an activation counter; gradients pass through unclamped
// entries only.
inline Var clamp(Var a, double lo, double hi, std::size_t* activations = nullptr) {
  Mat out = a.value();
  std::size_t hits = 0;
  for (auto& x : out.a) {
    if (x < lo) {
      x = lo;
      ++hits;
    } else if (x > hi) {
      x = hi;
      ++hits;
    }
  }
  if (activations) *activations += hits;
  return detail::make_op("clamp", std::move(out), {a}, [lo, hi](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double x = A.value.a[i];
      if (x >= lo && x <= hi) A.grad.a[i] += n.grad.a[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Row normalization, dropout, dot products, losses

inline Var l2_normalize_rows(Var a) {
  Mat out = a.value();
  std::vector<double> norms(static_cast<std::size_t>(a.rows()), 1.0);
  for (int i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += out.at(i, j) * out.at(i, j);
    const double nrm = std::sqrt(s);
    norms[static_cast<std::size_t>(i)] = nrm > 1e-300 ? nrm : 1.0;  // zero rows stay zero
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) /= norms[static_cast<std::size_t>(i)];
  }
  return detail::make_op("l2_normalize_rows", std::move(out), {a},
                         [norms = std::move(norms)](Node& n) {
                           Node& A = *n.inputs[0];
                           A.ensure_grad();
                           for (int i = 0; i < n.value.rows; ++i) {
                             double dot = 0.0;
                             for (int j = 0; j < n.value.cols; ++j)
                               dot += n.grad.at(i, j) * n.value.at(i, j);
                             const double nrm = norms[static_cast<std::size_t>(i)];
                             for (int j = 0; j < n.value.cols; ++j)
                               A.grad.at(i, j) += (n.grad.at(i, j) - n.value.at(i, j) * dot) / nrm;
                           }
                         });
}

// Inverted dropout; rate 0 is the identity (same node passed through).
inline Var dropout(Var a, double rate, SplitMix64& rng) {
  if (rate == 0.0) return a;
  detail::require(rate > 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - rate);
  Mat mask(a.rows(), a.cols());
  for (auto& m : mask.a) m = rng.next_double() >= rate ? keep_scale : 0.0;
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.a[i] *= mask.a[i];
  return detail::make_op("dropout", std::move(out), {a}, [mask = std::move(mask)](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad.a[i] += n.grad.a[i] * mask.a[i];
  });
}

// Per-row dot product of equally shaped matrices -> m x 1
inline Var rowwise_dot(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "rowwise_dot: shape mismatch");
  Mat out(a.rows(), 1);
  for (int i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += a.value().at(i, j) * b.value().at(i, j);
    out.at(i, 0) = s;
  }
  return detail::make_op("rowwise_dot", std::move(out), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    A.ensure_grad();
    B.ensure_grad();
    for (int i = 0; i < A.value.rows; ++i) {
      const double gi = n.grad.at(i, 0);
      for (int j = 0; j < A.value.cols; ++j) {
        A.grad.at(i, j) += gi * B.value.at(i, j);
        B.grad.at(i, j) += gi * A.value.at(i, j);
      }
    }
  });
}

// Mean cross-entropy over rows whose label is >= 0 (absent labels are
// excluded). Log-softmax is computed stably inside.
inline Var cross_entropy(Var logits, const std::vector<int>& labels) {
  detail::require(static_cast<int>(labels.size()) == logits.rows(),
                  "cross_entropy: labels size != rows");
  detail::require(logits.cols() > 0, "cross_entropy: no classes");
  int labeled = 0;
  for (int y : labels)
    if (y >= 0) {
      detail::require(y < logits.cols(), "cross_entropy: label out of range");
      ++labeled;
    }
  if (labeled == 0) throw train_error("cross_entropy: batch contains no labeled nodes");

  const int m = logits.rows(), c = logits.cols();
  Mat probs(m, c);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, logits.value().at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      probs.at(i, j) = std::exp(logits.value().at(i, j) - mx);
      z += probs.at(i, j);
    }
    for (int j = 0; j < c; ++j) probs.at(i, j) /= z;
    if (labels[static_cast<std::size_t>(i)] >= 0)
      total += -(logits.value().at(i, labels[static_cast<std::size_t>(i)]) - mx - std::log(z));
  }
  Mat out(1, 1);
  out.a[0] = total / labeled;
  return detail::make_op(
      "cross_entropy", std::move(out), {logits},
      [labels, probs = std::move(probs), labeled](Node& n) {
        Node& L = *n.inputs[0];
        L.ensure_grad();
        const double g = n.grad.a[0] / labeled;
        for (int i = 0; i < L.value.rows; ++i) {
          const int y = labels[static_cast<std::size_t>(i)];
          if (y < 0) continue;
          for (int j = 0; j < L.value.cols; ++j)
            L.grad.at(i, j) += g * (probs.at(i, j) - (j == y ? 1.0 : 0.0));
        }
      });
}

// ---------------------------------------------------------------------------
// Reverse pass

inline void backward(const Var& loss) {
  if (!loss.valid() || loss.rows() != 1 || loss.cols() != 1)
    throw engine_error("backward: loss must be a 1x1 tensor");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->inputs.size()) {
      Node* child = f.n->inputs[f.next++].get();
      if (!visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  loss.node()->grad.a[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace roadgnn::ad
