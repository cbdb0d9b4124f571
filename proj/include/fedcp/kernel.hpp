#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fedcp/matrix.hpp"

namespace fedcp {

/// Flat parameter buffer with a name -> (offset, rows, cols) registry.
/// Models register their weights once; optimizers and the federation layer
/// treat the whole thing as one vector, while layers grab zero-copy views.
class ParamVector {
 public:
  struct Slot {
    std::size_t offset = 0;
    int rows = 0, cols = 0;
  };

  void register_param(const std::string& name, int rows, int cols) {
    if (slots_.count(name)) throw ModelError("duplicate parameter: " + name);
    Slot s;
    s.offset = data_.size();
    s.rows = rows;
    s.cols = cols;
    slots_[name] = s;
    order_.push_back(name);
    data_.resize(data_.size() + std::size_t(rows) * cols, 0.0);
  }

  MutMat view(const std::string& name) {
    const Slot& s = slot(name);
    return MutMat(data_.data() + s.offset, s.rows, s.cols);
  }
  ConstMat view(const std::string& name) const {
    const Slot& s = slot(name);
    return ConstMat(data_.data() + s.offset, s.rows, s.cols);
  }

  /// Zero-filled clone with identical layout; gradient buffers start here.
  ParamVector zeros_like() const {
    ParamVector g;
    g.slots_ = slots_;
    g.order_ = order_;
    g.data_.assign(data_.size(), 0.0);
    return g;
  }

  bool same_layout(const ParamVector& o) const {
    if (order_ != o.order_) return false;
    for (const auto& name : order_) {
      const Slot &a = slots_.at(name), &b = o.slots_.at(name);
      if (a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::string>& names() const { return order_; }

  const Slot& slot(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ModelError("unknown parameter: " + name);
    return it->second;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void axpy(double scale, const ParamVector& other) {
    if (!same_layout(other)) throw ModelError("axpy: parameter layout mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
  }

 private:
  std::map<std::string, Slot> slots_;
  std::vector<std::string> order_;
  std::vector<double> data_;
};

/// Glorot-uniform init for a registered weight. Fan sizes come from the slot.
inline void glorot_init(ParamVector& params, const std::string& name, Rng& rng) {
  MutMat w = params.view(name);
  double bound = std::sqrt(6.0 / double(w.rows + w.cols));
  for (std::size_t i = 0; i < std::size_t(w.rows) * w.cols; ++i)
    w.p[i] = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One Adam step with bias correction over the flat parameter buffer.
inline void adam_step(ParamVector& params, const ParamVector& grad, AdamState& st,
                      const AdamConfig& cfg = {}) {
  if (!params.same_layout(grad)) throw OptimizerError("adam: gradient layout mismatch");
  if (st.m.size() != params.size()) throw OptimizerError("adam: state size mismatch");
  if (!all_finite(grad.data())) {
    // name the first offending slice so the error points somewhere useful
    for (const auto& name : grad.names()) {
      if (!all_finite(grad.view(name))) throw OptimizerError("adam: non-finite gradient in " + name);
    }
    throw OptimizerError("adam: non-finite gradient");
  }
  st.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  auto& p = params.data();
  const auto& g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    double mhat = st.m[i] / bc1;
    double vhat = st.v[i] / bc2;
    p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Dense layers: forward plus analytic backward. No autodiff; each layer's
// backward takes the upstream gradient and hands back input/weight grads.

/// Y = X W. Returns Y; backward fills dX (optional) and accumulates into dW.
inline Matrix affine_forward(ConstMat x, ConstMat w) {
  return matmul(x, w);
}

inline void affine_backward(ConstMat x, ConstMat w, ConstMat dy, Matrix* dx, MutMat dw) {
  // dW += X^T dY ; dX = dY W^T
  add_inplace(dw, matmul_tn(x, dy));
  if (dx) *dx = matmul_nt(dy, w);
}

inline Matrix relu_forward(ConstMat x) {
  Matrix y = to_matrix(x);
  for (auto& v : y.a) v = v > 0.0 ? v : 0.0;
  return y;
}

/// Masks on the forward input: grad passes where x > 0.
inline Matrix relu_backward(ConstMat x, ConstMat dy) {
  Matrix dx = to_matrix(dy);
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (x.p[i] <= 0.0) dx.a[i] = 0.0;
  return dx;
}

inline Matrix sigmoid_forward(ConstMat x) {
  Matrix y = to_matrix(x);
  for (auto& v : y.a) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

/// dx from the *output* of the sigmoid: dy * y * (1 - y).
inline Matrix sigmoid_backward_from_output(ConstMat y, ConstMat dy) {
  Matrix dx = to_matrix(dy);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.a[i] *= y.p[i] * (1.0 - y.p[i]);
  return dx;
}

/// Row-wise softmax with the usual max-shift for stability.
inline Matrix softmax_rows(ConstMat z) {
  Matrix p(z.rows, z.cols);
  for (int i = 0; i < z.rows; ++i) {
    const double* zi = z.row(i);
    double zmax = zi[0];
    for (int j = 1; j < z.cols; ++j) zmax = std::max(zmax, zi[j]);
    double sum = 0.0;
    double* pi = p.row(i);
    for (int j = 0; j < z.cols; ++j) {
      pi[j] = std::exp(zi[j] - zmax);
      sum += pi[j];
    }
    for (int j = 0; j < z.cols; ++j) pi[j] /= sum;
  }
  return p;
}

/// Mean cross-entropy over rows; dZ = (softmax(Z) - onehot(y)) / n comes free.
struct SoftmaxXent {
  double loss = 0.0;
  Matrix probs;  // softmax(Z), kept for scoring
  Matrix dz;     // gradient w.r.t. logits
};

inline SoftmaxXent softmax_xent(ConstMat z, const std::vector<int>& labels) {
  if (int(labels.size()) != z.rows) throw KernelError("softmax_xent: label count mismatch");
  SoftmaxXent out;
  out.probs = softmax_rows(z);
  out.dz = out.probs;
  double total = 0.0;
  double inv_n = 1.0 / double(z.rows);
  for (int i = 0; i < z.rows; ++i) {
    int y = labels[i];
    if (y < 0 || y >= z.cols) throw KernelError("softmax_xent: label out of range");
    double p = std::max(out.probs(i, y), 1e-300);
    total -= std::log(p);
    out.dz(i, y) -= 1.0;
  }
  for (auto& v : out.dz.a) v *= inv_n;
  out.loss = total * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Sparse: CSR with fixed (row_ptr, col, val). Graph propagation lives here.

struct SparseMatrix {
  int rows = 0, cols = 0;
  std::vector<int> row_ptr;  // size rows+1
  std::vector<int> col;
  std::vector<double> val;

  SparseMatrix() = default;
  SparseMatrix(int r, int c) : rows(r), cols(c), row_ptr(std::size_t(r) + 1, 0) {}
};

/// Build CSR from (row, col, value) triplets; duplicates are summed.
inline SparseMatrix csr_from_triplets(int rows, int cols,
                                      std::vector<std::tuple<int, int, double>> trips) {
  std::sort(trips.begin(), trips.end());
  SparseMatrix m(rows, cols);
  m.col.reserve(trips.size());
  m.val.reserve(trips.size());
  std::vector<int> row_of;  // row index of each kept entry
  row_of.reserve(trips.size());
  int prev_r = -1, prev_c = -1;
  for (const auto& [r, c, v] : trips) {
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw KernelError("csr: triplet out of range");
    if (r == prev_r && c == prev_c) {
      m.val.back() += v;  // sorted, so a duplicate is always adjacent
      continue;
    }
    m.col.push_back(c);
    m.val.push_back(v);
    row_of.push_back(r);
    prev_r = r;
    prev_c = c;
  }
  for (int r : row_of) m.row_ptr[std::size_t(r) + 1] += 1;
  for (int i = 0; i < rows; ++i) m.row_ptr[std::size_t(i) + 1] += m.row_ptr[i];
  return m;
}

/// Y = S X (dense X).
inline Matrix spmm(const SparseMatrix& s, ConstMat x) {
  detail::require(s.cols == x.rows, "spmm: shape mismatch");
  Matrix y(s.rows, x.cols);
  for (int i = 0; i < s.rows; ++i) {
    double* yi = y.row(i);
    for (int idx = s.row_ptr[i]; idx < s.row_ptr[i + 1]; ++idx) {
      double sv = s.val[idx];
      const double* xr = x.row(s.col[idx]);
      for (int j = 0; j < x.cols; ++j) yi[j] += sv * xr[j];
    }
  }
  return y;
}

/// Y = S^T X — backward pass of spmm w.r.t. its dense operand.
inline Matrix spmm_t(const SparseMatrix& s, ConstMat x) {
  detail::require(s.rows == x.rows, "spmm_t: shape mismatch");
  Matrix y(s.cols, x.cols);
  for (int i = 0; i < s.rows; ++i) {
    const double* xi = x.row(i);
    for (int idx = s.row_ptr[i]; idx < s.row_ptr[i + 1]; ++idx) {
      double sv = s.val[idx];
      double* yr = y.row(s.col[idx]);
      for (int j = 0; j < x.cols; ++j) yr[j] += sv * xi[j];
    }
  }
  return y;
}

}  // namespace fedcp
