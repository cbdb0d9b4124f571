#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedcp/graph.hpp"

namespace fedcp {

inline double accuracy(ConstMat logits, const std::vector<int>& labels,
                       const std::vector<int>& nodes) {
  if (nodes.empty()) throw MetricsError("accuracy on empty node set");
  long hits = 0;
  for (int v : nodes) {
    const double* row = logits.row(v);
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (row[j] > row[best]) best = j;
    hits += (best == labels[v]);
  }
  return double(hits) / double(nodes.size());
}

// ---------------------------------------------------------------------------
// Two-layer GCN: logits = Ahat · ReLU(Ahat X W0) · W1, no biases.

struct GcnModel {
  int d = 0, h = 0, L = 0;
  ParamVector params;

  GcnModel(int d_, int h_, int L_) : d(d_), h(h_), L(L_) {
    if (h <= 0) throw ModelError("gcn: hidden width must be positive");
    params.register_param("W0", d, h);
    params.register_param("W1", h, L);
  }

  void init(Rng& rng) {
    glorot_init(params, "W0", rng);
    glorot_init(params, "W1", rng);
  }

  Matrix forward(const SparseMatrix& adj, ConstMat x) const {
    if (x.cols != d) throw ModelError("gcn: feature dim mismatch");
    Matrix q = spmm(adj, x);
    Matrix z0 = affine_forward(q, params.view("W0"));
    Matrix hid = relu_forward(z0);
    Matrix p = spmm(adj, hid);
    return affine_forward(p, params.view("W1"));
  }

  /// Cross-entropy over `nodes`; accumulates into `grad` (same layout).
  double loss_grad(const SparseMatrix& adj, ConstMat x, const std::vector<int>& labels,
                   const std::vector<int>& nodes, ParamVector& grad,
                   Matrix* logits_out = nullptr) const {
    Matrix q = spmm(adj, x);
    Matrix z0 = affine_forward(q, params.view("W0"));
    Matrix hid = relu_forward(z0);
    Matrix p = spmm(adj, hid);
    Matrix logits = affine_forward(p, params.view("W1"));

    Matrix sel = select_rows(logits, nodes);
    std::vector<int> sel_labels(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) sel_labels[i] = labels[nodes[i]];
    SoftmaxXent xent = softmax_xent(sel, sel_labels);

    Matrix dlogits(logits.rows, logits.cols);
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (int j = 0; j < L; ++j) dlogits(nodes[i], j) = xent.dz(int(i), j);

    Matrix dp;
    affine_backward(p, params.view("W1"), dlogits, &dp, grad.view("W1"));
    Matrix dhid = spmm_t(adj, dp);
    Matrix dz0 = relu_backward(z0, dhid);
    affine_backward(q, params.view("W0"), dz0, nullptr, grad.view("W0"));
    if (logits_out) *logits_out = std::move(logits);
    return xent.loss;
  }
};

// ---------------------------------------------------------------------------
// GraphSAGE with mean pooling: each layer concatenates self and neighbor-mean
// representations before the linear map. W0: 2d x h, W1: 2h x L.

struct SageModel {
  int d = 0, h = 0, L = 0;
  ParamVector params;

  SageModel(int d_, int h_, int L_) : d(d_), h(h_), L(L_) {
    if (h <= 0) throw ModelError("sage: hidden width must be positive");
    params.register_param("W0", 2 * d, h);
    params.register_param("W1", 2 * h, L);
  }

  void init(Rng& rng) {
    glorot_init(params, "W0", rng);
    glorot_init(params, "W1", rng);
  }

  Matrix forward(const SparseMatrix& mean_op, ConstMat x) const {
    if (x.cols != d) throw ModelError("sage: feature dim mismatch");
    Matrix c0 = hconcat(x, spmm(mean_op, x));
    Matrix z0 = affine_forward(c0, params.view("W0"));
    Matrix hid = relu_forward(z0);
    Matrix c1 = hconcat(hid, spmm(mean_op, hid));
    return affine_forward(c1, params.view("W1"));
  }

  double loss_grad(const SparseMatrix& mean_op, ConstMat x, const std::vector<int>& labels,
                   const std::vector<int>& nodes, ParamVector& grad,
                   Matrix* logits_out = nullptr) const {
    Matrix c0 = hconcat(x, spmm(mean_op, x));
    Matrix z0 = affine_forward(c0, params.view("W0"));
    Matrix hid = relu_forward(z0);
    Matrix c1 = hconcat(hid, spmm(mean_op, hid));
    Matrix logits = affine_forward(c1, params.view("W1"));

    Matrix sel = select_rows(logits, nodes);
    std::vector<int> sel_labels(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) sel_labels[i] = labels[nodes[i]];
    SoftmaxXent xent = softmax_xent(sel, sel_labels);

    Matrix dlogits(logits.rows, logits.cols);
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (int j = 0; j < L; ++j) dlogits(nodes[i], j) = xent.dz(int(i), j);

    Matrix dc1;
    affine_backward(c1, params.view("W1"), dlogits, &dc1, grad.view("W1"));
    // split the concat gradient back into self and neighbor halves
    Matrix dhid(hid.rows, h), dmh(hid.rows, h);
    for (int i = 0; i < hid.rows; ++i)
      for (int j = 0; j < h; ++j) {
        dhid(i, j) = dc1(i, j);
        dmh(i, j) = dc1(i, j + h);
      }
    add_inplace(dhid, spmm_t(mean_op, dmh));
    Matrix dz0 = relu_backward(z0, dhid);
    affine_backward(c0, params.view("W0"), dz0, nullptr, grad.view("W0"));
    if (logits_out) *logits_out = std::move(logits);
    return xent.loss;
  }
};

// ---------------------------------------------------------------------------
// Feature VAE with a sparsity penalty on squashed latent means.

struct VaeConfig {
  int hidden = 64;
  int latent = 32;
  double rho = 0.05;         // sparsity target
  double beta = 0.1;         // sparsity weight
  double lambda_rec = 1.0;
  double lambda_kl = 1.0;
  bool bernoulli = true;     // cross-entropy recon; false -> squared error
};

struct VaeLoss {
  double total = 0.0, rec = 0.0, kl = 0.0, sparse = 0.0;
  int clamped_dims = 0;  // rho-hat entries pinned away from {0,1}
};

struct VaeModel {
  int d = 0;
  VaeConfig cfg;
  ParamVector params;

  VaeModel(int d_, VaeConfig c = {}) : d(d_), cfg(c) {
    if (cfg.latent >= d) throw ModelError("vae: latent dim must be < feature dim");
    if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) throw ModelError("vae: rho must be in (0,1)");
    params.register_param("enc1", d, cfg.hidden);
    params.register_param("enc_mu", cfg.hidden, cfg.latent);
    params.register_param("enc_logvar", cfg.hidden, cfg.latent);
    params.register_param("dec1", cfg.latent, cfg.hidden);
    params.register_param("dec_out", cfg.hidden, d);
  }

  void init(Rng& rng) {
    for (const auto& name : params.names()) glorot_init(params, name, rng);
  }

  Matrix encode_mu(ConstMat x) const {
    Matrix he = relu_forward(affine_forward(x, params.view("enc1")));
    return affine_forward(he, params.view("enc_mu"));
  }

  /// Deterministic reconstruction through the latent mean (no noise) —
  /// this is what prototype extraction consumes.
  Matrix reconstruct(ConstMat x) const {
    Matrix mu = encode_mu(x);
    Matrix hd = relu_forward(affine_forward(mu, params.view("dec1")));
    Matrix out = affine_forward(hd, params.view("dec_out"));
    return cfg.bernoulli ? sigmoid_forward(out) : out;
  }
};

/// Loss and gradient over one batch. `eps` is the caller's reparameterization
/// noise (batch x latent), so runs are reproducible and finite-difference
/// checks can hold it fixed. `grad` is overwritten with the batch gradient,
/// assembled as (1/B) * sum of per-sample gradients — the exact decomposition
/// the differentially-private path clips, summed in the same order, so the
/// private path with sigma=0 and a huge clip reproduces this bit for bit.
/// When `per_sample` is given it receives each sample's (un-averaged) term.
/// The sparsity penalty couples samples through rho-hat; its shared factor is
/// computed once from the batch and distributed into the per-sample terms.
inline VaeLoss vae_loss_grad(const VaeModel& m, ConstMat x, ConstMat eps, ParamVector& grad,
                             std::vector<ParamVector>* per_sample = nullptr) {
  const int B = x.rows, D = m.cfg.latent, H = m.cfg.hidden;
  if (B < 1) throw ModelError("vae: empty batch");
  if (eps.rows != B || eps.cols != D) throw ModelError("vae: noise shape mismatch");
  const double invB = 1.0 / double(B);

  // forward, full batch
  Matrix ze = affine_forward(x, m.params.view("enc1"));
  Matrix he = relu_forward(ze);
  Matrix mu = affine_forward(he, m.params.view("enc_mu"));
  Matrix lv = affine_forward(he, m.params.view("enc_logvar"));
  Matrix z(B, D);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < D; ++j) z(i, j) = mu(i, j) + eps(i, j) * std::exp(0.5 * lv(i, j));
  Matrix zd = affine_forward(z, m.params.view("dec1"));
  Matrix hd = relu_forward(zd);
  Matrix out = affine_forward(hd, m.params.view("dec_out"));

  VaeLoss loss;
  // reconstruction; dout holds the per-sample (un-averaged) gradient
  Matrix dout(B, m.d);
  if (m.cfg.bernoulli) {
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < m.d; ++j) {
        double o = out(i, j), t = x(i, j);
        // stable CE on logits: max(o,0) - o*t + log(1+exp(-|o|))
        loss.rec += std::max(o, 0.0) - o * t + std::log1p(std::exp(-std::abs(o)));
        dout(i, j) = 1.0 / (1.0 + std::exp(-o)) - t;
      }
  } else {
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < m.d; ++j) {
        double r = out(i, j) - x(i, j);
        loss.rec += r * r;
        dout(i, j) = 2.0 * r;
      }
  }
  loss.rec *= invB;

  // KL to the standard normal prior
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < D; ++j) {
      double mj = mu(i, j), lj = lv(i, j);
      loss.kl += -0.5 * (1.0 + lj - mj * mj - std::exp(lj));
    }
  loss.kl *= invB;

  // sparsity: rho-hat per latent dim from squashed means, clamped off {0,1};
  // the clamp is a hard stop for the gradient too
  std::vector<double> rho_hat(std::size_t(D), 0.0), sig_mu(std::size_t(B) * D);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < D; ++j) {
      double s = 1.0 / (1.0 + std::exp(-mu(i, j)));
      sig_mu[std::size_t(i) * D + j] = s;
      rho_hat[j] += s * invB;
    }
  const double rho = m.cfg.rho;
  std::vector<double> drho(std::size_t(D), 0.0);
  for (int j = 0; j < D; ++j) {
    double rh = rho_hat[j];
    bool clamped = rh < 1e-6 || rh > 1.0 - 1e-6;
    if (clamped) {
      rh = std::clamp(rh, 1e-6, 1.0 - 1e-6);
      loss.clamped_dims++;
    }
    loss.sparse += rho * std::log(rho / rh) + (1.0 - rho) * std::log((1.0 - rho) / (1.0 - rh));
    drho[j] = clamped ? 0.0 : (-rho / rh + (1.0 - rho) / (1.0 - rh));
  }
  if (loss.clamped_dims > 0)
    log_warn("vae: clamped " + std::to_string(loss.clamped_dims) + " rho-hat dims away from {0,1}");

  loss.total = m.cfg.lambda_rec * loss.rec + m.cfg.lambda_kl * loss.kl + m.cfg.beta * loss.sparse;

  // backward, one sample at a time; each term is a full-layout gradient
  grad.fill(0.0);
  ParamVector sample_grad = m.params.zeros_like();
  for (int v = 0; v < B; ++v) {
    sample_grad.fill(0.0);
    ConstMat xv(x.row(v), 1, m.d);
    ConstMat hev(he.row(v), 1, H);
    ConstMat zev(ze.row(v), 1, H);
    ConstMat zv(z.row(v), 1, D);
    ConstMat zdv(zd.row(v), 1, H);
    ConstMat hdv(hd.row(v), 1, H);

    Matrix doutv(1, m.d);
    for (int j = 0; j < m.d; ++j) doutv(0, j) = m.cfg.lambda_rec * dout(v, j);
    Matrix dhd;
    affine_backward(hdv, m.params.view("dec_out"), doutv, &dhd, sample_grad.view("dec_out"));
    Matrix dzd = relu_backward(zdv, dhd);
    Matrix dz;
    affine_backward(zv, m.params.view("dec1"), dzd, &dz, sample_grad.view("dec1"));

    Matrix dmu(1, D), dlv(1, D);
    for (int j = 0; j < D; ++j) {
      double sd = std::exp(0.5 * lv(v, j));
      dmu(0, j) = dz(0, j);                       // reparameterization
      dlv(0, j) = dz(0, j) * eps(v, j) * 0.5 * sd;
      dmu(0, j) += m.cfg.lambda_kl * mu(v, j);                        // KL
      dlv(0, j) += m.cfg.lambda_kl * 0.5 * (std::exp(lv(v, j)) - 1.0);
      double s = sig_mu[std::size_t(v) * D + j];
      dmu(0, j) += m.cfg.beta * drho[j] * s * (1.0 - s);              // sparsity
    }

    Matrix dhe_mu, dhe_lv;
    affine_backward(hev, m.params.view("enc_mu"), dmu, &dhe_mu, sample_grad.view("enc_mu"));
    affine_backward(hev, m.params.view("enc_logvar"), dlv, &dhe_lv,
                    sample_grad.view("enc_logvar"));
    add_inplace(dhe_mu, dhe_lv);
    Matrix dze = relu_backward(zev, dhe_mu);
    affine_backward(xv, m.params.view("enc1"), dze, nullptr, sample_grad.view("enc1"));

    grad.axpy(1.0, sample_grad);
    if (per_sample) per_sample->push_back(sample_grad);
  }
  for (auto& gv : grad.data()) gv *= invB;
  return loss;
}

// ---------------------------------------------------------------------------
// VGAE: GCN encoder to (mu, logvar), inner-product decoder with logistic link.

struct VgaeConfig {
  int hidden = 64;
  int latent = 16;
};

struct VgaeModel {
  int d = 0;
  VgaeConfig cfg;
  ParamVector params;

  VgaeModel(int d_, VgaeConfig c = {}) : d(d_), cfg(c) {
    params.register_param("W0", d, cfg.hidden);
    params.register_param("Wmu", cfg.hidden, cfg.latent);
    params.register_param("Wlogvar", cfg.hidden, cfg.latent);
  }

  void init(Rng& rng) {
    for (const auto& name : params.names()) glorot_init(params, name, rng);
  }

  struct Encoded {
    Matrix q, zh, h, p, mu, lv;
  };

  Encoded encode(const SparseMatrix& adj, ConstMat x) const {
    Encoded e;
    e.q = spmm(adj, x);
    e.zh = affine_forward(e.q, params.view("W0"));
    e.h = relu_forward(e.zh);
    e.p = spmm(adj, e.h);
    e.mu = affine_forward(e.p, params.view("Wmu"));
    e.lv = affine_forward(e.p, params.view("Wlogvar"));
    return e;
  }
};

struct EdgeSample {
  std::vector<std::pair<int, int>> pos, neg;  // neg carries label 0
};

/// Positives = all subgraph edges; negatives drawn uniformly from non-edges.
/// Falls back to replacement (logged) when the graph is too dense to supply
/// enough distinct non-edges.
inline EdgeSample sample_edges(const Graph& g, double neg_ratio, Rng& rng) {
  if (g.edges.empty()) throw ModelError("vgae: subgraph has no edges");
  EdgeSample s;
  s.pos = g.edges;
  long long want = std::llround(neg_ratio * double(g.edges.size()));
  if (want <= 0) return s;
  long long all_pairs = (long long)g.n * (g.n - 1) / 2;
  long long available = all_pairs - (long long)g.edges.size();

  auto is_edge = [&](int u, int v) {
    const int* b = g.nbr_begin(u);
    const int* e = g.nbr_end(u);
    return std::binary_search(b, e, v);
  };

  if (available < want) {
    log_warn("vgae: only " + std::to_string(available) + " non-edges for " +
             std::to_string(want) + " negatives; sampling with replacement");
    for (long long i = 0; i < want; ++i) {
      int u = rng.uniform_int(g.n), v = rng.uniform_int(g.n);
      int guard = 0;
      while ((u == v || is_edge(u, v)) && guard++ < 1000) {
        u = rng.uniform_int(g.n);
        v = rng.uniform_int(g.n);
      }
      if (u != v && !is_edge(u, v)) s.neg.emplace_back(std::min(u, v), std::max(u, v));
    }
    return s;
  }
  std::set<std::pair<int, int>> seen;
  while ((long long)s.neg.size() < want) {
    int u = rng.uniform_int(g.n), v = rng.uniform_int(g.n);
    if (u == v) continue;
    auto pr = std::make_pair(std::min(u, v), std::max(u, v));
    if (is_edge(pr.first, pr.second) || !seen.insert(pr).second) continue;
    s.neg.push_back(pr);
  }
  return s;
}

/// Mean logistic loss over labeled pairs plus per-node-normalized KL.
/// `eps` (n x latent) is caller-supplied reparameterization noise.
inline double vgae_loss_grad(const VgaeModel& m, const SparseMatrix& adj, ConstMat x,
                             const EdgeSample& pairs, ConstMat eps, ParamVector& grad) {
  const int n = x.rows, D = m.cfg.latent;
  if (eps.rows != n || eps.cols != D) throw ModelError("vgae: noise shape mismatch");
  VgaeModel::Encoded e = m.encode(adj, x);
  Matrix z(n, D);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < D; ++j) z(i, j) = e.mu(i, j) + eps(i, j) * std::exp(0.5 * e.lv(i, j));

  const double npairs = double(pairs.pos.size() + pairs.neg.size());
  double loss = 0.0;
  Matrix dz(n, D);
  auto pair_term = [&](int u, int v, double target) {
    double dot = 0.0;
    for (int j = 0; j < D; ++j) dot += z(u, j) * z(v, j);
    loss += std::max(dot, 0.0) - dot * target + std::log1p(std::exp(-std::abs(dot)));
    double coeff = (1.0 / (1.0 + std::exp(-dot)) - target) / npairs;
    for (int j = 0; j < D; ++j) {
      dz(u, j) += coeff * z(v, j);
      dz(v, j) += coeff * z(u, j);
    }
  };
  for (auto [u, v] : pairs.pos) pair_term(u, v, 1.0);
  for (auto [u, v] : pairs.neg) pair_term(u, v, 0.0);
  loss /= npairs;

  // KL, averaged over nodes so the scale doesn't drown the edge loss
  const double invN = 1.0 / double(n);
  double kl = 0.0;
  Matrix dmu(n, D), dlv(n, D);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < D; ++j) {
      double mj = e.mu(i, j), lj = e.lv(i, j);
      kl += -0.5 * (1.0 + lj - mj * mj - std::exp(lj));
      double sd = std::exp(0.5 * lj);
      dmu(i, j) = dz(i, j) + mj * invN;
      dlv(i, j) = dz(i, j) * eps(i, j) * 0.5 * sd + 0.5 * (std::exp(lj) - 1.0) * invN;
    }
  loss += kl * invN;

  Matrix dp(n, m.cfg.hidden);
  affine_backward(e.p, m.params.view("Wmu"), dmu, &dp, grad.view("Wmu"));
  Matrix dp2;
  affine_backward(e.p, m.params.view("Wlogvar"), dlv, &dp2, grad.view("Wlogvar"));
  add_inplace(dp, dp2);
  Matrix dh = spmm_t(adj, dp);
  Matrix dzh = relu_backward(e.zh, dh);
  affine_backward(e.q, m.params.view("W0"), dzh, nullptr, grad.view("W0"));
  return loss;
}

/// Decoder edge probability for a latent pair.
inline double vgae_edge_prob(ConstMat z, int u, int v) {
  double dot = 0.0;
  for (int j = 0; j < z.cols; ++j) dot += z(u, j) * z(v, j);
  return 1.0 / (1.0 + std::exp(-dot));
}

// ---------------------------------------------------------------------------
// Temperature scaling: one scalar T minimizing validation NLL of logits/T.

struct TempFit {
  double T = 1.0;
  double nll = 0.0;
  bool degenerate = false;
};

inline TempFit temperature_fit(ConstMat logits, const std::vector<int>& labels) {
  if (logits.rows < 1) throw ModelError("temperature: empty validation set");
  bool single_class = true;
  for (std::size_t i = 1; i < labels.size(); ++i) single_class &= (labels[i] == labels[0]);
  auto nll_at = [&](double T) {
    Matrix scaled = to_matrix(logits);
    for (auto& v : scaled.a) v /= T;
    return softmax_xent(scaled, labels).loss;
  };
  if (single_class) {
    log_warn("temperature: single-class validation set, keeping T = 1");
    return {1.0, nll_at(1.0), true};
  }
  // golden-section on [0.05, 10]; unimodal in practice, and the T=1 candidate
  // at the end guarantees we never do worse than no scaling
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.05, b = 10.0;
  double c = b - gr * (b - a), dpt = a + gr * (b - a);
  double fc = nll_at(c), fd = nll_at(dpt);
  for (int it = 0; it < 80; ++it) {
    if (fc < fd) {
      b = dpt;
      dpt = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = nll_at(c);
    } else {
      a = c;
      c = dpt;
      fc = fd;
      dpt = a + gr * (b - a);
      fd = nll_at(dpt);
    }
  }
  double T = (a + b) / 2.0;
  double best = nll_at(T);
  if (nll_at(1.0) <= best) return {1.0, nll_at(1.0), false};
  return {T, best, false};
}

/// softmax(logits / T) rows.
inline Matrix scaled_probs(ConstMat logits, double T) {
  Matrix scaled = to_matrix(logits);
  for (auto& v : scaled.a) v /= T;
  return softmax_rows(scaled);
}

inline bool features_binary(ConstMat x) {
  for (std::size_t i = 0; i < std::size_t(x.rows) * x.cols; ++i)
    if (x.p[i] != 0.0 && x.p[i] != 1.0) return false;
  return true;
}

}  // namespace fedcp
