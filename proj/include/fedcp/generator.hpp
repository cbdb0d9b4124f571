#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "fedcp/federation.hpp"
#include "fedcp/models.hpp"

namespace fedcp {

// ---------------------------------------------------------------------------
// K-means with kmeans++ seeding. Deterministic per rng; empty clusters are
// re-seeded with the point farthest from its assigned center.

inline Matrix kmeans(ConstMat pts, int M, Rng& rng, int max_iters = 300, double tol = 1e-6) {
  const int n = pts.rows, d = pts.cols;
  if (M < 1 || M > n) throw ConfigError("kmeans: need 1 <= M <= #points");
  auto dist2 = [&](const double* a, const double* b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double t = a[j] - b[j];
      s += t * t;
    }
    return s;
  };

  // kmeans++: subsequent centers drawn with probability proportional to the
  // squared distance to the nearest already-chosen center
  Matrix centers(M, d);
  int first = rng.uniform_int(n);
  std::copy(pts.row(first), pts.row(first) + d, centers.row(0));
  std::vector<double> d2((std::size_t)n);
  for (int m = 1; m < M; ++m) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = dist2(pts.row(i), centers.row(0));
      for (int c = 1; c < m; ++c) best = std::min(best, dist2(pts.row(i), centers.row(c)));
      d2[i] = best;
      total += best;
    }
    int pick;
    if (total <= 0.0) {
      pick = rng.uniform_int(n);  // all points coincide with centers
    } else {
      double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    std::copy(pts.row(pick), pts.row(pick) + d, centers.row(m));
  }

  std::vector<int> assign((std::size_t)n, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    // assignment; ties go to the lowest center id
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = dist2(pts.row(i), centers.row(0));
      for (int c = 1; c < M; ++c) {
        double dd = dist2(pts.row(i), centers.row(c));
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      assign[i] = best;
    }
    // means
    Matrix next(M, d);
    std::vector<int> count((std::size_t)M, 0);
    for (int i = 0; i < n; ++i) {
      count[assign[i]]++;
      for (int j = 0; j < d; ++j) next(assign[i], j) += pts(i, j);
    }
    for (int c = 0; c < M; ++c) {
      if (count[c] == 0) {
        // adopt the globally farthest point from its center
        int far = 0;
        double fd = -1.0;
        for (int i = 0; i < n; ++i) {
          double dd = dist2(pts.row(i), centers.row(assign[i]));
          if (dd > fd) {
            fd = dd;
            far = i;
          }
        }
        std::copy(pts.row(far), pts.row(far) + d, next.row(c));
        continue;
      }
      for (int j = 0; j < d; ++j) next(c, j) /= double(count[c]);
    }
    double shift = 0.0;
    for (int c = 0; c < M; ++c) shift = std::max(shift, dist2(centers.row(c), next.row(c)));
    centers = std::move(next);
    if (shift < tol * tol) break;
  }
  return centers;
}

// ---------------------------------------------------------------------------
// Prototypes: cluster centers of VAE-reconstructed training features.

inline Matrix make_prototypes(const VaeModel& vae, ConstMat train_feats, int M,
                              std::uint64_t seed) {
  if (M < 1 || M > train_feats.rows)
    throw ConfigError("prototypes: M must be in [1, #train nodes]");
  Matrix recon = vae.reconstruct(train_feats);
  Rng rng = make_rng(seed, /*salt_a=*/0x6b6du);
  return kmeans(recon, M, rng);
}

/// Server-side union of client prototypes, kept in client-id order with
/// per-row provenance so each client can exclude its own rows.
struct AggregatedPrototypes {
  Matrix all;              // (sum M_k) x d
  std::vector<int> owner;  // row -> contributing client

  /// Candidate rows for client k: everyone else's prototypes.
  Matrix foreign_for(int k) const {
    std::vector<int> rows;
    for (int i = 0; i < all.rows; ++i)
      if (owner[i] != k) rows.push_back(i);
    return select_rows(all, rows);
  }
};

/// Collect prototypes in client-id order and account the share+broadcast
/// round: each scalar travels up once and down once (multicast convention),
/// so the phase totals 2 * sum_k (M_k * d).
inline AggregatedPrototypes aggregate_and_broadcast(const std::vector<Matrix>& prototypes,
                                                    CommsLedger& ledger) {
  if (prototypes.empty()) throw FederationError("prototype aggregation: no clients");
  AggregatedPrototypes agg;
  agg.all = Matrix(0, prototypes[0].cols);
  for (int k = 0; k < int(prototypes.size()); ++k) {
    const Matrix& m = prototypes[k];
    long long scalars = (long long)m.rows * m.cols;
    ledger.proto.up += scalars;
    ledger.proto.down += scalars;
    agg.all = vconcat(agg.all, m);
    for (int i = 0; i < m.rows; ++i) agg.owner.push_back(k);
  }
  return agg;
}

// ---------------------------------------------------------------------------
// Edge augmentation: score all (prototype, local) pairs with the VGAE and
// wire up the top p% as new edges.

struct AugmentedSubgraph {
  Graph g;
  int n_real = 0;  // nodes [n_real, g.n) are prototypes: unlabeled, role-free
  std::vector<std::pair<int, int>> added;  // (local node, prototype node id)
};

/// Client graph extended with prototype nodes. Prototypes arrive edgeless, so
/// under GCN normalization they see only their own features until the
/// predicted edges are added.
inline Graph extend_with_prototypes(const Graph& client, ConstMat protos) {
  if (protos.rows > 0 && protos.cols != client.d)
    throw ModelError("augment: prototype feature dim mismatch");
  Graph ext;
  ext.n = client.n + protos.rows;
  ext.d = client.d;
  ext.num_classes = client.num_classes;
  ext.edges = client.edges;
  ext.features = vconcat(client.features, protos);
  ext.labels = client.labels;
  ext.labels.resize((std::size_t)ext.n, 0);  // fillers; prototypes carry no role
  ext.finalize();
  return ext;
}

inline AugmentedSubgraph predict_and_augment(const Graph& client, ConstMat protos,
                                             const VgaeModel& vgae, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("augment: top-p must be in (0, 1]");
  AugmentedSubgraph out;
  out.n_real = client.n;
  out.g = extend_with_prototypes(client, protos);
  const long long pairs = (long long)protos.rows * client.n;
  if (pairs == 0) {
    log_warn("augment: no candidate pairs; graph unchanged");
    return out;
  }

  SparseMatrix adj = gcn_norm_adj(out.g);
  VgaeModel::Encoded enc = vgae.encode(adj, out.g.features);
  // rank pairs by decoder probability; the dot product orders identically
  struct Cand {
    double dot;
    int proto, node;
  };
  std::vector<Cand> cand;
  cand.reserve((std::size_t)pairs);
  for (int pr = 0; pr < protos.rows; ++pr) {
    int pnode = client.n + pr;
    for (int v = 0; v < client.n; ++v) {
      double dot = 0.0;
      for (int j = 0; j < enc.mu.cols; ++j) dot += enc.mu(pnode, j) * enc.mu(v, j);
      cand.push_back({dot, pr, v});
    }
  }
  long long take = (long long)std::ceil(top_p * double(pairs) - 1e-9);
  take = std::min(take, pairs);
  std::sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) {
    if (a.dot != b.dot) return a.dot > b.dot;
    if (a.proto != b.proto) return a.proto < b.proto;
    return a.node < b.node;
  });
  for (long long i = 0; i < take; ++i) {
    int pnode = client.n + cand[i].proto;
    out.g.edges.emplace_back(cand[i].node, pnode);
    out.added.emplace_back(cand[i].node, pnode);
  }
  out.g.finalize();
  return out;
}

}  // namespace fedcp
