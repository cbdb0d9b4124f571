#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedcp/graph.hpp"

namespace fedcp {

namespace detail {

/// Citation-style benchmark stand-in: a fixed community layout (path backbone
/// for connectivity, denser intra-community wiring, a slice of cross-community
/// edges) and class-signature Bernoulli features. Every structural count is
/// deterministic — the builder runs off its own fixed seed, so the "dataset"
/// is the same bytes in every process; run seeds only affect splits and
/// training downstream.
struct CitationRecipe {
  int n = 0;
  int target_edges = 0;  // undirected count
  int num_classes = 0;
  int d = 0;
  int communities = 0;
  double cross_frac = 0.08;   // share of extra edges that span communities
  double p_on = 0.10;         // Bernoulli rate on class-signature dims
  double p_off = 0.02;        // rate elsewhere (sparse, word-count flavor)
  double purity = 1.0;        // share of a community on its base class
  double spill = 0.0;         // share on the next class over; rest uniform
  double label_noise = 0.0;   // chance a node's label is re-rolled uniformly
  std::uint64_t build_seed = 0;
};

inline Graph build_citation_like(const CitationRecipe& r) {
  Rng rng = make_rng(r.build_seed, /*salt_a=*/0xdA7Au);
  const int C = r.communities;

  // contiguous communities of near-equal size
  std::vector<int> comm_of((std::size_t)r.n);
  std::vector<int> comm_start((std::size_t)C + 1, 0);
  for (int c = 0; c < C; ++c) comm_start[(std::size_t)c + 1] = (r.n * (c + 1)) / C;
  for (int c = 0; c < C; ++c)
    for (int v = comm_start[c]; v < comm_start[(std::size_t)c + 1]; ++v) comm_of[v] = c;

  // communities are class mixtures, not class blocks: a base class holds
  // the majority, one neighboring class spills in, the rest is uniform.
  // That keeps homophily without handing local models a community-id
  // shortcut. Features follow each node's own class; a small slice of
  // labels is re-rolled afterwards so no classifier can be perfect.
  std::vector<int> sig((std::size_t)r.n), labels((std::size_t)r.n);
  for (int v = 0; v < r.n; ++v) {
    int base = comm_of[v] % r.num_classes;
    double roll = rng.uniform();
    if (roll < r.purity)
      sig[v] = base;
    else if (roll < r.purity + r.spill)
      sig[v] = (base + 1) % r.num_classes;
    else
      sig[v] = rng.uniform_int(r.num_classes);
  }
  labels = sig;

  // backbone spanning tree: a path inside each community, bridges between
  // consecutive communities — keeps the whole graph one component
  std::set<std::pair<int, int>> edges;
  auto put = [&](int u, int v) {
    if (u == v) return false;
    if (u > v) std::swap(u, v);
    return edges.insert({u, v}).second;
  };
  for (int c = 0; c < C; ++c)
    for (int v = comm_start[c] + 1; v < comm_start[(std::size_t)c + 1]; ++v) put(v - 1, v);
  for (int c = 0; c + 1 < C; ++c) put(comm_start[c], comm_start[(std::size_t)c + 1]);

  // extra edges up to the target count
  while (int(edges.size()) < r.target_edges) {
    if (rng.uniform() < r.cross_frac) {
      int a = rng.uniform_int(r.n), b = rng.uniform_int(r.n);
      if (comm_of[a] == comm_of[b]) continue;
      put(a, b);
    } else {
      int c = rng.uniform_int(C);
      int lo = comm_start[c], hi = comm_start[(std::size_t)c + 1];
      if (hi - lo < 2) continue;
      int a = lo + rng.uniform_int(hi - lo), b = lo + rng.uniform_int(hi - lo);
      put(a, b);
    }
  }

  // class-signature features: a block of dims per class fires at p_on,
  // everything else at p_off
  Matrix feats(r.n, r.d);
  const int block = r.d / r.num_classes;
  for (int v = 0; v < r.n; ++v) {
    int lo = sig[v] * block, hi = lo + block;
    for (int j = 0; j < r.d; ++j) {
      double p = (j >= lo && j < hi) ? r.p_on : r.p_off;
      feats(v, j) = rng.uniform() < p ? 1.0 : 0.0;
    }
  }

  if (r.label_noise > 0.0) {
    Rng flip = make_rng(r.build_seed, /*salt_a=*/0x1abe1u);
    for (int v = 0; v < r.n; ++v)
      if (flip.uniform() < r.label_noise) labels[v] = flip.uniform_int(r.num_classes);
  }

  return make_graph(r.n, {edges.begin(), edges.end()}, std::move(feats), std::move(labels));
}

}  // namespace detail

/// Built-in benchmark replicas, matched to the reference datasets on node
/// count, undirected edge count, and class count (feature dim is ours).
inline Graph synthetic_dataset(const std::string& name) {
  detail::CitationRecipe r;
  if (name == "cora") {
    r.n = 2485;
    r.target_edges = 5069;  // 10138 directed
    r.num_classes = 7;
    r.d = 256;
    r.communities = 25;
    r.cross_frac = 0.08;
    r.p_on = 0.10;
    r.p_off = 0.03;
    r.purity = 0.75;
    r.spill = 0.18;
    r.label_noise = 0.08;
    r.build_seed = 0x00c04aull;
  } else if (name == "citeseer") {
    r.n = 2120;
    r.target_edges = 3679;
    r.num_classes = 6;
    r.d = 256;
    r.communities = 22;
    r.cross_frac = 0.08;
    r.p_on = 0.10;
    r.p_off = 0.03;
    r.purity = 0.75;
    r.spill = 0.18;
    r.label_noise = 0.08;
    r.build_seed = 0x0c17e5ull;
  } else {
    throw ConfigError("unknown built-in dataset: " + name);
  }
  return detail::build_citation_like(r);
}

/// Tiny homophilous two-class instance for planted-cut experiments: node
/// features are nearly useless alone (heavy overlap), edges are strictly
/// intra-class, so neighborhood structure carries the label signal. Splitting
/// it even/odd severs half of every neighborhood — the situation prototype
/// augmentation is meant to repair.
inline Graph planted_two_block(int per_class = 80, int d = 16, double tilt = 0.06,
                               std::uint64_t seed = 1) {
  Rng rng = make_rng(seed, /*salt_a=*/0xb10cu);
  const int n = 2 * per_class;
  std::set<std::pair<int, int>> edges;
  auto put = [&](int u, int v) {
    if (u == v) return;
    if (u > v) std::swap(u, v);
    edges.insert({u, v});
  };
  for (int cls = 0; cls < 2; ++cls) {
    int base = cls * per_class;
    for (int i = 1; i < per_class; ++i) put(base + i - 1, base + i);  // intra-class path
    for (int i = 0; i < per_class; ++i)
      for (int t = 0; t < 4; ++t) put(base + i, base + rng.uniform_int(per_class));
  }
  put(0, per_class);  // single bridge keeps it connected

  Matrix feats(n, d);
  std::vector<int> labels((std::size_t)n);
  for (int v = 0; v < n; ++v) {
    int cls = v < per_class ? 0 : 1;
    labels[v] = cls;
    for (int j = 0; j < d; ++j) {
      bool sig = (j < d / 2) == (cls == 0);
      double p = sig ? 0.5 + tilt : 0.5 - tilt;
      feats(v, j) = rng.uniform() < p ? 1.0 : 0.0;
    }
  }
  return make_graph(n, {edges.begin(), edges.end()}, std::move(feats), std::move(labels));
}

}  // namespace fedcp
