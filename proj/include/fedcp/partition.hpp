#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fedcp/graph.hpp"

namespace fedcp {

/// A K-way node assignment plus the induced client subgraphs. Cross-client
/// edges are dropped from every client's view — that loss is the whole story
/// downstream, so we keep the cut list around for reporting.
struct Partition {
  int K = 0;
  std::vector<int> assignment;                 // per global node, in [0, K)
  std::vector<std::pair<int, int>> cut_edges;  // endpoints in different clients
  std::vector<Subgraph> client_graphs;         // K induced subgraphs
};

struct MissingEdgeReport {
  long long delta_e = 0;
  double delta_e_pct = 0.0;  // fraction of |E|, in percent
};

inline MissingEdgeReport missing_edge_report(const Partition& p, const Graph& g) {
  MissingEdgeReport r;
  r.delta_e = (long long)p.cut_edges.size();
  r.delta_e_pct = g.edges.empty() ? 0.0 : 100.0 * double(r.delta_e) / double(g.edges.size());
  return r;
}

namespace detail {

inline long long cut_size(const Graph& g, const std::vector<int>& assign) {
  long long cut = 0;
  for (auto [u, v] : g.edges) cut += (assign[u] != assign[v]);
  return cut;
}

}  // namespace detail

/// Balanced label-propagation partitioner. Stages:
///   1. seeded BFS stream order;
///   2. plain label propagation to find natural clusters;
///   3. clusters streamed through a Fennel-style greedy (neighbor affinity
///      minus alpha*gamma*size^(gamma-1) balance penalty) under a hard cap,
///      falling back to node-level streaming for clusters that fit nowhere;
///   4. a few restream sweeps, a balance repair pass, then boundary moves
///      and boundary swaps with strictly positive gain.
/// Deterministic: ties break toward the lowest client id everywhere.
inline Partition partition_graph(const Graph& g, int K, std::uint64_t seed,
                                 double imbalance = 0.05) {
  if (K < 1 || K > std::max(g.n, 1)) throw ConfigError("partition: need 1 <= K <= n");
  Partition p;
  p.K = K;
  p.assignment.assign(std::size_t(g.n), -1);
  if (g.n == 0) return p;

  const double n = double(g.n);
  const double m = double(g.edges.size());
  const double gamma = 1.5;
  const double alpha = m > 0 ? m * std::pow(double(K), gamma - 1.0) / std::pow(n, gamma) : 1.0;
  const int cap =
      std::max(int(std::ceil((1.0 + imbalance) * n / K)), int(std::ceil(n / K)));

  Rng rng = make_rng(seed, /*salt_a=*/0x9a27u);

  // Seeded BFS stream: random roots, neighbors pushed in shuffled order, so
  // the stream mostly walks locally but differs per seed.
  std::vector<int> order;
  order.reserve(g.n);
  {
    std::vector<char> seen(std::size_t(g.n), 0);
    std::vector<int> roots = rng.permutation(g.n);
    std::vector<int> queue;
    std::size_t qhead = 0;
    for (int root : roots) {
      if (seen[root]) continue;
      seen[root] = 1;
      queue.push_back(root);
      while (qhead < queue.size()) {
        int v = queue[qhead++];
        order.push_back(v);
        std::vector<int> nbrs(g.nbr_begin(v), g.nbr_end(v));
        for (int i = int(nbrs.size()) - 1; i > 0; --i)
          std::swap(nbrs[i], nbrs[rng.uniform_int(i + 1)]);
        for (int w : nbrs) {
          if (!seen[w]) {
            seen[w] = 1;
            queue.push_back(w);
          }
        }
      }
      qhead = queue.size();
    }
  }

  // Label propagation: adopt the majority label among neighbors, smallest
  // label on ties. A handful of asynchronous sweeps in stream order is
  // enough for clusters to crystallize.
  std::vector<int> cluster(std::size_t(g.n));
  for (int v = 0; v < g.n; ++v) cluster[v] = v;
  {
    std::vector<std::pair<int, int>> tally;  // (label, count) scratch
    for (int sweep = 0; sweep < 8; ++sweep) {
      long long changed = 0;
      for (int v : order) {
        if (g.degree(v) == 0) continue;
        tally.clear();
        for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
          int lab = cluster[*it];
          bool found = false;
          for (auto& [l, c] : tally)
            if (l == lab) {
              c++;
              found = true;
              break;
            }
          if (!found) tally.emplace_back(lab, 1);
        }
        int best = cluster[v], best_count = 0;
        for (auto [l, c] : tally)
          if (c > best_count || (c == best_count && l < best)) {
            best = l;
            best_count = c;
          }
        if (best != cluster[v]) {
          cluster[v] = best;
          ++changed;
        }
      }
      if (changed == 0) break;
    }
  }

  std::vector<int> size(std::size_t(K), 0);
  std::vector<double> nbr_count(std::size_t(K), 0.0);  // scratch

  // Stream whole clusters (first-appearance order). A cluster goes to the
  // client with the best affinity/penalty score among those with room for
  // all of it; oversized clusters fall through to the node-level pass.
  {
    std::vector<int> first_seen(std::size_t(g.n), -1);
    std::vector<std::vector<int>> members(std::size_t(g.n));
    std::vector<int> cluster_order;
    for (int idx = 0; idx < (int)order.size(); ++idx) {
      int v = order[idx];
      if (g.degree(v) == 0) continue;  // isolated nodes placed round-robin later
      int c = cluster[v];
      if (first_seen[c] == -1) {
        first_seen[c] = idx;
        cluster_order.push_back(c);
      }
      members[c].push_back(v);
    }
    for (int c : cluster_order) {
      const auto& nodes = members[c];
      int csize = int(nodes.size());
      std::fill(nbr_count.begin(), nbr_count.end(), 0.0);
      for (int v : nodes)
        for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
          int a = p.assignment[*it];
          if (a != -1) nbr_count[a] += 1.0;
        }
      int best = -1;
      double best_score = 0.0;
      for (int k = 0; k < K; ++k) {
        if (size[k] + csize > cap) continue;
        double score =
            nbr_count[k] - alpha * gamma * std::pow(double(size[k]), gamma - 1.0) * csize;
        if (best == -1 || score > best_score) {
          best = k;
          best_score = score;
        }
      }
      if (best == -1) continue;  // fits nowhere whole; node pass handles it
      for (int v : nodes) {
        p.assignment[v] = best;
        size[best]++;
      }
    }
  }

  int rr = 0;  // round-robin pointer for isolated nodes
  for (int v : order) {
    if (p.assignment[v] != -1) continue;
    if (g.degree(v) == 0) {
      // isolated: place by rotation, respecting the cap
      int tries = 0;
      while (size[rr] >= cap && tries++ < K) rr = (rr + 1) % K;
      p.assignment[v] = rr;
      size[rr]++;
      rr = (rr + 1) % K;
      continue;
    }
    std::fill(nbr_count.begin(), nbr_count.end(), 0.0);
    for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
      int a = p.assignment[*it];
      if (a != -1) nbr_count[a] += 1.0;
    }
    int best = -1;
    double best_score = 0.0;
    for (int k = 0; k < K; ++k) {
      if (size[k] >= cap) continue;
      double score = nbr_count[k] - alpha * gamma * std::pow(double(size[k]), gamma - 1.0);
      if (best == -1 || score > best_score) {
        best = k;
        best_score = score;
      }
    }
    if (best == -1) {  // all capped (cap rounding corner); smallest wins
      best = int(std::min_element(size.begin(), size.end()) - size.begin());
    }
    p.assignment[v] = best;
    size[best]++;
  }

  // Restream: repeat the greedy pass with the previous assignment visible.
  // The first pass seeds several growing fronts inside what should be one
  // client; later passes let the neighbor-majority term pull such fragments
  // back together. Cheap (a few O(m) sweeps) and a big cut win.
  for (int pass = 0; pass < 4; ++pass) {
    long long moved = 0;
    for (int v : order) {
      if (g.degree(v) == 0) continue;
      int cur = p.assignment[v];
      size[cur]--;
      std::fill(nbr_count.begin(), nbr_count.end(), 0.0);
      for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it)
        nbr_count[p.assignment[*it]] += 1.0;
      int best = -1;
      double best_score = 0.0;
      for (int k = 0; k < K; ++k) {
        if (size[k] >= cap) continue;
        double score = nbr_count[k] - alpha * gamma * std::pow(double(size[k]), gamma - 1.0);
        if (best == -1 || score > best_score) {
          best = k;
          best_score = score;
        }
      }
      if (best == -1) best = cur;
      p.assignment[v] = best;
      size[best]++;
      moved += (best != cur);
    }
    if (moved == 0) break;
  }

  // Repair: strict balance wants sizes within +/- (imbalance * n / K) of n/K.
  // Move lowest-connectivity nodes out of overfull clients into underfull ones.
  const double target = n / K;
  const double slack = std::max(imbalance * target, 1.0);
  auto overfull = [&](int k) { return double(size[k]) > target + slack; };
  auto underfull = [&](int k) { return double(size[k]) < target - slack; };
  for (int pass = 0; pass < K + 2; ++pass) {
    bool any = false;
    for (int k = 0; k < K; ++k) {
      while (overfull(k)) {
        int dst = -1;
        for (int j = 0; j < K; ++j)
          if (underfull(j) && (dst == -1 || size[j] < size[dst])) dst = j;
        if (dst == -1) break;
        // cheapest node to move: fewest neighbors inside k, most inside dst
        int pick = -1;
        double pick_gain = 0.0;
        for (int v = 0; v < g.n; ++v) {
          if (p.assignment[v] != k) continue;
          double inside = 0.0, toward = 0.0;
          for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
            inside += (p.assignment[*it] == k);
            toward += (p.assignment[*it] == dst);
          }
          double gain = toward - inside;
          if (pick == -1 || gain > pick_gain) {
            pick = v;
            pick_gain = gain;
          }
        }
        if (pick == -1) break;
        p.assignment[pick] = dst;
        size[k]--;
        size[dst]++;
        any = true;
      }
    }
    if (!any) break;
  }

  // Boundary refinement: accept only strictly positive-gain moves that keep
  // both clients inside the slack band, so the cut never increases.
  for (int pass = 0; pass < 8; ++pass) {
    long long moved = 0;
    for (int v = 0; v < g.n; ++v) {
      int a = p.assignment[v];
      if (g.degree(v) == 0) continue;
      std::fill(nbr_count.begin(), nbr_count.end(), 0.0);
      bool boundary = false;
      for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
        int b = p.assignment[*it];
        nbr_count[b] += 1.0;
        boundary |= (b != a);
      }
      if (!boundary) continue;
      int best = a;
      double best_gain = 0.0;
      for (int k = 0; k < K; ++k) {
        if (k == a) continue;
        if (double(size[k]) + 1.0 > target + slack) continue;
        if (double(size[a]) - 1.0 < target - slack) continue;
        double gain = nbr_count[k] - nbr_count[a];
        if (gain > best_gain) {  // ascending k, so ties keep the lowest id
          best = k;
          best_gain = gain;
        }
      }
      if (best != a && best_gain > 0.0) {
        size[a]--;
        size[best]++;
        p.assignment[v] = best;
        ++moved;
      }
    }
    // Boundary swaps: exchanging the endpoints of a cut edge keeps sizes
    // intact, so it escapes states single moves can't leave. Gain of the
    // swap is g_u + g_v - 2 (the shared edge stays cut either way).
    for (auto [u, v] : g.edges) {
      int a = p.assignment[u], b = p.assignment[v];
      if (a == b) continue;
      double du_a = 0, du_b = 0, dv_a = 0, dv_b = 0;
      for (const int* it = g.nbr_begin(u); it != g.nbr_end(u); ++it) {
        du_a += (p.assignment[*it] == a);
        du_b += (p.assignment[*it] == b);
      }
      for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
        dv_a += (p.assignment[*it] == a);
        dv_b += (p.assignment[*it] == b);
      }
      if ((du_b - du_a) + (dv_a - dv_b) - 2.0 > 0.0) {
        p.assignment[u] = b;
        p.assignment[v] = a;
        ++moved;
      }
    }
    if (moved == 0) break;
  }

  // Materialize cut list and client subgraphs.
  for (auto [u, v] : g.edges)
    if (p.assignment[u] != p.assignment[v]) p.cut_edges.emplace_back(u, v);
  p.client_graphs.reserve(K);
  for (int k = 0; k < K; ++k) {
    std::vector<int> nodes;
    for (int v = 0; v < g.n; ++v)
      if (p.assignment[v] == k) nodes.push_back(v);
    p.client_graphs.push_back(induced_subgraph(g, nodes));
  }
  return p;
}

/// TSV dump: one "node-id<TAB>client-id" row per node.
inline void write_partition_tsv(const std::string& path, const Partition& p) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  for (int v = 0; v < int(p.assignment.size()); ++v) f << v << '\t' << p.assignment[v] << '\n';
}

}  // namespace fedcp
