#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fedcp/kernel.hpp"

namespace fedcp {

/// Undirected simple graph with node features and class labels.
/// Edges are stored once as (u < v) pairs; a CSR adjacency is built up front
/// because everything downstream (partitioning, propagation) walks neighbors.
struct Graph {
  int n = 0;
  int d = 0;           // feature dim
  int num_classes = 0; // L
  std::vector<std::pair<int, int>> edges;  // u < v, deduplicated, no self-loops
  Matrix features;                         // n x d
  std::vector<int> labels;                 // in [0, L)

  // adjacency (derived, rebuilt by finalize())
  std::vector<int> adj_ptr;  // size n+1
  std::vector<int> adj;

  int degree(int v) const { return adj_ptr[std::size_t(v) + 1] - adj_ptr[v]; }
  const int* nbr_begin(int v) const { return adj.data() + adj_ptr[v]; }
  const int* nbr_end(int v) const { return adj.data() + adj_ptr[std::size_t(v) + 1]; }

  /// Validate invariants and (re)build the CSR adjacency.
  void finalize() {
    if (features.rows != n || features.cols != d)
      throw IntegrityError("graph: feature matrix shape mismatch");
    if (int(labels.size()) != n) throw IntegrityError("graph: label count mismatch");
    if (!all_finite(features)) throw IntegrityError("graph: non-finite feature value");
    for (int y : labels)
      if (y < 0 || y >= num_classes) throw IntegrityError("graph: label out of range");
    for (auto& [u, v] : edges) {
      if (u == v) throw IntegrityError("graph: self-loop on node " + std::to_string(u));
      if (u > v) std::swap(u, v);
      if (u < 0 || v >= n) throw IntegrityError("graph: edge endpoint out of range");
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    adj_ptr.assign(std::size_t(n) + 1, 0);
    for (auto [u, v] : edges) {
      adj_ptr[std::size_t(u) + 1]++;
      adj_ptr[std::size_t(v) + 1]++;
    }
    for (int i = 0; i < n; ++i) adj_ptr[std::size_t(i) + 1] += adj_ptr[i];
    adj.assign(adj_ptr[n], 0);
    std::vector<int> fill(adj_ptr.begin(), adj_ptr.end() - 1);
    for (auto [u, v] : edges) {
      adj[fill[u]++] = v;
      adj[fill[v]++] = u;
    }
    for (int i = 0; i < n; ++i) std::sort(adj.begin() + adj_ptr[i], adj.begin() + adj_ptr[std::size_t(i) + 1]);
  }
};

inline Graph make_graph(int n, std::vector<std::pair<int, int>> edges, Matrix features,
                        std::vector<int> labels) {
  Graph g;
  g.n = n;
  g.d = features.cols;
  g.edges = std::move(edges);
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.num_classes = 0;
  for (int y : g.labels) g.num_classes = std::max(g.num_classes, y + 1);
  g.finalize();
  return g;
}

// ---------------------------------------------------------------------------
// Components and subgraphs

inline std::vector<int> connected_components(const Graph& g) {
  std::vector<int> comp(std::size_t(g.n), -1);
  std::vector<int> stack;
  int c = 0;
  for (int s = 0; s < g.n; ++s) {
    if (comp[s] != -1) continue;
    stack.push_back(s);
    comp[s] = c;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) {
        if (comp[*it] == -1) {
          comp[*it] = c;
          stack.push_back(*it);
        }
      }
    }
    ++c;
  }
  return comp;
}

/// Node ids of the largest connected component, ascending. Ties go to the
/// component containing the smallest node id.
inline std::vector<int> largest_component_nodes(const Graph& g) {
  std::vector<int> comp = connected_components(g);
  int ncomp = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<int> count(std::size_t(std::max(ncomp, 1)), 0);
  for (int c : comp) count[c]++;
  int best = 0;
  for (int c = 1; c < ncomp; ++c)
    if (count[c] > count[best]) best = c;
  std::vector<int> nodes;
  for (int v = 0; v < g.n; ++v)
    if (comp[v] == best) nodes.push_back(v);
  return nodes;
}

/// Subgraph induced by `nodes` (must be sorted, unique). Keeps the original
/// ids around so client-local results can be mapped back.
struct Subgraph {
  Graph g;
  std::vector<int> global_id;  // local -> global
};

inline Subgraph induced_subgraph(const Graph& g, const std::vector<int>& nodes) {
  std::vector<int> local(std::size_t(g.n), -1);
  for (int i = 0; i < int(nodes.size()); ++i) {
    int v = nodes[i];
    if (v < 0 || v >= g.n) throw IntegrityError("induced_subgraph: node id out of range");
    local[v] = i;
  }
  std::vector<std::pair<int, int>> edges;
  for (auto [u, v] : g.edges)
    if (local[u] != -1 && local[v] != -1) edges.emplace_back(local[u], local[v]);
  Matrix feats = select_rows(g.features, nodes);
  std::vector<int> labels(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) labels[i] = g.labels[nodes[i]];
  Subgraph out;
  out.g.n = int(nodes.size());
  out.g.d = g.d;
  out.g.num_classes = g.num_classes;  // keep the global label space
  out.g.edges = std::move(edges);
  out.g.features = std::move(feats);
  out.g.labels = std::move(labels);
  out.g.finalize();
  out.global_id = nodes;
  return out;
}

// ---------------------------------------------------------------------------
// Propagation operators

/// Symmetric-normalized adjacency with self-loops:
/// Ahat = Dtil^{-1/2} (A + I) Dtil^{-1/2}, Dtil = D + I.
inline SparseMatrix gcn_norm_adj(const Graph& g) {
  std::vector<double> dinv(std::size_t(g.n));
  for (int v = 0; v < g.n; ++v) dinv[v] = 1.0 / std::sqrt(double(g.degree(v)) + 1.0);
  std::vector<std::tuple<int, int, double>> trips;
  trips.reserve(g.edges.size() * 2 + g.n);
  for (int v = 0; v < g.n; ++v) trips.emplace_back(v, v, dinv[v] * dinv[v]);
  for (auto [u, v] : g.edges) {
    double w = dinv[u] * dinv[v];
    trips.emplace_back(u, v, w);
    trips.emplace_back(v, u, w);
  }
  return csr_from_triplets(g.n, g.n, std::move(trips));
}

/// Row-stochastic neighbor mean (no self term); isolated nodes get a zero row.
inline SparseMatrix mean_neighbor_op(const Graph& g) {
  std::vector<std::tuple<int, int, double>> trips;
  trips.reserve(g.edges.size() * 2);
  for (int v = 0; v < g.n; ++v) {
    int deg = g.degree(v);
    if (deg == 0) continue;
    double w = 1.0 / double(deg);
    for (const int* it = g.nbr_begin(v); it != g.nbr_end(v); ++it) trips.emplace_back(v, *it, w);
  }
  return csr_from_triplets(g.n, g.n, std::move(trips));
}

// ---------------------------------------------------------------------------
// Role splits

enum class Role : unsigned char { Train, Valid, Calib, Test };

struct RoleMask {
  std::vector<Role> role;

  std::vector<int> of(Role r) const {
    std::vector<int> out;
    for (int v = 0; v < int(role.size()); ++v)
      if (role[v] == r) out.push_back(v);
    return out;
  }
  int count(Role r) const {
    int c = 0;
    for (Role x : role) c += (x == r);
    return c;
  }
};

/// Deterministic train/valid/calib/test split. Counts come from rounding the
/// requested fractions (test takes the remainder); the validation share is
/// carved out of the train block. Oblivious to graph content on purpose: the
/// mask depends only on (n, seed), so relabeling nodes permutes it verbatim.
inline RoleMask split_roles(int n, double train_frac, double calib_frac, double test_frac,
                            double valid_within_train, std::uint64_t seed) {
  if (std::abs(train_frac + calib_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("split_roles: fractions must sum to 1");
  int n_train_total = int(std::lround(train_frac * n));
  int n_calib = int(std::lround(calib_frac * n));
  int n_test = n - n_train_total - n_calib;
  int n_valid = int(std::lround(valid_within_train * n_train_total));
  int n_train = n_train_total - n_valid;
  if (n_train <= 0 || n_calib <= 0 || n_test <= 0 || (valid_within_train > 0.0 && n_valid <= 0))
    throw ConfigError("split_roles: a role is empty at n=" + std::to_string(n));
  Rng rng = make_rng(seed, /*salt_a=*/0x5157u);
  std::vector<int> order = rng.permutation(n);
  RoleMask mask;
  mask.role.assign(std::size_t(n), Role::Test);
  int pos = 0;
  for (int i = 0; i < n_train; ++i) mask.role[order[pos++]] = Role::Train;
  for (int i = 0; i < n_valid; ++i) mask.role[order[pos++]] = Role::Valid;
  for (int i = 0; i < n_calib; ++i) mask.role[order[pos++]] = Role::Calib;
  return mask;
}

inline RoleMask split_roles(const Graph& g, double train_frac, double calib_frac,
                            double test_frac, double valid_within_train, std::uint64_t seed) {
  return split_roles(g.n, train_frac, calib_frac, test_frac, valid_within_train, seed);
}

// ---------------------------------------------------------------------------
// File IO: features.tsv (id, d floats), edges.txt (id pairs), labels.tsv
// (id, class). Ids may be arbitrary non-negative integers; they are compacted
// to [0, n) in ascending order.

namespace detail {

inline FormatError parse_error(const std::string& file, int line, const std::string& what) {
  return FormatError(file + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

struct LoadOptions {
  bool restrict_to_lcc = true;
};

inline Graph load_graph(const std::string& dir, const LoadOptions& opt = {}) {
  const std::string feat_path = dir + "/features.tsv";
  const std::string edge_path = dir + "/edges.txt";
  const std::string label_path = dir + "/labels.tsv";

  std::ifstream ff(feat_path);
  if (!ff) throw IoError("cannot open " + feat_path);
  std::map<long long, std::vector<double>> feat_rows;
  std::string line;
  int lineno = 0;
  int d = -1;
  while (std::getline(ff, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long long id;
    if (!(ss >> id) || id < 0) throw detail::parse_error(feat_path, lineno, "bad node id");
    std::vector<double> row;
    double x;
    while (ss >> x) row.push_back(x);
    if (!ss.eof()) throw detail::parse_error(feat_path, lineno, "bad feature value");
    if (row.empty()) throw detail::parse_error(feat_path, lineno, "no feature values");
    if (d == -1) d = int(row.size());
    if (int(row.size()) != d)
      throw detail::parse_error(feat_path, lineno, "expected " + std::to_string(d) + " features");
    if (!feat_rows.emplace(id, std::move(row)).second)
      throw detail::parse_error(feat_path, lineno, "duplicate node id");
  }
  if (feat_rows.empty()) throw FormatError(feat_path + ": empty feature file");

  // compact ids in ascending order
  std::map<long long, int> compact;
  for (const auto& [id, _] : feat_rows) compact.emplace(id, int(compact.size()));
  int n = int(compact.size());

  std::ifstream lf(label_path);
  if (!lf) throw IoError("cannot open " + label_path);
  std::vector<int> labels(std::size_t(n), -1);
  lineno = 0;
  while (std::getline(lf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long long id;
    long y;
    if (!(ss >> id >> y)) throw detail::parse_error(label_path, lineno, "expected: id label");
    auto it = compact.find(id);
    if (it == compact.end())
      throw IntegrityError(label_path + ":" + std::to_string(lineno) + ": label for unknown node");
    if (y < 0) throw detail::parse_error(label_path, lineno, "negative label");
    if (labels[it->second] != -1)
      throw detail::parse_error(label_path, lineno, "duplicate label row");
    labels[it->second] = int(y);
  }
  for (int v = 0; v < n; ++v)
    if (labels[v] == -1) throw IntegrityError(label_path + ": node without label");

  std::ifstream ef(edge_path);
  if (!ef) throw IoError("cannot open " + edge_path);
  std::vector<std::pair<int, int>> edges;
  lineno = 0;
  while (std::getline(ef, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long long u, v;
    if (!(ss >> u >> v)) throw detail::parse_error(edge_path, lineno, "expected: id id");
    auto iu = compact.find(u), iv = compact.find(v);
    if (iu == compact.end() || iv == compact.end())
      throw IntegrityError(edge_path + ":" + std::to_string(lineno) + ": edge endpoint has no feature row");
    if (u == v)
      throw IntegrityError(edge_path + ":" + std::to_string(lineno) + ": self-loop");
    edges.emplace_back(iu->second, iv->second);
  }

  Matrix feats(n, d);
  {
    int r = 0;
    for (const auto& [id, row] : feat_rows) {
      std::copy(row.begin(), row.end(), feats.row(r));
      ++r;
    }
  }
  Graph g = make_graph(n, std::move(edges), std::move(feats), std::move(labels));
  if (opt.restrict_to_lcc) {
    std::vector<int> keep = largest_component_nodes(g);
    if (int(keep.size()) < g.n) g = induced_subgraph(g, keep).g;
  }
  return g;
}

inline void write_graph(const std::string& dir, const Graph& g) {
  {
    std::ofstream f(dir + "/features.tsv");
    if (!f) throw IoError("cannot write " + dir + "/features.tsv");
    f.precision(17);
    for (int v = 0; v < g.n; ++v) {
      f << v;
      for (int j = 0; j < g.d; ++j) f << '\t' << g.features(v, j);
      f << '\n';
    }
  }
  {
    std::ofstream f(dir + "/edges.txt");
    if (!f) throw IoError("cannot write " + dir + "/edges.txt");
    for (auto [u, v] : g.edges) f << u << ' ' << v << '\n';
  }
  {
    std::ofstream f(dir + "/labels.tsv");
    if (!f) throw IoError("cannot write " + dir + "/labels.tsv");
    for (int v = 0; v < g.n; ++v) f << v << '\t' << g.labels[v] << '\n';
  }
}

}  // namespace fedcp
