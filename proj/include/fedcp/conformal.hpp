#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "fedcp/matrix.hpp"
#include "fedcp/tdigest.hpp"

namespace fedcp {

constexpr double kFullSetSentinel = std::numeric_limits<double>::infinity();

namespace detail {

inline void check_simplex(const double* probs, int L, int y) {
  if (y < 0 || y >= L) throw ScoreError("score: label out of range");
  double s = 0.0;
  for (int j = 0; j < L; ++j) {
    if (!(probs[j] >= 0.0)) throw ScoreError("score: negative probability");  // also NaN
    s += probs[j];
  }
  if (std::abs(s - 1.0) > 1e-9) throw ScoreError("score: probabilities do not sum to 1");
}

/// Classes sorted by descending probability, ties broken by class id.
inline std::vector<int> prob_order(const double* probs, int L) {
  std::vector<int> idx((std::size_t)L);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  return idx;
}

/// Integer-safe ceil for quantile ranks; shaves fp dust below exact integers.
inline long long rank_ceil(double x) { return (long long)std::ceil(x - 1e-9); }

}  // namespace detail

/// Cumulative probability mass down to and including y's rank; randomized
/// variant backs off u * P(y) so scores are continuous.
inline double score_aps(const double* probs, int L, int y, bool randomized = false,
                        double u = 0.0) {
  detail::check_simplex(probs, L, y);
  std::vector<int> order = detail::prob_order(probs, L);
  double cum = 0.0;
  for (int j : order) {
    cum += probs[j];
    if (j == y) break;
  }
  return randomized ? cum - u * probs[y] : cum;
}

/// Mass strictly above y, plus u*P(y), plus a rank penalty past k_reg.
/// Positive orientation: smaller = more conforming, membership is s <= qhat.
inline double score_raps(const double* probs, int L, int y, double nu = 0.01, int k_reg = 1,
                         double u = 0.0) {
  detail::check_simplex(probs, L, y);
  if (nu < 0.0 || k_reg < 1) throw ScoreError("raps: need nu >= 0 and k_reg >= 1");
  std::vector<int> order = detail::prob_order(probs, L);
  double above = 0.0;
  int rank = 0;
  for (int j : order) {
    ++rank;
    if (j == y) break;
    above += probs[j];
  }
  return above + u * probs[y] + nu * std::max(rank - k_reg, 0);
}

inline double score_lac(const double* probs, int L, int y) {
  detail::check_simplex(probs, L, y);
  return 1.0 - probs[y];
}

enum class ScoreKind { Aps, Raps, Lac };

struct ScoreConfig {
  ScoreKind kind = ScoreKind::Aps;
  bool aps_randomized = false;
  double raps_nu = 0.01;
  int raps_k_reg = 1;
};

inline const char* score_name(ScoreKind k) {
  switch (k) {
    case ScoreKind::Aps: return "aps";
    case ScoreKind::Raps: return "raps";
    case ScoreKind::Lac: return "lac";
  }
  return "?";
}

/// Dispatch on the configured scorer; u feeds the randomized variants only.
inline double conformity_score(const ScoreConfig& cfg, const double* probs, int L, int y,
                               double u = 0.0) {
  switch (cfg.kind) {
    case ScoreKind::Aps: return score_aps(probs, L, y, cfg.aps_randomized, u);
    case ScoreKind::Raps: return score_raps(probs, L, y, cfg.raps_nu, cfg.raps_k_reg, u);
    case ScoreKind::Lac: return score_lac(probs, L, y);
  }
  throw ScoreError("unknown score kind");
}

// ---------------------------------------------------------------------------
// Calibration scores grouped by client

struct ScoreEntry {
  int client = 0;
  int node = 0;
  double score = 0.0;
};

struct ScoreSet {
  int K = 0;
  std::vector<ScoreEntry> entries;

  void add(int client, int node, double score) {
    if (!std::isfinite(score)) throw ScoreError("calibration score not finite");
    if (client < 0 || client >= K) throw FederationError("score entry for unknown client");
    entries.push_back({client, node, score});
  }

  /// Per-client calibration counts n_k; every client must participate.
  std::vector<long long> counts() const {
    std::vector<long long> n(std::size_t(K), 0);
    for (const auto& e : entries) n[e.client]++;
    for (int k = 0; k < K; ++k)
      if (n[k] == 0)
        throw FederationError("client " + std::to_string(k) + " has an empty calibration set");
    return n;
  }

  long long total() const { return (long long)entries.size(); }
};

enum class QuantileMethod { PooledExact, Averaging, TDigestMerge };

inline const char* quantile_name(QuantileMethod m) {
  switch (m) {
    case QuantileMethod::PooledExact: return "exact";
    case QuantileMethod::Averaging: return "avg";
    case QuantileMethod::TDigestMerge: return "tdigest";
  }
  return "?";
}

/// Calibrated threshold under the partial-exchangeability rule: the target is
/// the ceil((1-alpha)(N+K))-th smallest calibration score, where the K unseen
/// test scores are treated as +inf placeholders. When that rank exceeds N no
/// finite score works and the +inf sentinel forces full label sets.
inline double federated_quantile(const ScoreSet& scores, double alpha, QuantileMethod method) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
  const std::vector<long long> n = scores.counts();
  const long long N = scores.total();
  const long long K = scores.K;
  if (N < 1) throw FederationError("no calibration scores");
  const long long r = detail::rank_ceil((1.0 - alpha) * double(N + K));
  if (r > N) return kFullSetSentinel;

  switch (method) {
    case QuantileMethod::PooledExact: {
      std::vector<double> all;
      all.reserve(std::size_t(N));
      for (const auto& e : scores.entries) all.push_back(e.score);
      std::nth_element(all.begin(), all.begin() + (r - 1), all.end());
      return all[std::size_t(r - 1)];
    }
    case QuantileMethod::Averaging: {
      // each client reports its local conformal order statistic; the server
      // averages them with Theorem-1 weights p_k = (n_k+1)/(N+K)
      std::vector<std::vector<double>> per((std::size_t)K);
      for (const auto& e : scores.entries) per[e.client].push_back(e.score);
      double q = 0.0;
      for (long long k = 0; k < K; ++k) {
        std::sort(per[k].begin(), per[k].end());
        long long rk = std::min<long long>(detail::rank_ceil((1.0 - alpha) * double(n[k] + 1)),
                                           n[k]);
        double p_k = double(n[k] + 1) / double(N + K);
        q += p_k * per[k][std::size_t(rk - 1)];
      }
      return q;
    }
    case QuantileMethod::TDigestMerge: {
      // per-client sketches built over sorted scores (insertion-order proof
      // against client-side shuffling), merged in client-id order
      std::vector<std::vector<double>> per((std::size_t)K);
      for (const auto& e : scores.entries) per[e.client].push_back(e.score);
      TDigest merged;
      for (long long k = 0; k < K; ++k) {
        std::sort(per[k].begin(), per[k].end());
        TDigest sketch;
        for (double s : per[k]) sketch.insert(s);
        sketch.flush();
        merged.merge(sketch);
      }
      return merged.quantile(double(r) / double(N + K));
    }
  }
  throw ConfigError("unknown quantile method");
}

// ---------------------------------------------------------------------------
// Prediction sets and metrics

struct PredictionSet {
  double alpha = 0.0;
  double qhat = 0.0;
  std::vector<std::vector<int>> sets;  // class ids per test node, ascending
};

/// Membership rule C(x) = { y : S(x,y) <= qhat }. `u` supplies one uniform
/// draw per test node for the randomized scorers (ignored otherwise).
inline PredictionSet build_sets(const ScoreConfig& cfg, ConstMat probs, double qhat,
                                double alpha, const std::vector<double>* u = nullptr) {
  PredictionSet out;
  out.alpha = alpha;
  out.qhat = qhat;
  out.sets.resize(std::size_t(probs.rows));
  for (int i = 0; i < probs.rows; ++i) {
    double ui = u ? (*u)[std::size_t(i)] : 0.0;
    for (int y = 0; y < probs.cols; ++y) {
      if (conformity_score(cfg, probs.row(i), probs.cols, y, ui) <= qhat)
        out.sets[std::size_t(i)].push_back(y);
    }
  }
  return out;
}

struct SetMetrics {
  double coverage = 0.0;
  double inefficiency = 0.0;  // mean set size
};

inline SetMetrics set_metrics(const PredictionSet& ps, const std::vector<int>& labels) {
  if (ps.sets.empty()) throw MetricsError("metrics on empty test set");
  if (labels.size() != ps.sets.size()) throw MetricsError("metrics: label count mismatch");
  SetMetrics m;
  for (std::size_t i = 0; i < ps.sets.size(); ++i) {
    const auto& s = ps.sets[i];
    m.coverage += std::binary_search(s.begin(), s.end(), labels[i]) ? 1.0 : 0.0;
    m.inefficiency += double(s.size());
  }
  m.coverage /= double(ps.sets.size());
  m.inefficiency /= double(ps.sets.size());
  return m;
}

// ---------------------------------------------------------------------------
// Monte Carlo check of the coverage band [1-alpha, 1-alpha + K/(N+K)]

struct CoverageCheck {
  double empirical = 0.0;
  double lower = 0.0, upper = 0.0;  // theoretical band
  double margin = 0.0;              // 3-sigma sampling slack
  bool within = false;
};

/// Draws fresh calibration scores per trial from `sampler(rng, client)`, the
/// test point from client k with probability p_k = (n_k+1)/(N+K), and counts
/// how often the test score lands inside the calibrated threshold.
inline CoverageCheck coverage_bound_check(int K, const std::vector<long long>& n_k, double alpha,
                                          int trials, QuantileMethod method, std::uint64_t seed,
                                          const std::function<double(Rng&, int)>& sampler) {
  if (trials < 100) throw ConfigError("coverage check: need >= 100 trials");
  if (int(n_k.size()) != K) throw ConfigError("coverage check: n_k size != K");
  long long N = 0;
  for (long long v : n_k) N += v;
  CoverageCheck out;
  out.lower = 1.0 - alpha;
  out.upper = 1.0 - alpha + double(K) / double(N + K);
  const double c = 1.0 - alpha;
  out.margin = 3.0 * std::sqrt(c * (1.0 - c) / double(trials));

  long long hits = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, /*salt_a=*/0xc0/*coverage*/, /*salt_b=*/std::uint64_t(t));
    ScoreSet scores;
    scores.K = K;
    for (int k = 0; k < K; ++k)
      for (long long i = 0; i < n_k[k]; ++i) scores.add(k, int(i), sampler(rng, k));
    double qhat = federated_quantile(scores, alpha, method);
    // test client ~ p_k
    double roll = rng.uniform() * double(N + K);
    int tc = K - 1;
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      acc += double(n_k[k] + 1);
      if (roll < acc) {
        tc = k;
        break;
      }
    }
    double s_test = sampler(rng, tc);
    hits += (s_test <= qhat);
  }
  out.empirical = double(hits) / double(trials);
  out.within = out.empirical >= out.lower - out.margin && out.empirical <= out.upper + out.margin;
  return out;
}

}  // namespace fedcp
