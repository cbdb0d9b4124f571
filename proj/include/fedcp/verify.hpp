#pragma once

#include <chrono>
#include <functional>
#include <iostream>
#include <vector>

#include "fedcp/harness.hpp"

// The nine release criteria, written as plain functions so both the
// acceptance binary and `fedgraph-cp verify` run the identical checks.
// Each returns pass/fail plus a one-line detail string with the measured
// numbers; tolerances live here, next to the checks they guard.

namespace fedcp {

struct CriterionResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace verify {

// 1. Monte-Carlo coverage stays inside the finite-sample band for iid
//    uniform scores, every K and alpha, all three quantile methods.
inline CriterionResult coverage_bound() {
  CriterionResult r{"coverage-bound", true, "", 0};
  std::string worst;
  double worst_excess = -1e9;
  for (int K : {1, 3, 5, 10}) {
    for (double alpha : {0.05, 0.1, 0.2}) {
      for (auto qm : {QuantileMethod::PooledExact, QuantileMethod::Averaging,
                      QuantileMethod::TDigestMerge}) {
        std::vector<long long> n_k((std::size_t)K, 50);
        CoverageCheck c = coverage_bound_check(
            K, n_k, alpha, 10000, qm, /*seed=*/42,
            [](Rng& rng, int) { return rng.uniform(); });
        double excess = std::max(c.lower - c.empirical, c.empirical - c.upper);
        if (excess > worst_excess) {
          worst_excess = excess;
          worst = "K=" + std::to_string(K) + " alpha=" + detail::fmt(alpha, "%.2f") + " " +
                  quantile_name(qm) + " emp=" + detail::fmt(c.empirical, "%.4f") + " band=[" +
                  detail::fmt(c.lower, "%.4f") + "," + detail::fmt(c.upper, "%.4f") + "]";
        }
        r.pass = r.pass && c.within;
      }
    }
  }
  r.detail = "worst: " + worst;
  return r;
}

// 2. Central finite differences against every analytic gradient.
inline CriterionResult gradient_oracle() {
  CriterionResult r{"gradient-oracle", true, "", 0};
  const double h = 1e-5, tol = 1e-4;
  double worst = 0.0;
  std::string where = "all models";

  auto check = [&](const char* tag, ParamVector& params, ParamVector& grad,
                   const std::function<double()>& loss_fn, Rng& pick_rng, int n_coords) {
    for (int t = 0; t < n_coords; ++t) {
      std::size_t i = (std::size_t)pick_rng.uniform_int((int)params.size());
      double save = params.data()[i];
      params.data()[i] = save + h;
      double up = loss_fn();
      params.data()[i] = save - h;
      double dn = loss_fn();
      params.data()[i] = save;
      double fd = (up - dn) / (2 * h);
      double an = grad.data()[i];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      if (rel > worst) {
        worst = rel;
        where = tag;
      }
      if (rel > tol) r.pass = false;
    }
  };

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed, 0xfd);
    // small random graph, 12 nodes
    std::vector<std::pair<int, int>> edges;
    for (int v = 1; v < 12; ++v) edges.emplace_back(rng.uniform_int(v), v);
    Matrix X = randn_matrix(rng, 12, 6);
    std::vector<int> y(12);
    for (auto& yy : y) yy = rng.uniform_int(3);
    Graph g = make_graph(12, edges, X, y);
    std::vector<int> nodes{0, 2, 4, 6, 8, 10};

    {
      GcnModel m(6, 5, g.num_classes);
      m.init(rng);
      SparseMatrix op = gcn_norm_adj(g);
      ParamVector grad = m.params.zeros_like();
      m.loss_grad(op, g.features, g.labels, nodes, grad);
      auto loss = [&] {
        ParamVector scratch = m.params.zeros_like();
        return m.loss_grad(op, g.features, g.labels, nodes, scratch);
      };
      check("gcn", m.params, grad, loss, rng, 4);
    }
    {
      SageModel m(6, 5, g.num_classes);
      m.init(rng);
      SparseMatrix op = mean_neighbor_op(g);
      ParamVector grad = m.params.zeros_like();
      m.loss_grad(op, g.features, g.labels, nodes, grad);
      auto loss = [&] {
        ParamVector scratch = m.params.zeros_like();
        return m.loss_grad(op, g.features, g.labels, nodes, scratch);
      };
      check("sage", m.params, grad, loss, rng, 4);
    }
    {
      VaeConfig vc;
      vc.hidden = 7;
      vc.latent = 3;
      VaeModel m(6, vc);
      m.init(rng);
      Matrix xb = randn_matrix(rng, 4, 6);
      for (int i = 0; i < xb.rows * xb.cols; ++i) xb.a[i] = xb.a[i] > 0 ? 1.0 : 0.0;
      Matrix eps = randn_matrix(rng, 4, 3);
      ParamVector grad = m.params.zeros_like();
      vae_loss_grad(m, xb, eps, grad);
      auto loss = [&] {
        ParamVector scratch = m.params.zeros_like();
        return vae_loss_grad(m, xb, eps, scratch).total;
      };
      check("vae", m.params, grad, loss, rng, 4);
    }
    {
      VgaeConfig vc;
      vc.hidden = 7;
      vc.latent = 3;
      VgaeModel m(6, vc);
      m.init(rng);
      SparseMatrix op = gcn_norm_adj(g);
      Rng es = make_rng(seed, 0xe5);
      EdgeSample pairs = sample_edges(g, 1.0, es);
      Matrix eps = randn_matrix(rng, 12, 3);
      ParamVector grad = m.params.zeros_like();
      vgae_loss_grad(m, op, g.features, pairs, eps, grad);
      auto loss = [&] {
        ParamVector scratch = m.params.zeros_like();
        return vgae_loss_grad(m, op, g.features, pairs, eps, scratch);
      };
      check("vgae", m.params, grad, loss, rng, 4);
    }
  }
  r.detail = "max rel err " + detail::fmt(worst, "%.3g") + " (" + where + "), tol 1e-4";
  return r;
}

// 3. Quantile backends against brute force.
inline CriterionResult quantile_oracles() {
  CriterionResult r{"quantile-oracles", true, "", 0};
  // (a) pooled exact == sorted rank for random score sets
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng = make_rng(seed, 0x9a);
    int K = 1 + rng.uniform_int(6);
    double alpha = 0.02 + 0.3 * rng.uniform();
    ScoreSet ss;
    ss.K = K;
    std::vector<double> all;
    for (int k = 0; k < K; ++k) {
      int nk = 5 + rng.uniform_int(40);
      for (int i = 0; i < nk; ++i) {
        double s = rng.uniform();
        ss.add(k, (int)all.size(), s);
        all.push_back(s);
      }
    }
    double got = federated_quantile(ss, alpha, QuantileMethod::PooledExact);
    std::sort(all.begin(), all.end());
    long long N = (long long)all.size();
    long long rank = detail::rank_ceil((1.0 - alpha) * double(N + K));
    double want =
        rank > N ? kFullSetSentinel : all[(std::size_t)rank - 1];
    if (got != want) {
      r.pass = false;
      r.detail = "exact mismatch at seed " + std::to_string(seed);
      return r;
    }
  }
  // (b) t-digest rank error on 10^4 samples
  double max_rank_err = 0.0;
  {
    Rng rng = make_rng(7, 0x7d);
    std::vector<double> xs(10000);
    TDigest td;
    for (auto& x : xs) {
      x = rng.uniform();
      td.insert(x);
    }
    std::sort(xs.begin(), xs.end());
    for (double q : {0.5, 0.8, 0.9, 0.95, 0.99}) {
      double est = td.quantile(q);
      auto lo = std::lower_bound(xs.begin(), xs.end(), est) - xs.begin();
      auto hi = std::upper_bound(xs.begin(), xs.end(), est) - xs.begin();
      double rank = 0.5 * double(lo + hi) / double(xs.size());
      max_rank_err = std::max(max_rank_err, std::abs(rank - q));
    }
    if (max_rank_err > 0.01) r.pass = false;
  }
  // (c) averaging == local quantile when clients are identical
  {
    Rng rng = make_rng(11, 0xaa);
    std::vector<double> base(40);
    for (auto& x : base) x = rng.uniform();
    for (int K : {2, 4, 8}) {
      ScoreSet ss;
      ss.K = K;
      int id = 0;
      for (int k = 0; k < K; ++k)
        for (double x : base) ss.add(k, id++, x);
      double avg = federated_quantile(ss, 0.1, QuantileMethod::Averaging);
      ScoreSet one;
      one.K = 1;
      id = 0;
      for (double x : base) one.add(0, id++, x);
      double local = federated_quantile(one, 0.1, QuantileMethod::Averaging);
      if (std::abs(avg - local) > 1e-12) {
        r.pass = false;
        r.detail = "averaging symmetry broke at K=" + std::to_string(K);
        return r;
      }
    }
  }
  r.detail = "200 exact oracles ok; t-digest rank err " + detail::fmt(max_rank_err, "%.4f") +
             " <= 0.01; averaging symmetric";
  return r;
}

// 4. Edge-cut accounting on the benchmark replica.
inline CriterionResult edge_cut_band() {
  CriterionResult r{"edge-cut-band", true, "", 0};
  Graph g = synthetic_dataset("cora");
  std::vector<double> means;
  for (int K : {5, 10, 20}) {
    double mean = 0;
    for (std::uint64_t s : {1, 2, 3, 4, 5}) {
      Partition p = partition_graph(g, K, s);
      mean += missing_edge_report(p, g).delta_e_pct / 5.0;
    }
    means.push_back(mean);
  }
  bool in_band = means[0] >= 3.0 && means[0] <= 12.0;
  bool monotone = means[0] <= means[1] && means[1] <= means[2];
  r.pass = in_band && monotone;
  r.detail = "mean cut% K=5:" + detail::fmt(means[0], "%.2f") + " K=10:" +
             detail::fmt(means[1], "%.2f") + " K=20:" + detail::fmt(means[2], "%.2f") +
             " (band [3,12], non-decreasing)";
  return r;
}

// 5. The desk-scale trend table: coverage floor and set-size ordering.
inline CriterionResult trend_table() {
  CriterionResult r{"trend-table", true, "", 0};
  ExperimentConfig cfg;
  cfg.dataset = "cora";
  cfg.seeds = {1, 2, 3, 4, 5};
  cfg.clients = {3, 5};
  cfg.alphas = {0.05};
  cfg.scores = {"aps"};
  cfg.qmethods = {"exact"};
  double mean_loc = 0, mean_fed = 0, mean_gen = 0, min_cov = 1.0;
  for (auto pk : {Pipeline::Loc, Pipeline::Fed, Pipeline::Gen}) {
    auto recs = run_pipeline(cfg, pk);
    for (auto& rec : recs) {
      min_cov = std::min(min_cov, rec.coverage);
      double share = rec.inefficiency / double(recs.size());
      if (pk == Pipeline::Loc) mean_loc += share;
      if (pk == Pipeline::Fed) mean_fed += share;
      if (pk == Pipeline::Gen) mean_gen += share;
    }
  }
  bool cov_ok = min_cov >= 0.92;
  bool fed_le_loc = mean_fed <= mean_loc;
  bool gen_ok = mean_gen <= mean_fed + 0.1;
  r.pass = cov_ok && fed_le_loc && gen_ok;
  r.detail = "min cov " + detail::fmt(min_cov, "%.4f") + " (>=0.92); ineff loc " +
             detail::fmt(mean_loc, "%.3f") + " fed " + detail::fmt(mean_fed, "%.3f") + " gen " +
             detail::fmt(mean_gen, "%.3f") + " (fed<=loc, gen<=fed+0.1)";
  return r;
}

// 6. Smaller alpha can only grow the prediction set.
inline CriterionResult nesting() {
  CriterionResult r{"nesting", true, "", 0};
  Rng rng = make_rng(3, 0x9e57);
  const int L = 6;
  Matrix probs(500, L);
  for (int i = 0; i < 500; ++i) {
    double sum = 0;
    for (int j = 0; j < L; ++j) {
      probs(i, j) = -std::log(rng.uniform());
      sum += probs(i, j);
    }
    for (int j = 0; j < L; ++j) probs(i, j) /= sum;
  }
  ScoreConfig sc;
  sc.kind = ScoreKind::Aps;
  sc.aps_randomized = false;
  // calibration scores from another random batch
  ScoreSet ss;
  ss.K = 1;
  for (int i = 0; i < 300; ++i) {
    double sum = 0;
    std::vector<double> p((std::size_t)L);
    for (auto& x : p) {
      x = -std::log(rng.uniform());
      sum += x;
    }
    for (auto& x : p) x /= sum;
    ss.add(0, i, conformity_score(sc, p.data(), L, rng.uniform_int(L), 0.0));
  }
  std::vector<PredictionSet> sets;
  for (double alpha : {0.2, 0.1, 0.05}) {
    double q = federated_quantile(ss, alpha, QuantileMethod::PooledExact);
    sets.push_back(build_sets(sc, probs, q, alpha));
  }
  for (int i = 0; i < 500 && r.pass; ++i)
    for (int step = 0; step + 1 < 3; ++step) {
      const auto& small = sets[step].sets[i];   // larger alpha
      const auto& big = sets[step + 1].sets[i]; // smaller alpha
      if (!std::includes(big.begin(), big.end(), small.begin(), small.end())) {
        r.pass = false;
        r.detail = "C_" + detail::fmt(0.2 / std::pow(2, step), "%.2f") +
                   " not nested at row " + std::to_string(i);
        break;
      }
    }
  if (r.pass) r.detail = "C_0.2 within C_0.1 within C_0.05 on 500 rows";
  return r;
}

// 7. Ledger closed forms for full participation.
inline CriterionResult ledger_forms() {
  CriterionResult r{"ledger-forms", true, "", 0};
  Rng rng = make_rng(5, 0x1ed9);
  for (int trial = 0; trial < 3; ++trial) {
    int K = 2 + rng.uniform_int(6);
    int M = 1 + rng.uniform_int(8);
    int d = 4 + rng.uniform_int(60);
    int R = 1 + rng.uniform_int(12);
    // prototype phase
    CommsLedger led;
    std::vector<Matrix> protos((std::size_t)K);
    for (auto& P : protos) {
      P = Matrix(M, d);
      for (auto& x : P.a) x = rng.normal();
    }
    aggregate_and_broadcast(protos, led);
    long long want_proto = 2LL * K * M * d;
    if (led.proto.total() != want_proto) {
      r.pass = false;
      r.detail = "proto phase " + std::to_string(led.proto.total()) + " != " +
                 std::to_string(want_proto);
      return r;
    }
    // training phase: tiny model, R rounds
    GcnModel m(d, 3, 2);
    Rng ir = make_rng(trial, 0x717);
    m.init(ir);
    long long P = (long long)m.params.size();
    CommsLedger led2;
    std::vector<long long> n_k((std::size_t)K, 10);
    FedConfig fc;
    fc.rounds = R;
    fc.parallel = false;
    run_federated_training(m.params, n_k, fc, led2,
                           [&](int, int, const ParamVector& gp) { return gp; });
    long long want_train = 2LL * K * P * R;
    if (led2.model.total() != want_train) {
      r.pass = false;
      r.detail = "training phase " + std::to_string(led2.model.total()) + " != " +
                 std::to_string(want_train);
      return r;
    }
  }
  r.detail = "2KMd and 2K|params|R exact on 3 random configs";
  return r;
}

// 8. DP mechanics: clipping, sigma=0 equivalence, noise calibration.
inline CriterionResult dp_mechanics() {
  CriterionResult r{"dp-mechanics", true, "", 0};
  Rng rng = make_rng(9, 0xd9);
  // clipping: per-sample norms never exceed C after scaling
  {
    DpConfig dp;
    dp.enabled = true;
    dp.clip_norm = 0.7;
    dp.noise_multiplier = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<ParamVector> per_sample;
      ParamVector proto;
      proto.register_param("w", 4, 3);
      for (int s = 0; s < 6; ++s) {
        ParamVector g = proto.zeros_like();
        for (auto& x : g.data()) x = 3.0 * rng.normal();
        per_sample.push_back(std::move(g));
      }
      // dp_sgd_step throws if a clipped norm exceeds C; also check directly
      for (auto& g : per_sample) {
        double nrm = l2_norm(g.data());
        double scale = nrm > dp.clip_norm ? dp.clip_norm / nrm : 1.0;
        if (nrm * scale > dp.clip_norm * (1 + 1e-12)) r.pass = false;
      }
      dp_sgd_step(per_sample, dp, rng);
    }
  }
  // sigma=0 equals the plain mean bitwise
  {
    VaeConfig vc;
    vc.hidden = 6;
    vc.latent = 2;
    VaeModel a(5, vc), b(5, vc);
    Rng ia = make_rng(1, 0xa), ib = make_rng(1, 0xa);
    a.init(ia);
    b.init(ib);
    Rng dr = make_rng(2, 0xb);
    Matrix xb = randn_matrix(dr, 8, 5);
    for (auto& x : xb.a) x = x > 0 ? 1.0 : 0.0;
    Matrix eps = randn_matrix(dr, 8, 2);
    ParamVector plain = a.params.zeros_like();
    vae_loss_grad(a, xb, eps, plain);
    std::vector<ParamVector> per_sample;
    ParamVector scratch = b.params.zeros_like();
    vae_loss_grad(b, xb, eps, scratch, &per_sample);
    DpConfig dp;
    dp.enabled = true;
    dp.clip_norm = 1e18;  // no-op clip
    dp.noise_multiplier = 0.0;
    Rng nr = make_rng(3, 0xc);
    ParamVector dp_grad = dp_sgd_step(per_sample, dp, nr);
    for (std::size_t i = 0; i < plain.size(); ++i)
      if (plain.data()[i] != dp_grad.data()[i]) {
        r.pass = false;
        r.detail = "sigma=0 path differs at coordinate " + std::to_string(i);
        return r;
      }
  }
  // noise std within 5% of sigma*C/B
  double rel_err = 0.0;
  {
    DpConfig dp;
    dp.enabled = true;
    dp.clip_norm = 1.0;
    dp.noise_multiplier = 2.0;
    const int B = 4;
    ParamVector proto;
    proto.register_param("w", 1, 1);
    std::vector<double> draws;
    Rng nr = make_rng(4, 0xd);
    for (int t = 0; t < 10000; ++t) {
      std::vector<ParamVector> per_sample;
      for (int s = 0; s < B; ++s) per_sample.push_back(proto.zeros_like());
      draws.push_back(dp_sgd_step(per_sample, dp, nr).data()[0]);
    }
    double mean = 0, var = 0;
    for (double x : draws) mean += x / draws.size();
    for (double x : draws) var += (x - mean) * (x - mean) / (draws.size() - 1);
    double want = dp.noise_multiplier * dp.clip_norm / B;
    rel_err = std::abs(std::sqrt(var) - want) / want;
    if (rel_err > 0.05) r.pass = false;
  }
  r.detail = "clip holds; sigma=0 bitwise; noise std rel err " +
             detail::fmt(rel_err, "%.4f") + " <= 0.05";
  return r;
}

// 9. q-hat ignores calibration order inside every client.
inline CriterionResult permutation_invariance() {
  CriterionResult r{"permutation-invariance", true, "", 0};
  Rng rng = make_rng(21, 0x9e);
  ScoreSet base;
  base.K = 4;
  int id = 0;
  for (int k = 0; k < 4; ++k) {
    int nk = 30 + rng.uniform_int(30);
    for (int i = 0; i < nk; ++i) base.add(k, id++, rng.uniform());
  }
  std::vector<double> want;
  for (auto qm : {QuantileMethod::PooledExact, QuantileMethod::Averaging,
                  QuantileMethod::TDigestMerge})
    want.push_back(federated_quantile(base, 0.1, qm));
  for (int trial = 0; trial < 100; ++trial) {
    // shuffle entries within each client
    std::vector<std::vector<ScoreEntry>> per_client(4);
    for (const auto& e : base.entries) per_client[e.client].push_back(e);
    ScoreSet shuffled;
    shuffled.K = 4;
    for (int k = 0; k < 4; ++k) {
      auto& v = per_client[k];
      for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[i], v[rng.uniform_int(i + 1)]);
      for (const auto& e : v) shuffled.add(e.client, e.node, e.score);
    }
    int qi = 0;
    for (auto qm : {QuantileMethod::PooledExact, QuantileMethod::Averaging,
                    QuantileMethod::TDigestMerge}) {
      double got = federated_quantile(shuffled, 0.1, qm);
      if (got != want[qi]) {
        r.pass = false;
        r.detail = std::string("q-hat moved under ") + quantile_name(qm) + " at trial " +
                   std::to_string(trial);
        return r;
      }
      ++qi;
    }
  }
  r.detail = "100 permutations, all three methods, q-hat unchanged";
  return r;
}

}  // namespace verify

/// Run all nine; prints one line per criterion. Returns the number of
/// failing criteria (0 = release-ready).
inline int run_verification(std::ostream& out) {
  using Fn = CriterionResult (*)();
  std::pair<const char*, Fn> checks[] = {
      {"1", &verify::coverage_bound},     {"2", &verify::gradient_oracle},
      {"3", &verify::quantile_oracles},   {"4", &verify::edge_cut_band},
      {"5", &verify::trend_table},        {"6", &verify::nesting},
      {"7", &verify::ledger_forms},       {"8", &verify::dp_mechanics},
      {"9", &verify::permutation_invariance},
  };
  int failures = 0;
  for (auto& [num, fn] : checks) {
    auto t0 = std::chrono::steady_clock::now();
    CriterionResult res = fn();
    auto t1 = std::chrono::steady_clock::now();
    res.seconds = std::chrono::duration<double>(t1 - t0).count();
    out << (res.pass ? "PASS" : "FAIL") << "  criterion " << num << " [" << res.name << "] "
        << res.detail << "  (" << detail::fmt(res.seconds, "%.1f") << "s)\n";
    failures += !res.pass;
  }
  return failures;
}

}  // namespace fedcp
