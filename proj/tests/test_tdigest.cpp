#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "fedcp/tdigest.hpp"

using namespace fedcp;

namespace {

double exact_quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  double t = q * double(xs.size());
  int idx = std::clamp(int(std::ceil(t)) - 1, 0, int(xs.size()) - 1);
  return xs[idx];
}

// worst-case rank error of the sketch's quantile answers against the sample
double max_rank_error(TDigest& td, const std::vector<double>& xs) {
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  double worst = 0.0;
  for (double q = 0.01; q < 0.995; q += 0.01) {
    double est = td.quantile(q);
    // rank of the estimate within the true sample
    auto lo = std::lower_bound(sorted.begin(), sorted.end(), est);
    auto hi = std::upper_bound(sorted.begin(), sorted.end(), est);
    double rlo = double(lo - sorted.begin()) / double(sorted.size());
    double rhi = double(hi - sorted.begin()) / double(sorted.size());
    double err = (q < rlo) ? rlo - q : (q > rhi ? q - rhi : 0.0);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("quantiles stay within 1% rank error at compression 100") {
  Rng rng = make_rng(42, 0x717);
  SECTION("uniform") {
    TDigest td(100.0);
    std::vector<double> xs;
    for (int i = 0; i < 20000; ++i) {
      double x = rng.uniform();
      xs.push_back(x);
      td.insert(x);
    }
    CHECK(max_rank_error(td, xs) < 0.01);
  }
  SECTION("lognormal-ish heavy tail") {
    TDigest td(100.0);
    std::vector<double> xs;
    for (int i = 0; i < 20000; ++i) {
      double x = std::exp(rng.normal());
      xs.push_back(x);
      td.insert(x);
    }
    CHECK(max_rank_error(td, xs) < 0.01);
  }
}

TEST_CASE("merged client sketches agree with the pooled sketch") {
  Rng rng = make_rng(7, 0x717);
  std::vector<double> all;
  TDigest merged(100.0);
  for (int k = 0; k < 5; ++k) {
    TDigest local(100.0);
    // clients see shifted distributions, like calibration scores would be
    for (int i = 0; i < 3000; ++i) {
      double x = rng.uniform() * 0.6 + 0.08 * k;
      all.push_back(x);
      local.insert(x);
    }
    merged.merge(local);
  }
  CHECK(merged.total_weight() == Catch::Approx(15000.0));
  for (double q : {0.5, 0.9, 0.95, 0.99}) {
    double est = merged.quantile(q);
    double truth = exact_quantile(all, q);
    // rank of the merged answer in the pooled sample
    std::vector<double> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    double r = double(std::lower_bound(sorted.begin(), sorted.end(), est) - sorted.begin()) /
               double(sorted.size());
    CHECK(std::abs(r - q) < 0.01);
    CHECK(std::abs(est - truth) < 0.02);
  }
}

TEST_CASE("weight is conserved through inserts and merges") {
  TDigest a(50.0), b(50.0);
  for (int i = 0; i < 777; ++i) a.insert(double(i));
  for (int i = 0; i < 333; ++i) b.insert(double(i), 2.0);
  CHECK(a.total_weight() == Catch::Approx(777.0));
  CHECK(b.total_weight() == Catch::Approx(666.0));
  a.merge(b);
  CHECK(a.total_weight() == Catch::Approx(1443.0));
  a.flush();
  CHECK(a.centroid_count() < 200);  // compression actually compresses
}

TEST_CASE("extreme quantiles pin to observed min and max") {
  TDigest td(100.0);
  Rng rng = make_rng(3, 0x717);
  for (int i = 0; i < 5000; ++i) td.insert(rng.uniform(-4.0, 9.0));
  td.insert(-11.0);
  td.insert(23.0);
  CHECK(td.quantile(0.0) == -11.0);
  CHECK(td.quantile(1.0) == 23.0);
  CHECK(td.quantile(0.5) > -4.0);
  CHECK(td.quantile(0.5) < 9.0);
}

TEST_CASE("degenerate and invalid inputs") {
  CHECK_THROWS_AS(TDigest(9.0), ConfigError);
  TDigest td(100.0);
  CHECK_THROWS_AS(td.quantile(0.5), ScoreError);  // empty
  CHECK_THROWS_AS(td.insert(std::numeric_limits<double>::quiet_NaN()), ScoreError);
  CHECK_THROWS_AS(td.insert(1.0, 0.0), ScoreError);
  td.insert(5.0);
  CHECK(td.quantile(0.3) == 5.0);  // single point answers itself everywhere
  CHECK(td.quantile(0.9) == 5.0);
}

TEST_CASE("merge order does not change the answers materially") {
  // federation merges in client-id order; verify a permuted order would have
  // produced near-identical quantiles anyway
  Rng rng = make_rng(11, 0x717);
  std::vector<std::vector<double>> shards(4);
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 2000; ++i) shards[k].push_back(rng.normal() + k);
  auto build = [&](const std::vector<int>& order) {
    TDigest out(100.0);
    for (int k : order) {
      TDigest local(100.0);
      for (double x : shards[k]) local.insert(x);
      out.merge(local);
    }
    return out;
  };
  TDigest fwd = build({0, 1, 2, 3});
  TDigest rev = build({3, 2, 1, 0});
  for (double q : {0.1, 0.5, 0.9})
    CHECK(fwd.quantile(q) == Catch::Approx(rev.quantile(q)).margin(0.05));
}
