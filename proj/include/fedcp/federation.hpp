#pragma once

#include <cmath>
#include <future>
#include <limits>
#include <string>
#include <vector>

#include "fedcp/kernel.hpp"

namespace fedcp {

/// Scalar traffic counters, split by phase. "down" is server -> clients,
/// "up" the reverse. Broadcasts are counted once per payload scalar (the
/// multicast convention the closed-form totals use).
struct CommsLedger {
  struct Phase {
    long long up = 0, down = 0;
    long long total() const { return up + down; }
  };
  Phase model;  // parameter exchange rounds
  Phase proto;  // prototype sharing
  int rounds = 0;

  long long total() const { return model.total() + proto.total(); }
};

// ---------------------------------------------------------------------------
// FedAvg

inline ParamVector fedavg_aggregate(const std::vector<ParamVector>& params,
                                    const std::vector<double>& weights) {
  if (params.empty()) throw FederationError("fedavg: no clients");
  if (params.size() != weights.size()) throw FederationError("fedavg: weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("fedavg: weights must be positive");
    wsum += w;
  }
  ParamVector out = params[0].zeros_like();
  for (std::size_t k = 0; k < params.size(); ++k) {  // ascending client id
    if (!out.same_layout(params[k])) throw FederationError("fedavg: parameter registry mismatch");
    out.axpy(weights[k] / wsum, params[k]);
  }
  return out;
}

struct FedConfig {
  int rounds = 100;
  int local_epochs = 1;
  bool weighted = true;   // n_k-weighted average; false -> uniform 1/K
  bool parallel = false;  // run locals under std::async between barriers
};

/// R rounds of broadcast -> local training -> aggregate. `local(k, round,
/// params)` returns client k's updated parameters; it must be safe to invoke
/// concurrently for distinct k (all per-client state, no shared writes).
/// Clients with n_k = 0 are skipped and excluded from the average; everyone
/// else contributes with weight n_k (or 1). The ledger gains 2*K*|params|
/// scalars per round. Aggregation order is fixed by client id, so concurrent
/// and serial schedules produce identical bits.
template <class LocalFn>
inline ParamVector run_federated_training(const ParamVector& init,
                                          const std::vector<long long>& n_k,
                                          const FedConfig& cfg, CommsLedger& ledger,
                                          LocalFn&& local) {
  const int K = int(n_k.size());
  if (K < 1) throw FederationError("federated training: no clients");
  ParamVector global = init;
  const long long P = (long long)init.size();

  for (int r = 0; r < cfg.rounds; ++r) {
    ledger.model.down += P * K;  // broadcast to every client
    std::vector<ParamVector> updated((std::size_t)K);
    if (cfg.parallel) {
      std::vector<std::future<ParamVector>> futs;
      futs.reserve((std::size_t)K);
      for (int k = 0; k < K; ++k) {
        if (n_k[k] == 0) {
          futs.emplace_back();
          continue;
        }
        futs.push_back(std::async(std::launch::async,
                                  [&local, k, r, &global] { return local(k, r, global); }));
      }
      for (int k = 0; k < K; ++k)
        if (futs[k].valid()) updated[k] = futs[k].get();
    } else {
      for (int k = 0; k < K; ++k)
        if (n_k[k] > 0) updated[k] = local(k, r, global);
    }

    std::vector<ParamVector> parts;
    std::vector<double> w;
    long long up = 0;
    for (int k = 0; k < K; ++k) {
      if (n_k[k] == 0) {
        if (r == 0) log_warn("client " + std::to_string(k) + " has no training nodes; skipped");
        continue;
      }
      parts.push_back(std::move(updated[k]));
      w.push_back(cfg.weighted ? double(n_k[k]) : 1.0);
      up += P;
    }
    ledger.model.up += up;
    if (parts.empty()) throw FederationError("federated training: every client skipped");
    global = fedavg_aggregate(parts, w);
    ledger.rounds += 1;
  }
  return global;
}

// ---------------------------------------------------------------------------
// DP-SGD

struct DpConfig {
  bool enabled = false;
  double clip_norm = 1.0;        // C
  double noise_multiplier = 0.0; // sigma
  double delta = 1e-5;
  double epsilon_reported = 0.0; // filled in by the loose accountant
};

/// Clip each per-sample gradient to l2 norm <= C, sum, add N(0, (sigma*C)^2)
/// noise per coordinate, and average. With sigma = 0 and all norms within C
/// this reduces to the plain mean, summed in the same order.
inline ParamVector dp_sgd_step(const std::vector<ParamVector>& per_sample, const DpConfig& dp,
                               Rng& rng) {
  if (per_sample.empty()) throw ConfigError("dp-sgd: empty batch");
  if (!(dp.clip_norm > 0.0)) throw ConfigError("dp-sgd: clip norm must be positive");
  const double C = dp.clip_norm;
  ParamVector sum = per_sample[0].zeros_like();
  for (const auto& g : per_sample) {
    double norm = l2_norm(g.data());
    double scale = norm > C ? C / norm : 1.0;
    sum.axpy(scale, g);
    if (norm * scale > C * (1.0 + 1e-12))
      throw OptimizerError("dp-sgd: clipped gradient still above the bound");
  }
  if (dp.noise_multiplier > 0.0) {
    const double std = dp.noise_multiplier * C;
    for (auto& v : sum.data()) v += std * rng.normal();
  }
  const double invB = 1.0 / double(per_sample.size());
  for (auto& v : sum.data()) v *= invB;
  return sum;
}

/// Loose epsilon from basic composition of the Gaussian mechanism: the per-
/// step budget uses delta/steps, and the step epsilons are summed outright.
/// Deliberately conservative; real deployments would run a tighter
/// accountant.
inline double dp_epsilon_loose(double sigma, double delta, long long steps) {
  if (!(sigma > 0.0)) return std::numeric_limits<double>::infinity();
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp: delta must be in (0,1)");
  if (steps < 1) return 0.0;
  double delta_step = delta / double(steps);
  double eps_step = std::sqrt(2.0 * std::log(1.25 / delta_step)) / sigma;
  return double(steps) * eps_step;
}

/// Inverse of the loose accountant: the sigma that makes `steps` Gaussian
/// steps compose to epsilon at total budget delta.
inline double dp_sigma_for_epsilon(double epsilon, double delta, long long steps) {
  if (!(epsilon > 0.0)) throw ConfigError("dp: epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp: delta must be in (0,1)");
  if (steps < 1) steps = 1;
  double delta_step = delta / double(steps);
  return double(steps) * std::sqrt(2.0 * std::log(1.25 / delta_step)) / epsilon;
}

}  // namespace fedcp
