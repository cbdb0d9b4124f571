#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "fedcp/conformal.hpp"
#include "fedcp/generator.hpp"
#include "fedcp/partition.hpp"
#include "fedcp/synth.hpp"

namespace fedcp {

enum class Pipeline { Loc, Fed, Gen };

inline const char* pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::Loc: return "loc";
    case Pipeline::Fed: return "fed";
    case Pipeline::Gen: return "gen";
  }
  return "?";
}

inline Pipeline pipeline_from(const std::string& s) {
  if (s == "loc") return Pipeline::Loc;
  if (s == "fed") return Pipeline::Fed;
  if (s == "gen") return Pipeline::Gen;
  throw ConfigError("unknown pipeline: " + s);
}

inline ScoreKind score_from(const std::string& s) {
  if (s == "aps") return ScoreKind::Aps;
  if (s == "raps") return ScoreKind::Raps;
  if (s == "lac") return ScoreKind::Lac;
  throw ConfigError("unknown score: " + s);
}

inline QuantileMethod qmethod_from(const std::string& s) {
  if (s == "exact") return QuantileMethod::PooledExact;
  if (s == "avg") return QuantileMethod::Averaging;
  if (s == "tdigest") return QuantileMethod::TDigestMerge;
  throw ConfigError("unknown quantile method: " + s);
}

// ---------------------------------------------------------------------------
// Configuration: one flat key=value file, CLI overrides on top.

struct ExperimentConfig {
  std::string dataset = "cora";  // built-in name; doubles as the CSV label
  std::string data_dir;          // when set, load TSV files from here instead
  std::string model = "gcn";     // gcn | sage
  std::string out_dir = "out";
  std::vector<std::string> pipelines{"loc", "fed", "gen"};
  std::vector<int> clients{3};
  std::vector<double> alphas{0.05};
  std::vector<std::string> scores{"aps"};
  std::vector<std::string> qmethods{"exact"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  int rounds = 100;
  int local_epochs = 1;
  double imbalance = 0.05;
  int hidden = 64;
  bool parallel_clients = true;

  double train_frac = 0.2, calib_frac = 0.4, test_frac = 0.4;
  double valid_within_train = 0.2;

  // generator pipeline
  int proto_per_client = 5;
  double edge_top_p = 0.04;
  int vgae_rounds = 30;
  int vae_epochs = 30;
  int vae_latent = 32;
  int vae_batch = 32;

  // differential privacy on the VAE (0 disables)
  double dp_epsilon = 0.0;
  double dp_delta = 1e-5;
  double dp_clip = 1.0;

  // scorer extras
  bool aps_randomized = false;
  double raps_nu = 0.01;
  int raps_k_reg = 1;

  void validate() const {
    if (pipelines.empty() || clients.empty() || alphas.empty() || scores.empty() ||
        qmethods.empty() || seeds.empty())
      throw ConfigError("config: every sweep list must be non-empty");
    for (double a : alphas)
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("config: alpha must be in (0,1)");
    for (int k : clients)
      if (k < 1) throw ConfigError("config: clients must be >= 1");
    if (model != "gcn" && model != "sage") throw ConfigError("config: model must be gcn|sage");
    for (const auto& p : pipelines) pipeline_from(p);
    for (const auto& s : scores) score_from(s);
    for (const auto& q : qmethods) qmethod_from(q);
    if (rounds < 0 || local_epochs < 1) throw ConfigError("config: bad round counts");
    if (!(edge_top_p > 0.0 && edge_top_p <= 1.0)) throw ConfigError("config: edge_top_p in (0,1]");
    if (proto_per_client < 1) throw ConfigError("config: proto_per_client >= 1");
    if (std::abs(train_frac + calib_frac + test_frac - 1.0) > 1e-9)
      throw ConfigError("config: split fractions must sum to 1");
  }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace((unsigned char)c)) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config: bad boolean value '" + v + "'");
}

}  // namespace detail

/// Apply one key=value pair; shared between the config file and CLI flags.
inline void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& val) {
  using detail::split_csv;
  auto ints = [&] {
    std::vector<int> out;
    for (const auto& t : split_csv(val)) out.push_back(std::stoi(t));
    return out;
  };
  auto doubles = [&] {
    std::vector<double> out;
    for (const auto& t : split_csv(val)) out.push_back(std::stod(t));
    return out;
  };
  if (key == "dataset") cfg.dataset = val;
  else if (key == "data_dir") cfg.data_dir = val;
  else if (key == "model") cfg.model = val;
  else if (key == "out_dir") cfg.out_dir = val;
  else if (key == "pipelines") cfg.pipelines = split_csv(val);
  else if (key == "clients") cfg.clients = ints();
  else if (key == "alphas" || key == "alpha") cfg.alphas = doubles();
  else if (key == "scores" || key == "score") cfg.scores = split_csv(val);
  else if (key == "qmethods" || key == "quantile") cfg.qmethods = split_csv(val);
  else if (key == "seeds" || key == "seed") {
    cfg.seeds.clear();
    for (const auto& t : split_csv(val)) cfg.seeds.push_back(std::stoull(t));
  } else if (key == "rounds") cfg.rounds = std::stoi(val);
  else if (key == "local_epochs") cfg.local_epochs = std::stoi(val);
  else if (key == "imbalance") cfg.imbalance = std::stod(val);
  else if (key == "hidden") cfg.hidden = std::stoi(val);
  else if (key == "parallel_clients") cfg.parallel_clients = detail::parse_bool(val);
  else if (key == "train_frac") cfg.train_frac = std::stod(val);
  else if (key == "calib_frac") cfg.calib_frac = std::stod(val);
  else if (key == "test_frac") cfg.test_frac = std::stod(val);
  else if (key == "valid_within_train") cfg.valid_within_train = std::stod(val);
  else if (key == "proto_per_client") cfg.proto_per_client = std::stoi(val);
  else if (key == "edge_top_p") cfg.edge_top_p = std::stod(val);
  else if (key == "vgae_rounds") cfg.vgae_rounds = std::stoi(val);
  else if (key == "vae_epochs") cfg.vae_epochs = std::stoi(val);
  else if (key == "vae_latent") cfg.vae_latent = std::stoi(val);
  else if (key == "vae_batch") cfg.vae_batch = std::stoi(val);
  else if (key == "dp_epsilon") cfg.dp_epsilon = std::stod(val);
  else if (key == "dp_delta") cfg.dp_delta = std::stod(val);
  else if (key == "dp_clip") cfg.dp_clip = std::stod(val);
  else if (key == "aps_randomized") cfg.aps_randomized = detail::parse_bool(val);
  else if (key == "raps_nu") cfg.raps_nu = std::stod(val);
  else if (key == "raps_k_reg") cfg.raps_k_reg = std::stoi(val);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto is_space = [](unsigned char c) { return std::isspace(c); };
    line.erase(line.begin(), std::find_if_not(line.begin(), line.end(), is_space));
    while (!line.empty() && is_space((unsigned char)line.back())) line.pop_back();
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    while (!key.empty() && is_space((unsigned char)key.back())) key.pop_back();
    val.erase(val.begin(), std::find_if_not(val.begin(), val.end(), is_space));
    try {
      config_set(cfg, key, val);
    } catch (const std::invalid_argument&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Run records and output emission

struct RunRecord {
  std::string dataset;
  std::uint64_t seed = 0;
  int K = 0;
  std::string pipeline, model, score, qmethod;
  double alpha = 0.0;
  double coverage = 0.0, inefficiency = 0.0, accuracy = 0.0, qhat = 0.0;
  double delta_e_pct = 0.0;
  long long scalars_comm = 0;
  double wall_ms = 0.0;
};

namespace detail {

inline std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

inline void write_summary_csv(const std::string& path, const std::vector<RunRecord>& records) {
  if (records.empty()) throw ConfigError("emit: no records");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "dataset,seed,K,pipeline,model,score,alpha,qmethod,coverage,inefficiency,accuracy,"
       "qhat,delta_e_pct,scalars_comm,wall_ms\n";
  for (const auto& r : records) {
    f << r.dataset << ',' << r.seed << ',' << r.K << ',' << r.pipeline << ',' << r.model << ','
      << r.score << ',' << detail::fmt(r.alpha, "%.4g") << ',' << r.qmethod << ','
      << detail::fmt(r.coverage) << ',' << detail::fmt(r.inefficiency) << ','
      << detail::fmt(r.accuracy) << ',' << detail::fmt(r.qhat, "%.10g") << ','
      << detail::fmt(r.delta_e_pct) << ',' << r.scalars_comm << ','
      << detail::fmt(r.wall_ms, "%.3f") << '\n';
  }
}

/// Summary CSV plus long-format files, one per figure family: edge-cut by K,
/// coverage by alpha/method, set size by pipeline.
inline void emit_outputs(const std::string& dir, const std::vector<RunRecord>& records) {
  if (records.empty()) throw ConfigError("emit: no records");
  write_summary_csv(dir + "/summary.csv", records);
  {
    std::ofstream f(dir + "/fig_edge_cut.tsv");
    if (!f) throw IoError("cannot write " + dir + "/fig_edge_cut.tsv");
    f << "dataset\tK\tseed\tdelta_e_pct\n";
    std::set<std::tuple<std::string, int, std::uint64_t>> seen;
    for (const auto& r : records)
      if (seen.insert({r.dataset, r.K, r.seed}).second)
        f << r.dataset << '\t' << r.K << '\t' << r.seed << '\t' << detail::fmt(r.delta_e_pct)
          << '\n';
  }
  {
    std::ofstream f(dir + "/fig_coverage.tsv");
    if (!f) throw IoError("cannot write " + dir + "/fig_coverage.tsv");
    f << "dataset\tK\tpipeline\tscore\talpha\tqmethod\tseed\tcoverage\n";
    for (const auto& r : records)
      f << r.dataset << '\t' << r.K << '\t' << r.pipeline << '\t' << r.score << '\t'
        << detail::fmt(r.alpha, "%.4g") << '\t' << r.qmethod << '\t' << r.seed << '\t'
        << detail::fmt(r.coverage) << '\n';
  }
  {
    std::ofstream f(dir + "/fig_set_size.tsv");
    if (!f) throw IoError("cannot write " + dir + "/fig_set_size.tsv");
    f << "dataset\tK\tpipeline\tscore\talpha\tqmethod\tseed\tinefficiency\n";
    for (const auto& r : records)
      f << r.dataset << '\t' << r.K << '\t' << r.pipeline << '\t' << r.score << '\t'
        << detail::fmt(r.alpha, "%.4g") << '\t' << r.qmethod << '\t' << r.seed << '\t'
        << detail::fmt(r.inefficiency) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Pipeline internals

inline Graph load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data_dir.empty()) return load_graph(cfg.data_dir);
  return synthetic_dataset(cfg.dataset);
}

namespace pipe {

template <class Model>
inline SparseMatrix make_operator(const Graph& g) {
  if constexpr (std::is_same_v<Model, GcnModel>)
    return gcn_norm_adj(g);
  else
    return mean_neighbor_op(g);
}

struct ClientData {
  Subgraph sub;
  SparseMatrix op;
  std::vector<int> train, valid, calib, test;  // local indices
};

template <class Model>
inline std::vector<ClientData> build_clients(const Graph& g, const Partition& part,
                                             const RoleMask& roles) {
  std::vector<ClientData> out((std::size_t)part.K);
  for (int k = 0; k < part.K; ++k) {
    ClientData& c = out[k];
    c.sub = part.client_graphs[k];
    c.op = make_operator<Model>(c.sub.g);
    for (int i = 0; i < c.sub.g.n; ++i) {
      switch (roles.role[c.sub.global_id[i]]) {
        case Role::Train: c.train.push_back(i); break;
        case Role::Valid: c.valid.push_back(i); break;
        case Role::Calib: c.calib.push_back(i); break;
        case Role::Test: c.test.push_back(i); break;
      }
    }
  }
  return out;
}

/// One federation round of local work: fresh optimizer, `epochs` full-batch
/// steps on the client's training nodes. Used verbatim by the loc pipeline so
/// a single client federation and plain local training share one trajectory.
template <class Model>
inline void train_round(Model& m, const SparseMatrix& op, const Graph& g,
                        const std::vector<int>& train_nodes, int epochs) {
  AdamState st(m.params.size());
  ParamVector grad = m.params.zeros_like();
  for (int e = 0; e < epochs; ++e) {
    grad.fill(0.0);
    m.loss_grad(op, g.features, g.labels, train_nodes, grad);
    adam_step(m.params, grad, st);
  }
}

/// Client-averaged temperature on validation nodes; clients without any
/// validation data sit the vote out.
template <class Model>
inline double average_temperature(const Model& m, const std::vector<ClientData>& clients,
                                  const std::vector<Matrix>& logits) {
  (void)m;
  double sum = 0.0;
  int votes = 0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    if (clients[k].valid.empty()) continue;
    Matrix lv = select_rows(logits[k], clients[k].valid);
    std::vector<int> yv;
    for (int i : clients[k].valid) yv.push_back(clients[k].sub.g.labels[i]);
    sum += temperature_fit(lv, yv).T;
    votes++;
  }
  if (votes == 0) {
    log_warn("temperature: no client has validation nodes, using T = 1");
    return 1.0;
  }
  return sum / votes;
}

struct GenArtifacts {
  std::vector<AugmentedSubgraph> augmented;  // per client
  CommsLedger ledger;                        // prototype + VGAE traffic
};

/// The missing-neighbor pipeline: local VAEs -> prototypes -> federated VGAE
/// -> top-p edge augmentation of every client subgraph.
inline GenArtifacts run_generator(const ExperimentConfig& cfg,
                                  const std::vector<ClientData>& clients, int d,
                                  std::uint64_t seed) {
  GenArtifacts art;
  const int K = int(clients.size());
  const bool bernoulli_feats = [&] {
    for (const auto& c : clients)
      if (!features_binary(c.sub.g.features)) return false;
    return true;
  }();

  int latent = cfg.vae_latent;
  if (latent >= d) {
    latent = std::max(1, d / 2);
    log_warn("vae: latent dim clamped to " + std::to_string(latent) + " for d=" +
             std::to_string(d));
  }

  // 1) per-client VAE + prototypes (train features only)
  std::vector<Matrix> protos((std::size_t)K);
  for (int k = 0; k < K; ++k) {
    const ClientData& c = clients[k];
    if ((int)c.train.size() < 2) {
      log_warn("generator: client " + std::to_string(k) + " has too few training nodes");
      protos[k] = Matrix(0, d);
      continue;
    }
    Matrix train_feats = select_rows(c.sub.g.features, c.train);

    VaeConfig vc;
    vc.latent = latent;
    vc.bernoulli = bernoulli_feats;
    VaeModel vae(d, vc);
    Rng init_rng = make_rng(seed, 0xae01, (std::uint64_t)k);
    vae.init(init_rng);

    DpConfig dp;
    dp.enabled = cfg.dp_epsilon > 0.0;
    long long steps =
        (long long)cfg.vae_epochs * ((train_feats.rows + cfg.vae_batch - 1) / cfg.vae_batch);
    if (dp.enabled) {
      dp.clip_norm = cfg.dp_clip;
      dp.delta = cfg.dp_delta;
      dp.noise_multiplier = dp_sigma_for_epsilon(cfg.dp_epsilon, cfg.dp_delta, steps);
      dp.epsilon_reported = dp_epsilon_loose(dp.noise_multiplier, dp.delta, steps);
    }

    Rng order_rng = make_rng(seed, 0xba7c, (std::uint64_t)k);
    Rng noise_rng = make_rng(seed, 0xe925, (std::uint64_t)k);
    Rng dp_rng = make_rng(seed, 0xd9, (std::uint64_t)k);
    AdamState st(vae.params.size());
    ParamVector grad = vae.params.zeros_like();
    std::vector<ParamVector> per_sample;
    for (int epoch = 0; epoch < cfg.vae_epochs; ++epoch) {
      std::vector<int> order = order_rng.permutation(train_feats.rows);
      for (int at = 0; at < (int)order.size(); at += cfg.vae_batch) {
        int bsz = std::min(cfg.vae_batch, (int)order.size() - at);
        std::vector<int> batch(order.begin() + at, order.begin() + at + bsz);
        Matrix xb = select_rows(train_feats, batch);
        Matrix eps = randn_matrix(noise_rng, bsz, latent);
        if (dp.enabled) {
          per_sample.clear();
          vae_loss_grad(vae, xb, eps, grad, &per_sample);
          ParamVector noised = dp_sgd_step(per_sample, dp, dp_rng);
          adam_step(vae.params, noised, st);
        } else {
          vae_loss_grad(vae, xb, eps, grad);
          adam_step(vae.params, grad, st);
        }
      }
    }
    protos[k] = make_prototypes(vae, train_feats,
                                std::min(cfg.proto_per_client, (int)c.train.size()),
                                splitmix64(seed ^ (0x9e3779b97f4a7c15ull * (k + 1))));
  }

  // 2) share prototypes
  AggregatedPrototypes agg = aggregate_and_broadcast(protos, art.ledger);

  // 3) federated VGAE on the original client subgraphs; the link predictor
  // always uses the symmetric-normalized adjacency, whatever the classifier
  std::vector<SparseMatrix> vgae_op((std::size_t)K);
  for (int k = 0; k < K; ++k) vgae_op[k] = gcn_norm_adj(clients[k].sub.g);
  VgaeModel vgae_init(d);
  Rng vg_rng = make_rng(seed, 0x9ae0, 0);
  vgae_init.init(vg_rng);
  std::vector<long long> ones((std::size_t)K, 1);
  FedConfig fc;
  fc.rounds = cfg.vgae_rounds;
  fc.local_epochs = 1;
  fc.weighted = false;  // uniform average for the link predictor
  fc.parallel = cfg.parallel_clients;
  ParamVector vgae_params = run_federated_training(
      vgae_init.params, ones, fc, art.ledger,
      [&](int k, int round, const ParamVector& global) {
        const ClientData& c = clients[k];
        VgaeModel local(d);
        local.params = global;
        if (c.sub.g.edges.empty()) {
          log_warn("vgae: client " + std::to_string(k) + " has no edges; skipping local step");
          return local.params;
        }
        Rng rng = make_rng(seed, 0x96ae ^ (std::uint64_t)round, (std::uint64_t)k);
        EdgeSample pairs = sample_edges(c.sub.g, 1.0, rng);
        Matrix eps = randn_matrix(rng, c.sub.g.n, local.cfg.latent);
        ParamVector grad = local.params.zeros_like();
        vgae_loss_grad(local, vgae_op[k], c.sub.g.features, pairs, eps, grad);
        AdamState st(local.params.size());
        adam_step(local.params, grad, st);
        return local.params;
      });
  VgaeModel vgae(d);
  vgae.params = std::move(vgae_params);

  // 4) augment every client with foreign prototypes
  art.augmented.resize((std::size_t)K);
  for (int k = 0; k < K; ++k) {
    Matrix foreign = agg.foreign_for(k);
    art.augmented[k] = predict_and_augment(clients[k].sub.g, foreign, vgae, cfg.edge_top_p);
  }
  return art;
}

}  // namespace pipe

// ---------------------------------------------------------------------------
// The three pipelines

template <class Model>
inline std::vector<RunRecord> run_pipeline_impl(const ExperimentConfig& cfg, Pipeline pipe_kind) {
  cfg.validate();
  Graph g = load_dataset(cfg);
  std::vector<RunRecord> records;

  for (std::uint64_t seed : cfg.seeds) {
    RoleMask roles = split_roles(g, cfg.train_frac, cfg.calib_frac, cfg.test_frac,
                                 cfg.valid_within_train, seed);
    // per-node uniform draws for the randomized scorers, keyed by global id
    std::vector<double> u_global((std::size_t)g.n);
    for (int v = 0; v < g.n; ++v)
      u_global[v] = make_rng(seed, 0xdecaf, (std::uint64_t)v).uniform();

    for (int K : cfg.clients) {
      auto t0 = std::chrono::steady_clock::now();
      Partition part = partition_graph(g, K, seed, cfg.imbalance);
      MissingEdgeReport cut = missing_edge_report(part, g);
      std::vector<pipe::ClientData> clients = pipe::build_clients<Model>(g, part, roles);

      CommsLedger ledger;
      std::vector<Matrix> logits((std::size_t)K);  // rows = real client nodes
      std::vector<double> loc_T((std::size_t)K, 1.0);

      if (pipe_kind == Pipeline::Loc) {
        for (int k = 0; k < K; ++k) {
          pipe::ClientData& c = clients[k];
          Model m(g.d, cfg.hidden, g.num_classes);
          Rng mr = make_rng(seed, 0xc1a55, (std::uint64_t)k);
          m.init(mr);
          if (c.train.empty()) {
            log_warn("loc: client " + std::to_string(k) + " has no training nodes");
          } else {
            for (int r = 0; r < cfg.rounds; ++r)
              pipe::train_round(m, c.op, c.sub.g, c.train, cfg.local_epochs);
          }
          logits[k] = m.forward(c.op, c.sub.g.features);
          if (!c.valid.empty()) {
            Matrix lv = select_rows(logits[k], c.valid);
            std::vector<int> yv;
            for (int i : c.valid) yv.push_back(c.sub.g.labels[i]);
            loc_T[k] = temperature_fit(lv, yv).T;
          }
        }
      } else {
        // fed and gen share the federated classifier; gen swaps in augmented
        // graphs (and their operators) first
        pipe::GenArtifacts art;
        std::vector<const Graph*> eval_graph((std::size_t)K);
        std::vector<SparseMatrix> eval_op((std::size_t)K);
        for (int k = 0; k < K; ++k) {
          eval_graph[k] = &clients[k].sub.g;
          eval_op[k] = clients[k].op;
        }
        if (pipe_kind == Pipeline::Gen) {
          art = pipe::run_generator(cfg, clients, g.d, seed);
          ledger = art.ledger;
          for (int k = 0; k < K; ++k) {
            eval_graph[k] = &art.augmented[k].g;
            eval_op[k] = pipe::make_operator<Model>(art.augmented[k].g);
          }
        }

        Model proto_model(g.d, cfg.hidden, g.num_classes);
        Rng pr = make_rng(seed, 0xc1a55, 0);
        proto_model.init(pr);
        std::vector<long long> n_k((std::size_t)K, 0);
        for (int k = 0; k < K; ++k) n_k[k] = (long long)clients[k].train.size();

        FedConfig fc;
        fc.rounds = cfg.rounds;
        fc.local_epochs = cfg.local_epochs;
        fc.weighted = true;
        fc.parallel = cfg.parallel_clients;
        ParamVector global = run_federated_training(
            proto_model.params, n_k, fc, ledger,
            [&](int k, int /*round*/, const ParamVector& gp) {
              Model m(g.d, cfg.hidden, g.num_classes);
              m.params = gp;
              pipe::train_round(m, eval_op[k], *eval_graph[k], clients[k].train,
                                cfg.local_epochs);
              return m.params;
            });

        Model m(g.d, cfg.hidden, g.num_classes);
        m.params = std::move(global);
        for (int k = 0; k < K; ++k) {
          Matrix full = m.forward(eval_op[k], eval_graph[k]->features);
          // prototype rows (if any) are dropped: scores and sets only ever
          // see real nodes
          logits[k] = Matrix(clients[k].sub.g.n, g.num_classes);
          for (int i = 0; i < logits[k].rows; ++i)
            std::copy(full.row(i), full.row(i) + g.num_classes, logits[k].row(i));
        }
        double T = pipe::average_temperature(m, clients, logits);
        for (int k = 0; k < K; ++k) loc_T[k] = T;
      }

      std::vector<Matrix> probs((std::size_t)K);
      for (int k = 0; k < K; ++k) probs[k] = scaled_probs(logits[k], loc_T[k]);

      auto t1 = std::chrono::steady_clock::now();
      double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

      // conformal sweep on the fixed probabilities
      for (const auto& score_name_str : cfg.scores) {
        ScoreConfig sc;
        sc.kind = score_from(score_name_str);
        sc.aps_randomized = cfg.aps_randomized;
        sc.raps_nu = cfg.raps_nu;
        sc.raps_k_reg = cfg.raps_k_reg;
        for (double alpha : cfg.alphas) {
          for (const auto& qm_str : cfg.qmethods) {
            QuantileMethod qm = qmethod_from(qm_str);
            RunRecord rec;
            rec.dataset = cfg.dataset;
            rec.seed = seed;
            rec.K = K;
            rec.pipeline = pipeline_name(pipe_kind);
            rec.model = cfg.model;
            rec.score = score_name_str;
            rec.alpha = alpha;
            rec.qmethod = qm_str;
            rec.delta_e_pct = cut.delta_e_pct;
            rec.scalars_comm = ledger.total();
            rec.wall_ms = wall_ms;

            if (pipe_kind == Pipeline::Loc) {
              // classical split CP per client, metrics averaged client-wise
              double cov = 0, ineff = 0, acc = 0, qsum = 0;
              int used = 0;
              for (int k = 0; k < K; ++k) {
                const pipe::ClientData& c = clients[k];
                if (c.calib.empty() || c.test.empty()) {
                  log_warn("loc: client " + std::to_string(k) +
                           " lacks calibration or test nodes; skipped in metrics");
                  continue;
                }
                ScoreSet ss;
                ss.K = 1;
                for (int i : c.calib)
                  ss.add(0, c.sub.global_id[i],
                         conformity_score(sc, probs[k].row(i), g.num_classes,
                                          c.sub.g.labels[i], u_global[c.sub.global_id[i]]));
                double qk = federated_quantile(ss, alpha, qm);
                Matrix ptest = select_rows(probs[k], c.test);
                std::vector<double> utest;
                std::vector<int> ytest;
                for (int i : c.test) {
                  utest.push_back(u_global[c.sub.global_id[i]]);
                  ytest.push_back(c.sub.g.labels[i]);
                }
                PredictionSet ps = build_sets(sc, ptest, qk, alpha, &utest);
                SetMetrics sm = set_metrics(ps, ytest);
                cov += sm.coverage;
                ineff += sm.inefficiency;
                acc += accuracy(probs[k], c.sub.g.labels, c.test);
                qsum += qk;
                used++;
              }
              if (used == 0) throw FederationError("loc: no client has usable splits");
              rec.coverage = cov / used;
              rec.inefficiency = ineff / used;
              rec.accuracy = acc / used;
              rec.qhat = qsum / used;
            } else {
              // federated CP: one threshold across participating clients
              ScoreSet ss;
              std::vector<int> participating;
              for (int k = 0; k < K; ++k)
                if (!clients[k].calib.empty()) participating.push_back(k);
              if (participating.empty()) throw FederationError("no client has calibration data");
              ss.K = (int)participating.size();
              for (int idx = 0; idx < (int)participating.size(); ++idx) {
                const pipe::ClientData& c = clients[participating[idx]];
                for (int i : c.calib)
                  ss.add(idx, c.sub.global_id[i],
                         conformity_score(sc, probs[participating[idx]].row(i), g.num_classes,
                                          c.sub.g.labels[i], u_global[c.sub.global_id[i]]));
              }
              rec.qhat = federated_quantile(ss, alpha, qm);

              double covered = 0, size_sum = 0;
              long long n_test = 0, correct = 0;
              for (int k = 0; k < K; ++k) {
                const pipe::ClientData& c = clients[k];
                if (c.test.empty()) continue;
                Matrix ptest = select_rows(probs[k], c.test);
                std::vector<double> utest;
                std::vector<int> ytest;
                for (int i : c.test) {
                  utest.push_back(u_global[c.sub.global_id[i]]);
                  ytest.push_back(c.sub.g.labels[i]);
                }
                PredictionSet ps = build_sets(sc, ptest, rec.qhat, alpha, &utest);
                for (std::size_t t = 0; t < ps.sets.size(); ++t) {
                  covered += std::binary_search(ps.sets[t].begin(), ps.sets[t].end(), ytest[t]);
                  size_sum += double(ps.sets[t].size());
                }
                for (std::size_t t = 0; t < ps.sets.size(); ++t) {
                  const double* row = ptest.row(int(t));
                  int best = 0;
                  for (int j = 1; j < g.num_classes; ++j)
                    if (row[j] > row[best]) best = j;
                  correct += (best == ytest[t]);
                }
                n_test += (long long)c.test.size();
              }
              if (n_test == 0) throw MetricsError("no test nodes in any client");
              rec.coverage = covered / double(n_test);
              rec.inefficiency = size_sum / double(n_test);
              rec.accuracy = double(correct) / double(n_test);
            }
            records.push_back(std::move(rec));
          }
        }
      }
    }
  }
  return records;
}

inline std::vector<RunRecord> run_pipeline(const ExperimentConfig& cfg, Pipeline pipe_kind) {
  if (cfg.model == "gcn") return run_pipeline_impl<GcnModel>(cfg, pipe_kind);
  if (cfg.model == "sage") return run_pipeline_impl<SageModel>(cfg, pipe_kind);
  throw ConfigError("config: model must be gcn|sage");
}

/// Percentage accuracy change of gen relative to fed, per (dataset, K),
/// matched on seeds.
struct AccuracyDelta {
  std::string dataset;
  int K = 0;
  double fed_acc = 0.0, gen_acc = 0.0, delta_pct = 0.0;
};

inline std::vector<AccuracyDelta> accuracy_report(const std::vector<RunRecord>& records) {
  // (dataset, K) -> seed -> accuracy, one per pipeline; records from sweeps
  // repeat accuracy across (alpha, score, qmethod), so collapse by seed first
  std::map<std::pair<std::string, int>, std::map<std::uint64_t, double>> fed, gen;
  for (const auto& r : records) {
    if (r.pipeline == "fed") fed[{r.dataset, r.K}][r.seed] = r.accuracy;
    if (r.pipeline == "gen") gen[{r.dataset, r.K}][r.seed] = r.accuracy;
  }
  std::vector<AccuracyDelta> out;
  for (const auto& [key, fseeds] : fed) {
    auto it = gen.find(key);
    if (it == gen.end()) continue;
    const auto& gseeds = it->second;
    std::vector<std::uint64_t> fkeys, gkeys;
    for (const auto& [s, _] : fseeds) fkeys.push_back(s);
    for (const auto& [s, _] : gseeds) gkeys.push_back(s);
    if (fkeys != gkeys)
      throw MetricsError("accuracy report: fed and gen cover different seed sets");
    double fa = 0, ga = 0;
    for (const auto& [_, a] : fseeds) fa += a;
    for (const auto& [_, a] : gseeds) ga += a;
    fa /= double(fseeds.size());
    ga /= double(gseeds.size());
    AccuracyDelta d;
    d.dataset = key.first;
    d.K = key.second;
    d.fed_acc = fa;
    d.gen_acc = ga;
    d.delta_pct = fa == 0.0 ? 0.0 : (ga - fa) / fa * 100.0;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace fedcp
