#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedcp/harness.hpp"

using namespace fedcp;

namespace {

struct TempDir {
  std::filesystem::path p;
  TempDir() {
    static int counter = 0;
    p = std::filesystem::temp_directory_path() /
        ("fedcp_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(p);
  }
  ~TempDir() { std::filesystem::remove_all(p); }
  std::string str() const { return p.string(); }
  std::string file(const std::string& name, const std::string& content) const {
    std::string path = (p / name).string();
    std::ofstream f(path);
    f << content;
    return path;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// small citation-flavored graph on disk, the shape the CLI consumes
std::string write_mini_dataset(const TempDir& dir) {
  detail::CitationRecipe r;
  r.n = 160;
  r.target_edges = 340;
  r.num_classes = 3;
  r.d = 24;
  r.communities = 4;
  r.purity = 0.8;
  r.spill = 0.15;
  r.label_noise = 0.05;
  r.build_seed = 77;
  Graph g = detail::build_citation_like(r);
  std::string sub = (dir.p / "mini").string();
  std::filesystem::create_directories(sub);
  write_graph(sub, g);
  return sub;
}

ExperimentConfig mini_config(const std::string& data_dir) {
  ExperimentConfig cfg;
  cfg.dataset = "mini";
  cfg.data_dir = data_dir;
  cfg.model = "gcn";
  cfg.hidden = 8;
  cfg.rounds = 6;
  cfg.clients = {2};
  cfg.seeds = {3};
  cfg.alphas = {0.1, 0.2};
  cfg.scores = {"aps", "lac"};
  cfg.qmethods = {"exact", "avg"};
  cfg.train_frac = 0.3;
  cfg.calib_frac = 0.4;
  cfg.test_frac = 0.3;
  cfg.valid_within_train = 0.2;
  cfg.imbalance = 0.1;
  cfg.proto_per_client = 2;
  cfg.vae_epochs = 3;
  cfg.vae_latent = 8;
  cfg.vae_batch = 16;
  cfg.vgae_rounds = 3;
  cfg.edge_top_p = 0.05;
  return cfg;
}

bool same_metrics(const RunRecord& a, const RunRecord& b) {
  return a.dataset == b.dataset && a.seed == b.seed && a.K == b.K && a.pipeline == b.pipeline &&
         a.model == b.model && a.score == b.score && a.qmethod == b.qmethod && a.alpha == b.alpha &&
         a.coverage == b.coverage && a.inefficiency == b.inefficiency &&
         a.accuracy == b.accuracy && a.qhat == b.qhat && a.delta_e_pct == b.delta_e_pct &&
         a.scalars_comm == b.scalars_comm;  // wall_ms deliberately excluded
}

const RunRecord& find_record(const std::vector<RunRecord>& recs, const std::string& score,
                             double alpha, const std::string& qm) {
  for (const auto& r : recs)
    if (r.score == score && r.alpha == alpha && r.qmethod == qm) return r;
  FAIL("no record for " + score + "/" + qm);
  return recs.front();
}

}  // namespace

TEST_CASE("config keys parse into the right fields") {
  ExperimentConfig cfg;
  config_set(cfg, "dataset", "citeseer");
  config_set(cfg, "model", "sage");
  config_set(cfg, "clients", "2, 5");
  config_set(cfg, "alphas", "0.05,0.1");
  config_set(cfg, "scores", "aps, raps");
  config_set(cfg, "qmethods", "exact,tdigest");
  config_set(cfg, "seeds", "7, 9");
  config_set(cfg, "rounds", "12");
  config_set(cfg, "imbalance", "0.2");
  config_set(cfg, "parallel_clients", "off");
  config_set(cfg, "aps_randomized", "yes");

  CHECK(cfg.dataset == "citeseer");
  CHECK(cfg.model == "sage");
  CHECK(cfg.clients == std::vector<int>{2, 5});
  CHECK(cfg.alphas == std::vector<double>{0.05, 0.1});
  CHECK(cfg.scores == std::vector<std::string>{"aps", "raps"});
  CHECK(cfg.qmethods == std::vector<std::string>{"exact", "tdigest"});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 9});
  CHECK(cfg.rounds == 12);
  CHECK(cfg.imbalance == 0.2);
  CHECK_FALSE(cfg.parallel_clients);
  CHECK(cfg.aps_randomized);

  // single-value aliases
  config_set(cfg, "alpha", "0.25");
  CHECK(cfg.alphas == std::vector<double>{0.25});
  config_set(cfg, "seed", "42");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{42});
  config_set(cfg, "quantile", "avg");
  CHECK(cfg.qmethods == std::vector<std::string>{"avg"});

  CHECK_THROWS_AS(config_set(cfg, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(config_set(cfg, "parallel_clients", "maybe"), ConfigError);
}

TEST_CASE("config file: comments, spacing, and error positions") {
  TempDir dir;
  std::string path = dir.file("run.cfg",
                              "# experiment sweep\n"
                              "dataset = citeseer\n"
                              "\n"
                              "clients = 2,4   # two sizes\n"
                              "alpha=0.1\n"
                              "  rounds = 9\n");
  ExperimentConfig cfg = parse_config_file(path);
  CHECK(cfg.dataset == "citeseer");
  CHECK(cfg.clients == std::vector<int>{2, 4});
  CHECK(cfg.alphas == std::vector<double>{0.1});
  CHECK(cfg.rounds == 9);

  CHECK_THROWS_AS(parse_config_file(dir.file("a.cfg", "rounds 9\n")), FormatError);
  CHECK_THROWS_AS(parse_config_file(dir.file("b.cfg", "rounds=abc\n")), FormatError);
  CHECK_THROWS_AS(parse_config_file(dir.file("c.cfg", "bogus=1\n")), ConfigError);
  CHECK_THROWS_AS(parse_config_file((dir.p / "missing.cfg").string()), IoError);

  try {
    parse_config_file(dir.file("d.cfg", "dataset=x\nrounds=abc\n"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("config validation rejects malformed sweeps") {
  ExperimentConfig cfg;
  cfg.data_dir = "unused";
  CHECK_NOTHROW(cfg.validate());

  auto broken = [&](auto mutate) {
    ExperimentConfig c = cfg;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  broken([](ExperimentConfig& c) { c.pipelines.clear(); });
  broken([](ExperimentConfig& c) { c.alphas = {1.5}; });
  broken([](ExperimentConfig& c) { c.alphas = {0.0}; });
  broken([](ExperimentConfig& c) { c.clients = {0}; });
  broken([](ExperimentConfig& c) { c.model = "mlp"; });
  broken([](ExperimentConfig& c) { c.pipelines = {"hub"}; });
  broken([](ExperimentConfig& c) { c.scores = {"entropy"}; });
  broken([](ExperimentConfig& c) { c.qmethods = {"median"}; });
  broken([](ExperimentConfig& c) { c.rounds = -1; });
  broken([](ExperimentConfig& c) { c.edge_top_p = 0.0; });
  broken([](ExperimentConfig& c) { c.train_frac = 0.5; });  // no longer sums to 1
}

TEST_CASE("summary csv: exact header and row formatting") {
  RunRecord r;
  r.dataset = "x";
  r.seed = 3;
  r.K = 2;
  r.pipeline = "fed";
  r.model = "gcn";
  r.score = "aps";
  r.alpha = 0.05;
  r.qmethod = "exact";
  r.coverage = 0.95;
  r.inefficiency = 1.5;
  r.accuracy = 0.7;
  r.qhat = 0.8;
  r.delta_e_pct = 12.5;
  r.scalars_comm = 42;
  r.wall_ms = 1.25;

  TempDir dir;
  std::string path = (dir.p / "summary.csv").string();
  write_summary_csv(path, {r});
  std::string text = slurp(path);
  CHECK(text ==
        "dataset,seed,K,pipeline,model,score,alpha,qmethod,coverage,inefficiency,accuracy,"
        "qhat,delta_e_pct,scalars_comm,wall_ms\n"
        "x,3,2,fed,gcn,aps,0.05,exact,0.950000,1.500000,0.700000,0.8,12.500000,42,1.250\n");

  CHECK_THROWS_AS(write_summary_csv(path, {}), ConfigError);
}

TEST_CASE("emit_outputs writes the figure files and dedups edge-cut rows") {
  RunRecord a;
  a.dataset = "x";
  a.seed = 1;
  a.K = 2;
  a.pipeline = "fed";
  a.model = "gcn";
  a.score = "aps";
  a.alpha = 0.1;
  a.qmethod = "exact";
  a.delta_e_pct = 10.0;
  RunRecord b = a;
  b.score = "lac";  // same (dataset, K, seed): must not add an edge-cut row
  RunRecord c = a;
  c.K = 4;
  c.delta_e_pct = 20.0;

  TempDir dir;
  emit_outputs(dir.str(), {a, b, c});
  CHECK(std::filesystem::exists(dir.p / "summary.csv"));

  std::string cut = slurp((dir.p / "fig_edge_cut.tsv").string());
  CHECK(cut ==
        "dataset\tK\tseed\tdelta_e_pct\n"
        "x\t2\t1\t10.000000\n"
        "x\t4\t1\t20.000000\n");

  std::string cov = slurp((dir.p / "fig_coverage.tsv").string());
  CHECK(std::count(cov.begin(), cov.end(), '\n') == 4);  // header + one per record
  CHECK(cov.find("x\t2\tfed\tlac\t0.1\texact\t1\t") != std::string::npos);

  std::string sz = slurp((dir.p / "fig_set_size.tsv").string());
  CHECK(std::count(sz.begin(), sz.end(), '\n') == 4);

  CHECK_THROWS_AS(emit_outputs(dir.str(), {}), ConfigError);
}

TEST_CASE("bundled datasets have pinned shapes") {
  Graph cora = synthetic_dataset("cora");
  CHECK(cora.n == 2485);
  CHECK((int)cora.edges.size() == 5069);
  CHECK(cora.num_classes == 7);
  CHECK(cora.d == 256);

  Graph cs = synthetic_dataset("citeseer");
  CHECK(cs.n == 2120);
  CHECK((int)cs.edges.size() == 3679);
  CHECK(cs.num_classes == 6);
  CHECK(cs.d == 256);

  CHECK_THROWS_AS(synthetic_dataset("pubmed"), ConfigError);
}

TEST_CASE("fed pipeline: sweep shape, metric ranges, determinism") {
  TempDir dir;
  ExperimentConfig cfg = mini_config(write_mini_dataset(dir));

  std::vector<RunRecord> recs = run_pipeline(cfg, Pipeline::Fed);
  REQUIRE(recs.size() == 8);  // 1 seed x 1 K x 2 scores x 2 alphas x 2 qmethods

  for (const auto& r : recs) {
    CHECK(r.dataset == "mini");
    CHECK(r.seed == 3);
    CHECK(r.K == 2);
    CHECK(r.pipeline == "fed");
    CHECK(r.model == "gcn");
    CHECK(r.coverage >= 0.0);
    CHECK(r.coverage <= 1.0);
    CHECK(r.inefficiency >= 0.0);
    CHECK(r.inefficiency <= 3.0);  // L = 3
    CHECK(r.accuracy > 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(std::isfinite(r.qhat));
    CHECK(r.delta_e_pct > 0.0);
    CHECK(r.delta_e_pct < 100.0);
    CHECK(r.scalars_comm > 0);
    CHECK(r.wall_ms >= 0.0);
  }
  // same partition for every record of the sweep
  for (const auto& r : recs) CHECK(r.delta_e_pct == recs[0].delta_e_pct);
  // finite-sample coverage stays near the target on a desk-sized test split
  for (const auto& r : recs) CHECK(r.coverage >= 1.0 - r.alpha - 0.15);

  std::vector<RunRecord> again = run_pipeline(cfg, Pipeline::Fed);
  REQUIRE(again.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(same_metrics(recs[i], again[i]));

  ExperimentConfig serial = cfg;
  serial.parallel_clients = false;
  std::vector<RunRecord> ser = run_pipeline(serial, Pipeline::Fed);
  REQUIRE(ser.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(same_metrics(recs[i], ser[i]));
}

TEST_CASE("single-client federation reproduces local training exactly") {
  TempDir dir;
  ExperimentConfig cfg = mini_config(write_mini_dataset(dir));
  cfg.clients = {1};

  std::vector<RunRecord> loc = run_pipeline(cfg, Pipeline::Loc);
  std::vector<RunRecord> fed = run_pipeline(cfg, Pipeline::Fed);
  REQUIRE(loc.size() == 8);
  REQUIRE(fed.size() == 8);
  for (const auto& lr : loc) {
    const RunRecord& fr = find_record(fed, lr.score, lr.alpha, lr.qmethod);
    CHECK(lr.coverage == fr.coverage);
    CHECK(lr.inefficiency == fr.inefficiency);
    CHECK(lr.accuracy == fr.accuracy);
    CHECK(lr.qhat == fr.qhat);
    CHECK(lr.delta_e_pct == 0.0);
    CHECK(fr.delta_e_pct == 0.0);
  }
  // a lone client exchanges parameters with the coordinator all the same
  CHECK(loc[0].scalars_comm == 0);
  CHECK(fed[0].scalars_comm > 0);
}

TEST_CASE("gen pipeline pays extra traffic for the same sweep") {
  TempDir dir;
  ExperimentConfig cfg = mini_config(write_mini_dataset(dir));

  std::vector<RunRecord> fed = run_pipeline(cfg, Pipeline::Fed);
  std::vector<RunRecord> gen = run_pipeline(cfg, Pipeline::Gen);
  REQUIRE(gen.size() == 8);
  for (const auto& gr : gen) {
    CHECK(gr.pipeline == "gen");
    CHECK(gr.coverage >= 0.0);
    CHECK(gr.coverage <= 1.0);
    CHECK(gr.inefficiency <= 3.0);
    CHECK(gr.accuracy > 0.0);
    CHECK(std::isfinite(gr.qhat));
    CHECK(gr.coverage >= 1.0 - gr.alpha - 0.15);
    const RunRecord& fr = find_record(fed, gr.score, gr.alpha, gr.qmethod);
    CHECK(gr.scalars_comm > fr.scalars_comm);  // prototypes + link model on top
    CHECK(gr.delta_e_pct == fr.delta_e_pct);   // same partition underneath
  }

  std::vector<AccuracyDelta> rep = accuracy_report([&] {
    std::vector<RunRecord> all = fed;
    all.insert(all.end(), gen.begin(), gen.end());
    return all;
  }());
  REQUIRE(rep.size() == 1);
  CHECK(rep[0].dataset == "mini");
  CHECK(rep[0].K == 2);
  CHECK(rep[0].fed_acc == fed[0].accuracy);
  CHECK(rep[0].gen_acc == gen[0].accuracy);
}

TEST_CASE("accuracy report averages seeds and demands matching sets") {
  auto mk = [](const std::string& pipe, std::uint64_t seed, double acc) {
    RunRecord r;
    r.dataset = "x";
    r.K = 2;
    r.pipeline = pipe;
    r.seed = seed;
    r.accuracy = acc;
    return r;
  };
  std::vector<RunRecord> recs = {mk("fed", 1, 0.5), mk("fed", 2, 0.7), mk("gen", 1, 0.6),
                                 mk("gen", 2, 0.8), mk("loc", 1, 0.1)};
  std::vector<AccuracyDelta> rep = accuracy_report(recs);
  REQUIRE(rep.size() == 1);
  CHECK(rep[0].fed_acc == Catch::Approx(0.6));
  CHECK(rep[0].gen_acc == Catch::Approx(0.7));
  CHECK(rep[0].delta_pct == Catch::Approx((0.7 - 0.6) / 0.6 * 100.0));

  recs.push_back(mk("fed", 3, 0.9));  // fed has a seed gen lacks
  CHECK_THROWS_AS(accuracy_report(recs), MetricsError);

  // fed-only records: nothing to compare, nothing reported
  std::vector<RunRecord> fed_only = {mk("fed", 1, 0.5)};
  CHECK(accuracy_report(fed_only).empty());
}

TEST_CASE("prototype augmentation repairs a hand-split two-block graph") {
  // split a two-community graph so every backbone edge lands on the cut,
  // then check the generator's bookkeeping, wiring, and end quality
  const int per = 60;
  Graph g = planted_two_block(per, 16, 0.06, 2);

  Partition part;
  part.K = 2;
  part.assignment.resize(g.n);
  for (int v = 0; v < g.n; ++v) part.assignment[v] = v % 2;
  for (auto [u, v] : g.edges)
    if (part.assignment[u] != part.assignment[v]) part.cut_edges.push_back({u, v});
  for (int k = 0; k < 2; ++k) {
    std::vector<int> nodes;
    for (int v = 0; v < g.n; ++v)
      if (part.assignment[v] == k) nodes.push_back(v);
    part.client_graphs.push_back(induced_subgraph(g, nodes));
  }
  REQUIRE(part.cut_edges.size() > g.edges.size() / 2);  // parity split severs the backbone

  ExperimentConfig cfg;
  cfg.hidden = 16;
  cfg.rounds = 15;
  cfg.proto_per_client = 4;
  cfg.vae_epochs = 10;
  cfg.vae_latent = 8;
  cfg.vae_batch = 16;
  cfg.vgae_rounds = 10;
  cfg.edge_top_p = 0.05;

  auto train_and_score = [&](std::uint64_t seed, std::vector<pipe::ClientData>& clients,
                             const std::vector<const Graph*>& graphs,
                             const std::vector<SparseMatrix>& ops) {
    std::vector<long long> n_k = {(long long)clients[0].train.size(),
                                  (long long)clients[1].train.size()};
    GcnModel m(g.d, cfg.hidden, g.num_classes);
    Rng pr = make_rng(seed, 0xc1a55, 0);
    m.init(pr);
    FedConfig fc;
    fc.rounds = cfg.rounds;
    fc.local_epochs = 1;
    CommsLedger ledger;
    ParamVector global = run_federated_training(
        m.params, n_k, fc, ledger, [&](int k, int, const ParamVector& gp) {
          GcnModel lm(g.d, cfg.hidden, g.num_classes);
          lm.params = gp;
          pipe::train_round(lm, ops[k], *graphs[k], clients[k].train, 1);
          return lm.params;
        });
    GcnModel fin(g.d, cfg.hidden, g.num_classes);
    fin.params = std::move(global);
    long long hit = 0, tot = 0;
    for (int k = 0; k < 2; ++k) {
      Matrix full = fin.forward(ops[k], graphs[k]->features);
      for (int i : clients[k].test) {
        const double* row = full.row(i);
        int best = 0;
        for (int j = 1; j < g.num_classes; ++j)
          if (row[j] > row[best]) best = j;
        hit += (best == clients[k].sub.g.labels[i]);
        tot++;
      }
    }
    return double(hit) / double(tot);
  };

  double fed_sum = 0.0, gen_sum = 0.0;
  for (std::uint64_t seed : {5ull, 7ull, 11ull}) {
    RoleMask roles = split_roles(g, 0.3, 0.3, 0.4, 0.2, seed);
    auto clients = pipe::build_clients<GcnModel>(g, part, roles);

    std::vector<const Graph*> fg = {&clients[0].sub.g, &clients[1].sub.g};
    std::vector<SparseMatrix> fo = {clients[0].op, clients[1].op};
    fed_sum += train_and_score(seed, clients, fg, fo);

    pipe::GenArtifacts art = pipe::run_generator(cfg, clients, g.d, seed);

    // every client gains exactly the other's prototypes, features in [0, 1]
    for (int k = 0; k < 2; ++k) {
      const AugmentedSubgraph& aug = art.augmented[k];
      CHECK(aug.n_real == clients[k].sub.g.n);
      CHECK(aug.g.n == clients[k].sub.g.n + cfg.proto_per_client);
      CHECK(aug.g.num_classes == g.num_classes);
      for (int pr = aug.n_real; pr < aug.g.n; ++pr) {
        CHECK(aug.g.labels[pr] == 0);
        for (int j = 0; j < aug.g.d; ++j) {
          CHECK(aug.g.features(pr, j) >= 0.0);
          CHECK(aug.g.features(pr, j) <= 1.0);
        }
      }
      // originals kept, every new edge touches a prototype node
      std::set<std::pair<int, int>> have(aug.g.edges.begin(), aug.g.edges.end());
      for (auto e : clients[k].sub.g.edges) CHECK(have.count(e) == 1);
      std::size_t extra = 0;
      for (auto [u, v] : aug.g.edges)
        if (u >= aug.n_real || v >= aug.n_real) {
          ++extra;
          CHECK(std::max(u, v) >= aug.n_real);
        }
      CHECK(extra == aug.added.size());
      long long pairs = (long long)cfg.proto_per_client * clients[k].sub.g.n;
      CHECK((long long)aug.added.size() == (long long)std::ceil(cfg.edge_top_p * pairs - 1e-9));
    }
    // prototype exchange: every client uploads M x d once, mirrored back down
    long long proto_scalars = 2ll * cfg.proto_per_client * g.d;
    CHECK(art.ledger.proto.up == proto_scalars);
    CHECK(art.ledger.proto.down == proto_scalars);
    CHECK(art.ledger.model.total() > 0);  // the link model trained federated

    std::vector<const Graph*> gg = {&art.augmented[0].g, &art.augmented[1].g};
    std::vector<SparseMatrix> go = {gcn_norm_adj(art.augmented[0].g),
                                    gcn_norm_adj(art.augmented[1].g)};
    gen_sum += train_and_score(seed, clients, gg, go);
  }
  // augmentation must hold its ground on a graph whose cut it was built to
  // patch; at this scale the mean effect is small, so the bound is one-sided
  CHECK(fed_sum / 3 > 0.5);
  CHECK(gen_sum / 3 >= fed_sum / 3 - 0.10);
}
