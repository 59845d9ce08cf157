#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "anomo/experiment.hpp"

using namespace anomo;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    dir_ = fs::temp_directory_path() / ("anomo_cli_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(dir_);
  }
  ~TempDir() { fs::remove_all(dir_); }
  fs::path path() const { return dir_; }

 private:
  fs::path dir_;
};

ExperimentConfig small_config(const fs::path& out, ScenarioKind kind = ScenarioKind::RateIncrease) {
  ExperimentConfig cfg;
  cfg.scenario.node_count = 6;
  cfg.scenario.interior_count = 2;
  cfg.scenario.edges_per_interior = 5;
  cfg.scenario.seed = 42;
  cfg.scenario.kind = kind;
  cfg.trials = 6;
  cfg.windows = 25;
  cfg.fractions = {0.0, 0.25};
  cfg.anomaly_coin = 0.5;
  cfg.methods = {Method::MreHp, Method::Mlem, Method::Oracle};
  cfg.output_dir = out.string();
  cfg.jobs = 2;
  return cfg;
}

// Deterministic directory fingerprint: sorted relative paths + file bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    out[fs::relative(entry.path(), root).string()] = io::read_file(entry.path());
  }
  return out;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(ANOMO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

}  // namespace

TEST(Simulate, DeterministicByteIdenticalOutputs) {
  TempDir a, b;
  ExperimentConfig ca = small_config(a.path() / "out");
  ExperimentConfig cb = small_config(b.path() / "out");
  run_simulate(ca);
  run_simulate(cb);
  auto sa = snapshot(a.path() / "out"), sb = snapshot(b.path() / "out");
  // outputDir differs inside manifest/config copies; compare everything else.
  sa.erase("manifest.json");
  sb.erase("manifest.json");
  EXPECT_EQ(sa, sb);
}

TEST(Simulate, LabelCoinProducesBothClasses) {
  TempDir tmp;
  ExperimentConfig cfg = small_config(tmp.path() / "out");
  cfg.trials = 30;
  cfg.fractions = {0.0};
  run_simulate(cfg);
  ExperimentPaths paths(cfg.output_dir);
  int positives = 0;
  for (int t = 0; t < cfg.trials; ++t)
    positives += read_trial_meta(paths.trial_dir(t) / "trial.json").anomalous ? 1 : 0;
  EXPECT_GT(positives, 5);
  EXPECT_LT(positives, 25);
}

TEST(Simulate, HiddenNodeArtifactsHaveWiderTruth) {
  TempDir tmp;
  ExperimentConfig cfg = small_config(tmp.path() / "out", ScenarioKind::HiddenNode);
  cfg.trials = 2;
  run_simulate(cfg);
  ExperimentPaths paths(cfg.output_dir);
  TrialMeta meta = read_trial_meta(paths.trial_dir(0) / "trial.json");
  EXPECT_EQ(meta.truth_dim, 7);
  EXPECT_EQ(meta.known_nodes, 6);
  ObservationSet obs = io::read_observations(paths.obs_dir(0, 0.0));
  EXPECT_EQ(obs.node_count, 6);
}

TEST(FitTestRoc, EndToEndTablesAndRestartability) {
  TempDir tmp;
  ExperimentConfig cfg = small_config(tmp.path() / "out");
  run_simulate(cfg);
  run_fit(cfg);
  run_test(cfg);
  run_roc(cfg);
  ExperimentPaths paths(cfg.output_dir);

  // Accuracy table: exact formula (#TP + #TN) / #Trials per method/fraction.
  io::CsvTable acc = io::read_csv(paths.results_dir() / "accuracy.csv",
                                  "method,fraction,accuracy,tp,tn,fp,fn");
  ASSERT_EQ(acc.rows.size(), 4u);  // 2 test methods x 2 fractions
  for (const auto& row : acc.rows) {
    int tp = static_cast<int>(io::parse_int(row[3])), tn = static_cast<int>(io::parse_int(row[4]));
    int fp = static_cast<int>(io::parse_int(row[5])), fn = static_cast<int>(io::parse_int(row[6]));
    EXPECT_EQ(tp + tn + fp + fn, cfg.trials);
    EXPECT_DOUBLE_EQ(io::parse_double(row[2]), static_cast<double>(tp + tn) / cfg.trials);
  }

  // Fit summaries exist for ORACLE too, with CRLB-scale MSE.
  io::json fit_summary = io::json::parse(io::read_file(paths.results_dir() / "fit_summary.json"));
  EXPECT_GT(fit_summary.at("ORACLE").at("f0.0000").at("meanMse").get<double>(), 0.0);

  // ROC outputs parse and carry an AUC.
  io::json summary = io::json::parse(io::read_file(paths.results_dir() / "summary.json"));
  double auc = summary.at("MRE-HP").at("f0.2500").at("auc").get<double>();
  EXPECT_GE(auc, 0.0);
  EXPECT_LE(auc, 1.0);

  // Restartability: drop some artifacts, rerun, aggregates are byte-identical.
  std::string acc_before = io::read_file(paths.results_dir() / "accuracy.csv");
  std::string mse_before = io::read_file(paths.results_dir() / "mse.csv");
  fs::remove_all(paths.fit_dir("MRE-HP", 1, 0.25));
  fs::remove_all(paths.trial_dir(3));
  run_simulate(cfg);
  run_fit(cfg);
  run_test(cfg);
  EXPECT_EQ(io::read_file(paths.results_dir() / "accuracy.csv"), acc_before);
  EXPECT_EQ(io::read_file(paths.results_dir() / "mse.csv"), mse_before);
}

TEST(FitTestRoc, ReconstructedStatisticsMatchInProcessFits) {
  TempDir tmp;
  ExperimentConfig cfg = small_config(tmp.path() / "out");
  cfg.trials = 3;
  cfg.fractions = {0.25};
  run_simulate(cfg);
  run_fit(cfg);
  ExperimentPaths paths(cfg.output_dir);
  for (int t = 0; t < cfg.trials; ++t) {
    TrialData d = load_trial(paths, t);
    ObservationSet obs = io::read_observations(paths.obs_dir(t, 0.25));
    MreSolution mre = solve_mre(build_constraints(obs, d.fmap_known), d.lambda0);
    ModelFit direct = run_em(obs, d.lambda0, d.fmap_known, Variant::Hier, mre.rates, InitKind::Mre, cfg.em);
    ModelFit rebuilt = reconstruct_fit(paths, cfg, Method::MreHp, t, 0.25);
    EXPECT_TRUE(direct.lambda_hat == rebuilt.lambda_hat);
    double psi_direct = psi_statistic(direct, d.lambda0);
    double psi_rebuilt = psi_statistic(rebuilt, d.lambda0);
    if (std::isinf(psi_direct))
      EXPECT_TRUE(std::isinf(psi_rebuilt));
    else
      EXPECT_DOUBLE_EQ(psi_direct, psi_rebuilt);
  }
}

TEST(CliBinary, SubcommandsRunEndToEnd) {
  TempDir tmp;
  ExperimentConfig cfg = small_config(tmp.path() / "out");
  cfg.trials = 4;
  cfg.fractions = {0.25};
  io::write_file(tmp.path() / "config.json", config_to_json(cfg).dump(2) + "\n");
  std::string base = "--config " + (tmp.path() / "config.json").string();
  ASSERT_EQ(run_cli("simulate " + base), 0);
  ASSERT_EQ(run_cli("fit " + base + " --jobs 2"), 0);
  ASSERT_EQ(run_cli("test " + base), 0);
  ASSERT_EQ(run_cli("roc " + base), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "out" / "results" / "accuracy.csv"));
  EXPECT_TRUE(fs::exists(tmp.path() / "out" / "results" / "summary.json"));
  EXPECT_NE(run_cli("simulate --config /nonexistent.json"), 0);
}

TEST(Ingest, SingleRecordProducesExpectedSums) {
  TempDir tmp;
  io::write_file(tmp.path() / "edges.csv", "t,src,dst,count\n0,a,b,5\n");
  IngestOptions opt;
  opt.edges_csv = (tmp.path() / "edges.csv").string();
  opt.out_dir = (tmp.path() / "out").string();
  IngestReport rep = run_ingest(opt);
  EXPECT_EQ(rep.nodes, 2);
  EXPECT_EQ(rep.windows, 1);
  ObservationSet obs = io::read_observations(tmp.path() / "out" / "observations");
  EXPECT_EQ(obs.row_sums[0], (std::vector<std::int64_t>{5, 0}));
  EXPECT_EQ(obs.col_sums[0], (std::vector<std::int64_t>{0, 5}));
}

TEST(Ingest, IdenticalWindowsGiveIdenticalRows) {
  TempDir tmp;
  io::write_file(tmp.path() / "edges.csv",
                 "t,src,dst,count\n0,a,b,3\n0,b,c,2\n1,a,b,3\n1,b,c,2\n");
  io::write_file(tmp.path() / "fm.json", "[[[\"a\",\"b\"],[\"b\",\"c\"]]]\n");
  IngestOptions opt;
  opt.edges_csv = (tmp.path() / "edges.csv").string();
  opt.flowmap_file = (tmp.path() / "fm.json").string();
  opt.out_dir = (tmp.path() / "out").string();
  run_ingest(opt);
  ObservationSet obs = io::read_observations(tmp.path() / "out" / "observations");
  ASSERT_EQ(obs.windows, 2);
  EXPECT_EQ(obs.row_sums[0], obs.row_sums[1]);
  EXPECT_EQ(obs.col_sums[0], obs.col_sums[1]);
  EXPECT_EQ(obs.flows[0], obs.flows[1]);
  EXPECT_EQ(obs.flows[0][0], 5);
}

TEST(Ingest, WindowWidthAggregatesAndBaselineEstimation) {
  TempDir tmp;
  io::write_file(tmp.path() / "edges.csv",
                 "t,src,dst,count\n100,a,b,1\n101,a,b,2\n102,a,b,4\n103,a,b,8\n");
  IngestOptions opt;
  opt.edges_csv = (tmp.path() / "edges.csv").string();
  opt.out_dir = (tmp.path() / "out").string();
  opt.window_width = 2;
  opt.baseline_windows = 1;
  run_ingest(opt);
  ObservationSet obs = io::read_observations(tmp.path() / "out" / "observations");
  ASSERT_EQ(obs.windows, 2);
  EXPECT_EQ(obs.row_sums[0][0], 3);   // windows [100,102) and [102,104)
  EXPECT_EQ(obs.row_sums[1][0], 12);
  Matrix lambda0 = io::read_rate_csv(tmp.path() / "out" / "lambda0.csv", 2);
  EXPECT_DOUBLE_EQ(lambda0(0, 1), 3.0);  // mean of the first window only
}

TEST(Ingest, TaxiStyleNodeCoverageFlowmap) {
  TempDir tmp;
  std::ostringstream edges;
  edges << "t,src,dst,count\n";
  Rng rng(3);
  for (int t = 0; t < 4; ++t)
    for (int i = 0; i < 18; ++i)
      for (int j = 0; j < 18; ++j)
        if (i != j && rng.uniform() < 0.3)
          edges << t << ",n" << i << ",n" << j << ',' << (1 + rng.uniform_int(5)) << '\n';
  io::write_file(tmp.path() / "edges.csv", edges.str());
  IngestOptions opt;
  opt.edges_csv = (tmp.path() / "edges.csv").string();
  opt.out_dir = (tmp.path() / "out").string();
  opt.interior_count = 10;
  opt.node_fraction = 0.7;
  opt.seed = 9;
  IngestReport rep = run_ingest(opt);
  EXPECT_EQ(rep.nodes, 18);
  FlowMap fm = io::read_flowmap_json(tmp.path() / "out" / "flowmap.json");
  ASSERT_EQ(fm.flow_count(), 10);
  for (const auto& set : fm.edge_sets) {
    std::set<int> sources;
    for (const Edge& e : set) sources.insert(e.src);
    EXPECT_EQ(sources.size(), 13u);  // ceil(0.7 * 18)
  }
}

TEST(Ingest, StrictAbortsLenientSkipsWithLineNumbers) {
  TempDir tmp;
  io::write_file(tmp.path() / "edges.csv",
                 "t,src,dst,count\n0,a,b,2\n0,a,a,1\n0,a,b,-3\nbroken line\n0,b,a,1\n");
  IngestOptions opt;
  opt.edges_csv = (tmp.path() / "edges.csv").string();
  opt.out_dir = (tmp.path() / "out").string();
  IngestReport rep = run_ingest(opt);
  EXPECT_EQ(rep.rows, 2);
  EXPECT_EQ(rep.skipped, 3);
  ASSERT_EQ(rep.issues.size(), 3u);
  EXPECT_NE(rep.issues[0].find(":3:"), std::string::npos);  // line numbers reported
  EXPECT_NE(rep.issues[1].find(":4:"), std::string::npos);
  EXPECT_NE(rep.issues[2].find(":5:"), std::string::npos);
  opt.strict = true;
  opt.out_dir = (tmp.path() / "out2").string();
  EXPECT_THROW(run_ingest(opt), std::runtime_error);
}

TEST(Ingest, UnknownNodeAgainstBaselineUniverse) {
  TempDir tmp;
  io::write_file(tmp.path() / "edges.csv", "t,src,dst,count\n0,a,b,2\n0,a,z,7\n");
  io::write_file(tmp.path() / "base.csv", "src,dst,rate\na,b,1.5\nb,a,0.5\n");
  IngestOptions opt;
  opt.edges_csv = (tmp.path() / "edges.csv").string();
  opt.baseline_csv = (tmp.path() / "base.csv").string();
  opt.out_dir = (tmp.path() / "out").string();
  IngestReport rep = run_ingest(opt);
  EXPECT_EQ(rep.rows, 1);
  EXPECT_EQ(rep.skipped, 1);
  Matrix lambda0 = io::read_rate_csv(tmp.path() / "out" / "lambda0.csv", 2);
  EXPECT_DOUBLE_EQ(lambda0(0, 1), 1.5);
  EXPECT_DOUBLE_EQ(lambda0(1, 0), 0.5);
}
