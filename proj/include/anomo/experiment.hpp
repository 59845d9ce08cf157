#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "anomo/anomtest.hpp"
#include "anomo/hpem.hpp"
#include "anomo/io.hpp"
#include "anomo/mre.hpp"
#include "anomo/netsim.hpp"

namespace anomo {

inline constexpr const char* kVersion = "anomo 0.1.0";

enum class Method { MreHp, RandHp, Mlem, Oracle };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::MreHp: return "MRE-HP";
    case Method::RandHp: return "Rand-HP";
    case Method::Mlem: return "MLEM";
    default: return "ORACLE";
  }
}

inline Method method_from_string(const std::string& s) {
  if (s == "MRE-HP") return Method::MreHp;
  if (s == "Rand-HP") return Method::RandHp;
  if (s == "MLEM") return Method::Mlem;
  if (s == "ORACLE") return Method::Oracle;
  throw std::invalid_argument("unknown method: " + s);
}

struct ExperimentConfig {
  ScenarioSpec scenario;
  int trials = 200;
  int windows = 100;                     // T
  std::vector<double> fractions = {0.2};
  double alpha = 0.05;
  double anomaly_coin = 0.5;             // probability a trial carries anomalous activity
  EmConfig em;
  std::vector<Method> methods = {Method::MreHp, Method::RandHp, Method::Mlem, Method::Oracle};
  std::string output_dir;
  int jobs = 0;  // 0 = hardware concurrency

  void validate() const {
    scenario.validate();
    if (trials < 1) throw std::invalid_argument("ExperimentConfig: trials must be >= 1");
    if (windows < 1) throw std::invalid_argument("ExperimentConfig: windows must be >= 1");
    if (methods.empty()) throw std::invalid_argument("ExperimentConfig: methods must be nonempty");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ExperimentConfig: alpha not in (0,1)");
    for (double f : fractions)
      if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("ExperimentConfig: fraction not in [0,1]");
    if (fractions.empty()) throw std::invalid_argument("ExperimentConfig: fractions must be nonempty");
  }
};

inline io::json em_to_json(const EmConfig& em) {
  io::json j;
  j["tol"] = em.tol;
  j["maxIter"] = em.max_iter;
  j["epsMin"] = em.eps_min;
  j["epsMax"] = em.eps_max;
  j["fixedEpsilon"] = em.fixed_epsilon;
  j["strictThreeT"] = em.strict_three_t;
  j["pinnedOnce"] = em.pinned_once;
  j["pruneTol"] = em.prune_tol;
  j["collapseBand"] = em.collapse_band;
  j["ascentSlack"] = em.ascent_slack;
  return j;
}

inline EmConfig em_from_json(const io::json& j) {
  EmConfig em;
  em.tol = j.value("tol", em.tol);
  em.max_iter = j.value("maxIter", em.max_iter);
  em.eps_min = j.value("epsMin", em.eps_min);
  em.eps_max = j.value("epsMax", em.eps_max);
  em.fixed_epsilon = j.value("fixedEpsilon", em.fixed_epsilon);
  em.strict_three_t = j.value("strictThreeT", em.strict_three_t);
  em.pinned_once = j.value("pinnedOnce", em.pinned_once);
  em.prune_tol = j.value("pruneTol", em.prune_tol);
  em.collapse_band = j.value("collapseBand", em.collapse_band);
  em.ascent_slack = j.value("ascentSlack", em.ascent_slack);
  return em;
}

inline io::json scenario_to_json(const ScenarioSpec& s) {
  io::json j;
  j["nodeCount"] = s.node_count;
  j["interiorCount"] = s.interior_count;
  j["edgesPerInterior"] = s.edges_per_interior;
  j["edgeProb"] = s.edge_prob;
  j["baselineShape"] = s.baseline_shape;
  j["baselineRate"] = s.baseline_rate;
  j["anomalyProb"] = s.anomaly_prob;
  j["anomalyShape"] = s.anomaly_shape;
  j["anomalyRate"] = s.anomaly_rate;
  j["kind"] = to_string(s.kind);
  j["seed"] = s.seed;
  return j;
}

inline ScenarioSpec scenario_from_json(const io::json& j) {
  ScenarioSpec s;
  s.node_count = j.value("nodeCount", s.node_count);
  s.interior_count = j.value("interiorCount", s.interior_count);
  s.edges_per_interior = j.value("edgesPerInterior", s.edges_per_interior);
  s.edge_prob = j.value("edgeProb", s.edge_prob);
  s.baseline_shape = j.value("baselineShape", s.baseline_shape);
  s.baseline_rate = j.value("baselineRate", s.baseline_rate);
  s.anomaly_prob = j.value("anomalyProb", s.anomaly_prob);
  s.anomaly_shape = j.value("anomalyShape", s.anomaly_shape);
  s.anomaly_rate = j.value("anomalyRate", s.anomaly_rate);
  s.kind = scenario_kind_from_string(j.value("kind", std::string("rate-increase")));
  s.seed = j.value("seed", s.seed);
  return s;
}

inline io::json config_to_json(const ExperimentConfig& c) {
  io::json j;
  j["scenario"] = scenario_to_json(c.scenario);
  j["trials"] = c.trials;
  j["windows"] = c.windows;
  j["fractions"] = c.fractions;
  j["alpha"] = c.alpha;
  j["anomalyCoin"] = c.anomaly_coin;
  j["em"] = em_to_json(c.em);
  io::json methods = io::json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["outputDir"] = c.output_dir;
  j["jobs"] = c.jobs;
  return j;
}

inline ExperimentConfig config_from_json(const io::json& j) {
  ExperimentConfig c;
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  c.trials = j.value("trials", c.trials);
  c.windows = j.value("windows", c.windows);
  if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<double>>();
  c.alpha = j.value("alpha", c.alpha);
  c.anomaly_coin = j.value("anomalyCoin", c.anomaly_coin);
  if (j.contains("em")) c.em = em_from_json(j.at("em"));
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  c.output_dir = j.value("outputDir", c.output_dir);
  c.jobs = j.value("jobs", c.jobs);
  return c;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  std::string dump = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// Work pool over [0, n); worker count never changes results because every
// item derives its own random streams.
template <class F>
inline void parallel_for(int n, int jobs, F&& f) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (int w = 0; w < jobs; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

struct ExperimentPaths {
  io::fs::path root;
  explicit ExperimentPaths(const std::string& dir) : root(dir) {}

  io::fs::path manifest() const { return root / "manifest.json"; }
  io::fs::path trial_dir(int t) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trial_%04d", t);
    return root / "trials" / buf;
  }
  static std::string frac_name(double f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "f%.4f", f);
    return buf;
  }
  io::fs::path obs_dir(int t, double f) const { return trial_dir(t) / frac_name(f); }
  io::fs::path fit_dir(const char* method, int t, double f) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trial_%04d", t);
    return root / "fits" / method / buf / frac_name(f);
  }
  io::fs::path results_dir() const { return root / "results"; }
};

struct TrialMeta {
  bool anomalous = false;
  int truth_dim = 0;
  int known_nodes = 0;
  std::uint64_t trial_seed = 0;
};

inline void write_trial_meta(const io::fs::path& p, const TrialMeta& m) {
  io::json j;
  j["anomalous"] = m.anomalous;
  j["truthDim"] = m.truth_dim;
  j["knownNodes"] = m.known_nodes;
  j["trialSeed"] = m.trial_seed;
  io::write_file(p, j.dump(2) + "\n");
}

inline TrialMeta read_trial_meta(const io::fs::path& p) {
  io::json j = io::json::parse(io::read_file(p));
  TrialMeta m;
  m.anomalous = j.at("anomalous").get<bool>();
  m.truth_dim = j.at("truthDim").get<int>();
  m.known_nodes = j.at("knownNodes").get<int>();
  m.trial_seed = j.at("trialSeed").get<std::uint64_t>();
  return m;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline void run_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentPaths paths(cfg.output_dir);
  io::fs::create_directories(paths.root);
  {
    io::json manifest;
    manifest["version"] = kVersion;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016" PRIx64, config_hash(cfg));
    manifest["configHash"] = hash;
    manifest["config"] = config_to_json(cfg);
    io::write_file(paths.manifest(), manifest.dump(2) + "\n");
    io::write_scenario_kv(paths.root / "scenario.cfg", cfg.scenario);
  }

  parallel_for(cfg.trials, cfg.jobs, [&](int trial) {
    io::fs::path dir = paths.trial_dir(trial);
    if (io::fs::exists(dir / "trial.json")) return;  // restartable

    std::uint64_t trial_seed = Rng::derive(cfg.scenario.seed, static_cast<std::uint64_t>(trial));
    ScenarioSpec spec = cfg.scenario;
    spec.seed = trial_seed;
    bool anomalous = Rng(Rng::derive(trial_seed, 5)).uniform() < cfg.anomaly_coin;

    Matrix lambda0, truth;
    int truth_dim;
    if (spec.kind == ScenarioKind::RateIncrease) {
      lambda0 = gen_baseline(spec);
      truth = anomalous ? apply_rate_anomalies(lambda0, spec) : lambda0;
      truth_dim = spec.node_count;
    } else {
      HiddenNodeNetwork net = apply_hidden_node(spec);
      lambda0 = net.baseline;
      truth_dim = spec.node_count + 1;
      if (anomalous) {
        truth = net.truth;
      } else {
        // Silent hidden node: same dimensions, no hidden traffic.
        truth = Matrix(truth_dim);
        for (int i = 0; i < spec.node_count; ++i)
          for (int j = 0; j < spec.node_count; ++j) truth(i, j) = net.baseline(i, j);
      }
    }
    FlowMap fmap = gen_flowmap(truth_dim, spec.interior_count, spec.edges_per_interior,
                               Rng::derive(trial_seed, 10));
    auto traffic = sample_traffic(truth, cfg.windows, Rng::derive(trial_seed, 11));

    io::write_scenario_kv(dir / "scenario.cfg", spec);
    io::write_rate_csv(dir / "baseline.csv", lambda0);
    io::write_rate_csv(dir / "truth.csv", truth);
    io::write_flowmap_json(dir / "flowmap.json", fmap);
    io::write_traffic_csv(dir / "traffic.csv", traffic);
    std::uint64_t pi_stream = Rng::derive(trial_seed, 12);
    for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
      ObservationSet obs = observe(traffic, fmap, spec.node_count, cfg.fractions[fi],
                                   Rng::derive(pi_stream, fi));
      io::write_observations(paths.obs_dir(trial, cfg.fractions[fi]), obs);
    }
    TrialMeta meta{anomalous, truth_dim, spec.node_count, trial_seed};
    write_trial_meta(dir / "trial.json", meta);  // written last: completion marker
  });
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct TrialData {
  TrialMeta meta;
  ScenarioSpec spec;
  Matrix lambda0;
  Matrix truth;       // truth_dim x truth_dim
  Matrix truth_known; // known-node submatrix, the estimand
  FlowMap fmap_full;
  FlowMap fmap_known;
};

inline TrialData load_trial(const ExperimentPaths& paths, int trial) {
  io::fs::path dir = paths.trial_dir(trial);
  TrialData d;
  d.meta = read_trial_meta(dir / "trial.json");
  d.spec = io::read_scenario_kv(dir / "scenario.cfg");
  d.lambda0 = io::read_rate_csv(dir / "baseline.csv", d.meta.known_nodes);
  d.truth = io::read_rate_csv(dir / "truth.csv", d.meta.truth_dim);
  d.truth_known = Matrix(d.meta.known_nodes);
  for (int i = 0; i < d.meta.known_nodes; ++i)
    for (int j = 0; j < d.meta.known_nodes; ++j) d.truth_known(i, j) = d.truth(i, j);
  d.fmap_full = io::read_flowmap_json(dir / "flowmap.json");
  d.fmap_known = d.fmap_full.restricted_to(d.meta.known_nodes);
  return d;
}

inline ExperimentConfig load_manifest_config(const ExperimentPaths& paths) {
  io::json manifest = io::json::parse(io::read_file(paths.manifest()));
  ExperimentConfig cfg = config_from_json(manifest.at("config"));
  cfg.output_dir = paths.root.string();
  return cfg;
}

inline void run_fit(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentPaths paths(cfg.output_dir);
  struct Item {
    Method method;
    int trial;
    double fraction;
  };
  std::vector<Item> items;
  for (Method m : cfg.methods)
    for (int t = 0; t < cfg.trials; ++t)
      for (double f : cfg.fractions) items.push_back({m, t, f});

  parallel_for(static_cast<int>(items.size()), cfg.jobs, [&](int idx) {
    const Item& item = items[idx];
    const char* mname = to_string(item.method);
    io::fs::path fdir = paths.fit_dir(mname, item.trial, item.fraction);
    if (io::fs::exists(fdir / "fit.json")) return;  // restartable

    io::json out;
    out["method"] = mname;
    out["trial"] = item.trial;
    out["fraction"] = item.fraction;
    try {
      TrialData d = load_trial(paths, item.trial);
      ObservationSet obs = io::read_observations(paths.obs_dir(item.trial, item.fraction));
      auto t0 = std::chrono::steady_clock::now();
      Matrix lambda_hat;
      int iterations = 0;
      bool converged = true;
      if (item.method == Method::Oracle) {
        auto traffic = io::read_traffic_csv(paths.trial_dir(item.trial) / "traffic.csv",
                                            d.meta.truth_dim, cfg.windows);
        lambda_hat = oracle_mle(traffic, d.meta.known_nodes);
        io::write_rate_csv(fdir / "lambda_hat.csv", lambda_hat);
      } else {
        Variant variant = item.method == Method::Mlem ? Variant::Mlem : Variant::Hier;
        Matrix init;
        InitKind kind;
        if (item.method == Method::MreHp) {
          MreSolution mre = solve_mre(build_constraints(obs, d.fmap_known), d.lambda0);
          init = mre.rates;
          kind = InitKind::Mre;
          out["mre"] = {{"objective", mre.objective},
                        {"iterations", mre.iterations},
                        {"converged", mre.converged},
                        {"penalizedFallback", mre.penalized_fallback}};
        } else {
          std::uint64_t tag = item.method == Method::Mlem ? 7 : 6;
          Rng rng(Rng::derive(Rng::derive(d.meta.trial_seed, tag),
                              static_cast<std::uint64_t>(item.fraction * 1e6)));
          init = random_init(obs, rng);
          kind = InitKind::Random;
        }
        ModelFit fit = run_em(obs, d.lambda0, d.fmap_known, variant, init, kind, cfg.em);
        lambda_hat = fit.lambda_hat;
        iterations = fit.iterations;
        converged = fit.converged;
        io::write_rate_csv(fdir / "lambda_hat.csv", fit.lambda_hat);
        io::write_rate_csv(fdir / "lambda_estep.csv", fit.lambda_estep);
        if (variant != Variant::Mlem) io::write_rate_csv(fdir / "eps_hat.csv", fit.eps_hat.eps);
      }
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      TrialData d2 = load_trial(paths, item.trial);
      out["mse"] = frobenius_sq_diff(lambda_hat, d2.truth_known);
      out["iterations"] = iterations;
      out["converged"] = converged;
      out["wallSeconds"] = wall;
      out["error"] = nullptr;
    } catch (const std::exception& e) {
      out["error"] = e.what();
    }
    io::write_file(fdir / "fit.json", out.dump(2) + "\n");
  });

  // Aggregate summary, recomputed from every fit on disk so that resumed
  // runs emit identical tables.
  io::json summary;
  for (Method m : cfg.methods) {
    for (double f : cfg.fractions) {
      double mse_sum = 0.0, wall_sum = 0.0;
      std::vector<double> iters;
      int n = 0, errors = 0;
      for (int t = 0; t < cfg.trials; ++t) {
        io::fs::path fj = paths.fit_dir(to_string(m), t, f) / "fit.json";
        io::json j = io::json::parse(io::read_file(fj));
        if (!j.at("error").is_null()) {
          ++errors;
          continue;
        }
        mse_sum += j.at("mse").get<double>();
        wall_sum += j.at("wallSeconds").get<double>();
        iters.push_back(j.at("iterations").get<double>());
        ++n;
      }
      io::json cell;
      cell["trials"] = n;
      cell["errors"] = errors;
      cell["meanMse"] = n > 0 ? mse_sum / n : 0.0;
      cell["meanWallSeconds"] = n > 0 ? wall_sum / n : 0.0;
      if (!iters.empty()) {
        std::sort(iters.begin(), iters.end());
        cell["medianIterations"] = iters[iters.size() / 2];
      }
      summary[to_string(m)][ExperimentPaths::frac_name(f)] = cell;
    }
  }
  io::write_file(paths.results_dir() / "fit_summary.json", summary.dump(2) + "\n");

  std::ostringstream mse_csv;
  mse_csv << "method,fraction,mse\n";
  for (Method m : cfg.methods)
    for (double f : cfg.fractions)
      mse_csv << to_string(m) << ',' << io::fmt_double(f) << ','
              << io::fmt_double(
                     summary[to_string(m)][ExperimentPaths::frac_name(f)]["meanMse"].get<double>())
              << '\n';
  io::write_file(paths.results_dir() / "mse.csv", mse_csv.str());
}

// ---------------------------------------------------------------------------
// test
// ---------------------------------------------------------------------------

// Rebuilds the fitted surrogate from stored artifacts; pure function of the
// files, so decisions are reproducible from disk alone.
inline ModelFit reconstruct_fit(const ExperimentPaths& paths, const ExperimentConfig& cfg, Method method,
                                int trial, double fraction) {
  if (method == Method::Oracle) throw std::invalid_argument("reconstruct_fit: ORACLE has no surrogate");
  TrialData d = load_trial(paths, trial);
  ObservationSet obs = io::read_observations(paths.obs_dir(trial, fraction));
  io::fs::path fdir = paths.fit_dir(to_string(method), trial, fraction);
  ModelFit fit;
  fit.variant = method == Method::Mlem ? Variant::Mlem : Variant::Hier;
  fit.lambda0 = d.lambda0;
  fit.lambda_hat = io::read_rate_csv(fdir / "lambda_hat.csv", d.meta.known_nodes);
  fit.lambda_estep = io::read_rate_csv(fdir / "lambda_estep.csv", d.meta.known_nodes);
  if (fit.variant != Variant::Mlem) {
    fit.eps_hat.eps = io::read_rate_csv(fdir / "eps_hat.csv", d.meta.known_nodes);
    fit.eps_hat.at_bound = SquareMat<std::uint8_t>(d.meta.known_nodes, 0);
  }
  fit.final_counts = e_step(fit.lambda_estep, obs, d.fmap_known, cfg.em);
  return fit;
}

inline void run_test(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentPaths paths(cfg.output_dir);
  struct Row {
    int trial;
    double fraction;
    double psi;
    bool reject;
    bool structural;
    bool label;
    bool error;
  };
  std::map<Method, std::vector<Row>> rows;
  std::vector<Method> test_methods;
  for (Method m : cfg.methods)
    if (m != Method::Oracle) test_methods.push_back(m);

  for (Method m : test_methods) {
    std::vector<Row> mr(cfg.trials * cfg.fractions.size());
    parallel_for(cfg.trials, cfg.jobs, [&](int trial) {
      TrialMeta meta = read_trial_meta(paths.trial_dir(trial) / "trial.json");
      for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
        double f = cfg.fractions[fi];
        Row row{trial, f, 0.0, false, false, meta.anomalous, false};
        try {
          io::json fj =
              io::json::parse(io::read_file(paths.fit_dir(to_string(m), trial, f) / "fit.json"));
          if (!fj.at("error").is_null()) throw std::runtime_error(fj.at("error").get<std::string>());
          ModelFit fit = reconstruct_fit(paths, cfg, m, trial, f);
          TestResult res = anomaly_test(fit, fit.lambda0, cfg.alpha);
          row.psi = res.psi_hat;
          row.reject = res.reject;
          row.structural = res.structural_mismatch;
        } catch (const std::exception&) {
          row.error = true;
        }
        mr[trial * cfg.fractions.size() + fi] = row;
      }
    });
    rows[m] = std::move(mr);
  }

  // Per-trial statistics (JSON) and the accuracy table (CSV).
  for (Method m : test_methods) {
    io::json arr = io::json::array();
    for (const Row& r : rows[m]) {
      io::json item;
      item["trial"] = r.trial;
      item["fraction"] = r.fraction;
      if (r.error)
        item["error"] = true;
      else if (std::isinf(r.psi))
        item["psi"] = "inf";
      else
        item["psi"] = r.psi;
      item["reject"] = r.reject;
      item["structuralMismatch"] = r.structural;
      item["anomalous"] = r.label;
      arr.push_back(item);
    }
    io::write_file(paths.results_dir() / (std::string("psi_") + to_string(m) + ".json"),
                   arr.dump(2) + "\n");
  }

  std::ostringstream acc;
  acc << "method,fraction,accuracy,tp,tn,fp,fn\n";
  for (Method m : test_methods) {
    for (double f : cfg.fractions) {
      int tp = 0, tn = 0, fp = 0, fn = 0, usable = 0;
      for (const Row& r : rows[m]) {
        if (r.fraction != f || r.error) continue;
        ++usable;
        if (r.label)
          (r.reject ? tp : fn) += 1;
        else
          (r.reject ? fp : tn) += 1;
      }
      double accuracy = usable > 0 ? static_cast<double>(tp + tn) / usable : 0.0;
      acc << to_string(m) << ',' << io::fmt_double(f) << ',' << io::fmt_double(accuracy) << ',' << tp
          << ',' << tn << ',' << fp << ',' << fn << '\n';
    }
  }
  io::write_file(paths.results_dir() / "accuracy.csv", acc.str());
}

// ---------------------------------------------------------------------------
// roc
// ---------------------------------------------------------------------------

inline void run_roc(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentPaths paths(cfg.output_dir);
  io::json summary;
  int p = cfg.scenario.node_count;
  double crit = specfn::chi2_inv_cdf(p * p - p, 1.0 - cfg.alpha);
  for (Method m : cfg.methods) {
    if (m == Method::Oracle) continue;
    io::json arr = io::json::parse(
        io::read_file(paths.results_dir() / (std::string("psi_") + to_string(m) + ".json")));
    for (double f : cfg.fractions) {
      std::vector<double> stats;
      std::vector<bool> labels;
      for (const auto& item : arr) {
        if (item.value("error", false)) continue;
        if (item.at("fraction").get<double>() != f) continue;
        double psi = item.at("psi").is_string() ? std::numeric_limits<double>::infinity()
                                                : item.at("psi").get<double>();
        stats.push_back(psi);
        labels.push_back(item.at("anomalous").get<bool>());
      }
      std::string cell_name = ExperimentPaths::frac_name(f);
      io::json cell;
      cell["criticalValue"] = crit;
      cell["trials"] = static_cast<int>(stats.size());
      try {
        RocCurve roc = roc_curve(stats, labels);
        std::ostringstream csv;
        csv << "threshold,fpr,tpr\n";
        for (std::size_t k = 0; k < roc.points.size(); ++k)
          csv << io::fmt_double(roc.thresholds[k]) << ',' << io::fmt_double(roc.points[k].first) << ','
              << io::fmt_double(roc.points[k].second) << '\n';
        io::write_file(paths.results_dir() /
                           (std::string("roc_") + to_string(m) + "_" + cell_name + ".csv"),
                       csv.str());
        auto [fpr, tpr] = operating_point(stats, labels, crit);
        cell["auc"] = roc.auc;
        cell["operatingPoint"] = {{"fpr", fpr}, {"tpr", tpr}};
      } catch (const std::exception& e) {
        cell["error"] = e.what();  // degenerate label sets reported, not fatal
      }
      summary[to_string(m)][cell_name] = cell;
    }
  }
  io::write_file(paths.results_dir() / "summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestOptions {
  std::string edges_csv;           // required: t,src,dst,count
  std::string baseline_csv;        // optional: src,dst,rate
  std::string flowmap_file;        // optional JSON; node ids or dense indices
  std::string observed_csv;        // optional: src,dst
  std::string out_dir;
  long long window_width = 1;
  bool strict = false;
  int baseline_windows = 0;        // estimate lambda0 from this many leading windows
  int interior_count = 0;          // used only when no flowmap file is given
  double node_fraction = 0.7;
  std::uint64_t seed = 0;
};

struct IngestReport {
  int nodes = 0;
  int windows = 0;
  long long rows = 0;
  long long skipped = 0;
  std::vector<std::string> issues;
};

namespace ingest_detail {

struct RawRecord {
  long long t;
  std::string src, dst;
  std::int64_t count;
};

}  // namespace ingest_detail

inline IngestReport run_ingest(const IngestOptions& opt) {
  if (opt.window_width < 1) throw std::invalid_argument("ingest: window width must be >= 1");
  IngestReport report;
  auto issue = [&](int line, const std::string& what) {
    std::string msg = opt.edges_csv + ":" + std::to_string(line) + ": " + what;
    if (opt.strict) throw std::runtime_error(msg);
    report.issues.push_back(msg);
    ++report.skipped;
  };

  // Node universe: the baseline file when given, otherwise the edge file;
  // dense indices follow lexicographic id order so runs are reproducible.
  std::map<std::string, int> node_index;
  std::vector<std::array<std::string, 3>> baseline_rows;
  bool baseline_defines_universe = !opt.baseline_csv.empty();
  if (baseline_defines_universe) {
    io::CsvTable t = io::read_csv(opt.baseline_csv, "src,dst,rate");
    std::set<std::string> ids;
    for (const auto& row : t.rows) {
      if (row.size() != 3) throw std::runtime_error(opt.baseline_csv + ": bad baseline row");
      ids.insert(row[0]);
      ids.insert(row[1]);
      baseline_rows.push_back({row[0], row[1], row[2]});
    }
    for (const auto& id : ids) node_index.emplace(id, static_cast<int>(node_index.size()));
  }

  std::vector<ingest_detail::RawRecord> records;
  {
    std::string content = io::read_file(opt.edges_csv);
    std::istringstream in(content);
    std::string line;
    int line_no = 0;
    std::set<std::string> ids;
    if (!std::getline(in, line)) throw std::runtime_error(opt.edges_csv + ": empty file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,src,dst,count")
      throw std::runtime_error(opt.edges_csv + ": expected header t,src,dst,count");
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> f = io::split_csv_line(line);
      if (f.size() != 4) {
        issue(line_no, "malformed row (expected 4 fields)");
        continue;
      }
      ingest_detail::RawRecord r;
      try {
        r.t = io::parse_int(f[0]);
        r.count = io::parse_int(f[3]);
      } catch (const std::exception& e) {
        issue(line_no, e.what());
        continue;
      }
      r.src = f[1];
      r.dst = f[2];
      if (r.src == r.dst) {
        issue(line_no, "self-loop " + r.src);
        continue;
      }
      if (r.count < 0) {
        issue(line_no, "negative count");
        continue;
      }
      if (baseline_defines_universe &&
          (!node_index.count(r.src) || !node_index.count(r.dst))) {
        issue(line_no, "unknown node id " + (node_index.count(r.src) ? r.dst : r.src));
        continue;
      }
      if (!baseline_defines_universe) {
        ids.insert(r.src);
        ids.insert(r.dst);
      }
      records.push_back(std::move(r));
      ++report.rows;
    }
    if (!baseline_defines_universe)
      for (const auto& id : ids) node_index.emplace(id, static_cast<int>(node_index.size()));
  }
  if (node_index.size() < 2) throw std::runtime_error("ingest: fewer than two nodes");
  const int p = static_cast<int>(node_index.size());
  report.nodes = p;

  long long t_min = std::numeric_limits<long long>::max(), t_max = std::numeric_limits<long long>::min();
  for (const auto& r : records) {
    t_min = std::min(t_min, r.t);
    t_max = std::max(t_max, r.t);
  }
  if (records.empty()) throw std::runtime_error("ingest: no usable records");
  int windows = static_cast<int>((t_max - t_min) / opt.window_width + 1);
  report.windows = windows;

  std::vector<CountMatrix> traffic(windows, CountMatrix(p));
  for (const auto& r : records) {
    int w = static_cast<int>((r.t - t_min) / opt.window_width);
    traffic[w](node_index[r.src], node_index[r.dst]) += r.count;
  }

  auto lookup_edge = [&](const io::json& pair) -> Edge {
    auto one = [&](const io::json& v) -> int {
      if (v.is_number_integer()) return v.get<int>();
      auto it = node_index.find(v.get<std::string>());
      if (it == node_index.end()) throw std::runtime_error("flowmap references unknown node id");
      return it->second;
    };
    return {one(pair.at(0)), one(pair.at(1))};
  };

  FlowMap fmap;
  fmap.exterior_count = p;
  if (!opt.flowmap_file.empty()) {
    io::json root = io::json::parse(io::read_file(opt.flowmap_file));
    const io::json& sets = root.is_array() ? root : root.at("sets");
    for (const auto& set : sets) {
      std::vector<Edge> edges;
      for (const auto& pair : set) edges.push_back(lookup_edge(pair));
      fmap.edge_sets.push_back(std::move(edges));
    }
    fmap.validate();
  } else if (opt.interior_count > 0) {
    fmap = gen_flowmap_node_coverage(p, opt.interior_count, opt.node_fraction, opt.seed);
  }

  std::vector<Edge> observed;
  if (!opt.observed_csv.empty()) {
    io::CsvTable t = io::read_csv(opt.observed_csv, "src,dst");
    for (const auto& row : t.rows) {
      auto one = [&](const std::string& id) -> int {
        if (node_index.count(id)) return node_index.at(id);
        try {
          int v = static_cast<int>(io::parse_int(id));
          if (v >= 0 && v < p) return v;
        } catch (const std::exception&) {
        }
        throw std::runtime_error(opt.observed_csv + ": unknown node id " + id);
      };
      observed.push_back({one(row[0]), one(row[1])});
    }
    std::sort(observed.begin(), observed.end());
  }

  ObservationSet obs;
  obs.node_count = p;
  obs.windows = windows;
  obs.observed_edges = observed;
  for (int t = 0; t < windows; ++t) {
    std::vector<std::int64_t> r(p, 0), c(p, 0), fl(fmap.flow_count(), 0);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        if (i != j) {
          r[i] += traffic[t](i, j);
          c[j] += traffic[t](i, j);
        }
    for (int h = 0; h < fmap.flow_count(); ++h)
      for (const Edge& e : fmap.edge_sets[h]) fl[h] += traffic[t](e.src, e.dst);
    std::vector<std::int64_t> oc;
    for (const Edge& e : observed) oc.push_back(traffic[t](e.src, e.dst));
    obs.row_sums.push_back(std::move(r));
    obs.col_sums.push_back(std::move(c));
    obs.flows.push_back(std::move(fl));
    obs.observed_counts.push_back(std::move(oc));
  }

  Matrix lambda0(p);
  if (!opt.baseline_csv.empty()) {
    for (const auto& row : baseline_rows) {
      int i = node_index.at(row[0]), j = node_index.at(row[1]);
      if (i == j) throw std::runtime_error(opt.baseline_csv + ": baseline self-loop " + row[0]);
      lambda0(i, j) = io::parse_double(row[2]);
    }
  } else if (opt.baseline_windows > 0) {
    int k = std::min(opt.baseline_windows, windows);
    for (int t = 0; t < k; ++t)
      lambda0.transform_off_diag(
          [&](int i, int j, double v) { return v + static_cast<double>(traffic[t](i, j)); });
    lambda0.transform_off_diag([&](int, int, double v) { return v / k; });
  }

  io::fs::path out(opt.out_dir);
  io::write_observations(out / "observations", obs);
  io::write_rate_csv(out / "lambda0.csv", lambda0);
  io::write_flowmap_json(out / "flowmap.json", fmap);
  {
    std::ostringstream nm;
    nm << "id,index\n";
    for (const auto& [id, k] : node_index) nm << id << ',' << k << '\n';
    io::write_file(out / "node_map.csv", nm.str());
    io::json rep;
    rep["nodes"] = report.nodes;
    rep["windows"] = report.windows;
    rep["rows"] = report.rows;
    rep["skipped"] = report.skipped;
    rep["issues"] = report.issues;
    io::write_file(out / "ingest.json", rep.dump(2) + "\n");
  }
  return report;
}

}  // namespace anomo
