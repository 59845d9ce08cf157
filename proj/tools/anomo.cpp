// Command-line harness: simulate partially observed traffic networks, fit
// the rate estimators, run the anomaly tests, and export ROC/accuracy
// tables. Real edge-list data enters through `ingest`.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "anomo/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  bool jobs_set = false;
  std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, CommonArgs* args, bool config_required = true) {
  cmd->add_option("--config", args->config_path, "experiment config (JSON)")
      ->required(config_required)
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args->out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args->seed, "master seed (overrides config)")
      ->each([args](const std::string&) { args->seed_set = true; });
  cmd->add_option("--jobs", args->jobs, "worker count, 0 = all cores (overrides config)")
      ->each([args](const std::string&) { args->jobs_set = true; });
  cmd->add_option("--method", args->methods, "method to run (repeatable; overrides config)")
      ->check(CLI::IsMember({"MRE-HP", "Rand-HP", "MLEM", "ORACLE"}));
}

anomo::ExperimentConfig load_config(const CommonArgs& args) {
  anomo::ExperimentConfig cfg =
      anomo::config_from_json(anomo::io::json::parse(anomo::io::read_file(args.config_path)));
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.seed_set) cfg.scenario.seed = args.seed;
  if (args.jobs_set) cfg.jobs = args.jobs;
  if (!args.methods.empty()) {
    cfg.methods.clear();
    for (const std::string& m : args.methods) cfg.methods.push_back(anomo::method_from_string(m));
  }
  if (cfg.output_dir.empty()) throw CLI::ValidationError("--out or config outputDir required");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anomography pipeline: simulation, estimation, anomaly testing"};
  app.require_subcommand(1);

  CommonArgs sim_args, fit_args, test_args, roc_args;
  CLI::App* sim = app.add_subcommand("simulate", "generate trial networks, traffic, and observations");
  add_common(sim, &sim_args);
  CLI::App* fit = app.add_subcommand("fit", "fit rate estimators to simulated observations");
  add_common(fit, &fit_args);
  CLI::App* test = app.add_subcommand("test", "run the goodness-of-fit anomaly tests");
  add_common(test, &test_args);
  CLI::App* roc = app.add_subcommand("roc", "export ROC curves and AUC summaries");
  add_common(roc, &roc_args);

  anomo::IngestOptions ing;
  CLI::App* ingest = app.add_subcommand("ingest", "aggregate an edge-list CSV into observations");
  ingest->add_option("--edges", ing.edges_csv, "edge records CSV (t,src,dst,count)")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--baseline", ing.baseline_csv, "baseline rates CSV (src,dst,rate)")
      ->check(CLI::ExistingFile);
  ingest->add_option("--flowmap", ing.flowmap_file, "flow map JSON (list of edge-pair arrays)")
      ->check(CLI::ExistingFile);
  ingest->add_option("--observed", ing.observed_csv, "directly observed edges CSV (src,dst)")
      ->check(CLI::ExistingFile);
  ingest->add_option("--out", ing.out_dir, "output directory")->required();
  ingest->add_option("--window-width", ing.window_width, "window width in time units (default 1)");
  ingest->add_option("--baseline-windows", ing.baseline_windows,
                     "estimate the baseline from this many leading windows");
  ingest->add_option("--interior", ing.interior_count,
                     "generate a node-coverage flow map with this many interior nodes");
  ingest->add_option("--node-fraction", ing.node_fraction,
                     "fraction of nodes each generated interior node covers (default 0.7)");
  ingest->add_option("--seed", ing.seed, "seed for generated flow maps");
  ingest->add_flag("--strict", ing.strict, "abort on the first bad record instead of skipping");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      anomo::run_simulate(load_config(sim_args));
    } else if (fit->parsed()) {
      anomo::run_fit(load_config(fit_args));
    } else if (test->parsed()) {
      anomo::run_test(load_config(test_args));
    } else if (roc->parsed()) {
      anomo::run_roc(load_config(roc_args));
    } else if (ingest->parsed()) {
      anomo::IngestReport report = anomo::run_ingest(ing);
      std::printf("ingested %lld records into %d windows over %d nodes (%lld skipped)\n",
                  report.rows, report.windows, report.nodes, report.skipped);
      for (const std::string& s : report.issues) std::fprintf(stderr, "%s\n", s.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
