#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "anomo/matrix.hpp"
#include "anomo/rng.hpp"

namespace anomo {

enum class ScenarioKind { RateIncrease, HiddenNode };

inline const char* to_string(ScenarioKind k) {
  return k == ScenarioKind::RateIncrease ? "rate-increase" : "hidden-node";
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "rate-increase") return ScenarioKind::RateIncrease;
  if (s == "hidden-node") return ScenarioKind::HiddenNode;
  throw std::invalid_argument("unknown scenario kind: " + s);
}

struct ScenarioSpec {
  int node_count = 10;        // exterior nodes P
  int interior_count = 2;     // H
  int edges_per_interior = 7;
  double edge_prob = 0.65;
  double baseline_shape = 1.75;
  double baseline_rate = 1.0;
  double anomaly_prob = 0.2;
  double anomaly_shape = 0.75;
  double anomaly_rate = 1.0;
  ScenarioKind kind = ScenarioKind::RateIncrease;
  std::uint64_t seed = 0;

  void validate() const {
    if (node_count < 2) throw std::invalid_argument("ScenarioSpec: node_count must be >= 2");
    if (interior_count < 0) throw std::invalid_argument("ScenarioSpec: interior_count must be >= 0");
    if (!(edge_prob >= 0.0 && edge_prob <= 1.0)) throw std::invalid_argument("ScenarioSpec: edge_prob not in [0,1]");
    if (!(anomaly_prob >= 0.0 && anomaly_prob <= 1.0))
      throw std::invalid_argument("ScenarioSpec: anomaly_prob not in [0,1]");
    if (!(baseline_shape > 0.0 && baseline_rate > 0.0 && anomaly_shape > 0.0 && anomaly_rate > 0.0))
      throw std::invalid_argument("ScenarioSpec: shape/rate parameters must be > 0");
  }
};

// Which directed edges each interior node aggregates into its flow total.
// Sets may overlap each other and the directly-observed edge list.
struct FlowMap {
  int exterior_count = 0;
  std::vector<std::vector<Edge>> edge_sets;

  int flow_count() const { return static_cast<int>(edge_sets.size()); }

  void validate() const {
    for (const auto& set : edge_sets) {
      if (set.empty()) throw std::invalid_argument("FlowMap: empty edge set");
      for (const Edge& e : set)
        if (e.src == e.dst || e.src < 0 || e.dst < 0 || e.src >= exterior_count || e.dst >= exterior_count)
          throw std::invalid_argument("FlowMap: invalid edge");
    }
  }

  // Drops edges touching nodes >= keep_nodes (used when the truth has more
  // nodes than the network handed to the estimators).
  FlowMap restricted_to(int keep_nodes) const {
    FlowMap out;
    out.exterior_count = keep_nodes;
    for (const auto& set : edge_sets) {
      std::vector<Edge> kept;
      for (const Edge& e : set)
        if (e.src < keep_nodes && e.dst < keep_nodes) kept.push_back(e);
      out.edge_sets.push_back(std::move(kept));
    }
    return out;
  }
};

struct ObservationSet {
  int node_count = 0;  // P as seen by the estimators
  int windows = 0;     // T
  std::vector<std::vector<std::int64_t>> row_sums;  // T x P
  std::vector<std::vector<std::int64_t>> col_sums;  // T x P
  std::vector<std::vector<std::int64_t>> flows;     // T x H
  std::vector<Edge> observed_edges;                 // directly observed pairs
  std::vector<std::vector<std::int64_t>> observed_counts;  // T x |observed_edges|

  int flow_count() const { return flows.empty() ? 0 : static_cast<int>(flows.front().size()); }

  double mean_row_sum() const {
    double s = 0.0;
    for (const auto& r : row_sums)
      for (auto v : r) s += static_cast<double>(v);
    return windows > 0 && node_count > 0 ? s / (static_cast<double>(windows) * node_count) : 0.0;
  }
};

// Baseline rates: each off-diagonal pair carries an edge with probability
// edge_prob; present edges draw Gamma(baseline_shape, baseline_rate) rates.
inline Matrix gen_baseline(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(Rng::derive(spec.seed, 1));
  Matrix m(spec.node_count);
  m.transform_off_diag([&](int, int, double) {
    if (rng.uniform() < spec.edge_prob) return rng.gamma(spec.baseline_shape, spec.baseline_rate);
    return 0.0;
  });
  return m;
}

// Rate-increase anomalies: additive Gamma(anomaly_shape, anomaly_rate) bumps
// on a Bernoulli(anomaly_prob) subset of off-diagonal pairs.
inline Matrix apply_rate_anomalies(const Matrix& baseline, const ScenarioSpec& spec) {
  spec.validate();
  validate_rates(baseline, "apply_rate_anomalies: baseline");
  Rng rng(Rng::derive(spec.seed, 2));
  Matrix m = baseline;
  m.transform_off_diag([&](int, int, double v) {
    if (rng.uniform() < spec.anomaly_prob) return v + rng.gamma(spec.anomaly_shape, spec.anomaly_rate);
    return v;
  });
  return m;
}

struct HiddenNodeNetwork {
  Matrix truth;     // (P+1) x (P+1)
  Matrix baseline;  // leading P x P submatrix
};

// Hidden-node scenario: the true network has one extra exterior node whose
// edges exist with probability anomaly_prob; the baseline is the known-node
// submatrix. Known-pair edges and their rates are shared between the two.
inline HiddenNodeNetwork apply_hidden_node(const ScenarioSpec& spec) {
  spec.validate();
  if (spec.kind != ScenarioKind::HiddenNode)
    throw std::invalid_argument("apply_hidden_node: scenario kind must be hidden-node");
  const int p = spec.node_count;
  HiddenNodeNetwork net;
  net.baseline = gen_baseline(spec);
  net.truth = Matrix(p + 1);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) net.truth(i, j) = net.baseline(i, j);
  Rng rng(Rng::derive(spec.seed, 3));
  for (int i = 0; i <= p; ++i) {
    for (int j = 0; j <= p; ++j) {
      if (i == j || (i < p && j < p)) continue;
      if (rng.uniform() < spec.anomaly_prob)
        net.truth(i, j) = rng.gamma(spec.baseline_shape, spec.baseline_rate);
    }
  }
  return net;
}

// H edge sets, each a uniform random subset (without replacement) of the
// off-diagonal pairs; sets are drawn independently per interior node.
inline FlowMap gen_flowmap(int node_count, int interior_count, int edges_per_interior, std::uint64_t seed) {
  if (node_count < 2) throw std::invalid_argument("gen_flowmap: node_count must be >= 2");
  const int pair_count = node_count * (node_count - 1);
  if (edges_per_interior < 1 || edges_per_interior > pair_count)
    throw std::invalid_argument("gen_flowmap: edges_per_interior out of range");
  std::vector<Edge> pairs;
  pairs.reserve(pair_count);
  for (int i = 0; i < node_count; ++i)
    for (int j = 0; j < node_count; ++j)
      if (i != j) pairs.push_back({i, j});
  FlowMap fm;
  fm.exterior_count = node_count;
  Rng rng(seed);
  for (int h = 0; h < interior_count; ++h) {
    std::vector<int> picks = rng.sample_without_replacement(pair_count, edges_per_interior);
    std::vector<Edge> set;
    set.reserve(picks.size());
    for (int k : picks) set.push_back(pairs[k]);
    std::sort(set.begin(), set.end());
    fm.edge_sets.push_back(std::move(set));
  }
  return fm;
}

// Node-based flow coverage used by the ingestion path: each interior node
// aggregates every directed edge leaving a random subset of ceil(frac*P)
// exterior nodes.
inline FlowMap gen_flowmap_node_coverage(int node_count, int interior_count, double node_fraction,
                                         std::uint64_t seed) {
  if (node_count < 2) throw std::invalid_argument("gen_flowmap_node_coverage: node_count must be >= 2");
  if (!(node_fraction > 0.0 && node_fraction <= 1.0))
    throw std::invalid_argument("gen_flowmap_node_coverage: fraction out of (0,1]");
  int k = std::max(1, static_cast<int>(std::ceil(node_fraction * node_count)));
  FlowMap fm;
  fm.exterior_count = node_count;
  Rng rng(seed);
  for (int h = 0; h < interior_count; ++h) {
    std::vector<int> nodes = rng.sample_without_replacement(node_count, k);
    std::vector<Edge> set;
    for (int src : nodes)
      for (int dst = 0; dst < node_count; ++dst)
        if (dst != src) set.push_back({src, dst});
    std::sort(set.begin(), set.end());
    fm.edge_sets.push_back(std::move(set));
  }
  return fm;
}

// Independent Poisson draws per window and off-diagonal entry.
inline std::vector<CountMatrix> sample_traffic(const Matrix& rates, int windows, std::uint64_t seed) {
  validate_rates(rates, "sample_traffic: rates");
  if (windows < 1) throw std::invalid_argument("sample_traffic: windows must be >= 1");
  Rng rng(seed);
  std::vector<CountMatrix> out;
  out.reserve(windows);
  for (int t = 0; t < windows; ++t) {
    CountMatrix m(rates.dim());
    m.transform_off_diag([&](int i, int j, std::int64_t) { return rng.poisson(rates(i, j)); });
    out.push_back(std::move(m));
  }
  return out;
}

// Reduces full traffic to the partial view: exact row/column sums over the
// first known_nodes nodes, exact flow totals over the (possibly wider) edge
// sets, and direct counts on a random fraction of known off-diagonal pairs.
// Traffic touching nodes >= known_nodes only ever enters through the flows.
inline ObservationSet observe(const std::vector<CountMatrix>& traffic, const FlowMap& flowmap,
                              int known_nodes, double observed_edge_fraction, std::uint64_t seed) {
  if (traffic.empty()) throw std::invalid_argument("observe: no traffic windows");
  const int full_dim = traffic.front().dim();
  if (known_nodes < 2 || known_nodes > full_dim) throw std::invalid_argument("observe: bad known_nodes");
  if (flowmap.exterior_count != full_dim) throw std::invalid_argument("observe: flowmap/traffic dim mismatch");
  if (!(observed_edge_fraction >= 0.0 && observed_edge_fraction <= 1.0))
    throw std::invalid_argument("observe: fraction not in [0,1]");
  flowmap.validate();

  ObservationSet obs;
  obs.node_count = known_nodes;
  obs.windows = static_cast<int>(traffic.size());
  const int h_count = flowmap.flow_count();

  const int pair_count = known_nodes * (known_nodes - 1);
  const int pi_size = static_cast<int>(std::llround(observed_edge_fraction * pair_count));
  std::vector<Edge> pairs;
  pairs.reserve(pair_count);
  for (int i = 0; i < known_nodes; ++i)
    for (int j = 0; j < known_nodes; ++j)
      if (i != j) pairs.push_back({i, j});
  Rng rng(seed);
  std::vector<int> picks = rng.sample_without_replacement(pair_count, pi_size);
  std::sort(picks.begin(), picks.end());
  for (int k : picks) obs.observed_edges.push_back(pairs[k]);

  for (const CountMatrix& m : traffic) {
    std::vector<std::int64_t> r(known_nodes, 0), c(known_nodes, 0), f(h_count, 0);
    for (int i = 0; i < known_nodes; ++i)
      for (int j = 0; j < known_nodes; ++j)
        if (i != j) {
          r[i] += m(i, j);
          c[j] += m(i, j);
        }
    for (int h = 0; h < h_count; ++h)
      for (const Edge& e : flowmap.edge_sets[h]) f[h] += m(e.src, e.dst);
    std::vector<std::int64_t> oc;
    oc.reserve(obs.observed_edges.size());
    for (const Edge& e : obs.observed_edges) oc.push_back(m(e.src, e.dst));
    obs.row_sums.push_back(std::move(r));
    obs.col_sums.push_back(std::move(c));
    obs.flows.push_back(std::move(f));
    obs.observed_counts.push_back(std::move(oc));
  }
  return obs;
}

// Entrywise mean of directly observed traffic; the estimator the others are
// benchmarked against (attains the Cramer-Rao bound).
inline Matrix oracle_mle(const std::vector<CountMatrix>& traffic, int known_nodes = -1) {
  if (traffic.empty()) throw std::invalid_argument("oracle_mle: no traffic windows");
  int dim = known_nodes > 0 ? known_nodes : traffic.front().dim();
  Matrix m(dim);
  for (const CountMatrix& w : traffic)
    m.transform_off_diag([&](int i, int j, double v) { return v + static_cast<double>(w(i, j)); });
  double inv = 1.0 / static_cast<double>(traffic.size());
  m.transform_off_diag([&](int, int, double v) { return v * inv; });
  return m;
}

}  // namespace anomo
