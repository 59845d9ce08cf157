#pragma once

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomo/matrix.hpp"
#include "anomo/netsim.hpp"

namespace anomo::io {

using nlohmann::json;
namespace fs = std::filesystem;

// All floating-point fields are emitted with 17 significant digits so that
// re-reading reproduces the in-memory value bit for bit.
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << content;
  if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Minimal CSV splitting; the formats here never quote or embed commas.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path, const std::string& expected_header) {
  std::string content = read_file(path);
  std::istringstream in(content);
  std::string line;
  CsvTable table;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header)
    throw std::runtime_error("unexpected header in " + path.string() + ": got '" + line + "', want '" +
                             expected_header + "'");
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    table.rows.push_back(split_csv_line(line));
  }
  return table;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("bad numeric field: '" + s + "'");
  }
}

inline std::int64_t parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("bad integer field: '" + s + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& s) {
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size() || s[0] == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("bad unsigned field: '" + s + "'");
  }
}

// --- rate matrices: "src,dst,rate", zero entries omitted -------------------

inline void write_rate_csv(const fs::path& path, const Matrix& m) {
  std::ostringstream out;
  out << "src,dst,rate\n";
  m.for_each_off_diag([&](int i, int j, double v) {
    if (v != 0.0) out << i << ',' << j << ',' << fmt_double(v) << '\n';
  });
  write_file(path, out.str());
}

inline Matrix read_rate_csv(const fs::path& path, int dim) {
  CsvTable t = read_csv(path, "src,dst,rate");
  Matrix m(dim);
  for (const auto& row : t.rows) {
    if (row.size() != 3) throw std::runtime_error("bad rate row in " + path.string());
    int i = static_cast<int>(parse_int(row[0])), j = static_cast<int>(parse_int(row[1]));
    if (i < 0 || j < 0 || i >= dim || j >= dim || i == j)
      throw std::runtime_error("rate entry out of range in " + path.string());
    m(i, j) = parse_double(row[2]);
  }
  return m;
}

// --- traffic: "t,src,dst,count", zero counts omitted -----------------------

inline void write_traffic_csv(const fs::path& path, const std::vector<CountMatrix>& traffic) {
  std::ostringstream out;
  out << "t,src,dst,count\n";
  for (std::size_t t = 0; t < traffic.size(); ++t)
    traffic[t].for_each_off_diag([&](int i, int j, std::int64_t v) {
      if (v != 0) out << t << ',' << i << ',' << j << ',' << v << '\n';
    });
  write_file(path, out.str());
}

inline std::vector<CountMatrix> read_traffic_csv(const fs::path& path, int dim, int windows) {
  CsvTable t = read_csv(path, "t,src,dst,count");
  std::vector<CountMatrix> out(windows, CountMatrix(dim));
  for (const auto& row : t.rows) {
    if (row.size() != 4) throw std::runtime_error("bad traffic row in " + path.string());
    int w = static_cast<int>(parse_int(row[0]));
    int i = static_cast<int>(parse_int(row[1])), j = static_cast<int>(parse_int(row[2]));
    if (w < 0 || w >= windows || i < 0 || j < 0 || i >= dim || j >= dim || i == j)
      throw std::runtime_error("traffic entry out of range in " + path.string());
    out[w](i, j) = parse_int(row[3]);
  }
  return out;
}

// --- observation sets: one directory, fixed file names ---------------------

inline void write_observations(const fs::path& dir, const ObservationSet& obs) {
  fs::create_directories(dir);
  {
    json meta;
    meta["nodes"] = obs.node_count;
    meta["windows"] = obs.windows;
    meta["flows"] = obs.flow_count();
    write_file(dir / "meta.json", meta.dump(2) + "\n");
  }
  std::ostringstream r, c, f, oe, oc;
  r << "t,node,count\n";
  c << "t,node,count\n";
  f << "t,flow,count\n";
  for (int t = 0; t < obs.windows; ++t) {
    for (int i = 0; i < obs.node_count; ++i) {
      r << t << ',' << i << ',' << obs.row_sums[t][i] << '\n';
      c << t << ',' << i << ',' << obs.col_sums[t][i] << '\n';
    }
    for (int h = 0; h < obs.flow_count(); ++h) f << t << ',' << h << ',' << obs.flows[t][h] << '\n';
  }
  oe << "src,dst\n";
  for (const Edge& e : obs.observed_edges) oe << e.src << ',' << e.dst << '\n';
  oc << "t,src,dst,count\n";
  for (int t = 0; t < obs.windows; ++t)
    for (std::size_t k = 0; k < obs.observed_edges.size(); ++k)
      oc << t << ',' << obs.observed_edges[k].src << ',' << obs.observed_edges[k].dst << ','
         << obs.observed_counts[t][k] << '\n';
  write_file(dir / "R.csv", r.str());
  write_file(dir / "C.csv", c.str());
  write_file(dir / "F.csv", f.str());
  write_file(dir / "observed_edges.csv", oe.str());
  write_file(dir / "observed_counts.csv", oc.str());
}

inline ObservationSet read_observations(const fs::path& dir) {
  json meta = json::parse(read_file(dir / "meta.json"));
  ObservationSet obs;
  obs.node_count = meta.at("nodes").get<int>();
  obs.windows = meta.at("windows").get<int>();
  int flows = meta.at("flows").get<int>();
  obs.row_sums.assign(obs.windows, std::vector<std::int64_t>(obs.node_count, 0));
  obs.col_sums.assign(obs.windows, std::vector<std::int64_t>(obs.node_count, 0));
  obs.flows.assign(obs.windows, std::vector<std::int64_t>(flows, 0));
  auto fill = [&](const fs::path& p, const char* header, auto& target, int limit) {
    CsvTable t = read_csv(p, header);
    for (const auto& row : t.rows) {
      int w = static_cast<int>(parse_int(row[0]));
      int k = static_cast<int>(parse_int(row[1]));
      if (w < 0 || w >= obs.windows || k < 0 || k >= limit)
        throw std::runtime_error("entry out of range in " + p.string());
      target[w][k] = parse_int(row[2]);
    }
  };
  fill(dir / "R.csv", "t,node,count", obs.row_sums, obs.node_count);
  fill(dir / "C.csv", "t,node,count", obs.col_sums, obs.node_count);
  fill(dir / "F.csv", "t,flow,count", obs.flows, flows);
  CsvTable oe = read_csv(dir / "observed_edges.csv", "src,dst");
  for (const auto& row : oe.rows)
    obs.observed_edges.push_back({static_cast<int>(parse_int(row[0])), static_cast<int>(parse_int(row[1]))});
  obs.observed_counts.assign(obs.windows, std::vector<std::int64_t>(obs.observed_edges.size(), 0));
  std::map<std::pair<int, int>, std::size_t> index;
  for (std::size_t k = 0; k < obs.observed_edges.size(); ++k)
    index[{obs.observed_edges[k].src, obs.observed_edges[k].dst}] = k;
  CsvTable oc = read_csv(dir / "observed_counts.csv", "t,src,dst,count");
  for (const auto& row : oc.rows) {
    int w = static_cast<int>(parse_int(row[0]));
    auto it = index.find({static_cast<int>(parse_int(row[1])), static_cast<int>(parse_int(row[2]))});
    if (w < 0 || w >= obs.windows || it == index.end())
      throw std::runtime_error("observed count out of range in " + (dir / "observed_counts.csv").string());
    obs.observed_counts[w][it->second] = parse_int(row[3]);
  }
  return obs;
}

// --- flow maps: JSON list of edge-pair arrays ------------------------------

inline void write_flowmap_json(const fs::path& path, const FlowMap& fm) {
  json sets = json::array();
  for (const auto& set : fm.edge_sets) {
    json pairs = json::array();
    for (const Edge& e : set) pairs.push_back({e.src, e.dst});
    sets.push_back(pairs);
  }
  json root;
  root["nodes"] = fm.exterior_count;
  root["sets"] = sets;
  write_file(path, root.dump(2) + "\n");
}

inline FlowMap read_flowmap_json(const fs::path& path) {
  json root = json::parse(read_file(path));
  FlowMap fm;
  // Either the annotated object form or a bare list of edge-pair arrays.
  const json& sets = root.is_array() ? root : root.at("sets");
  if (root.is_object()) fm.exterior_count = root.at("nodes").get<int>();
  for (const auto& set : sets) {
    std::vector<Edge> edges;
    for (const auto& pair : set) {
      Edge e{pair.at(0).get<int>(), pair.at(1).get<int>()};
      edges.push_back(e);
      fm.exterior_count = std::max(fm.exterior_count, std::max(e.src, e.dst) + 1);
    }
    fm.edge_sets.push_back(std::move(edges));
  }
  return fm;
}

// --- scenario spec: flat key=value file ------------------------------------

inline void write_scenario_kv(const fs::path& path, const ScenarioSpec& spec) {
  std::ostringstream out;
  out << "node_count=" << spec.node_count << '\n'
      << "interior_count=" << spec.interior_count << '\n'
      << "edges_per_interior=" << spec.edges_per_interior << '\n'
      << "edge_prob=" << fmt_double(spec.edge_prob) << '\n'
      << "baseline_shape=" << fmt_double(spec.baseline_shape) << '\n'
      << "baseline_rate=" << fmt_double(spec.baseline_rate) << '\n'
      << "anomaly_prob=" << fmt_double(spec.anomaly_prob) << '\n'
      << "anomaly_shape=" << fmt_double(spec.anomaly_shape) << '\n'
      << "anomaly_rate=" << fmt_double(spec.anomaly_rate) << '\n'
      << "scenario_kind=" << to_string(spec.kind) << '\n'
      << "seed=" << spec.seed << '\n';
  write_file(path, out.str());
}

inline ScenarioSpec read_scenario_kv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(path.string() + ": missing key " + key);
    return it->second;
  };
  ScenarioSpec spec;
  spec.node_count = static_cast<int>(parse_int(need("node_count")));
  spec.interior_count = static_cast<int>(parse_int(need("interior_count")));
  spec.edges_per_interior = static_cast<int>(parse_int(need("edges_per_interior")));
  spec.edge_prob = parse_double(need("edge_prob"));
  spec.baseline_shape = parse_double(need("baseline_shape"));
  spec.baseline_rate = parse_double(need("baseline_rate"));
  spec.anomaly_prob = parse_double(need("anomaly_prob"));
  spec.anomaly_shape = parse_double(need("anomaly_shape"));
  spec.anomaly_rate = parse_double(need("anomaly_rate"));
  spec.kind = scenario_kind_from_string(need("scenario_kind"));
  spec.seed = parse_uint(need("seed"));
  return spec;
}

}  // namespace anomo::io
