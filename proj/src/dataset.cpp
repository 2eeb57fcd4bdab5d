#include "gridmp/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gridmp/powerflow.hpp"

namespace gridmp {

namespace fs = std::filesystem;

TopologyEntry make_topology_entry(const Grid& grid) {
  TopologyEntry entry;
  const int n = grid.n_buses();
  entry.adjacency = Eigen::MatrixXd::Zero(n, n);
  for (const Branch& br : grid.branches) {
    if (!br.closed) continue;
    entry.closed_branch_ids.push_back(br.id);
    entry.edges.emplace_back(br.from, br.to);
    entry.edge_branch.push_back(br.id);
    entry.edges.emplace_back(br.to, br.from);
    entry.edge_branch.push_back(br.id);
    entry.adjacency(br.from, br.to) = 1.0;
    entry.adjacency(br.to, br.from) = 1.0;
  }
  entry.dist = distance_data(grid);
  return entry;
}

Dataset generate_dataset(const Grid& grid, const DatasetConfig& config) {
  validate_grid(grid);
  Dataset ds;
  ds.grid = grid;
  ds.config = config;
  ds.tiers.low_voltage = config.low_voltage;
  ds.mask = select_measured_buses(grid, config.penetration, derive_seed(config.seed, 1));

  SwitchingScenario scenario;
  if (config.switching) {
    scenario = generate_switching_scenario(grid, config.n_timesteps, derive_seed(config.seed, 2));
  }
  auto [p_load, q_load] =
      generate_profiles(grid.n_buses(), config.n_timesteps, derive_seed(config.seed, 3));

  Rng noise_rng(derive_seed(config.seed, 4));
  std::unordered_map<std::uint64_t, int> topo_by_hash;
  std::vector<bool> state(grid.branches.size());
  for (const Branch& br : grid.branches) state[br.id] = br.closed;
  std::size_t next_event = 0;

  for (int t = 0; t < config.n_timesteps; ++t) {
    while (next_event < scenario.events.size() && scenario.events[next_event].timestep <= t) {
      state[scenario.events[next_event].branch_id] = scenario.events[next_event].close;
      ++next_event;
    }
    const Grid active = apply_switch_states(grid, state);
    const std::uint64_t hash = topology_hash(active);
    auto it = topo_by_hash.find(hash);
    int topo_id;
    if (it == topo_by_hash.end()) {
      topo_id = static_cast<int>(ds.topologies.size());
      topo_by_hash[hash] = topo_id;
      ds.topologies.push_back(make_topology_entry(active));
    } else {
      topo_id = it->second;
    }

    PowerFlowSolution sol =
        solve_power_flow(active, p_load.row(t).transpose(), q_load.row(t).transpose());
    if (!sol.converged) continue;

    GraphSample sample = assemble_sample(active, sol, ds.mask, ds.tiers, t, noise_rng);
    sample.topology_id = topo_id;
    ds.samples.push_back(std::move(sample));
  }

  ds.split = split_dataset(static_cast<int>(ds.samples.size()), derive_seed(config.seed, 5));

  std::vector<Eigen::MatrixXd> node_blocks, edge_blocks, label_blocks;
  node_blocks.reserve(ds.split.train.size());
  edge_blocks.reserve(ds.split.train.size());
  label_blocks.reserve(ds.split.train.size());
  for (int idx : ds.split.train) {
    node_blocks.push_back(ds.samples[idx].node_features);
    edge_blocks.push_back(ds.samples[idx].edge_features);
    label_blocks.push_back(ds.samples[idx].labels);
  }
  ds.node_stats = fit_feature_stats(node_blocks);
  ds.edge_stats = fit_feature_stats(edge_blocks);
  ds.label_stats = fit_feature_stats(label_blocks);
  return ds;
}

GraphSample standardized(const GraphSample& sample, const Dataset& ds) {
  GraphSample out = sample;
  out.node_features = ds.node_stats.apply(sample.node_features);
  out.edge_features = ds.edge_stats.apply(sample.edge_features);
  return out;
}

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i];
  return v;
}

void write_csv_matrix(std::ofstream& out, int sample_id, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << sample_id << "," << r;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  save_grid(ds.grid, (fs::path(dir) / "grid.json").string());

  nlohmann::ordered_json index;
  index["n_timesteps"] = ds.config.n_timesteps;
  index["penetration"] = ds.config.penetration;
  index["switching"] = ds.config.switching;
  index["low_voltage"] = ds.config.low_voltage;
  index["seed"] = ds.config.seed;
  index["tiers"] = {
      {"precise",
       {{"v_mag", ds.tiers.precise.v_mag_rate},
        {"v_ang", ds.tiers.precise.v_ang_rate},
        {"p", ds.tiers.precise.p_rate},
        {"q", ds.tiers.precise.q_rate}}},
      {"household",
       {{"v_mag", ds.tiers.household.v_mag_rate},
        {"v_ang", ds.tiers.household.v_ang_rate},
        {"p", ds.tiers.household.p_rate},
        {"q", ds.tiers.household.q_rate}}},
  };
  index["mask"] = ds.mask;
  index["topologies"] = nlohmann::ordered_json::array();
  for (const TopologyEntry& topo : ds.topologies) {
    index["topologies"].push_back({{"closed_branch_ids", topo.closed_branch_ids}});
  }
  index["samples"] = nlohmann::ordered_json::array();
  for (const GraphSample& s : ds.samples) {
    index["samples"].push_back({{"topology", s.topology_id}, {"timestep", s.timestep_index}});
  }
  index["split"] = {{"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}};
  index["node_stats"] = {{"mean", vec_to_json(ds.node_stats.mean)},
                         {"stddev", vec_to_json(ds.node_stats.stddev)}};
  index["edge_stats"] = {{"mean", vec_to_json(ds.edge_stats.mean)},
                         {"stddev", vec_to_json(ds.edge_stats.stddev)}};
  index["label_stats"] = {{"mean", vec_to_json(ds.label_stats.mean)},
                          {"stddev", vec_to_json(ds.label_stats.stddev)}};
  std::ofstream((fs::path(dir) / "index.json").string()) << index.dump(1) << "\n";

  // CSV shards per topology
  for (std::size_t topo = 0; topo < ds.topologies.size(); ++topo) {
    std::ofstream nodes((fs::path(dir) / ("nodes_" + std::to_string(topo) + ".csv")).string());
    std::ofstream edges((fs::path(dir) / ("edges_" + std::to_string(topo) + ".csv")).string());
    std::ofstream labels((fs::path(dir) / ("labels_" + std::to_string(topo) + ".csv")).string());
    nodes << "sample,node";
    for (int f = 0; f < kNodeFeatures; ++f) nodes << ",f" << f;
    nodes << "\n";
    edges << "sample,edge";
    for (int f = 0; f < kEdgeFeatures; ++f) edges << ",e" << f;
    edges << "\n";
    labels << "sample,node,v_mag_pu,v_ang_rad\n";
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const GraphSample& s = ds.samples[i];
      if (s.topology_id != static_cast<int>(topo)) continue;
      write_csv_matrix(nodes, static_cast<int>(i), s.node_features);
      write_csv_matrix(edges, static_cast<int>(i), s.edge_features);
      write_csv_matrix(labels, static_cast<int>(i), s.labels);
    }
  }
}

namespace {

/// Reads shard rows "sample,row,v0,v1,..." into per-sample matrices.
void read_csv_shard(const std::string& path, int n_cols,
                    const std::function<Eigen::MatrixXd&(int)>& target) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset shard: " + path);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const int sample_id = std::stoi(cell);
    std::getline(ss, cell, ',');
    const int row = std::stoi(cell);
    Eigen::MatrixXd& m = target(sample_id);
    for (int c = 0; c < n_cols; ++c) {
      std::getline(ss, cell, ',');
      m(row, c) = std::stod(cell);
    }
  }
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.grid = load_grid((fs::path(dir) / "grid.json").string());

  std::ifstream in((fs::path(dir) / "index.json").string());
  if (!in) throw std::runtime_error("cannot open dataset index: " + dir);
  nlohmann::json index = nlohmann::json::parse(in);

  ds.config.n_timesteps = index.at("n_timesteps").get<int>();
  ds.config.penetration = index.at("penetration").get<double>();
  ds.config.switching = index.at("switching").get<bool>();
  ds.config.low_voltage = index.at("low_voltage").get<bool>();
  ds.config.seed = index.at("seed").get<std::uint64_t>();
  ds.tiers.low_voltage = ds.config.low_voltage;
  ds.tiers.precise = {index["tiers"]["precise"]["v_mag"].get<double>(),
                      index["tiers"]["precise"]["v_ang"].get<double>(),
                      index["tiers"]["precise"]["p"].get<double>(),
                      index["tiers"]["precise"]["q"].get<double>()};
  ds.tiers.household = {index["tiers"]["household"]["v_mag"].get<double>(),
                        index["tiers"]["household"]["v_ang"].get<double>(),
                        index["tiers"]["household"]["p"].get<double>(),
                        index["tiers"]["household"]["q"].get<double>()};
  ds.mask = index.at("mask").get<std::vector<bool>>();

  for (const auto& jt : index.at("topologies")) {
    const auto ids = jt.at("closed_branch_ids").get<std::vector<int>>();
    std::vector<bool> closed(ds.grid.branches.size(), false);
    for (int id : ids) closed[id] = true;
    ds.topologies.push_back(make_topology_entry(apply_switch_states(ds.grid, closed)));
  }

  const auto& jsamples = index.at("samples");
  const int n = ds.grid.n_buses();
  ds.samples.resize(jsamples.size());
  for (std::size_t i = 0; i < jsamples.size(); ++i) {
    GraphSample& s = ds.samples[i];
    s.topology_id = jsamples[i].at("topology").get<int>();
    s.timestep_index = jsamples[i].at("timestep").get<int>();
    s.measured_mask = ds.mask;
    s.node_features.setZero(n, kNodeFeatures);
    s.labels.setZero(n, 2);
    s.edge_features.setZero(static_cast<int>(ds.topologies[s.topology_id].edges.size()),
                            kEdgeFeatures);
  }

  for (std::size_t topo = 0; topo < ds.topologies.size(); ++topo) {
    const std::string suffix = std::to_string(topo) + ".csv";
    read_csv_shard((fs::path(dir) / ("nodes_" + suffix)).string(), kNodeFeatures,
                   [&](int id) -> Eigen::MatrixXd& { return ds.samples[id].node_features; });
    read_csv_shard((fs::path(dir) / ("edges_" + suffix)).string(), kEdgeFeatures,
                   [&](int id) -> Eigen::MatrixXd& { return ds.samples[id].edge_features; });
    read_csv_shard((fs::path(dir) / ("labels_" + suffix)).string(), 2,
                   [&](int id) -> Eigen::MatrixXd& { return ds.samples[id].labels; });
  }

  ds.split.train = index["split"]["train"].get<std::vector<int>>();
  ds.split.val = index["split"]["val"].get<std::vector<int>>();
  ds.split.test = index["split"]["test"].get<std::vector<int>>();
  ds.node_stats.mean = vec_from_json(index["node_stats"]["mean"]);
  ds.node_stats.stddev = vec_from_json(index["node_stats"]["stddev"]);
  ds.edge_stats.mean = vec_from_json(index["edge_stats"]["mean"]);
  ds.edge_stats.stddev = vec_from_json(index["edge_stats"]["stddev"]);
  ds.label_stats.mean = vec_from_json(index["label_stats"]["mean"]);
  ds.label_stats.stddev = vec_from_json(index["label_stats"]["stddev"]);
  return ds;
}

}  // namespace gridmp
