#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gridmp/grid.hpp"
#include "gridmp/measurement.hpp"
#include "gridmp/topology.hpp"

namespace gridmp {

/// Static structure of one active topology: directed closed-branch edges
/// (aligned 1:1 with GraphSample edge rows), distance matrices and binary
/// adjacency. Computed once per distinct topology and shared.
struct TopologyEntry {
  std::vector<int> closed_branch_ids;
  std::vector<std::pair<int, int>> edges;  // (src, dst) per directed closed branch
  std::vector<int> edge_branch;            // branch id per directed edge
  DistanceData dist;
  Eigen::MatrixXd adjacency;  // N x N binary, parallel branches collapsed
};

TopologyEntry make_topology_entry(const Grid& grid);

struct DatasetConfig {
  int n_timesteps = 500;
  double penetration = 0.9;
  bool switching = true;
  bool low_voltage = true;
  std::uint64_t seed = 0;
};

/// A fully generated dataset: base grid, per-topology structure, samples,
/// split and training-split feature statistics.
struct Dataset {
  Grid grid;
  DatasetConfig config;
  TierConfig tiers;
  std::vector<bool> mask;
  std::vector<TopologyEntry> topologies;
  std::vector<GraphSample> samples;
  DatasetSplit split;
  FeatureStats node_stats;
  FeatureStats edge_stats;
  FeatureStats label_stats;  // per label channel, training split only

  int n_buses() const { return grid.n_buses(); }
  const TopologyEntry& topology_of(const GraphSample& s) const {
    return topologies[s.topology_id];
  }
};

/// Runs the full pipeline: switching scenario, load profiles, one power
/// flow per timestep, sample assembly, split, train-split statistics.
/// Timesteps whose power flow fails to converge are skipped.
Dataset generate_dataset(const Grid& grid, const DatasetConfig& config);

/// Sample with z-scored node and edge features (labels untouched).
GraphSample standardized(const GraphSample& sample, const Dataset& ds);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace gridmp
