#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gridmp/grid.hpp"

namespace gridmp {

/// Sentinel hop count for unreachable bus pairs.
inline constexpr int kUnreachable = -1;

/// Per-topology structural matrices consumed by the GNAN-family models:
/// hop counts l_ij, scaled distances s_ij = 1/(1+l_ij) (0 when
/// unreachable), and hop-shell counts n_ij = #{k : l_ik = l_ij}.
struct DistanceData {
  Eigen::MatrixXi hops;
  Eigen::MatrixXd scaled;
  Eigen::MatrixXi shell_counts;
};

struct SwitchEvent {
  int timestep = 0;
  int branch_id = 0;
  bool close = false;  // new state after the event
};

struct SwitchingScenario {
  std::vector<SwitchEvent> events;  // sorted by (timestep, branch_id)
  /// True when the grid had no redundant line and the scenario is empty.
  bool no_redundancy = false;
};

/// Closed-branch adjacency as vector of neighbor lists (parallel branches
/// collapse to a single adjacency entry).
std::vector<std::vector<int>> closed_adjacency(const Grid& grid);

/// True iff every bus is reachable from every other through closed branches.
bool is_connected(const Grid& grid);

/// Minimum closed-branch hop counts between all bus pairs (BFS per bus).
/// Unreachable pairs carry kUnreachable.
Eigen::MatrixXi all_pairs_hops(const Grid& grid);

DistanceData distance_data(const Grid& grid);

/// Ids of closed branches whose sole removal keeps the closed subgraph
/// connected. Throws std::invalid_argument if the grid is disconnected.
std::vector<int> list_redundant_lines(const Grid& grid);

/// Random switching scenario: U[1, ceil(0.2 N)] buses are selected, each
/// selected bus with an incident redundant line contributes U[1, 10] toggle
/// events at distinct random timesteps. Events that would disconnect any
/// bus from the slack are dropped during a replay pass, so every
/// intermediate topology stays connected.
SwitchingScenario generate_switching_scenario(const Grid& grid, int n_timesteps,
                                              std::uint64_t seed);

/// Switch-state vector (indexed by branch id) after applying every event
/// with event.timestep <= t, starting from the grid's base states.
std::vector<bool> switch_states_at(const Grid& grid, const SwitchingScenario& scenario, int t);

/// Order-independent hash of the closed-branch id set, used to cache
/// per-topology DistanceData during scenario replay.
std::uint64_t topology_hash(const Grid& grid);

}  // namespace gridmp
