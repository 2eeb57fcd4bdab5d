#include "gridmp/topology.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

#include "gridmp/rng.hpp"

namespace gridmp {

std::vector<std::vector<int>> closed_adjacency(const Grid& grid) {
  std::vector<std::vector<int>> adj(grid.n_buses());
  for (const Branch& br : grid.branches) {
    if (!br.closed) continue;
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  for (auto& nbrs : adj) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  return adj;
}

namespace {

int reachable_count(const std::vector<std::vector<int>>& adj, int start) {
  std::vector<char> seen(adj.size(), 0);
  std::deque<int> queue{start};
  seen[start] = 1;
  int count = 1;
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        queue.push_back(v);
      }
    }
  }
  return count;
}

bool connected_with_states(const Grid& grid, const std::vector<bool>& closed) {
  std::vector<std::vector<int>> adj(grid.n_buses());
  for (const Branch& br : grid.branches) {
    if (!closed[br.id]) continue;
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  return reachable_count(adj, grid.slack_bus) == grid.n_buses();
}

}  // namespace

bool is_connected(const Grid& grid) {
  if (grid.n_buses() == 0) return true;
  return reachable_count(closed_adjacency(grid), 0) == grid.n_buses();
}

Eigen::MatrixXi all_pairs_hops(const Grid& grid) {
  const int n = grid.n_buses();
  const auto adj = closed_adjacency(grid);
  Eigen::MatrixXi hops = Eigen::MatrixXi::Constant(n, n, kUnreachable);
  for (int src = 0; src < n; ++src) {
    hops(src, src) = 0;
    std::deque<int> queue{src};
    while (!queue.empty()) {
      int u = queue.front();
      queue.pop_front();
      for (int v : adj[u]) {
        if (hops(src, v) == kUnreachable) {
          hops(src, v) = hops(src, u) + 1;
          queue.push_back(v);
        }
      }
    }
  }
  return hops;
}

DistanceData distance_data(const Grid& grid) {
  DistanceData dd;
  dd.hops = all_pairs_hops(grid);
  const int n = static_cast<int>(dd.hops.rows());
  dd.scaled = Eigen::MatrixXd::Zero(n, n);
  dd.shell_counts = Eigen::MatrixXi::Ones(n, n);
  for (int i = 0; i < n; ++i) {
    // shell size per hop value, seen from node i
    std::vector<int> count_by_hop;
    int unreachable = 0;
    for (int j = 0; j < n; ++j) {
      int h = dd.hops(i, j);
      if (h == kUnreachable) {
        ++unreachable;
        continue;
      }
      if (h >= static_cast<int>(count_by_hop.size())) count_by_hop.resize(h + 1, 0);
      ++count_by_hop[h];
    }
    for (int j = 0; j < n; ++j) {
      int h = dd.hops(i, j);
      if (h == kUnreachable) {
        dd.scaled(i, j) = 0.0;
        dd.shell_counts(i, j) = std::max(unreachable, 1);
      } else {
        dd.scaled(i, j) = 1.0 / (1.0 + h);
        dd.shell_counts(i, j) = count_by_hop[h];
      }
    }
  }
  return dd;
}

std::vector<int> list_redundant_lines(const Grid& grid) {
  if (!is_connected(grid)) {
    throw std::invalid_argument("list_redundant_lines: grid is disconnected");
  }
  std::vector<bool> closed(grid.branches.size());
  for (const Branch& br : grid.branches) closed[br.id] = br.closed;

  std::vector<int> redundant;
  for (const Branch& br : grid.branches) {
    if (!br.closed) continue;
    closed[br.id] = false;
    if (connected_with_states(grid, closed)) redundant.push_back(br.id);
    closed[br.id] = true;
  }
  return redundant;
}

SwitchingScenario generate_switching_scenario(const Grid& grid, int n_timesteps,
                                              std::uint64_t seed) {
  if (n_timesteps < 1) {
    throw std::invalid_argument("generate_switching_scenario: n_timesteps must be >= 1");
  }
  validate_grid(grid);
  SwitchingScenario scenario;
  const std::vector<int> redundant = list_redundant_lines(grid);
  if (redundant.empty()) {
    scenario.no_redundancy = true;
    return scenario;
  }

  Rng rng(derive_seed(seed, 0x73636e72));
  const int n = grid.n_buses();
  const int max_buses = static_cast<int>(std::ceil(0.2 * n));
  const int n_selected = static_cast<int>(rng.uniform_int(1, std::max(1, max_buses)));

  std::vector<int> bus_ids(n);
  for (int i = 0; i < n; ++i) bus_ids[i] = i;
  for (int i = n - 1; i > 0; --i) {
    std::swap(bus_ids[i], bus_ids[rng.uniform_int(0, i)]);
  }
  bus_ids.resize(n_selected);

  std::vector<char> is_redundant(grid.branches.size(), 0);
  for (int id : redundant) is_redundant[id] = 1;

  struct Toggle {
    int timestep;
    int branch_id;
  };
  std::vector<Toggle> toggles;
  std::vector<char> line_used(grid.branches.size(), 0);
  for (int bus : bus_ids) {
    // incident redundant lines of the selected bus
    std::vector<int> candidates;
    for (const Branch& br : grid.branches) {
      if (!is_redundant[br.id] || line_used[br.id]) continue;
      if (br.from == bus || br.to == bus) candidates.push_back(br.id);
    }
    if (candidates.empty()) continue;
    const int line = candidates[rng.uniform_int(0, static_cast<long>(candidates.size()) - 1)];
    line_used[line] = 1;

    const int n_events = static_cast<int>(rng.uniform_int(1, 10));
    std::vector<char> used(n_timesteps, 0);
    for (int e = 0; e < n_events && e < n_timesteps; ++e) {
      int t;
      do {
        t = static_cast<int>(rng.uniform_int(0, n_timesteps - 1));
      } while (used[t]);
      used[t] = 1;
      toggles.push_back({t, line});
    }
  }

  std::sort(toggles.begin(), toggles.end(), [](const Toggle& a, const Toggle& b) {
    return a.timestep != b.timestep ? a.timestep < b.timestep : a.branch_id < b.branch_id;
  });

  // replay, keeping only events that leave every bus supplied
  std::vector<bool> state(grid.branches.size());
  for (const Branch& br : grid.branches) state[br.id] = br.closed;
  for (const Toggle& tg : toggles) {
    const bool new_state = !state[tg.branch_id];
    state[tg.branch_id] = new_state;
    if (!connected_with_states(grid, state)) {
      state[tg.branch_id] = !new_state;  // drop the event
      continue;
    }
    scenario.events.push_back({tg.timestep, tg.branch_id, new_state});
  }
  return scenario;
}

std::vector<bool> switch_states_at(const Grid& grid, const SwitchingScenario& scenario, int t) {
  std::vector<bool> state(grid.branches.size());
  for (const Branch& br : grid.branches) state[br.id] = br.closed;
  for (const SwitchEvent& ev : scenario.events) {
    if (ev.timestep > t) break;
    state[ev.branch_id] = ev.close;
  }
  return state;
}

std::uint64_t topology_hash(const Grid& grid) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Branch& br : grid.branches) {
    if (!br.closed) continue;
    h ^= static_cast<std::uint64_t>(br.id) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

}  // namespace gridmp
