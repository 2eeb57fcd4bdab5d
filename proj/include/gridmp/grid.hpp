#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gridmp {

enum class BusRole { Slack, PQ };

struct Bus {
  int id = 0;
  double vn_pu = 1.0;
  BusRole role = BusRole::PQ;
};

struct Branch {
  int id = 0;
  int from = 0;
  int to = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
  bool closed = true;
  bool transformer = false;
  double shift_rad = 0.0;
};

/// A distribution grid: buses, branches with switch state, one slack bus.
/// Immutable after construction in all pipelines; topology changes are
/// expressed as new Grid values (see apply_switch_states).
struct Grid {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  int slack_bus = 0;

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_branches() const { return static_cast<int>(branches.size()); }
};

enum class GridKind { Radial, Meshed };

/// Throws std::invalid_argument describing the first violated invariant:
/// exactly one slack, valid branch endpoints, no self-branches, r >= 0,
/// x != 0, and a connected closed-branch subgraph.
void validate_grid(const Grid& grid);

/// Random synthetic grid. Radial: random attachment tree plus
/// ceil(0.1 n) closed redundant lines; meshed: tree plus ceil(0.15 n)
/// closed tie lines. Bus 0 is the slack; branch 0 is the feeder
/// transformer. Impedances are log-uniform, r in [0.01, 0.1] and
/// x in [0.02, 0.2] p.u.
Grid build_synthetic_grid(GridKind kind, int n_buses, std::uint64_t seed);

/// Copy of `grid` with branch switch states replaced (closed[i] applies to
/// branch id i).
Grid apply_switch_states(const Grid& grid, const std::vector<bool>& closed);

std::string grid_to_json(const Grid& grid);
Grid grid_from_json(const std::string& text);
void save_grid(const Grid& grid, const std::string& path);
Grid load_grid(const std::string& path);

}  // namespace gridmp
