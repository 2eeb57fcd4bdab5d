#include "gridmp/grid.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gridmp/rng.hpp"
#include "gridmp/topology.hpp"

namespace gridmp {

void validate_grid(const Grid& grid) {
  const int n = grid.n_buses();
  if (n < 1) throw std::invalid_argument("grid: no buses");
  int slack_count = 0;
  for (const Bus& b : grid.buses) {
    if (b.role == BusRole::Slack) ++slack_count;
  }
  if (slack_count != 1) {
    throw std::invalid_argument("grid: expected exactly one slack bus, found " +
                                std::to_string(slack_count));
  }
  if (grid.slack_bus < 0 || grid.slack_bus >= n ||
      grid.buses[grid.slack_bus].role != BusRole::Slack) {
    throw std::invalid_argument("grid: slack_bus does not point at the slack");
  }
  for (const Branch& br : grid.branches) {
    if (br.from < 0 || br.from >= n || br.to < 0 || br.to >= n) {
      throw std::invalid_argument("grid: branch " + std::to_string(br.id) +
                                  " has invalid endpoints");
    }
    if (br.from == br.to) {
      throw std::invalid_argument("grid: branch " + std::to_string(br.id) + " is a self-branch");
    }
    if (br.r_pu < 0.0) {
      throw std::invalid_argument("grid: branch " + std::to_string(br.id) +
                                  " has negative resistance");
    }
    if (br.x_pu == 0.0) {
      throw std::invalid_argument("grid: branch " + std::to_string(br.id) + " has zero reactance");
    }
  }
  if (!is_connected(grid)) {
    throw std::invalid_argument("grid: closed-branch subgraph is disconnected");
  }
}

namespace {

Branch draw_branch(int id, int from, int to, Rng& rng) {
  Branch br;
  br.id = id;
  br.from = from;
  br.to = to;
  br.r_pu = rng.log_uniform(0.01, 0.1);
  br.x_pu = rng.log_uniform(0.02, 0.2);
  br.closed = true;
  return br;
}

bool directly_connected(const Grid& grid, int a, int b) {
  for (const Branch& br : grid.branches) {
    if ((br.from == a && br.to == b) || (br.from == b && br.to == a)) return true;
  }
  return false;
}

void add_extra_lines(Grid& grid, int count, Rng& rng) {
  const int n = grid.n_buses();
  for (int added = 0; added < count; ++added) {
    int from = -1, to = -1;
    // prefer non-adjacent pairs; fall back to parallel lines on tiny grids
    for (int attempt = 0; attempt < 200; ++attempt) {
      int a = static_cast<int>(rng.uniform_int(0, n - 1));
      int b = static_cast<int>(rng.uniform_int(0, n - 1));
      if (a == b) continue;
      if (attempt < 100 && directly_connected(grid, a, b)) continue;
      from = a;
      to = b;
      break;
    }
    if (from < 0) {
      from = 0;
      to = 1 % n;
    }
    grid.branches.push_back(draw_branch(grid.n_branches(), from, to, rng));
  }
}

}  // namespace

Grid build_synthetic_grid(GridKind kind, int n_buses, std::uint64_t seed) {
  if (n_buses < 2) {
    throw std::invalid_argument("build_synthetic_grid: n_buses must be >= 2, got " +
                                std::to_string(n_buses));
  }
  Rng rng(derive_seed(seed, 0x67726964));
  Grid grid;
  grid.buses.resize(n_buses);
  for (int i = 0; i < n_buses; ++i) {
    grid.buses[i].id = i;
    grid.buses[i].vn_pu = 1.0;
    grid.buses[i].role = (i == 0) ? BusRole::Slack : BusRole::PQ;
  }
  grid.slack_bus = 0;

  // random attachment tree: bus i hangs off a uniform earlier bus
  for (int i = 1; i < n_buses; ++i) {
    int parent = static_cast<int>(rng.uniform_int(0, i - 1));
    grid.branches.push_back(draw_branch(grid.n_branches(), parent, i, rng));
  }
  // feeder head is the substation transformer
  grid.branches[0].transformer = true;

  const int extra = (kind == GridKind::Meshed)
                        ? static_cast<int>(std::ceil(0.15 * n_buses))
                        : static_cast<int>(std::ceil(0.1 * n_buses));
  add_extra_lines(grid, extra, rng);

  validate_grid(grid);
  return grid;
}

Grid apply_switch_states(const Grid& grid, const std::vector<bool>& closed) {
  if (closed.size() != grid.branches.size()) {
    throw std::invalid_argument("apply_switch_states: state vector size mismatch");
  }
  Grid out = grid;
  for (std::size_t i = 0; i < closed.size(); ++i) out.branches[i].closed = closed[i];
  return out;
}

std::string grid_to_json(const Grid& grid) {
  nlohmann::ordered_json doc;
  doc["buses"] = nlohmann::ordered_json::array();
  for (const Bus& b : grid.buses) {
    doc["buses"].push_back({{"id", b.id},
                            {"vn_pu", b.vn_pu},
                            {"role", b.role == BusRole::Slack ? "slack" : "pq"}});
  }
  doc["branches"] = nlohmann::ordered_json::array();
  for (const Branch& br : grid.branches) {
    doc["branches"].push_back({{"id", br.id},
                               {"from", br.from},
                               {"to", br.to},
                               {"r_pu", br.r_pu},
                               {"x_pu", br.x_pu},
                               {"closed", br.closed},
                               {"transformer", br.transformer},
                               {"shift_rad", br.shift_rad}});
  }
  doc["slack"] = grid.slack_bus;
  return doc.dump(2);
}

Grid grid_from_json(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text);
  Grid grid;
  for (const auto& jb : doc.at("buses")) {
    Bus b;
    b.id = jb.at("id").get<int>();
    b.vn_pu = jb.at("vn_pu").get<double>();
    const std::string role = jb.at("role").get<std::string>();
    if (role == "slack") {
      b.role = BusRole::Slack;
    } else if (role == "pq") {
      b.role = BusRole::PQ;
    } else {
      throw std::invalid_argument("grid file: unknown bus role '" + role + "'");
    }
    grid.buses.push_back(b);
  }
  for (const auto& jb : doc.at("branches")) {
    Branch br;
    br.id = jb.at("id").get<int>();
    br.from = jb.at("from").get<int>();
    br.to = jb.at("to").get<int>();
    br.r_pu = jb.at("r_pu").get<double>();
    br.x_pu = jb.at("x_pu").get<double>();
    br.closed = jb.at("closed").get<bool>();
    br.transformer = jb.at("transformer").get<bool>();
    br.shift_rad = jb.at("shift_rad").get<double>();
    grid.branches.push_back(br);
  }
  grid.slack_bus = doc.at("slack").get<int>();
  return grid;
}

void save_grid(const Grid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << grid_to_json(grid) << "\n";
}

Grid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open grid file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return grid_from_json(ss.str());
}

}  // namespace gridmp
