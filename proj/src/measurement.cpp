#include "gridmp/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gridmp {

NoiseTier precise_tier() { return {0.002, 0.005, 0.005, 0.010}; }
NoiseTier household_tier() { return {0.005, 0.010, 0.010, 0.020}; }

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> generate_profiles(int n_buses, int n_timesteps,
                                                              std::uint64_t seed) {
  if (n_timesteps < 1) throw std::invalid_argument("generate_profiles: n_timesteps must be >= 1");
  Rng rng(derive_seed(seed, 0x70726f66));
  Eigen::MatrixXd p(n_timesteps, n_buses), q(n_timesteps, n_buses);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int b = 0; b < n_buses; ++b) {
    const double base = rng.uniform(0.03, 0.06);
    const double amp = rng.uniform(0.01, 0.03);
    const double phase = rng.uniform(0.0, two_pi);
    const double qp_ratio = rng.uniform(0.2, 0.5);
    for (int t = 0; t < n_timesteps; ++t) {
      const double daily = base + amp * std::sin(two_pi * (t % kTimestepsPerDay) /
                                                     static_cast<double>(kTimestepsPerDay) +
                                                 phase);
      const double noise = std::exp(0.08 * rng.normal());
      p(t, b) = std::clamp(daily * noise, 0.0, 0.1);
      q(t, b) = p(t, b) * qp_ratio;
    }
  }
  return {p, q};
}

std::vector<bool> select_measured_buses(const Grid& grid, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) {
    throw std::invalid_argument("select_measured_buses: rate must be in [0, 1]");
  }
  const int n = grid.n_buses();
  const int target = static_cast<int>(std::ceil(rate * n));
  std::vector<bool> mask(n, false);
  mask[grid.slack_bus] = true;

  Rng rng(derive_seed(seed, 0x6d61736b));
  std::vector<int> others;
  others.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    if (i != grid.slack_bus) others.push_back(i);
  }
  for (int i = static_cast<int>(others.size()) - 1; i > 0; --i) {
    std::swap(others[i], others[rng.uniform_int(0, i)]);
  }
  for (int k = 0; k < target - 1 && k < static_cast<int>(others.size()); ++k) {
    mask[others[k]] = true;
  }
  return mask;
}

double apply_noise(double value, double rate, double draw, double floor) {
  return value + draw * (rate * std::max(std::abs(value), floor));
}

GraphSample assemble_sample(const Grid& grid, const PowerFlowSolution& solution,
                            const std::vector<bool>& mask, const TierConfig& tiers,
                            int time_index, Rng& rng) {
  if (!solution.converged) {
    throw std::invalid_argument("assemble_sample: rejected non-converged power flow (mismatch " +
                                std::to_string(solution.max_mismatch) + ")");
  }
  const int n = grid.n_buses();
  if (static_cast<int>(mask.size()) != n) {
    throw std::invalid_argument("assemble_sample: mask size mismatch");
  }

  GraphSample sample;
  sample.timestep_index = time_index;
  sample.measured_mask = mask;
  sample.labels.resize(n, 2);
  sample.labels.col(0) = solution.v_mag;
  sample.labels.col(1) = solution.v_ang;

  const double two_pi = 2.0 * std::numbers::pi;
  const double t_frac = static_cast<double>(time_index % kTimestepsPerDay) / kTimestepsPerDay;
  const NoiseTier node_tier = tiers.node_tier();

  sample.node_features = Eigen::MatrixXd::Zero(n, kNodeFeatures);
  for (int i = 0; i < n; ++i) {
    auto row = sample.node_features.row(i);
    if (mask[i]) {
      row(0) = apply_noise(solution.v_mag(i), node_tier.v_mag_rate, rng.normal());
      row(1) = apply_noise(solution.v_ang(i), node_tier.v_ang_rate, rng.normal(),
                           kAngleNoiseFloor);
      row(2) = apply_noise(solution.p_inj(i), node_tier.p_rate, rng.normal());
      row(3) = apply_noise(solution.q_inj(i), node_tier.q_rate, rng.normal());
      row(4) = 1.0;
    }
    row(5) = (i == grid.slack_bus) ? 1.0 : 0.0;
    row(6) = grid.buses[i].vn_pu;
    row(7) = std::sin(two_pi * t_frac);
    row(8) = std::cos(two_pi * t_frac);
  }

  // edge rows: closed branches in id order, from->to row then to->from row
  int n_closed = 0;
  for (const Branch& br : grid.branches) n_closed += br.closed ? 1 : 0;
  sample.edge_features.resize(2 * n_closed, kEdgeFeatures);
  int row_idx = 0;
  for (const Branch& br : grid.branches) {
    if (!br.closed) continue;
    const NoiseTier tier = tiers.edge_tier(br.transformer);
    const BranchFlow flow = branch_flow(br, solution.v_mag, solution.v_ang);
    const std::complex<double> y = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
    for (int dir = 0; dir < 2; ++dir) {
      const std::complex<double> s = (dir == 0) ? flow.s_from : flow.s_to;
      auto row = sample.edge_features.row(row_idx++);
      const double p_std = tier.p_rate * std::abs(s.real());
      const double q_std = tier.q_rate * std::abs(s.imag());
      row(0) = apply_noise(s.real(), tier.p_rate, rng.normal());
      row(1) = apply_noise(s.imag(), tier.q_rate, rng.normal());
      row(2) = p_std;
      row(3) = q_std;
      row(4) = y.real();
      row(5) = y.imag();
      row(6) = br.shift_rad;
      row(7) = br.transformer ? 1.0 : 0.0;
      row(8) = 1.0;  // switch state; only closed branches have rows
    }
  }
  return sample;
}

DatasetSplit split_dataset(int n_samples, std::uint64_t seed) {
  if (n_samples < 10) {
    throw std::invalid_argument("split_dataset: need at least 10 samples, got " +
                                std::to_string(n_samples));
  }
  std::vector<int> perm(n_samples);
  for (int i = 0; i < n_samples; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, 0x73706c74));
  for (int i = n_samples - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  }
  const int cut80 = (n_samples * 8) / 10;
  const int cut90 = (n_samples * 9) / 10;
  DatasetSplit split;
  split.train.assign(perm.begin(), perm.begin() + cut80);
  split.val.assign(perm.begin() + cut80, perm.begin() + cut90);
  split.test.assign(perm.begin() + cut90, perm.end());
  return split;
}

Eigen::MatrixXd FeatureStats::apply(const Eigen::MatrixXd& features) const {
  Eigen::MatrixXd out = features;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= stddev.transpose().array();
  return out;
}

FeatureStats fit_feature_stats(const std::vector<Eigen::MatrixXd>& feature_blocks) {
  if (feature_blocks.empty()) throw std::invalid_argument("fit_feature_stats: no blocks");
  const int f = static_cast<int>(feature_blocks.front().cols());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(f);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(f);
  long count = 0;
  for (const auto& block : feature_blocks) {
    sum += block.colwise().sum().transpose();
    sum_sq += block.array().square().colwise().sum().transpose().matrix();
    count += block.rows();
  }
  FeatureStats stats;
  stats.mean = sum / static_cast<double>(count);
  Eigen::VectorXd var =
      sum_sq / static_cast<double>(count) - stats.mean.array().square().matrix();
  stats.stddev = var.cwiseMax(0.0).cwiseSqrt();
  for (int i = 0; i < f; ++i) {
    if (stats.stddev(i) < 1e-12) stats.stddev(i) = 1.0;
  }
  return stats;
}

}  // namespace gridmp
