#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gridmp/grid.hpp"
#include "gridmp/powerflow.hpp"
#include "gridmp/rng.hpp"

namespace gridmp {

/// Fractional error rates of one measurement device class.
struct NoiseTier {
  double v_mag_rate = 0.0;
  double v_ang_rate = 0.0;
  double p_rate = 0.0;
  double q_rate = 0.0;
};

/// Station-grade equipment: 0.2% / 0.5% voltage magnitude / angle,
/// 0.5% / 1.0% active / reactive power.
NoiseTier precise_tier();

/// Household metering: 0.5% / 1.0% voltage, 1.0% / 2.0% power.
NoiseTier household_tier();

/// Tier assignment rule: medium-voltage grids use the precise tier
/// everywhere; low-voltage grids use it only on transformer branches and
/// the household tier elsewhere.
struct TierConfig {
  NoiseTier precise = precise_tier();
  NoiseTier household = household_tier();
  bool low_voltage = false;

  NoiseTier node_tier() const { return low_voltage ? household : precise; }
  NoiseTier edge_tier(bool transformer) const {
    return (!low_voltage || transformer) ? precise : household;
  }
};

inline constexpr int kNodeFeatures = 9;
inline constexpr int kEdgeFeatures = 9;
inline constexpr int kTimestepsPerDay = 96;  // 15-minute resolution
inline constexpr double kAngleNoiseFloor = 0.01;  // rad

/// One training sample: per-bus features, per-directed-closed-branch edge
/// features, measurement mask and noiseless labels.
struct GraphSample {
  int topology_id = 0;
  int timestep_index = 0;
  Eigen::MatrixXd node_features;  // N x kNodeFeatures
  Eigen::MatrixXd edge_features;  // M x kEdgeFeatures, M = 2 * #closed branches
  std::vector<bool> measured_mask;
  Eigen::MatrixXd labels;  // N x 2 (v_mag p.u., v_ang rad)
};

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

/// Per-bus load time series: daily sinusoid with lognormal noise, active
/// power clipped to [0, 0.1] p.u., reactive = active times a per-bus ratio
/// drawn in [0.2, 0.5]. Returns (p, q), each n_timesteps x n_buses.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> generate_profiles(int n_buses, int n_timesteps,
                                                              std::uint64_t seed);

/// ceil(rate * N) measured buses, slack always among them; fixed per
/// experiment rather than per timestep.
std::vector<bool> select_measured_buses(const Grid& grid, double rate, std::uint64_t seed);

/// value + draw * (rate * max(|value|, floor)); floor = 0 for everything
/// except angles, which use kAngleNoiseFloor.
double apply_noise(double value, double rate, double draw, double floor = 0.0);

/// Builds a sample from a converged solution: noisy measurements on
/// measured buses (zeros plus flag 0 elsewhere), per-directed-closed-branch
/// edge rows ordered (branch asc, from->to then to->from), noiseless
/// labels. Throws std::invalid_argument when solution.converged is false.
GraphSample assemble_sample(const Grid& grid, const PowerFlowSolution& solution,
                            const std::vector<bool>& mask, const TierConfig& tiers,
                            int time_index, Rng& rng);

/// Random permutation, contiguous cut at 80% / 90%. Throws on n < 10.
DatasetSplit split_dataset(int n_samples, std::uint64_t seed);

/// Per-feature z-score statistics, fit on the training split only.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // floored at 1e-12 -> 1.0 for constant features

  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
};

FeatureStats fit_feature_stats(const std::vector<Eigen::MatrixXd>& feature_blocks);

}  // namespace gridmp
