#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "gridmp/grid.hpp"

namespace gridmp {

/// Bus admittance matrix from closed branches. Phase-shifting branches use
/// the ideal unit-magnitude ratio model, so Y is symmetric whenever every
/// shift is zero. Throws std::invalid_argument on a zero-impedance branch.
Eigen::MatrixXcd build_admittance(const Grid& grid);

struct PowerFlowSolution {
  Eigen::VectorXd v_mag;   // p.u.
  Eigen::VectorXd v_ang;   // rad
  Eigen::VectorXd p_inj;   // p.u., computed at the solution (slack included)
  Eigen::VectorXd q_inj;   // p.u.
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;            // p.u.
  std::vector<double> mismatch_history; // max mismatch per iteration
  std::string note;                     // diagnostic on failure
};

/// Newton-Raphson on the polar mismatch equations, flat start, dense LU.
/// Loads are constant-power PQ withdrawals (specified injection is
/// -p_load, -q_load); non-convergence within max_iter returns
/// converged=false rather than throwing. Throws std::invalid_argument on a
/// disconnected grid or load-vector size mismatch.
PowerFlowSolution solve_power_flow(const Grid& grid, const Eigen::VectorXd& p_load,
                                   const Eigen::VectorXd& q_load, double tol = 1e-8,
                                   int max_iter = 30);

/// Complex bus injections S_i = V_i sum_j conj(Y_ij V_j) for given voltages.
Eigen::VectorXcd bus_injections(const Eigen::MatrixXcd& ybus, const Eigen::VectorXd& v_mag,
                                const Eigen::VectorXd& v_ang);

/// Branch power flow (from-side and to-side) of one closed branch at a
/// solved operating point.
struct BranchFlow {
  std::complex<double> s_from;
  std::complex<double> s_to;
};
BranchFlow branch_flow(const Branch& br, const Eigen::VectorXd& v_mag,
                       const Eigen::VectorXd& v_ang);

}  // namespace gridmp
