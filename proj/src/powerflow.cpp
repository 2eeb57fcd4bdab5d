#include "gridmp/powerflow.hpp"

#include <cmath>
#include <stdexcept>

#include "gridmp/topology.hpp"

namespace gridmp {

using std::complex;

Eigen::MatrixXcd build_admittance(const Grid& grid) {
  const int n = grid.n_buses();
  Eigen::MatrixXcd ybus = Eigen::MatrixXcd::Zero(n, n);
  for (const Branch& br : grid.branches) {
    if (!br.closed) continue;
    const complex<double> z(br.r_pu, br.x_pu);
    if (std::abs(z) == 0.0) {
      throw std::invalid_argument("build_admittance: branch " + std::to_string(br.id) +
                                  " has zero impedance");
    }
    const complex<double> y = 1.0 / z;
    const complex<double> t = std::polar(1.0, br.shift_rad);
    ybus(br.from, br.from) += y;
    ybus(br.to, br.to) += y;
    ybus(br.from, br.to) -= y * t;
    ybus(br.to, br.from) -= y * std::conj(t);
  }
  return ybus;
}

Eigen::VectorXcd bus_injections(const Eigen::MatrixXcd& ybus, const Eigen::VectorXd& v_mag,
                                const Eigen::VectorXd& v_ang) {
  const int n = static_cast<int>(v_mag.size());
  Eigen::VectorXcd v(n);
  for (int i = 0; i < n; ++i) v(i) = std::polar(v_mag(i), v_ang(i));
  Eigen::VectorXcd current = ybus * v;
  return v.cwiseProduct(current.conjugate());
}

BranchFlow branch_flow(const Branch& br, const Eigen::VectorXd& v_mag,
                       const Eigen::VectorXd& v_ang) {
  const complex<double> y = 1.0 / complex<double>(br.r_pu, br.x_pu);
  const complex<double> t = std::polar(1.0, br.shift_rad);
  const complex<double> vf = std::polar(v_mag(br.from), v_ang(br.from));
  const complex<double> vt = std::polar(v_mag(br.to), v_ang(br.to));
  const complex<double> i_from = y * (vf - vt * t);
  const complex<double> i_to = y * (vt - vf * std::conj(t));
  return {vf * std::conj(i_from), vt * std::conj(i_to)};
}

PowerFlowSolution solve_power_flow(const Grid& grid, const Eigen::VectorXd& p_load,
                                   const Eigen::VectorXd& q_load, double tol, int max_iter) {
  const int n = grid.n_buses();
  if (p_load.size() != n || q_load.size() != n) {
    throw std::invalid_argument("solve_power_flow: load vectors must have one entry per bus");
  }
  if (tol <= 0.0) throw std::invalid_argument("solve_power_flow: tol must be positive");
  if (!is_connected(grid)) {
    throw std::invalid_argument("solve_power_flow: grid is disconnected");
  }

  const Eigen::MatrixXcd ybus = build_admittance(grid);
  const Eigen::MatrixXd gmat = ybus.real();
  const Eigen::MatrixXd bmat = ybus.imag();
  const int slack = grid.slack_bus;

  // PQ bus index map (all non-slack buses)
  std::vector<int> pq;
  pq.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    if (i != slack) pq.push_back(i);
  }
  const int m = static_cast<int>(pq.size());

  PowerFlowSolution sol;
  sol.v_mag = Eigen::VectorXd::Ones(n);
  sol.v_ang = Eigen::VectorXd::Zero(n);

  Eigen::VectorXd p_spec(n), q_spec(n);
  for (int i = 0; i < n; ++i) {
    p_spec(i) = (i == slack) ? 0.0 : -p_load(i);
    q_spec(i) = (i == slack) ? 0.0 : -q_load(i);
  }

  auto calc_pq = [&](Eigen::VectorXd& p, Eigen::VectorXd& q) {
    Eigen::VectorXcd s = bus_injections(ybus, sol.v_mag, sol.v_ang);
    p = s.real();
    q = s.imag();
  };

  Eigen::VectorXd p_calc(n), q_calc(n);
  for (int iter = 0; iter <= max_iter; ++iter) {
    calc_pq(p_calc, q_calc);
    Eigen::VectorXd mismatch(2 * m);
    for (int k = 0; k < m; ++k) {
      mismatch(k) = p_spec(pq[k]) - p_calc(pq[k]);
      mismatch(m + k) = q_spec(pq[k]) - q_calc(pq[k]);
    }
    sol.max_mismatch = m > 0 ? mismatch.cwiseAbs().maxCoeff() : 0.0;
    sol.mismatch_history.push_back(sol.max_mismatch);
    if (sol.max_mismatch < tol) {
      sol.converged = true;
      break;
    }
    if (iter == max_iter) break;

    // polar Jacobian [dP/dth dP/dV; dQ/dth dQ/dV] over PQ buses
    Eigen::MatrixXd jac(2 * m, 2 * m);
    for (int a = 0; a < m; ++a) {
      const int i = pq[a];
      const double vi = sol.v_mag(i);
      for (int b = 0; b < m; ++b) {
        const int j = pq[b];
        if (i == j) {
          jac(a, b) = -q_calc(i) - bmat(i, i) * vi * vi;
          jac(a, m + b) = p_calc(i) / vi + gmat(i, i) * vi;
          jac(m + a, b) = p_calc(i) - gmat(i, i) * vi * vi;
          jac(m + a, m + b) = q_calc(i) / vi - bmat(i, i) * vi;
        } else {
          const double vj = sol.v_mag(j);
          const double th = sol.v_ang(i) - sol.v_ang(j);
          const double gc = gmat(i, j) * std::cos(th);
          const double gs = gmat(i, j) * std::sin(th);
          const double bc = bmat(i, j) * std::cos(th);
          const double bs = bmat(i, j) * std::sin(th);
          jac(a, b) = vi * vj * (gs - bc);
          jac(a, m + b) = vi * (gc + bs);
          jac(m + a, b) = -vi * vj * (gc + bs);
          jac(m + a, m + b) = vi * (gs - bc);
        }
      }
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    Eigen::VectorXd step = lu.solve(mismatch);
    if (!step.allFinite()) {
      sol.note = "singular Jacobian at iteration " + std::to_string(iter);
      break;
    }
    for (int k = 0; k < m; ++k) {
      sol.v_ang(pq[k]) += step(k);
      sol.v_mag(pq[k]) += step(m + k);
    }
    sol.iterations = iter + 1;
  }

  calc_pq(p_calc, q_calc);
  sol.p_inj = p_calc;
  sol.q_inj = q_calc;
  return sol;
}

}  // namespace gridmp
