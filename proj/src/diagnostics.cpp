#include "gridmp/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

namespace gridmp {

Eigen::MatrixXd sym_normalized_laplacian(const Eigen::MatrixXd& adjacency) {
  const int n = static_cast<int>(adjacency.rows());
  if (adjacency.cols() != n) {
    throw std::invalid_argument("sym_normalized_laplacian: adjacency must be square");
  }
  Eigen::VectorXd degree = adjacency.rowwise().sum();
  Eigen::VectorXd inv_sqrt(n);
  for (int i = 0; i < n; ++i) {
    inv_sqrt(i) = degree(i) > 0.0 ? 1.0 / std::sqrt(degree(i)) : 0.0;
  }
  Eigen::MatrixXd lap = -(inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal());
  for (int i = 0; i < n; ++i) {
    lap(i, i) = degree(i) > 0.0 ? 1.0 + lap(i, i) : 0.0;
  }
  return lap;
}

double dirichlet_energy(const Eigen::Ref<const Eigen::MatrixXd>& x,
                        const Eigen::Ref<const Eigen::MatrixXd>& laplacian) {
  if (x.rows() != laplacian.rows()) {
    throw std::invalid_argument("dirichlet_energy: node count mismatch");
  }
  return (x.transpose() * laplacian * x).trace();
}

double rayleigh_quotient(const Eigen::Ref<const Eigen::MatrixXd>& x,
                         const Eigen::Ref<const Eigen::MatrixXd>& laplacian) {
  const double norm_sq = x.squaredNorm();
  if (norm_sq == 0.0) {
    throw std::invalid_argument("rayleigh_quotient: undefined for X = 0");
  }
  return dirichlet_energy(x, laplacian) / norm_sq;
}

LayerTrace trace_layers(Estimator& model, const GraphSample& sample, const TopologyEntry& topo) {
  if (!model.has_layer_trace()) {
    throw std::invalid_argument("trace_layers: model '" + model.kind() +
                                "' has no layer embeddings");
  }
  std::vector<Eigen::MatrixXd> embeddings;
  Tape tape;
  model.predict(tape, sample, topo, &embeddings);
  const Eigen::MatrixXd lap = sym_normalized_laplacian(topo.adjacency);
  LayerTrace trace;
  for (std::size_t l = 0; l < embeddings.size(); ++l) {
    trace.entries.push_back({static_cast<int>(l), dirichlet_energy(embeddings[l], lap),
                             rayleigh_quotient(embeddings[l], lap)});
  }
  return trace;
}

DistanceCurve extract_distance_curve(Estimator& model, int max_hop,
                                     const Eigen::MatrixXd& edge_features) {
  DistanceCurve curve;
  for (int h = 0; h <= max_hop; ++h) {
    curve.hops.push_back(h);
    curve.s_values.push_back(1.0 / (1.0 + h));
  }
  const ModelConfig& cfg = model.config();
  const int rho_layers = static_cast<int>(cfg.shape_hidden.size()) + 1;
  const int edge_layers = static_cast<int>(cfg.edge_hidden.size()) + 1;
  Eigen::MatrixXd s_col(max_hop + 1, 1);
  for (int h = 0; h <= max_hop; ++h) s_col(h, 0) = curve.s_values[h];

  if (model.kind() == "gnan") {
    Eigen::MatrixXd rho =
        eval_subnet(model.params(), "rho", s_col, rho_layers, true, cfg.leaky_slope);
    curve.weights.emplace_back(rho.data(), rho.data() + rho.rows());
    return curve;
  }
  if (model.kind() == "skp-gnan") {
    for (int c = 0; c < cfg.channels; ++c) {
      const std::string ch = std::to_string(c);
      Eigen::MatrixXd rho =
          eval_subnet(model.params(), "rho_c" + ch, s_col, rho_layers, true, cfg.leaky_slope);
      // hop-wise reduction of the edge-conditioned factor
      const double self_w = eval_subnet(model.params(), "edge_c" + ch,
                                        model.params().value("self_edge"), edge_layers, false,
                                        cfg.leaky_slope)(0, 0);
      double adjacent_mean = 0.0;
      if (edge_features.rows() > 0) {
        adjacent_mean = eval_subnet(model.params(), "edge_c" + ch, edge_features, edge_layers,
                                    false, cfg.leaky_slope)
                            .mean();
      }
      std::vector<double> weights(max_hop + 1, 0.0);
      weights[0] = rho(0, 0) * self_w;
      if (max_hop >= 1) weights[1] = rho(1, 0) * adjacent_mean;
      for (int h = 2; h <= max_hop && h <= cfg.max_hop; ++h) {
        Eigen::MatrixXd d_in(1, 1);
        d_in(0, 0) = h;
        weights[h] = rho(h, 0) * eval_subnet(model.params(), "dist_c" + ch, d_in, edge_layers,
                                             false, cfg.leaky_slope)(0, 0);
      }
      curve.weights.push_back(std::move(weights));
    }
    return curve;
  }
  throw std::invalid_argument("extract_distance_curve: model '" + model.kind() +
                              "' has no distance function");
}

}  // namespace gridmp
