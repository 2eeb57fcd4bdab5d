#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gridmp/dataset.hpp"
#include "gridmp/models.hpp"

namespace gridmp {

/// Symmetrically normalized Laplacian I - D^{-1/2} A D^{-1/2} of a binary
/// adjacency matrix; isolated nodes get an all-zero row and column.
Eigen::MatrixXd sym_normalized_laplacian(const Eigen::MatrixXd& adjacency);

/// tr(X^T L X); equals the half-sum over ordered adjacent pairs of
/// ||x_i/sqrt(d_i) - x_j/sqrt(d_j)||^2.
double dirichlet_energy(const Eigen::Ref<const Eigen::MatrixXd>& x,
                        const Eigen::Ref<const Eigen::MatrixXd>& laplacian);

/// tr(X^T L X) / ||X||_F^2, in [0, 2]. Throws std::invalid_argument for
/// X = 0.
double rayleigh_quotient(const Eigen::Ref<const Eigen::MatrixXd>& x,
                         const Eigen::Ref<const Eigen::MatrixXd>& laplacian);

struct LayerTrace {
  struct Entry {
    int layer_index;  // 0 is the input embedding
    double dirichlet_energy;
    double rayleigh_quotient;
  };
  std::vector<Entry> entries;
};

/// Dirichlet energy and Rayleigh quotient per layer embedding (input
/// included). Throws std::invalid_argument for models without layer
/// embeddings (gnan, skp-gnan, mlp).
LayerTrace trace_layers(Estimator& model, const GraphSample& sample, const TopologyEntry& topo);

struct DistanceCurve {
  std::vector<int> hops;                     // 0..max_hop
  std::vector<double> s_values;              // 1/(1+hop)
  std::vector<std::vector<double>> weights;  // one curve per channel
};

/// Learned distance function sampled at s = 1/(1+l) for l = 0..max_hop.
/// gnan: single curve rho(s). skp-gnan: per channel rho(c)(s) scaled by
/// the edge-MLP reduced per hop (mean over `edge_features` rows at hop 1,
/// the learned self-edge at hop 0, the distance MLP beyond). Throws for
/// other model kinds.
DistanceCurve extract_distance_curve(Estimator& model, int max_hop,
                                     const Eigen::MatrixXd& edge_features);

}  // namespace gridmp
