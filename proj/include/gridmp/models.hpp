#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "gridmp/autodiff.hpp"
#include "gridmp/dataset.hpp"
#include "gridmp/measurement.hpp"
#include "gridmp/params.hpp"

namespace gridmp {

struct ModelConfig {
  std::string kind;  // mlp | gat | skp-gat | gnan | skp-gnan
  int depth = 4;     // GAT-family layer count
  int hidden = 32;   // GAT-family hidden width
  int heads = 3;     // SKP-GAT attention heads / channels
  int channels = 2;  // SKP-GNAN aggregation channels
  std::vector<int> shape_hidden{16, 16};  // f_k and rho hidden widths, tanh
  std::vector<int> edge_hidden{16};       // edge / distance nets, leaky-relu
  std::vector<int> mlp_hidden{256, 256};
  int max_hop = 50;   // SKP-GNAN non-adjacent truncation
  int max_nodes = 0;  // MLP input capacity; set from the dataset when 0
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Base of the five estimators. Parameters live in an owned ParamStore;
/// predict() binds them onto the caller's tape.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual const std::string& kind() const { return config_.kind; }

  /// N x 2 prediction (v_mag, v_ang) for one sample. When `layer_trace` is
  /// non-null and the model has per-layer embeddings, their values (input
  /// included) are appended to it.
  virtual Var predict(Tape& tape, const GraphSample& sample, const TopologyEntry& topo,
                      std::vector<Eigen::MatrixXd>* layer_trace = nullptr) = 0;

  virtual bool has_layer_trace() const { return false; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return config_; }

 protected:
  explicit Estimator(ModelConfig cfg) : config_(std::move(cfg)) {}
  ModelConfig config_;
  ParamStore params_;
};

std::unique_ptr<Estimator> make_estimator(const ModelConfig& cfg, int n_node_features,
                                          int n_edge_features);

/// Shared SKP layer kernel: X' = sum_c A_c X W_c.
Var skp_layer_generic(Var x, const std::vector<Var>& operators, const std::vector<Var>& weights);

/// Mean squared error over included buses and both channels, with the
/// angle channel scaled by `angle_weight` before squaring. `bus_mask`
/// null means every bus counts. Throws std::runtime_error naming
/// `model_name` when predictions are not finite.
Var loss_mse(Tape& tape, Var pred, const Eigen::MatrixXd& labels,
             const std::vector<bool>* bus_mask = nullptr, double angle_weight = 0.1,
             const std::string& model_name = "model");

// --- GNAN-family analysis hooks -----------------------------------------

/// Per-feature embeddings W_eff * f_k(x_k), each N x 2; their sum is the
/// GNAN prediction. Exposed for attribution and oracle tests.
std::vector<Var> gnan_feature_embeddings(Estimator& model, Tape& tape, const GraphSample& sample,
                                         const TopologyEntry& topo);

/// Contribution of node j through feature k to one output channel:
/// f_k(x_jk)[channel] * sum_i [W_eff]_ij. GNAN only.
double gnan_contribution(Estimator& model, const GraphSample& sample, const TopologyEntry& topo,
                         int j, int k, int channel);

/// Dense channel-c aggregation operator of SKP-GNAN (edge weights already
/// combined with the distance function and shell normalization removed),
/// i.e. the matrix rho~(c) of entry-wise weights. Exposed for oracle tests.
Eigen::MatrixXd skp_gnan_operator(Estimator& model, const GraphSample& sample,
                                  const TopologyEntry& topo, int channel);

/// Per-head normalized attention operator A_h(E) of SKP-GAT as a dense
/// N x N matrix. Exposed for decoupling and reduction tests.
Eigen::MatrixXd skp_gat_attention(Estimator& model, const GraphSample& sample,
                                  const TopologyEntry& topo, int head);

/// One-shot evaluation of a named parameter sub-network (f_k, rho, edge or
/// distance nets) on plain values; used by the diagnostics exports.
Eigen::MatrixXd eval_subnet(ParamStore& params, const std::string& prefix,
                            const Eigen::MatrixXd& input, int n_layers, bool tanh_hidden,
                            double slope);

}  // namespace gridmp
