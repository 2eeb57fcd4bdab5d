#include "gridmp/models.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace gridmp {

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["kind"] = cfg.kind;
  j["depth"] = cfg.depth;
  j["hidden"] = cfg.hidden;
  j["heads"] = cfg.heads;
  j["channels"] = cfg.channels;
  j["shape_hidden"] = cfg.shape_hidden;
  j["edge_hidden"] = cfg.edge_hidden;
  j["mlp_hidden"] = cfg.mlp_hidden;
  j["max_hop"] = cfg.max_hop;
  j["max_nodes"] = cfg.max_nodes;
  j["leaky_slope"] = cfg.leaky_slope;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.kind = j.at("kind").get<std::string>();
  if (j.contains("depth")) cfg.depth = j["depth"].get<int>();
  if (j.contains("hidden")) cfg.hidden = j["hidden"].get<int>();
  if (j.contains("heads")) cfg.heads = j["heads"].get<int>();
  if (j.contains("channels")) cfg.channels = j["channels"].get<int>();
  if (j.contains("shape_hidden")) cfg.shape_hidden = j["shape_hidden"].get<std::vector<int>>();
  if (j.contains("edge_hidden")) cfg.edge_hidden = j["edge_hidden"].get<std::vector<int>>();
  if (j.contains("mlp_hidden")) cfg.mlp_hidden = j["mlp_hidden"].get<std::vector<int>>();
  if (j.contains("max_hop")) cfg.max_hop = j["max_hop"].get<int>();
  if (j.contains("max_nodes")) cfg.max_nodes = j["max_nodes"].get<int>();
  if (j.contains("leaky_slope")) cfg.leaky_slope = j["leaky_slope"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  return cfg;
}

namespace {

enum class Act { Tanh, LeakyRelu };

std::vector<int> chain_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

void init_subnet(ParamStore& store, const std::string& prefix, const std::vector<int>& dims,
                 Rng& rng) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    store.add(prefix + ".w" + std::to_string(i), fan_uniform(dims[i], dims[i + 1], rng));
    store.add(prefix + ".b" + std::to_string(i),
              Eigen::MatrixXd::Zero(1, dims[i + 1]));
  }
}

Var subnet_forward(Tape& tape, ParamStore& store, const std::string& prefix, Var input,
                   int n_layers, Act act, double slope) {
  Var h = input;
  for (int i = 0; i < n_layers; ++i) {
    h = add_rowvec(matmul(h, tape.param(store, prefix + ".w" + std::to_string(i))),
                   tape.param(store, prefix + ".b" + std::to_string(i)));
    if (i + 1 < n_layers) {
      h = act == Act::Tanh ? tanh(h) : leaky_relu(h, slope);
    }
  }
  return h;
}

/// Scaled-distance column 1/(1+h) for h = 0..max_h.
Eigen::MatrixXd s_value_table(int max_h) {
  Eigen::MatrixXd table(max_h + 1, 1);
  for (int h = 0; h <= max_h; ++h) table(h, 0) = 1.0 / (1.0 + h);
  return table;
}

/// alpha (m x 1) broadcast across the columns of feats (m x d).
Var scale_rows(Var feats, Var alpha) {
  Tape& t = *feats.tape;
  Var ones = t.constant(Eigen::MatrixXd::Ones(1, feats.cols));
  return mul(feats, matmul(alpha, ones));
}

}  // namespace

Var skp_layer_generic(Var x, const std::vector<Var>& operators, const std::vector<Var>& weights) {
  if (operators.empty() || operators.size() != weights.size()) {
    throw std::invalid_argument("skp_layer_generic: need equally many operators and weights");
  }
  Var out = matmul(matmul(operators[0], x), weights[0]);
  for (std::size_t c = 1; c < operators.size(); ++c) {
    out = add(out, matmul(matmul(operators[c], x), weights[c]));
  }
  return out;
}

Var loss_mse(Tape& tape, Var pred, const Eigen::MatrixXd& labels,
             const std::vector<bool>* bus_mask, double angle_weight,
             const std::string& model_name) {
  if (pred.rows != labels.rows() || pred.cols != labels.cols()) {
    throw std::invalid_argument("loss_mse: prediction " + std::to_string(pred.rows) + "x" +
                                std::to_string(pred.cols) + " vs labels " +
                                std::to_string(labels.rows()) + "x" +
                                std::to_string(labels.cols()));
  }
  if (!tape.value(pred).allFinite()) {
    throw std::runtime_error("loss_mse: non-finite prediction from " + model_name);
  }
  Eigen::MatrixXd weights(labels.rows(), 2);
  long included = 0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    const bool in = bus_mask == nullptr || (*bus_mask)[static_cast<std::size_t>(i)];
    weights(i, 0) = in ? 1.0 : 0.0;
    weights(i, 1) = in ? angle_weight : 0.0;
    included += in ? 1 : 0;
  }
  if (included == 0) throw std::invalid_argument("loss_mse: mask excludes every bus");
  Var diff = sub(pred, tape.constant(labels));
  Var weighted = mul(diff, tape.constant(weights));
  return scale(sum(square(weighted)), 1.0 / static_cast<double>(2 * included));
}

// ---------------------------------------------------------------------------
// GNAN
// ---------------------------------------------------------------------------

class GnanModel : public Estimator {
 public:
  GnanModel(ModelConfig cfg, int n_node_features) : Estimator(std::move(cfg)) {
    n_features_ = n_node_features;
    Rng rng(derive_seed(config_.seed, 0x676e616e));
    for (int k = 0; k < n_features_; ++k) {
      init_subnet(params_, "f" + std::to_string(k), chain_dims(1, config_.shape_hidden, 2), rng);
    }
    init_subnet(params_, "rho", chain_dims(1, config_.shape_hidden, 1), rng);
  }

  /// Distance weighting matrix rho(s_ij) / n_ij (zero for unreachable pairs).
  Var weight_matrix(Tape& tape, const TopologyEntry& topo) {
    const Eigen::MatrixXi& hops = topo.dist.hops;
    const int max_h = hops.maxCoeff();
    Var rho_out = subnet_forward(tape, params_, "rho", tape.constant(s_value_table(max_h)),
                                 static_cast<int>(config_.shape_hidden.size()) + 1, Act::Tanh,
                                 config_.leaky_slope);
    Var rho_full = lookup(rho_out, hops);  // kUnreachable = -1 maps to 0
    Eigen::MatrixXd inv_n =
        topo.dist.shell_counts.cast<double>().cwiseInverse();
    return mul(rho_full, tape.constant(inv_n));
  }

  std::vector<Var> feature_embeddings(Tape& tape, const GraphSample& sample,
                                      const TopologyEntry& topo) {
    check_sample(sample, topo);
    Var w_eff = weight_matrix(tape, topo);
    std::vector<Var> embeddings;
    embeddings.reserve(n_features_);
    const int n_layers = static_cast<int>(config_.shape_hidden.size()) + 1;
    for (int k = 0; k < n_features_; ++k) {
      Var f_out = subnet_forward(tape, params_, "f" + std::to_string(k),
                                 tape.constant(sample.node_features.col(k)), n_layers, Act::Tanh,
                                 config_.leaky_slope);
      embeddings.push_back(matmul(w_eff, f_out));
    }
    return embeddings;
  }

  Var predict(Tape& tape, const GraphSample& sample, const TopologyEntry& topo,
              std::vector<Eigen::MatrixXd>* /*layer_trace*/) override {
    std::vector<Var> embeddings = feature_embeddings(tape, sample, topo);
    Var out = embeddings[0];
    for (std::size_t k = 1; k < embeddings.size(); ++k) out = add(out, embeddings[k]);
    return out;
  }

  void check_sample(const GraphSample& sample, const TopologyEntry& topo) const {
    if (sample.node_features.cols() != n_features_) {
      throw std::invalid_argument("gnan: sample has " +
                                  std::to_string(sample.node_features.cols()) +
                                  " node features, model expects " + std::to_string(n_features_));
    }
    if (sample.node_features.rows() != topo.dist.hops.rows()) {
      throw std::invalid_argument("gnan: sample/topology node count mismatch");
    }
  }

  int n_features_ = 0;
};

// ---------------------------------------------------------------------------
// SKP-GNAN
// ---------------------------------------------------------------------------

class SkpGnanModel : public Estimator {
 public:
  SkpGnanModel(ModelConfig cfg, int n_node_features, int n_edge_features)
      : Estimator(std::move(cfg)), n_features_(n_node_features), n_edge_features_(n_edge_features) {
    Rng rng(derive_seed(config_.seed, 0x736b676e));
    for (int k = 0; k < n_features_; ++k) {
      init_subnet(params_, "f" + std::to_string(k), chain_dims(1, config_.shape_hidden, 2), rng);
    }
    for (int c = 0; c < config_.channels; ++c) {
      const std::string ch = std::to_string(c);
      init_subnet(params_, "rho_c" + ch, chain_dims(1, config_.shape_hidden, 1), rng);
      init_subnet(params_, "edge_c" + ch, chain_dims(n_edge_features_, config_.edge_hidden, 1),
                  rng);
      init_subnet(params_, "dist_c" + ch, chain_dims(1, config_.edge_hidden, 1), rng);
    }
    params_.add("self_edge", fan_uniform(1, n_edge_features_, rng));
  }

  /// Entry-wise operator rho~(c): rho(s) * edge-MLP on adjacent pairs and
  /// the diagonal (learned self-edge features), rho(s) * dist-MLP on
  /// reachable non-adjacent pairs up to max_hop, zero beyond.
  Var channel_operator(Tape& tape, const GraphSample& sample, const TopologyEntry& topo, int c) {
    const Eigen::MatrixXi& hops = topo.dist.hops;
    const int n = static_cast<int>(hops.rows());
    const std::string ch = std::to_string(c);
    const int rho_layers = static_cast<int>(config_.shape_hidden.size()) + 1;
    const int edge_layers = static_cast<int>(config_.edge_hidden.size()) + 1;

    // rho(s) at every usable hop value
    const int max_h = std::min(hops.maxCoeff(), config_.max_hop);
    Var rho_out = subnet_forward(tape, params_, "rho_c" + ch,
                                 tape.constant(s_value_table(max_h)), rho_layers, Act::Tanh,
                                 config_.leaky_slope);
    Eigen::MatrixXi capped = hops;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (hops(i, j) > config_.max_hop) capped(i, j) = -1;
      }
    }
    Var rho_mat = lookup(rho_out, capped);

    // adjacent pairs: mean edge-MLP output over (parallel) directed edges
    Var edge_w = subnet_forward(tape, params_, "edge_c" + ch,
                                tape.constant(sample.edge_features), edge_layers, Act::LeakyRelu,
                                config_.leaky_slope);
    const int m = static_cast<int>(topo.edges.size());
    if (sample.edge_features.rows() != m) {
      throw std::invalid_argument("skp-gnan: sample edge features do not match topology edges");
    }
    std::map<std::pair<int, int>, int> parallel;
    for (const auto& [src, dst] : topo.edges) parallel[{dst, src}] += 1;
    Eigen::MatrixXd inv_par(m, 1);
    std::vector<int> seg(m);
    for (int e = 0; e < m; ++e) {
      const auto [src, dst] = topo.edges[e];
      inv_par(e, 0) = 1.0 / parallel[{dst, src}];
      seg[e] = dst * n + src;  // receiving row dst, sending column src
    }
    Var adj_flat = segment_sum(mul(edge_w, tape.constant(inv_par)), seg, n * n);
    Var adj_mat = reshape(adj_flat, n, n);

    // non-adjacent reachable pairs: distance MLP on the raw hop count
    std::vector<int> far_hops;
    for (int h = 2; h <= max_h; ++h) far_hops.push_back(h);
    Var far_mat;
    if (!far_hops.empty()) {
      Eigen::MatrixXd d_in(static_cast<int>(far_hops.size()), 1);
      for (std::size_t i = 0; i < far_hops.size(); ++i) d_in(static_cast<int>(i), 0) = far_hops[i];
      Var dist_out = subnet_forward(tape, params_, "dist_c" + ch, tape.constant(d_in),
                                    edge_layers, Act::LeakyRelu, config_.leaky_slope);
      Eigen::MatrixXi far_idx = Eigen::MatrixXi::Constant(n, n, -1);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const int h = hops(i, j);
          if (h >= 2 && h <= max_h) far_idx(i, j) = h - 2;
        }
      }
      far_mat = lookup(dist_out, far_idx);
    }

    // diagonal: edge branch with the learned self-edge feature vector
    Var self_w = subnet_forward(tape, params_, "edge_c" + ch, tape.param(params_, "self_edge"),
                                edge_layers, Act::LeakyRelu, config_.leaky_slope);
    Eigen::MatrixXi diag_idx = Eigen::MatrixXi::Constant(n, n, -1);
    for (int i = 0; i < n; ++i) diag_idx(i, i) = 0;
    Var self_mat = lookup(self_w, diag_idx);

    Var mix = add(adj_mat, self_mat);
    if (!far_hops.empty()) mix = add(mix, far_mat);
    return mul(rho_mat, mix);
  }

  Var predict(Tape& tape, const GraphSample& sample, const TopologyEntry& topo,
              std::vector<Eigen::MatrixXd>* /*layer_trace*/) override {
    const int n = static_cast<int>(sample.node_features.rows());
    if (sample.node_features.cols() != n_features_) {
      throw std::invalid_argument("skp-gnan: node feature count mismatch");
    }
    Eigen::MatrixXd inv_n = topo.dist.shell_counts.cast<double>().cwiseInverse();
    Var inv_n_const = tape.constant(inv_n);

    // stacked shape-function outputs, N x 2F
    const int n_layers = static_cast<int>(config_.shape_hidden.size()) + 1;
    Var f_all = subnet_forward(tape, params_, "f0", tape.constant(sample.node_features.col(0)),
                               n_layers, Act::Tanh, config_.leaky_slope);
    for (int k = 1; k < n_features_; ++k) {
      Var f_k = subnet_forward(tape, params_, "f" + std::to_string(k),
                               tape.constant(sample.node_features.col(k)), n_layers, Act::Tanh,
                               config_.leaky_slope);
      f_all = concat_cols(f_all, f_k);
    }

    // channel selectors route channel c shape outputs to output column c
    std::vector<Var> operators, selectors;
    for (int c = 0; c < config_.channels; ++c) {
      operators.push_back(mul(channel_operator(tape, sample, topo, c), inv_n_const));
      Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(2 * n_features_, 2);
      for (int k = 0; k < n_features_; ++k) sel(2 * k + c, c) = 1.0;
      selectors.push_back(tape.constant(sel));
    }
    Var out = skp_layer_generic(f_all, operators, selectors);
    if (out.rows != n) throw std::logic_error("skp-gnan: bad output shape");
    return out;
  }

  int n_features_ = 0;
  int n_edge_features_ = 0;
};

// ---------------------------------------------------------------------------
// GATv2
// ---------------------------------------------------------------------------

class GatModel : public Estimator {
 public:
  GatModel(ModelConfig cfg, int n_node_features) : Estimator(std::move(cfg)) {
    Rng rng(derive_seed(config_.seed, 0x67617476));
    dims_ = layer_dims(n_node_features);
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const std::string ls = std::to_string(l);
      params_.add("layer" + ls + ".W", fan_uniform(dims_[l], dims_[l + 1], rng));
      params_.add("layer" + ls + ".a", fan_uniform(2 * dims_[l + 1], 1, rng));
      params_.add("layer" + ls + ".b", Eigen::MatrixXd::Zero(1, dims_[l + 1]));
    }
  }

  std::vector<int> layer_dims(int in) const {
    std::vector<int> dims{in};
    for (int l = 0; l < config_.depth - 1; ++l) dims.push_back(config_.hidden);
    dims.push_back(2);
    return dims;
  }

  Var predict(Tape& tape, const GraphSample& sample, const TopologyEntry& topo,
              std::vector<Eigen::MatrixXd>* layer_trace) override {
    const int n = static_cast<int>(sample.node_features.rows());
    std::vector<int> srcs, dsts;
    srcs.reserve(topo.edges.size() + n);
    for (const auto& [src, dst] : topo.edges) {
      srcs.push_back(src);
      dsts.push_back(dst);
    }
    for (int i = 0; i < n; ++i) {  // self-loops: N(i) includes i
      srcs.push_back(i);
      dsts.push_back(i);
    }

    Var x = tape.constant(sample.node_features);
    if (layer_trace != nullptr) layer_trace->push_back(tape.value(x));
    const int n_layers = static_cast<int>(dims_.size()) - 1;
    for (int l = 0; l < n_layers; ++l) {
      const std::string ls = std::to_string(l);
      Var xw = matmul(x, tape.param(params_, "layer" + ls + ".W"));
      Var src_f = gather_rows(xw, srcs);
      Var dst_f = gather_rows(xw, dsts);
      Var scores = matmul(leaky_relu(concat_cols(dst_f, src_f), config_.leaky_slope),
                          tape.param(params_, "layer" + ls + ".a"));
      Var alpha = segment_softmax(scores, dsts, n);
      Var agg = segment_sum(scale_rows(src_f, alpha), dsts, n);
      Var pre = add_rowvec(agg, tape.param(params_, "layer" + ls + ".b"));
      x = (l + 1 < n_layers) ? leaky_relu(pre, config_.leaky_slope) : pre;
      if (layer_trace != nullptr) layer_trace->push_back(tape.value(x));
    }
    return x;
  }

  bool has_layer_trace() const override { return true; }

  std::vector<int> dims_;
};

// ---------------------------------------------------------------------------
// SKP-GAT
// ---------------------------------------------------------------------------

class SkpGatModel : public Estimator {
 public:
  SkpGatModel(ModelConfig cfg, int n_node_features, int n_edge_features)
      : Estimator(std::move(cfg)), n_edge_features_(n_edge_features) {
    Rng rng(derive_seed(config_.seed, 0x736b6774));
    dims_ = layer_dims(n_node_features);
    for (int h = 0; h < config_.heads; ++h) {
      const std::string hs = std::to_string(h);
      init_subnet(params_, "head" + hs, chain_dims(n_edge_features_, config_.edge_hidden, 1),
                  rng);
      params_.add("head" + hs + ".self", Eigen::MatrixXd::Zero(1, 1));
    }
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const std::string ls = std::to_string(l);
      for (int h = 0; h < config_.heads; ++h) {
        params_.add("layer" + ls + ".W" + std::to_string(h),
                    fan_uniform(dims_[l], dims_[l + 1], rng));
      }
      params_.add("layer" + ls + ".b", Eigen::MatrixXd::Zero(1, dims_[l + 1]));
    }
  }

  std::vector<int> layer_dims(int in) const {
    std::vector<int> dims{in};
    for (int l = 0; l < config_.depth - 1; ++l) dims.push_back(config_.hidden);
    dims.push_back(2);
    return dims;
  }

  /// Dense normalized attention operator of one head; a function of edge
  /// features only, shared by every layer.
  Var attention_operator(Tape& tape, const GraphSample& sample, const TopologyEntry& topo,
                         int head) {
    const int n = static_cast<int>(topo.adjacency.rows());
    const int m = static_cast<int>(topo.edges.size());
    if (sample.edge_features.rows() != m) {
      throw std::invalid_argument("skp-gat: sample edge features do not match topology edges");
    }
    if (sample.edge_features.cols() != n_edge_features_) {
      throw std::invalid_argument("skp-gat: edge feature width mismatch");
    }
    const std::string hs = std::to_string(head);
    const int edge_layers = static_cast<int>(config_.edge_hidden.size()) + 1;
    Var branch_scores =
        subnet_forward(tape, params_, "head" + hs, tape.constant(sample.edge_features),
                       edge_layers, Act::LeakyRelu, config_.leaky_slope);
    // self-loop edges carry one learned score per head
    Var self_scores = matmul(tape.constant(Eigen::MatrixXd::Ones(n, 1)),
                             tape.param(params_, "head" + hs + ".self"));
    Var scores = concat_rows(branch_scores, self_scores);

    std::vector<int> dsts, linear;
    dsts.reserve(m + n);
    linear.reserve(m + n);
    for (const auto& [src, dst] : topo.edges) {
      dsts.push_back(dst);
      linear.push_back(dst * n + src);
    }
    for (int i = 0; i < n; ++i) {
      dsts.push_back(i);
      linear.push_back(i * n + i);
    }
    Var alpha = segment_softmax(scores, dsts, n);
    return reshape(segment_sum(alpha, linear, n * n), n, n);
  }

  Var predict(Tape& tape, const GraphSample& sample, const TopologyEntry& topo,
              std::vector<Eigen::MatrixXd>* layer_trace) override {
    std::vector<Var> ops;
    ops.reserve(config_.heads);
    for (int h = 0; h < config_.heads; ++h) {
      ops.push_back(attention_operator(tape, sample, topo, h));
    }
    Var x = tape.constant(sample.node_features);
    if (layer_trace != nullptr) layer_trace->push_back(tape.value(x));
    const int n_layers = static_cast<int>(dims_.size()) - 1;
    for (int l = 0; l < n_layers; ++l) {
      const std::string ls = std::to_string(l);
      std::vector<Var> weights;
      weights.reserve(config_.heads);
      for (int h = 0; h < config_.heads; ++h) {
        weights.push_back(tape.param(params_, "layer" + ls + ".W" + std::to_string(h)));
      }
      Var pre = add_rowvec(skp_layer_generic(x, ops, weights),
                           tape.param(params_, "layer" + ls + ".b"));
      x = (l + 1 < n_layers) ? leaky_relu(pre, config_.leaky_slope) : pre;
      if (layer_trace != nullptr) layer_trace->push_back(tape.value(x));
    }
    return x;
  }

  bool has_layer_trace() const override { return true; }

  std::vector<int> dims_;
  int n_edge_features_ = 0;
};

// ---------------------------------------------------------------------------
// MLP baseline
// ---------------------------------------------------------------------------

class MlpModel : public Estimator {
 public:
  MlpModel(ModelConfig cfg, int n_node_features)
      : Estimator(std::move(cfg)), n_features_(n_node_features) {
    if (config_.max_nodes <= 0) {
      throw std::invalid_argument("mlp: max_nodes must be configured");
    }
    Rng rng(derive_seed(config_.seed, 0x6d6c7000));
    dims_ = chain_dims(config_.max_nodes * n_features_, config_.mlp_hidden,
                       2 * config_.max_nodes);
    init_subnet(params_, "dense", dims_, rng);
  }

  Var predict(Tape& tape, const GraphSample& sample, const TopologyEntry& /*topo*/,
              std::vector<Eigen::MatrixXd>* /*layer_trace*/) override {
    const int n = static_cast<int>(sample.node_features.rows());
    if (n > config_.max_nodes) {
      throw std::invalid_argument("mlp: sample has " + std::to_string(n) +
                                  " buses, capacity is " + std::to_string(config_.max_nodes));
    }
    Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(1, config_.max_nodes * n_features_);
    for (int i = 0; i < n; ++i) {
      flat.block(0, i * n_features_, 1, n_features_) = sample.node_features.row(i);
    }
    Var h = subnet_forward(tape, params_, "dense", tape.constant(flat),
                           static_cast<int>(dims_.size()) - 1, Act::LeakyRelu,
                           config_.leaky_slope);
    Var full = reshape(h, config_.max_nodes, 2);
    if (n == config_.max_nodes) return full;
    std::vector<int> keep(n);
    for (int i = 0; i < n; ++i) keep[i] = i;
    return gather_rows(full, keep);
  }

  int n_features_ = 0;
  std::vector<int> dims_;
};

// ---------------------------------------------------------------------------

std::unique_ptr<Estimator> make_estimator(const ModelConfig& cfg, int n_node_features,
                                          int n_edge_features) {
  if (cfg.kind == "gnan") return std::make_unique<GnanModel>(cfg, n_node_features);
  if (cfg.kind == "skp-gnan") {
    return std::make_unique<SkpGnanModel>(cfg, n_node_features, n_edge_features);
  }
  if (cfg.kind == "gat") return std::make_unique<GatModel>(cfg, n_node_features);
  if (cfg.kind == "skp-gat") {
    return std::make_unique<SkpGatModel>(cfg, n_node_features, n_edge_features);
  }
  if (cfg.kind == "mlp") return std::make_unique<MlpModel>(cfg, n_node_features);
  throw std::invalid_argument("make_estimator: unknown model kind '" + cfg.kind + "'");
}

std::vector<Var> gnan_feature_embeddings(Estimator& model, Tape& tape, const GraphSample& sample,
                                         const TopologyEntry& topo) {
  auto* gnan = dynamic_cast<GnanModel*>(&model);
  if (gnan == nullptr) {
    throw std::invalid_argument("gnan_feature_embeddings: model '" + model.kind() +
                                "' is not gnan");
  }
  return gnan->feature_embeddings(tape, sample, topo);
}

double gnan_contribution(Estimator& model, const GraphSample& sample, const TopologyEntry& topo,
                         int j, int k, int channel) {
  auto* gnan = dynamic_cast<GnanModel*>(&model);
  if (gnan == nullptr) {
    throw std::invalid_argument("gnan_contribution: model '" + model.kind() + "' is not gnan");
  }
  if (channel < 0 || channel > 1) throw std::invalid_argument("gnan_contribution: channel 0|1");
  Tape tape;
  gnan->check_sample(sample, topo);
  const Eigen::MatrixXd w_eff = tape.value(gnan->weight_matrix(tape, topo));
  const int n_layers = static_cast<int>(model.config().shape_hidden.size()) + 1;
  Eigen::MatrixXd x_jk(1, 1);
  x_jk(0, 0) = sample.node_features(j, k);
  Var f_out = subnet_forward(tape, model.params(), "f" + std::to_string(k), tape.constant(x_jk),
                             n_layers, Act::Tanh, model.config().leaky_slope);
  return tape.value(f_out)(0, channel) * w_eff.col(j).sum();
}

Eigen::MatrixXd skp_gnan_operator(Estimator& model, const GraphSample& sample,
                                  const TopologyEntry& topo, int channel) {
  auto* skp = dynamic_cast<SkpGnanModel*>(&model);
  if (skp == nullptr) {
    throw std::invalid_argument("skp_gnan_operator: model '" + model.kind() +
                                "' is not skp-gnan");
  }
  if (channel < 0 || channel >= model.config().channels) {
    throw std::invalid_argument("skp_gnan_operator: bad channel");
  }
  Tape tape;
  return tape.value(skp->channel_operator(tape, sample, topo, channel));
}

Eigen::MatrixXd eval_subnet(ParamStore& params, const std::string& prefix,
                            const Eigen::MatrixXd& input, int n_layers, bool tanh_hidden,
                            double slope) {
  Tape tape;
  return tape.value(subnet_forward(tape, params, prefix, tape.constant(input), n_layers,
                                   tanh_hidden ? Act::Tanh : Act::LeakyRelu, slope));
}

Eigen::MatrixXd skp_gat_attention(Estimator& model, const GraphSample& sample,
                                  const TopologyEntry& topo, int head) {
  auto* skp = dynamic_cast<SkpGatModel*>(&model);
  if (skp == nullptr) {
    throw std::invalid_argument("skp_gat_attention: model '" + model.kind() + "' is not skp-gat");
  }
  if (head < 0 || head >= model.config().heads) {
    throw std::invalid_argument("skp_gat_attention: bad head");
  }
  Tape tape;
  return tape.value(skp->attention_operator(tape, sample, topo, head));
}

}  // namespace gridmp
