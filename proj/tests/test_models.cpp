#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "gridmp/models.hpp"
#include "test_support.hpp"

using namespace gridmp;

namespace {

ModelConfig small_config(const std::string& kind, std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.seed = seed;
  cfg.depth = 2;
  cfg.hidden = 6;
  cfg.shape_hidden = {5};
  cfg.edge_hidden = {5};
  cfg.mlp_hidden = {12};
  cfg.max_nodes = 5;
  return cfg;
}

/// Zero every tensor of a sub-network; output becomes identically zero.
void zero_subnet(ParamStore& p, const std::string& prefix, int n_layers) {
  for (int l = 0; l < n_layers; ++l) {
    p.value(prefix + ".w" + std::to_string(l)).setZero();
    p.value(prefix + ".b" + std::to_string(l)).setZero();
  }
}

/// Make a sub-network compute the constant c regardless of input.
void constant_subnet(ParamStore& p, const std::string& prefix, int n_layers, double c) {
  zero_subnet(p, prefix, n_layers);
  p.value(prefix + ".b" + std::to_string(n_layers - 1)).setConstant(c);
}

struct Fixture {
  Grid grid;
  TopologyEntry topo;
  GraphSample sample;
};

Fixture five_bus_fixture(std::uint64_t seed) {
  Fixture f;
  // 5-bus loop plus spur: hops up to 2, a cycle for redundancy
  f.grid = testsup::make_grid(
      5, {{0, 1, 0.02, 0.06}, {1, 2, 0.03, 0.07}, {2, 3, 0.02, 0.05}, {3, 0, 0.04, 0.09},
          {2, 4, 0.05, 0.1}});
  f.topo = make_topology_entry(f.grid);
  Rng rng(seed);
  f.sample = testsup::random_sample(5, static_cast<int>(f.topo.edges.size()), rng);
  return f;
}

// --- independent oracles -----------------------------------------------------

/// Literal double-loop evaluation of the GNAN node embedding and readout.
Eigen::MatrixXd gnan_oracle(const ParamStore& p, const ModelConfig& cfg,
                            const GraphSample& sample, const TopologyEntry& topo) {
  const int n = static_cast<int>(sample.node_features.rows());
  const int n_feat = static_cast<int>(sample.node_features.cols());
  const int layers = static_cast<int>(cfg.shape_hidden.size()) + 1;
  Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(n, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int h = topo.dist.hops(i, j);
      if (h < 0) continue;
      Eigen::MatrixXd s(1, 1);
      s(0, 0) = 1.0 / (1.0 + h);
      const double w =
          testsup::subnet_oracle(p, "rho", s, layers, true, cfg.leaky_slope)(0, 0) /
          topo.dist.shell_counts(i, j);
      for (int k = 0; k < n_feat; ++k) {
        Eigen::MatrixXd x(1, 1);
        x(0, 0) = sample.node_features(j, k);
        Eigen::MatrixXd f = testsup::subnet_oracle(p, "f" + std::to_string(k), x, layers, true,
                                                   cfg.leaky_slope);
        pred(i, 0) += w * f(0, 0);
        pred(i, 1) += w * f(0, 1);
      }
    }
  }
  return pred;
}

/// Hand-rolled per-entry evaluation of the SKP-GNAN channel operator.
Eigen::MatrixXd skp_operator_oracle(const ParamStore& p, const ModelConfig& cfg,
                                    const GraphSample& sample, const TopologyEntry& topo,
                                    int channel) {
  const int n = static_cast<int>(topo.dist.hops.rows());
  const int rho_layers = static_cast<int>(cfg.shape_hidden.size()) + 1;
  const int edge_layers = static_cast<int>(cfg.edge_hidden.size()) + 1;
  const std::string ch = std::to_string(channel);
  auto rho = [&](double s) {
    Eigen::MatrixXd in(1, 1);
    in(0, 0) = s;
    return testsup::subnet_oracle(p, "rho_c" + ch, in, rho_layers, true, cfg.leaky_slope)(0, 0);
  };
  auto edge_w = [&](const Eigen::MatrixXd& feats) {
    return testsup::subnet_oracle(p, "edge_c" + ch, feats, edge_layers, false,
                                  cfg.leaky_slope)(0, 0);
  };
  auto dist_w = [&](double d) {
    Eigen::MatrixXd in(1, 1);
    in(0, 0) = d;
    return testsup::subnet_oracle(p, "dist_c" + ch, in, edge_layers, false,
                                  cfg.leaky_slope)(0, 0);
  };
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int h = topo.dist.hops(i, j);
      if (h < 0 || h > cfg.max_hop) continue;
      const double s = 1.0 / (1.0 + h);
      if (i == j) {
        op(i, j) = rho(1.0) * edge_w(p.values[p.slot("self_edge")]);
      } else if (h == 1) {
        // mean over parallel directed branch edges j -> i
        double sum = 0.0;
        int count = 0;
        for (std::size_t e = 0; e < topo.edges.size(); ++e) {
          if (topo.edges[e].first == j && topo.edges[e].second == i) {
            sum += edge_w(sample.edge_features.row(static_cast<int>(e)));
            ++count;
          }
        }
        op(i, j) = rho(s) * (sum / count);
      } else {
        op(i, j) = rho(s) * dist_w(static_cast<double>(h));
      }
    }
  }
  return op;
}

/// Double-loop SKP-GNAN readout from oracle operators.
Eigen::MatrixXd skp_gnan_oracle(const ParamStore& p, const ModelConfig& cfg,
                                const GraphSample& sample, const TopologyEntry& topo) {
  const int n = static_cast<int>(sample.node_features.rows());
  const int n_feat = static_cast<int>(sample.node_features.cols());
  const int layers = static_cast<int>(cfg.shape_hidden.size()) + 1;
  Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(n, 2);
  for (int c = 0; c < cfg.channels; ++c) {
    Eigen::MatrixXd op = skp_operator_oracle(p, cfg, sample, topo, c);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double w = op(i, j) / topo.dist.shell_counts(i, j);
        if (w == 0.0) continue;
        for (int k = 0; k < n_feat; ++k) {
          Eigen::MatrixXd x(1, 1);
          x(0, 0) = sample.node_features(j, k);
          Eigen::MatrixXd f = testsup::subnet_oracle(p, "f" + std::to_string(k), x, layers, true,
                                                     cfg.leaky_slope);
          pred(i, c) += w * f(0, c);
        }
      }
    }
  }
  return pred;
}

/// Independent GATv2 forward (per-edge score loop, explicit softmax).
Eigen::MatrixXd gatv2_oracle(const ParamStore& p, int n_layers,
                             const std::vector<std::pair<int, int>>& branch_edges,
                             Eigen::MatrixXd x, double slope) {
  const int n = static_cast<int>(x.rows());
  std::vector<std::pair<int, int>> edges = branch_edges;
  for (int i = 0; i < n; ++i) edges.emplace_back(i, i);
  for (int l = 0; l < n_layers; ++l) {
    const std::string ls = std::to_string(l);
    const Eigen::MatrixXd& w = p.values[p.slot("layer" + ls + ".W")];
    const Eigen::MatrixXd& a = p.values[p.slot("layer" + ls + ".a")];
    const Eigen::MatrixXd& b = p.values[p.slot("layer" + ls + ".b")];
    Eigen::MatrixXd xw = x * w;
    const int d = static_cast<int>(xw.cols());
    std::vector<double> scores(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [src, dst] = edges[e];
      Eigen::VectorXd cat(2 * d);
      cat.head(d) = xw.row(dst);
      cat.tail(d) = xw.row(src);
      for (int q = 0; q < 2 * d; ++q) cat(q) = cat(q) >= 0.0 ? cat(q) : slope * cat(q);
      scores[e] = (cat.transpose() * a)(0, 0);
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, d);
    for (int i = 0; i < n; ++i) {
      double zmax = -1e300;
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].second == i) zmax = std::max(zmax, scores[e]);
      }
      double denom = 0.0;
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].second == i) denom += std::exp(scores[e] - zmax);
      }
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (edges[e].second != i) continue;
        const double alpha = std::exp(scores[e] - zmax) / denom;
        out.row(i) += alpha * xw.row(edges[e].first);
      }
    }
    out.rowwise() += b.row(0);
    if (l + 1 < n_layers) {
      out = out.unaryExpr([slope](double e) { return e >= 0.0 ? e : slope * e; });
    }
    x = out;
  }
  return x;
}

/// Dense sum-of-Kronecker-products application, column-major vec().
Eigen::MatrixXd kron_sum_oracle(const std::vector<Eigen::MatrixXd>& ops,
                                const std::vector<Eigen::MatrixXd>& weights,
                                const Eigen::MatrixXd& x) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const int d_out = static_cast<int>(weights[0].cols());
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(n * d_out, n * d);
  for (std::size_t c = 0; c < ops.size(); ++c) {
    const Eigen::MatrixXd wt = weights[c].transpose();  // d_out x d
    for (int i = 0; i < d_out; ++i) {
      for (int j = 0; j < d; ++j) {
        big.block(i * n, j * n, n, n) += wt(i, j) * ops[c];
      }
    }
  }
  Eigen::VectorXd vec_x = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  Eigen::VectorXd vec_out = big * vec_x;
  return Eigen::Map<const Eigen::MatrixXd>(vec_out.data(), n, d_out);
}

Fixture permuted_fixture(const Fixture& f, const std::vector<int>& perm) {
  Fixture out;
  out.grid = f.grid;
  for (Branch& br : out.grid.branches) {
    br.from = perm[br.from];
    br.to = perm[br.to];
  }
  out.topo = make_topology_entry(out.grid);
  out.sample = f.sample;
  const int n = f.grid.n_buses();
  for (int i = 0; i < n; ++i) {
    out.sample.node_features.row(perm[i]) = f.sample.node_features.row(i);
    out.sample.labels.row(perm[i]) = f.sample.labels.row(i);
    out.sample.measured_mask[perm[i]] = f.sample.measured_mask[i];
  }
  // branch order is unchanged, so edge rows carry over as-is
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// GNAN
// ---------------------------------------------------------------------------

TEST_CASE("gnan: isolated node with rho == 1 reduces to the shape functions") {
  Grid lone = testsup::make_grid(1, {});
  TopologyEntry topo = make_topology_entry(lone);
  Rng rng(1);
  GraphSample sample = testsup::random_sample(1, 0, rng);
  ModelConfig cfg = small_config("gnan", 2);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  constant_subnet(model->params(), "rho", 2, 1.0);

  Tape tape;
  std::vector<Var> embeddings = gnan_feature_embeddings(*model, tape, sample, topo);
  for (int k = 0; k < kNodeFeatures; ++k) {
    Eigen::MatrixXd x(1, 1);
    x(0, 0) = sample.node_features(0, k);
    Eigen::MatrixXd f = testsup::subnet_oracle(model->params(), "f" + std::to_string(k), x, 2,
                                               true, cfg.leaky_slope);
    CHECK((tape.value(embeddings[k]) - f).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gnan: rho == 0 collapses every embedding to zero") {
  Fixture f = five_bus_fixture(3);
  auto model = make_estimator(small_config("gnan", 3), kNodeFeatures, kEdgeFeatures);
  zero_subnet(model->params(), "rho", 2);
  Tape tape;
  Var pred = model->predict(tape, f.sample, f.topo);
  CHECK(tape.value(pred).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gnan: matches the literal double-loop oracle on a 3-node path") {
  Grid path = testsup::path_grid(3);
  TopologyEntry topo = make_topology_entry(path);
  Rng rng(4);
  GraphSample sample = testsup::random_sample(3, static_cast<int>(topo.edges.size()), rng);
  ModelConfig cfg = small_config("gnan", 4);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, sample, topo));
  Eigen::MatrixXd oracle = gnan_oracle(model->params(), cfg, sample, topo);
  CHECK((pred - oracle).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gnan: one-node readout is the plain sum of shape functions") {
  Grid lone = testsup::make_grid(1, {});
  TopologyEntry topo = make_topology_entry(lone);
  Rng rng(5);
  GraphSample sample = testsup::random_sample(1, 0, rng);
  ModelConfig cfg = small_config("gnan", 5);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  constant_subnet(model->params(), "rho", 2, 1.0);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, sample, topo));
  Eigen::Vector2d expected = Eigen::Vector2d::Zero();
  for (int k = 0; k < kNodeFeatures; ++k) {
    Eigen::MatrixXd x(1, 1);
    x(0, 0) = sample.node_features(0, k);
    expected += testsup::subnet_oracle(model->params(), "f" + std::to_string(k), x, 2, true,
                                       cfg.leaky_slope)
                    .row(0)
                    .transpose();
  }
  CHECK((pred.row(0).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gnan: zero features predict a distance-profile-weighted constant") {
  Fixture f = five_bus_fixture(35);
  f.sample.node_features.setZero();
  ModelConfig cfg = small_config("gnan", 35);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));

  // c = sum_k f_k(0); each node scales it by its distance-profile row sum
  Eigen::MatrixXd zero(1, 1);
  zero.setZero();
  Eigen::RowVector2d c = Eigen::RowVector2d::Zero();
  for (int k = 0; k < kNodeFeatures; ++k) {
    c += testsup::subnet_oracle(model->params(), "f" + std::to_string(k), zero, 2, true,
                                cfg.leaky_slope)
             .row(0);
  }
  for (int i = 0; i < 5; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < 5; ++j) {
      Eigen::MatrixXd s(1, 1);
      s(0, 0) = f.topo.dist.scaled(i, j);
      row_sum += testsup::subnet_oracle(model->params(), "rho", s, 2, true, cfg.leaky_slope)(0, 0) /
                 f.topo.dist.shell_counts(i, j);
    }
    CHECK((pred.row(i) - row_sum * c).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gnan: 5-node prediction equals oracle double loop") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f = five_bus_fixture(seed);
    ModelConfig cfg = small_config("gnan", seed + 10);
    auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
    Tape tape;
    Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));
    CHECK((pred - gnan_oracle(model->params(), cfg, f.sample, f.topo)).cwiseAbs().maxCoeff() <
          1e-10);
  }
}

TEST_CASE("gnan contribution: isolated node, zero rho, and completeness") {
  Grid lone = testsup::make_grid(1, {});
  TopologyEntry topo = make_topology_entry(lone);
  Rng rng(6);
  GraphSample sample = testsup::random_sample(1, 0, rng);
  ModelConfig cfg = small_config("gnan", 6);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);

  // isolated node: C_{j,k} = f_k(x_jk) * rho(1)
  Eigen::MatrixXd one(1, 1);
  one(0, 0) = 1.0;
  const double rho1 =
      testsup::subnet_oracle(model->params(), "rho", one, 2, true, cfg.leaky_slope)(0, 0);
  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd x(1, 1);
    x(0, 0) = sample.node_features(0, k);
    Eigen::MatrixXd f = testsup::subnet_oracle(model->params(), "f" + std::to_string(k), x, 2,
                                               true, cfg.leaky_slope);
    CHECK(gnan_contribution(*model, sample, topo, 0, k, 0) ==
          doctest::Approx(f(0, 0) * rho1).epsilon(1e-12));
    CHECK(gnan_contribution(*model, sample, topo, 0, k, 1) ==
          doctest::Approx(f(0, 1) * rho1).epsilon(1e-12));
  }

  zero_subnet(model->params(), "rho", 2);
  for (int k = 0; k < kNodeFeatures; ++k) {
    CHECK(gnan_contribution(*model, sample, topo, 0, k, 0) == 0.0);
  }
}

TEST_CASE("gnan contribution: completeness against the embedding graph sum") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Fixture f = five_bus_fixture(seed);
    auto model = make_estimator(small_config("gnan", 50 + seed), kNodeFeatures, kEdgeFeatures);
    Tape tape;
    std::vector<Var> embeddings = gnan_feature_embeddings(*model, tape, f.sample, f.topo);
    double embed_sum = 0.0;
    for (const Var& e : embeddings) embed_sum += tape.value(e).sum();
    double contrib_sum = 0.0;
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < kNodeFeatures; ++k) {
        for (int c = 0; c < 2; ++c) {
          contrib_sum += gnan_contribution(*model, f.sample, f.topo, j, k, c);
        }
      }
    }
    CHECK(std::abs(embed_sum - contrib_sum) < 1e-10);
  }
}

// ---------------------------------------------------------------------------
// SKP-GNAN
// ---------------------------------------------------------------------------

TEST_CASE("skp-gnan operator: edge nets == 1 reduce it to the distance weighting") {
  Fixture f = five_bus_fixture(7);
  ModelConfig cfg = small_config("skp-gnan", 7);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  for (int c = 0; c < 2; ++c) {
    constant_subnet(model->params(), "edge_c" + std::to_string(c), 2, 1.0);
    constant_subnet(model->params(), "dist_c" + std::to_string(c), 2, 1.0);
  }
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd op = skp_gnan_operator(*model, f.sample, f.topo, c);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        Eigen::MatrixXd s(1, 1);
        s(0, 0) = f.topo.dist.scaled(i, j);
        const double rho = testsup::subnet_oracle(model->params(), "rho_c" + std::to_string(c),
                                                  s, 2, true, cfg.leaky_slope)(0, 0);
        CHECK(op(i, j) == doctest::Approx(rho).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("skp-gnan operator: unreachable pairs are exactly zero") {
  Grid g = testsup::path_grid(4);
  g.branches[1].closed = false;  // {0,1} and {2,3} components
  TopologyEntry topo = make_topology_entry(g);
  Rng rng(8);
  GraphSample sample = testsup::random_sample(4, static_cast<int>(topo.edges.size()), rng);
  auto model = make_estimator(small_config("skp-gnan", 8), kNodeFeatures, kEdgeFeatures);
  Eigen::MatrixXd op = skp_gnan_operator(*model, sample, topo, 0);
  CHECK(op(0, 2) == 0.0);
  CHECK(op(0, 3) == 0.0);
  CHECK(op(3, 1) == 0.0);
  CHECK(op(0, 1) != 0.0);
}

TEST_CASE("skp-gnan operator: matches the hand-rolled entry evaluation on a 3-node path") {
  Grid path = testsup::path_grid(3);
  TopologyEntry topo = make_topology_entry(path);
  Rng rng(9);
  GraphSample sample = testsup::random_sample(3, static_cast<int>(topo.edges.size()), rng);
  ModelConfig cfg = small_config("skp-gnan", 9);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd op = skp_gnan_operator(*model, sample, topo, c);
    Eigen::MatrixXd oracle = skp_operator_oracle(model->params(), cfg, sample, topo, c);
    CHECK((op - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("skp-gnan: reduces to native gnan when channels share params and edge nets are 1") {
  Fixture f = five_bus_fixture(10);
  ModelConfig cfg = small_config("skp-gnan", 10);
  auto skp = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  ModelConfig ncfg = small_config("gnan", 11);
  auto native = make_estimator(ncfg, kNodeFeatures, kEdgeFeatures);

  // align shape functions, make both channel distance nets equal native rho
  for (int k = 0; k < kNodeFeatures; ++k) {
    for (int l = 0; l < 2; ++l) {
      const std::string w = "f" + std::to_string(k) + ".w" + std::to_string(l);
      const std::string b = "f" + std::to_string(k) + ".b" + std::to_string(l);
      skp->params().value(w) = native->params().value(w);
      skp->params().value(b) = native->params().value(b);
    }
  }
  for (int c = 0; c < 2; ++c) {
    for (int l = 0; l < 2; ++l) {
      skp->params().value("rho_c" + std::to_string(c) + ".w" + std::to_string(l)) =
          native->params().value("rho.w" + std::to_string(l));
      skp->params().value("rho_c" + std::to_string(c) + ".b" + std::to_string(l)) =
          native->params().value("rho.b" + std::to_string(l));
    }
    constant_subnet(skp->params(), "edge_c" + std::to_string(c), 2, 1.0);
    constant_subnet(skp->params(), "dist_c" + std::to_string(c), 2, 1.0);
  }
  Tape t1, t2;
  Eigen::MatrixXd pred_skp = t1.value(skp->predict(t1, f.sample, f.topo));
  Eigen::MatrixXd pred_native = t2.value(native->predict(t2, f.sample, f.topo));
  CHECK((pred_skp - pred_native).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("skp-gnan: zeroed edge nets leave only distance-net terms") {
  Fixture f = five_bus_fixture(11);
  ModelConfig cfg = small_config("skp-gnan", 11);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  for (int c = 0; c < 2; ++c) zero_subnet(model->params(), "edge_c" + std::to_string(c), 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd op = skp_gnan_operator(*model, f.sample, f.topo, c);
    for (int i = 0; i < 5; ++i) {
      CHECK(op(i, i) == 0.0);  // diagonal goes through the zeroed edge net
      for (int j = 0; j < 5; ++j) {
        if (f.topo.dist.hops(i, j) == 1) CHECK(op(i, j) == 0.0);
      }
    }
    CHECK(op.cwiseAbs().maxCoeff() > 0.0);  // hop >= 2 terms survive
  }
}

TEST_CASE("skp-gnan: 5-node prediction equals the double-loop oracle") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Fixture f = five_bus_fixture(20 + seed);
    ModelConfig cfg = small_config("skp-gnan", 20 + seed);
    auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
    Tape tape;
    Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));
    CHECK((pred - skp_gnan_oracle(model->params(), cfg, f.sample, f.topo)).cwiseAbs().maxCoeff() <
          1e-10);
  }
}

// ---------------------------------------------------------------------------
// GATv2
// ---------------------------------------------------------------------------

TEST_CASE("gatv2: isolated node sees only its self-loop") {
  Grid lone = testsup::make_grid(1, {});
  TopologyEntry topo = make_topology_entry(lone);
  Rng rng(12);
  GraphSample sample = testsup::random_sample(1, 0, rng);
  ModelConfig cfg = small_config("gat", 12);
  cfg.depth = 1;  // single layer, identity output activation
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, sample, topo));
  // alpha_ii = 1 -> x' = W x_i (+ zero bias)
  Eigen::MatrixXd expected = sample.node_features * model->params().value("layer0.W");
  CHECK((pred - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gatv2: zero attention vector gives uniform neighbor averaging") {
  Fixture f = five_bus_fixture(13);
  ModelConfig cfg = small_config("gat", 13);
  cfg.depth = 1;
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  model->params().value("layer0.a").setZero();
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));
  const Eigen::MatrixXd xw = f.sample.node_features * model->params().value("layer0.W");
  for (int i = 0; i < 5; ++i) {
    Eigen::RowVectorXd mean = xw.row(i);  // self loop
    int count = 1;
    for (const auto& [src, dst] : f.topo.edges) {
      if (dst == i) {
        mean += xw.row(src);
        ++count;
      }
    }
    mean /= count;
    CHECK((pred.row(i) - mean).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("gatv2: identical-feature neighbors receive equal attention") {
  // star: center 0, leaves 1 and 2 with identical features
  Grid star = testsup::star_grid(2);
  TopologyEntry topo = make_topology_entry(star);
  Rng rng(14);
  GraphSample sample = testsup::random_sample(3, static_cast<int>(topo.edges.size()), rng);
  sample.node_features.row(2) = sample.node_features.row(1);
  ModelConfig cfg = small_config("gat", 14);
  cfg.depth = 1;
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, sample, topo));
  // oracle with explicit softmax confirms the equal-split aggregation
  Eigen::MatrixXd oracle = gatv2_oracle(model->params(), 1, topo.edges, sample.node_features,
                                        cfg.leaky_slope);
  CHECK((pred - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gatv2: full model matches the independent oracle on random graphs") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Fixture f = five_bus_fixture(30 + seed);
    ModelConfig cfg = small_config("gat", 30 + seed);
    auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
    Tape tape;
    Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));
    Eigen::MatrixXd oracle = gatv2_oracle(model->params(), cfg.depth, f.topo.edges,
                                          f.sample.node_features, cfg.leaky_slope);
    CHECK((pred - oracle).cwiseAbs().maxCoeff() < 1e-10);
  }
}

// ---------------------------------------------------------------------------
// SKP-GAT
// ---------------------------------------------------------------------------

TEST_CASE("skp-gat attention: equal scores give uniform weights over the neighborhood") {
  Fixture f = five_bus_fixture(15);
  ModelConfig cfg = small_config("skp-gat", 15);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  zero_subnet(model->params(), "head0", 2);  // all branch scores 0, self score init 0
  Eigen::MatrixXd a = skp_gat_attention(*model, f.sample, f.topo, 0);
  for (int i = 0; i < 5; ++i) {
    int nbrs = 1;
    for (const auto& [src, dst] : f.topo.edges) nbrs += dst == i ? 1 : 0;
    for (int j = 0; j < 5; ++j) {
      if (f.topo.adjacency(i, j) > 0.0 || i == j) {
        CHECK(a(i, j) == doctest::Approx(1.0 / nbrs).epsilon(1e-12));
      } else {
        CHECK(a(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("skp-gat attention: rows sum to one") {
  Fixture f = five_bus_fixture(16);
  auto model = make_estimator(small_config("skp-gat", 16), kNodeFeatures, kEdgeFeatures);
  for (int h = 0; h < 3; ++h) {
    Eigen::MatrixXd a = skp_gat_attention(*model, f.sample, f.topo, h);
    Eigen::VectorXd row_sums = a.rowwise().sum();
    for (int i = 0; i < 5; ++i) CHECK(std::abs(row_sums(i) - 1.0) < 1e-12);
  }
}

TEST_CASE("skp-gat attention: decoupled from node features exactly") {
  Fixture f = five_bus_fixture(17);
  auto model = make_estimator(small_config("skp-gat", 17), kNodeFeatures, kEdgeFeatures);
  Eigen::MatrixXd before = skp_gat_attention(*model, f.sample, f.topo, 1);
  GraphSample perturbed = f.sample;
  perturbed.node_features.array() += 3.7;
  Eigen::MatrixXd after = skp_gat_attention(*model, perturbed, f.topo, 1);
  CHECK(before == after);  // exact, not approximate
}

TEST_CASE("skp-gat layer: equals the vectorized Kronecker form") {
  Fixture f = five_bus_fixture(18);
  ModelConfig cfg = small_config("skp-gat", 18);
  cfg.depth = 1;
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));

  std::vector<Eigen::MatrixXd> ops, weights;
  for (int h = 0; h < cfg.heads; ++h) {
    ops.push_back(skp_gat_attention(*model, f.sample, f.topo, h));
    weights.push_back(model->params().value("layer0.W" + std::to_string(h)));
  }
  Eigen::MatrixXd oracle = kron_sum_oracle(ops, weights, f.sample.node_features);
  oracle.rowwise() += model->params().value("layer0.b").row(0);
  CHECK((pred - oracle).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("skp-gat: single head with constant edge net is degree-uniform aggregation") {
  Fixture f = five_bus_fixture(19);
  ModelConfig cfg = small_config("skp-gat", 19);
  cfg.depth = 1;
  cfg.heads = 1;
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  constant_subnet(model->params(), "head0", 2, 0.7);
  model->params().value("head0.self").setConstant(0.7);
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));

  // degree-uniform operator over N(i) including self
  Eigen::MatrixXd ahat = f.topo.adjacency + Eigen::MatrixXd::Identity(5, 5);
  for (int i = 0; i < 5; ++i) ahat.row(i) /= ahat.row(i).sum();
  Eigen::MatrixXd expected =
      ahat * f.sample.node_features * model->params().value("layer0.W0");
  CHECK((pred - expected).cwiseAbs().maxCoeff() < 1e-12);
}

// ---------------------------------------------------------------------------
// shared SKP kernel
// ---------------------------------------------------------------------------

TEST_CASE("skp kernel: identity operator and weight pass features through") {
  Tape tape;
  Eigen::MatrixXd x(3, 3);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Var out = skp_layer_generic(tape.constant(x),
                              {tape.constant(Eigen::MatrixXd::Identity(3, 3))},
                              {tape.constant(Eigen::MatrixXd::Identity(3, 3))});
  CHECK(tape.value(out) == x);
}

TEST_CASE("kronecker product entries: (A x B)[(i,p),(j,q)] = A_ij B_pq on 2x2 factors") {
  Rng rng(21);
  Eigen::MatrixXd a(2, 2), b(2, 2);
  for (int i = 0; i < 4; ++i) {
    a.data()[i] = rng.uniform(-1.0, 1.0);
    b.data()[i] = rng.uniform(-1.0, 1.0);
  }
  // build the Kronecker product blockwise and spot-check the index identity
  Eigen::MatrixXd kron(4, 4);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) kron.block(i * 2, j * 2, 2, 2) = a(i, j) * b;
  }
  for (int i = 0; i < 2; ++i) {
    for (int p = 0; p < 2; ++p) {
      for (int j = 0; j < 2; ++j) {
        for (int q = 0; q < 2; ++q) {
          CHECK(kron(i * 2 + p, j * 2 + q) == doctest::Approx(a(i, j) * b(p, q)).epsilon(1e-15));
        }
      }
    }
  }
}

TEST_CASE("skp kernel: random instances match the dense Kronecker-sum oracle") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    const int d = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int d_out = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int c = 1 + static_cast<int>(rng.uniform_int(0, 2));
    std::vector<Eigen::MatrixXd> ops, weights;
    for (int k = 0; k < c; ++k) {
      Eigen::MatrixXd a(n, n), w(d, d_out);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1.0, 1.0);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1.0, 1.0);
      ops.push_back(a);
      weights.push_back(w);
    }
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);

    Tape tape;
    std::vector<Var> vops, vweights;
    for (int k = 0; k < c; ++k) {
      vops.push_back(tape.constant(ops[k]));
      vweights.push_back(tape.constant(weights[k]));
    }
    Eigen::MatrixXd got = tape.value(skp_layer_generic(tape.constant(x), vops, vweights));
    CHECK((got - kron_sum_oracle(ops, weights, x)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

TEST_CASE("mlp: zero weights and a set output bias give a constant prediction") {
  Fixture f = five_bus_fixture(23);
  ModelConfig cfg = small_config("mlp", 23);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  zero_subnet(model->params(), "dense", 2);
  Eigen::MatrixXd& out_bias = model->params().value("dense.b1");
  for (int i = 0; i < 5; ++i) {
    out_bias(0, 2 * i) = 0.5 + i;
    out_bias(0, 2 * i + 1) = -1.0 * i;
  }
  Tape tape;
  Eigen::MatrixXd pred = tape.value(model->predict(tape, f.sample, f.topo));
  for (int i = 0; i < 5; ++i) {
    CHECK(pred(i, 0) == 0.5 + i);
    CHECK(pred(i, 1) == -1.0 * i);
  }
}

TEST_CASE("mlp: output shape and capacity error") {
  Fixture f = five_bus_fixture(24);
  ModelConfig cfg = small_config("mlp", 24);
  auto model = make_estimator(cfg, kNodeFeatures, kEdgeFeatures);
  Tape tape;
  Var pred = model->predict(tape, f.sample, f.topo);
  CHECK(pred.rows == 5);
  CHECK(pred.cols == 2);

  ModelConfig tiny = cfg;
  tiny.max_nodes = 3;
  auto small_model = make_estimator(tiny, kNodeFeatures, kEdgeFeatures);
  Tape t2;
  CHECK_THROWS_WITH_AS(small_model->predict(t2, f.sample, f.topo),
                       doctest::Contains("capacity"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

TEST_CASE("loss: zero when predictions equal labels") {
  Tape tape;
  Eigen::MatrixXd y(4, 2);
  y << 1, 0, 1.01, 0.2, 0.99, -0.1, 1.0, 0.0;
  CHECK(tape.value(loss_mse(tape, tape.constant(y), y))(0, 0) == 0.0);
}

TEST_CASE("loss: single-channel arithmetic example") {
  // predictions (1, 3) against labels (1, 1): MSE 2.0, RMSE sqrt(2)
  Tape tape;
  Eigen::MatrixXd pred(1, 2), y(1, 2);
  pred << 1.0, 3.0;
  y << 1.0, 1.0;
  const double mse = tape.value(loss_mse(tape, tape.constant(pred), y, nullptr, 1.0))(0, 0);
  CHECK(mse == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(std::sqrt(mse) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("loss: matches an independent two-line computation on random tensors") {
  Rng rng(25);
  Eigen::MatrixXd pred(7, 2), y(7, 2);
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    pred.data()[i] = rng.uniform(-1.0, 1.0);
    y.data()[i] = rng.uniform(-1.0, 1.0);
  }
  Tape tape;
  const double got = tape.value(loss_mse(tape, tape.constant(pred), y, nullptr, 0.1))(0, 0);
  Eigen::MatrixXd diff = pred - y;
  diff.col(1) *= 0.1;
  const double expected = diff.array().square().sum() / 14.0;
  CHECK(got == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("loss: non-finite predictions rejected naming the model") {
  Tape tape;
  Eigen::MatrixXd pred(1, 2), y(1, 2);
  pred << std::nan(""), 0.0;
  y << 1.0, 0.0;
  CHECK_THROWS_WITH_AS(loss_mse(tape, tape.constant(pred), y, nullptr, 0.1, "skp-gat"),
                       doctest::Contains("skp-gat"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// gradients and equivariance across the zoo
// ---------------------------------------------------------------------------

TEST_CASE("every model's loss gradient matches central finite differences") {
  for (const std::string kind : {"mlp", "gat", "skp-gat", "gnan", "skp-gnan"}) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      Fixture f = five_bus_fixture(40 + seed);
      auto model = make_estimator(small_config(kind, 40 + seed), kNodeFeatures, kEdgeFeatures);
      auto eval = [&]() {
        Tape tape;
        Var pred = model->predict(tape, f.sample, f.topo);
        return tape.value(loss_mse(tape, pred, f.sample.labels, nullptr, 0.1, kind))(0, 0);
      };
      {
        Tape tape;
        Var pred = model->predict(tape, f.sample, f.topo);
        Var loss = loss_mse(tape, pred, f.sample.labels, nullptr, 0.1, kind);
        tape.backward(loss);
        tape.collect_grads(model->params());
      }
      const double err = testsup::fd_gradient_max_rel_err(model->params(), eval);
      INFO(kind, " seed ", seed);
      CHECK(err < 1e-5);
      model->params().zero_grads();
    }
  }
}

TEST_CASE("graph models are permutation equivariant; the mlp is not") {
  Fixture f = five_bus_fixture(60);
  const std::vector<int> perm{2, 0, 4, 1, 3};
  Fixture pf = permuted_fixture(f, perm);
  for (const std::string kind : {"gat", "skp-gat", "gnan", "skp-gnan"}) {
    auto model = make_estimator(small_config(kind, 61), kNodeFeatures, kEdgeFeatures);
    Tape t1, t2;
    Eigen::MatrixXd base = t1.value(model->predict(t1, f.sample, f.topo));
    Eigen::MatrixXd permuted = t2.value(model->predict(t2, pf.sample, pf.topo));
    for (int i = 0; i < 5; ++i) {
      INFO(kind);
      CHECK((permuted.row(perm[i]) - base.row(i)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
  // witness permutation changes the MLP output
  auto mlp = make_estimator(small_config("mlp", 62), kNodeFeatures, kEdgeFeatures);
  Tape t1, t2;
  Eigen::MatrixXd base = t1.value(mlp->predict(t1, f.sample, f.topo));
  Eigen::MatrixXd permuted = t2.value(mlp->predict(t2, pf.sample, pf.topo));
  double max_diff = 0.0;
  for (int i = 0; i < 5; ++i) {
    max_diff = std::max(max_diff, (permuted.row(perm[i]) - base.row(i)).cwiseAbs().maxCoeff());
  }
  CHECK(max_diff > 1e-6);
}

TEST_CASE("model config json round-trip") {
  ModelConfig cfg = small_config("skp-gat", 99);
  cfg.max_hop = 31;
  ModelConfig back = model_config_from_json(model_config_to_json(cfg));
  CHECK(back.kind == cfg.kind);
  CHECK(back.depth == cfg.depth);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.heads == cfg.heads);
  CHECK(back.shape_hidden == cfg.shape_hidden);
  CHECK(back.max_hop == 31);
  CHECK(back.seed == 99);
}
