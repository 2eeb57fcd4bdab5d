// gridmp: synthetic-grid state-estimation laboratory command line.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gridmp/dataset.hpp"
#include "gridmp/diagnostics.hpp"
#include "gridmp/experiment.hpp"
#include "gridmp/grid.hpp"
#include "gridmp/models.hpp"
#include "gridmp/powerflow.hpp"

namespace fs = std::filesystem;
using namespace gridmp;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_generate(const std::string& kind, int buses, std::uint64_t seed,
                 const std::string& out) {
  GridKind gk;
  if (kind == "radial") {
    gk = GridKind::Radial;
  } else if (kind == "meshed") {
    gk = GridKind::Meshed;
  } else {
    std::cerr << "generate: kind must be radial or meshed\n";
    return 2;
  }
  Grid grid = build_synthetic_grid(gk, buses, seed);
  save_grid(grid, out);
  std::cout << "wrote " << out << " (" << grid.n_buses() << " buses, " << grid.n_branches()
            << " branches)\n";
  return 0;
}

int cmd_powerflow(const std::string& grid_file, const std::string& loads_file,
                  const std::string& out) {
  Grid grid = load_grid(grid_file);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(grid.n_buses());
  Eigen::VectorXd q = Eigen::VectorXd::Zero(grid.n_buses());
  std::ifstream in(loads_file);
  if (!in) throw std::runtime_error("cannot open loads file: " + loads_file);
  std::string line;
  std::getline(in, line);  // header: bus_id,p_pu,q_pu
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const int bus = std::stoi(cell);
    std::getline(ss, cell, ',');
    p(bus) = std::stod(cell);
    std::getline(ss, cell, ',');
    q(bus) = std::stod(cell);
  }
  PowerFlowSolution sol = solve_power_flow(grid, p, q);
  if (!sol.converged) {
    std::cerr << "powerflow: did not converge (max mismatch " << sol.max_mismatch << ") "
              << sol.note << "\n";
    return 1;
  }
  std::ofstream os(out);
  os << "bus_id,v_mag_pu,v_ang_rad,p_pu,q_pu\n";
  for (int i = 0; i < grid.n_buses(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g\n", i, sol.v_mag(i), sol.v_ang(i),
                  sol.p_inj(i), sol.q_inj(i));
    os << buf;
  }
  std::cout << "converged in " << sol.iterations << " iterations, wrote " << out << "\n";
  return 0;
}

int cmd_dataset(const std::string& grid_file, int timesteps, double penetration,
                std::uint64_t seed, bool no_switching, const std::string& voltage_class,
                const std::string& out_dir) {
  Grid grid = load_grid(grid_file);
  DatasetConfig cfg;
  cfg.n_timesteps = timesteps;
  cfg.penetration = penetration;
  cfg.seed = seed;
  cfg.switching = !no_switching;
  if (voltage_class == "auto") {
    cfg.low_voltage = grid.n_buses() <= 60;
  } else if (voltage_class == "lv") {
    cfg.low_voltage = true;
  } else if (voltage_class == "mv") {
    cfg.low_voltage = false;
  } else {
    std::cerr << "dataset: voltage class must be auto|lv|mv\n";
    return 2;
  }
  Dataset ds = generate_dataset(grid, cfg);
  save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.samples.size() << " samples over " << ds.topologies.size()
            << " topologies to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& model_name, const std::string& dataset_dir,
              const std::string& out_dir, const std::string& model_config_file, double lr,
              int max_epochs, int patience, int batch_size, std::uint64_t seed) {
  Dataset ds = load_dataset(dataset_dir);
  ModelConfig mcfg;
  if (!model_config_file.empty()) {
    mcfg = model_config_from_json(read_file(model_config_file));
  } else {
    mcfg = default_model_config(model_name, ds.n_buses(), seed);
  }
  if (mcfg.max_nodes == 0) mcfg.max_nodes = ds.n_buses();
  auto model = make_estimator(mcfg, kNodeFeatures, kEdgeFeatures);

  TrainConfig tcfg;
  tcfg.lr = lr;
  tcfg.max_epochs = max_epochs;
  tcfg.patience = patience;
  tcfg.batch_size = batch_size;
  tcfg.seed = seed;
  TrainResult result = train(*model, ds, tcfg);

  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  save_checkpoint(model->params(), model_config_to_json(model->config()), ckpt);
  std::ofstream hist((fs::path(out_dir) / "history.csv").string());
  hist << "epoch,train_loss,val_loss,lr\n";
  for (const EpochRecord& e : result.history) {
    hist << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.lr << "\n";
  }
  auto [rmse_mag, rmse_ang] = evaluate_rmse(*model, ds, ds.split.test);
  std::cout << "model " << model->kind() << ": best epoch " << result.best_epoch
            << (result.diverged ? " (diverged)" : "") << ", test rmse magnitude " << rmse_mag
            << " p.u., angle " << rmse_ang << " deg\n"
            << "wrote " << ckpt << "\n";
  return result.diverged ? 1 : 0;
}

std::unique_ptr<Estimator> load_model(const std::string& checkpoint) {
  std::string meta;
  ParamStore store = load_checkpoint(checkpoint, &meta);
  if (meta.empty()) throw std::runtime_error("checkpoint has no model metadata");
  auto model = make_estimator(model_config_from_json(meta), kNodeFeatures, kEdgeFeatures);
  load_params_into(*model, store);
  return model;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& dataset_dir) {
  Dataset ds = load_dataset(dataset_dir);
  auto model = load_model(checkpoint);
  auto [rmse_mag, rmse_ang] = evaluate_rmse(*model, ds, ds.split.test);
  std::cout << "model " << model->kind() << ": rmse_mag_pu " << rmse_mag << " rmse_ang_deg "
            << rmse_ang << " over " << ds.split.test.size() << " test samples\n";
  return 0;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& dataset_dir,
                 const std::string& out_dir) {
  Dataset ds = load_dataset(dataset_dir);
  auto model = load_model(checkpoint);
  fs::create_directories(out_dir);

  if (model->has_layer_trace()) {
    // average DE / RQ over the test split, per layer
    std::vector<double> de, rq;
    long count = 0;
    for (int idx : ds.split.test) {
      GraphSample std_sample = standardized(ds.samples[idx], ds);
      LayerTrace trace = trace_layers(*model, std_sample, ds.topology_of(ds.samples[idx]));
      if (de.empty()) {
        de.assign(trace.entries.size(), 0.0);
        rq.assign(trace.entries.size(), 0.0);
      }
      for (std::size_t l = 0; l < trace.entries.size(); ++l) {
        de[l] += trace.entries[l].dirichlet_energy;
        rq[l] += trace.entries[l].rayleigh_quotient;
      }
      ++count;
    }
    const std::string path = (fs::path(out_dir) / "layer_trace.csv").string();
    std::ofstream os(path);
    os << "layer,dirichlet_energy,rayleigh_quotient\n";
    for (std::size_t l = 0; l < de.size(); ++l) {
      os << l << "," << de[l] / count << "," << rq[l] / count << "\n";
    }
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  if (model->kind() == "gnan" || model->kind() == "skp-gnan") {
    int max_hop = 0;
    for (const TopologyEntry& t : ds.topologies) {
      max_hop = std::max(max_hop, t.dist.hops.maxCoeff());
    }
    // standardized edge features over the test split feed the hop-1 reduction
    Eigen::MatrixXd edge_feats;
    if (!ds.split.test.empty()) {
      long rows = 0;
      for (int idx : ds.split.test) rows += ds.samples[idx].edge_features.rows();
      edge_feats.resize(rows, kEdgeFeatures);
      long at = 0;
      for (int idx : ds.split.test) {
        GraphSample std_sample = standardized(ds.samples[idx], ds);
        edge_feats.middleRows(at, std_sample.edge_features.rows()) = std_sample.edge_features;
        at += std_sample.edge_features.rows();
      }
    }
    DistanceCurve curve = extract_distance_curve(*model, max_hop, edge_feats);
    for (std::size_t c = 0; c < curve.weights.size(); ++c) {
      const std::string path =
          (fs::path(out_dir) / ("distance_curve_c" + std::to_string(c) + ".csv")).string();
      std::ofstream os(path);
      os << "hop,s,weight\n";
      for (std::size_t h = 0; h < curve.hops.size(); ++h) {
        os << curve.hops[h] << "," << curve.s_values[h] << "," << curve.weights[c][h] << "\n";
      }
      std::cout << "wrote " << path << "\n";
    }
    return 0;
  }

  std::cerr << "diagnose: model '" << model->kind()
            << "' supports neither layer traces nor distance curves\n";
  return 1;
}

int cmd_sweep(const std::string& config_file) {
  ExperimentConfig cfg = experiment_config_from_json(read_file(config_file));
  if (const char* env_seed = std::getenv("GRIDMP_SEED")) {
    cfg.master_seed = std::strtoull(env_seed, nullptr, 10);
  }
  std::vector<MetricsRow> rows = run_sweep(cfg);
  export_results(rows, cfg.out_dir);
  int failures = 0;
  for (const MetricsRow& r : rows) {
    if (r.failed) {
      ++failures;
      std::cerr << "leg failed: " << r.grid << " rate " << r.rate << " model " << r.model << ": "
                << r.error << "\n";
    }
  }
  std::cout << rows.size() - failures << "/" << rows.size() << " legs succeeded, results in "
            << cfg.out_dir << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridmp: graph state-estimation laboratory on synthetic distribution grids"};
  app.require_subcommand(1);

  std::string kind = "radial", out, grid_file, loads_file, dataset_dir, checkpoint, model_name;
  std::string model_config_file, config_file, voltage_class = "auto";
  int buses = 15, timesteps = 500, max_epochs = 200, patience = 3, batch_size = 32;
  double penetration = 0.9, lr = 1e-3;
  std::uint64_t seed = 0;
  bool no_switching = false;

  auto* generate = app.add_subcommand("generate", "write a synthetic grid file");
  generate->add_option("--kind", kind, "radial|meshed")->capture_default_str();
  generate->add_option("--buses", buses)->capture_default_str();
  generate->add_option("--seed", seed)->capture_default_str();
  generate->add_option("--out", out)->required();

  auto* powerflow = app.add_subcommand("powerflow", "solve one AC power flow");
  powerflow->add_option("--grid", grid_file)->required();
  powerflow->add_option("--loads", loads_file, "csv: bus_id,p_pu,q_pu")->required();
  powerflow->add_option("--out", out)->required();

  auto* dataset = app.add_subcommand("dataset", "generate a training dataset");
  dataset->add_option("--grid", grid_file)->required();
  dataset->add_option("--timesteps", timesteps)->capture_default_str();
  dataset->add_option("--penetration", penetration)->capture_default_str();
  dataset->add_option("--seed", seed)->capture_default_str();
  dataset->add_flag("--no-switching", no_switching, "disable topology switching");
  dataset->add_option("--voltage-class", voltage_class, "auto|lv|mv")->capture_default_str();
  dataset->add_option("--out", out)->required();

  auto* train_cmd = app.add_subcommand("train", "train one estimator on a dataset");
  train_cmd->add_option("--model", model_name, "mlp|gat|skp-gat|gnan|skp-gnan");
  train_cmd->add_option("--config", model_config_file, "model config json (overrides --model)");
  train_cmd->add_option("--dataset", dataset_dir)->required();
  train_cmd->add_option("--out", out)->required();
  train_cmd->add_option("--lr", lr)->capture_default_str();
  train_cmd->add_option("--max-epochs", max_epochs)->capture_default_str();
  train_cmd->add_option("--patience", patience)->capture_default_str();
  train_cmd->add_option("--batch-size", batch_size)->capture_default_str();
  train_cmd->add_option("--seed", seed)->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "test-split RMSE of a checkpoint");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--dataset", dataset_dir)->required();

  auto* diagnose = app.add_subcommand("diagnose", "layer traces or distance curves");
  diagnose->add_option("--checkpoint", checkpoint)->required();
  diagnose->add_option("--dataset", dataset_dir)->required();
  diagnose->add_option("--out", out)->required();

  auto* sweep = app.add_subcommand("sweep", "run a full experiment sweep");
  sweep->add_option("--config", config_file)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(kind, buses, seed, out);
    if (powerflow->parsed()) return cmd_powerflow(grid_file, loads_file, out);
    if (dataset->parsed()) {
      return cmd_dataset(grid_file, timesteps, penetration, seed, no_switching, voltage_class,
                         out);
    }
    if (train_cmd->parsed()) {
      if (model_name.empty() && model_config_file.empty()) {
        std::cerr << "train: need --model or --config\n";
        return 2;
      }
      return cmd_train(model_name, dataset_dir, out, model_config_file, lr, max_epochs, patience,
                       batch_size, seed);
    }
    if (evaluate->parsed()) return cmd_evaluate(checkpoint, dataset_dir);
    if (diagnose->parsed()) return cmd_diagnose(checkpoint, dataset_dir, out);
    if (sweep->parsed()) return cmd_sweep(config_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
