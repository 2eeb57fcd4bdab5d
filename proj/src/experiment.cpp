#include "gridmp/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gridmp {

namespace fs = std::filesystem;

EarlyStopper::Action EarlyStopper::observe(double val_loss) {
  improved_ = val_loss < best_ - min_improvement_;
  if (improved_) {
    best_ = val_loss;
    flat_epochs_ = 0;
    return Action::Continue;
  }
  ++flat_epochs_;
  if (flat_epochs_ >= patience_) return Action::Stop;
  if (flat_epochs_ == halve_after_) return Action::HalveLr;
  return Action::Continue;
}

namespace {

double dataset_loss(Estimator& model, const Dataset& ds,
                    const std::vector<GraphSample>& std_samples,
                    const std::vector<Eigen::MatrixXd>& std_labels,
                    const std::vector<int>& indices) {
  double total = 0.0;
  for (int idx : indices) {
    Tape tape;
    Var pred = model.predict(tape, std_samples[idx], ds.topology_of(ds.samples[idx]));
    Var loss = loss_mse(tape, pred, std_labels[idx], nullptr, 1.0, model.kind());
    total += tape.value(loss)(0, 0);
  }
  return total / static_cast<double>(indices.size());
}

std::vector<Eigen::MatrixXd> snapshot_values(const ParamStore& store) { return store.values; }

void restore_values(ParamStore& store, const std::vector<Eigen::MatrixXd>& values) {
  store.values = values;
}

// standardized targets: channels balanced by their own spread, so the
// stagnation threshold is measured against an O(1) loss
std::vector<Eigen::MatrixXd> standardized_labels(const Dataset& ds) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(ds.samples.size());
  for (const GraphSample& s : ds.samples) out.push_back(ds.label_stats.apply(s.labels));
  return out;
}

}  // namespace

double validation_loss(Estimator& model, const Dataset& ds, const std::vector<int>& indices) {
  std::vector<GraphSample> std_samples;
  std_samples.reserve(ds.samples.size());
  for (const GraphSample& s : ds.samples) std_samples.push_back(standardized(s, ds));
  return dataset_loss(model, ds, std_samples, standardized_labels(ds), indices);
}

TrainResult train(Estimator& model, const Dataset& ds, const TrainConfig& cfg) {
  if (ds.split.train.empty() || ds.split.val.empty()) {
    throw std::invalid_argument("train: empty train or validation split");
  }
  std::vector<GraphSample> std_samples;
  std_samples.reserve(ds.samples.size());
  for (const GraphSample& s : ds.samples) std_samples.push_back(standardized(s, ds));
  const std::vector<Eigen::MatrixXd> std_labels = standardized_labels(ds);

  TrainResult result;
  std::vector<Eigen::MatrixXd> best = snapshot_values(model.params());
  std::vector<Eigen::MatrixXd> last_finite = best;
  if (cfg.max_epochs == 0) return result;

  EarlyStopper stopper(cfg.min_improvement, cfg.lr_halve_after, cfg.patience);
  double lr = cfg.lr;
  Rng shuffle_rng(derive_seed(cfg.seed, 0x74726169));
  std::vector<int> order = ds.split.train;
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(order.size()));

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    }
    double train_loss_sum = 0.0;
    long train_loss_count = 0;
    bool nan_hit = false;
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        Tape tape;
        Var batch_loss;
        for (std::size_t i = start; i < stop; ++i) {
          const int idx = order[i];
          Var pred = model.predict(tape, std_samples[idx], ds.topology_of(ds.samples[idx]));
          Var loss = loss_mse(tape, pred, std_labels[idx], nullptr, 1.0, model.kind());
          batch_loss = (i == start) ? loss : add(batch_loss, loss);
        }
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
        const double loss_value = tape.value(batch_loss)(0, 0);
        if (!std::isfinite(loss_value)) {
          nan_hit = true;
          break;
        }
        tape.backward(batch_loss);
        tape.collect_grads(model.params());
        adamax_step(model.params(), lr);
        train_loss_sum += loss_value * static_cast<double>(stop - start);
        train_loss_count += static_cast<long>(stop - start);
      }
    } catch (const std::runtime_error&) {
      nan_hit = true;  // loss_mse rejects non-finite predictions
    }
    if (nan_hit) {
      result.diverged = true;
      restore_values(model.params(), last_finite);
      break;
    }

    double val_loss;
    try {
      val_loss = dataset_loss(model, ds, std_samples, std_labels, ds.split.val);
    } catch (const std::runtime_error&) {
      val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(val_loss)) {
      result.diverged = true;
      restore_values(model.params(), last_finite);
      break;
    }
    last_finite = snapshot_values(model.params());

    result.history.push_back(
        {epoch, train_loss_sum / static_cast<double>(train_loss_count), val_loss, lr});

    const EarlyStopper::Action action = stopper.observe(val_loss);
    if (stopper.improved()) {
      best = snapshot_values(model.params());
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
    }
    if (action == EarlyStopper::Action::Stop) break;
    if (action == EarlyStopper::Action::HalveLr) lr *= 0.5;
  }

  if (result.best_epoch >= 0 || result.diverged) {
    restore_values(model.params(), result.diverged ? last_finite : best);
  }
  return result;
}

std::pair<double, double> evaluate_rmse(Estimator& model, const Dataset& ds,
                                        const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate_rmse: empty split");
  double mag_sq = 0.0, ang_sq = 0.0;
  long count = 0;
  for (int idx : indices) {
    Tape tape;
    const GraphSample std_sample = standardized(ds.samples[idx], ds);
    Var pred = model.predict(tape, std_sample, ds.topology_of(ds.samples[idx]));
    // back from standardized label space to p.u. / radians
    Eigen::MatrixXd raw = tape.value(pred);
    raw.array().rowwise() *= ds.label_stats.stddev.transpose().array();
    raw.rowwise() += ds.label_stats.mean.transpose();
    const Eigen::MatrixXd diff = raw - ds.samples[idx].labels;
    mag_sq += diff.col(0).squaredNorm();
    ang_sq += diff.col(1).squaredNorm();
    count += diff.rows();
  }
  const double rmse_mag = std::sqrt(mag_sq / static_cast<double>(count));
  const double rmse_ang_rad = std::sqrt(ang_sq / static_cast<double>(count));
  return {rmse_mag, rmse_ang_rad * 180.0 / std::numbers::pi};
}

void load_params_into(Estimator& model, const ParamStore& loaded) {
  ParamStore& target = model.params();
  if (loaded.names.size() != target.names.size()) {
    throw std::invalid_argument("load_params_into: parameter count mismatch");
  }
  for (const std::string& name : target.names) {
    const Eigen::MatrixXd& src = loaded.values[loaded.slot(name)];
    Eigen::MatrixXd& dst = target.value(name);
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw std::invalid_argument("load_params_into: shape mismatch for " + name);
    }
    dst = src;
  }
  target.step = loaded.step;
}

ModelConfig default_model_config(const std::string& kind, int max_nodes, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.max_nodes = max_nodes;
  cfg.seed = seed;
  return cfg;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["grids"] = nlohmann::ordered_json::array();
  for (const GridSpecEntry& g : cfg.grids) {
    j["grids"].push_back({{"name", g.name},
                          {"kind", g.kind == GridKind::Radial ? "radial" : "meshed"},
                          {"buses", g.n_buses},
                          {"seed", g.seed},
                          {"voltage_class", g.voltage_class}});
  }
  j["timesteps"] = cfg.n_timesteps;
  j["rates"] = cfg.rates;
  j["models"] = cfg.models;
  j["train"] = {{"lr", cfg.train.lr},
                {"max_epochs", cfg.train.max_epochs},
                {"patience", cfg.train.patience},
                {"lr_halve_after", cfg.train.lr_halve_after},
                {"min_improvement", cfg.train.min_improvement},
                {"batch_size", cfg.train.batch_size}};
  j["switching"] = cfg.switching;
  j["measure_time"] = cfg.measure_time;
  j["out_dir"] = cfg.out_dir;
  j["master_seed"] = cfg.master_seed;
  return j.dump(2);
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentConfig cfg;
  cfg.grids.clear();
  for (const auto& jg : j.at("grids")) {
    GridSpecEntry g;
    g.name = jg.at("name").get<std::string>();
    const std::string kind = jg.at("kind").get<std::string>();
    if (kind == "radial") {
      g.kind = GridKind::Radial;
    } else if (kind == "meshed") {
      g.kind = GridKind::Meshed;
    } else {
      throw std::invalid_argument("experiment config: unknown grid kind '" + kind + "'");
    }
    g.n_buses = jg.at("buses").get<int>();
    g.seed = jg.at("seed").get<std::uint64_t>();
    if (jg.contains("voltage_class")) g.voltage_class = jg["voltage_class"].get<std::string>();
    if (g.voltage_class != "auto" && g.voltage_class != "lv" && g.voltage_class != "mv") {
      throw std::invalid_argument("experiment config: voltage_class must be auto|lv|mv");
    }
    cfg.grids.push_back(g);
  }
  if (j.contains("timesteps")) cfg.n_timesteps = j["timesteps"].get<int>();
  if (j.contains("rates")) cfg.rates = j["rates"].get<std::vector<double>>();
  if (j.contains("models")) cfg.models = j["models"].get<std::vector<std::string>>();
  if (j.contains("train")) {
    const auto& jt = j["train"];
    if (jt.contains("lr")) cfg.train.lr = jt["lr"].get<double>();
    if (jt.contains("max_epochs")) cfg.train.max_epochs = jt["max_epochs"].get<int>();
    if (jt.contains("patience")) cfg.train.patience = jt["patience"].get<int>();
    if (jt.contains("lr_halve_after")) cfg.train.lr_halve_after = jt["lr_halve_after"].get<int>();
    if (jt.contains("min_improvement")) {
      cfg.train.min_improvement = jt["min_improvement"].get<double>();
    }
    if (jt.contains("batch_size")) cfg.train.batch_size = jt["batch_size"].get<int>();
  }
  if (j.contains("switching")) cfg.switching = j["switching"].get<bool>();
  if (j.contains("measure_time")) cfg.measure_time = j["measure_time"].get<bool>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("master_seed")) cfg.master_seed = j["master_seed"].get<std::uint64_t>();
  for (double r : cfg.rates) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("experiment config: rate outside [0,1]");
  }
  if (cfg.models.empty()) throw std::invalid_argument("experiment config: need at least a model");
  if (cfg.train.patience < 1) throw std::invalid_argument("experiment config: patience >= 1");
  return cfg;
}

std::vector<MetricsRow> run_sweep(const ExperimentConfig& cfg) {
  std::vector<MetricsRow> rows;
  using clock = std::chrono::steady_clock;
  for (std::size_t gi = 0; gi < cfg.grids.size(); ++gi) {
    const GridSpecEntry& gspec = cfg.grids[gi];
    for (std::size_t ri = 0; ri < cfg.rates.size(); ++ri) {
      const double rate = cfg.rates[ri];
      Dataset ds;
      bool dataset_ok = true;
      std::string dataset_error;
      try {
        const Grid grid = build_synthetic_grid(gspec.kind, gspec.n_buses, gspec.seed);
        DatasetConfig dcfg;
        dcfg.n_timesteps = cfg.n_timesteps;
        dcfg.penetration = rate;
        dcfg.switching = cfg.switching;
        dcfg.low_voltage = gspec.voltage_class == "auto" ? gspec.n_buses <= 60
                                                         : gspec.voltage_class == "lv";
        dcfg.seed = derive_seed(cfg.master_seed, 1000 + gi * 100 + ri);
        ds = generate_dataset(grid, dcfg);
      } catch (const std::exception& e) {
        dataset_ok = false;
        dataset_error = e.what();
      }
      for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
        MetricsRow row;
        row.grid = gspec.name;
        row.n_buses = gspec.n_buses;
        row.rate = rate;
        row.model = cfg.models[mi];
        if (!dataset_ok) {
          row.failed = true;
          row.error = "dataset: " + dataset_error;
          rows.push_back(row);
          continue;
        }
        try {
          ModelConfig mcfg = default_model_config(
              cfg.models[mi], ds.n_buses(),
              derive_seed(cfg.master_seed, 2000 + gi * 100 + ri * 10 + mi));
          auto model = make_estimator(mcfg, kNodeFeatures, kEdgeFeatures);
          TrainConfig tcfg = cfg.train;
          tcfg.seed = derive_seed(cfg.master_seed, 3000 + gi * 100 + ri * 10 + mi);

          const auto t0 = clock::now();
          TrainResult tr = train(*model, ds, tcfg);
          const auto t1 = clock::now();
          auto [rmse_mag, rmse_ang] = evaluate_rmse(*model, ds, ds.split.test);
          const auto t2 = clock::now();

          row.rmse_mag_pu = rmse_mag;
          row.rmse_ang_deg = rmse_ang;
          if (cfg.measure_time) {
            row.train_s = std::chrono::duration<double>(t1 - t0).count();
            row.infer_s = std::chrono::duration<double>(t2 - t1).count();
          }
          row.params = model->params().n_parameters();
          row.best_epoch = tr.best_epoch;
          if (tr.diverged) {
            row.failed = true;
            row.error = "training diverged";
          }
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

std::string results_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "grid,n_buses,rate,model,rmse_mag_pu,rmse_ang_deg,train_s,infer_s,params,best_epoch\n";
  for (const MetricsRow& r : rows) {
    if (r.failed) continue;
    out << r.grid << "," << r.n_buses << "," << format_double(r.rate) << "," << r.model << ","
        << format_double(r.rmse_mag_pu) << "," << format_double(r.rmse_ang_deg) << ","
        << format_double(r.train_s) << "," << format_double(r.infer_s) << "," << r.params << ","
        << r.best_epoch << "\n";
  }
  return out.str();
}

std::vector<MetricsRow> parse_results_csv(const std::string& text) {
  std::vector<MetricsRow> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricsRow r;
    std::string cell;
    std::getline(ss, r.grid, ',');
    std::getline(ss, cell, ',');
    r.n_buses = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.rate = std::stod(cell);
    std::getline(ss, r.model, ',');
    std::getline(ss, cell, ',');
    r.rmse_mag_pu = std::stod(cell);
    std::getline(ss, cell, ',');
    r.rmse_ang_deg = std::stod(cell);
    std::getline(ss, cell, ',');
    r.train_s = std::stod(cell);
    std::getline(ss, cell, ',');
    r.infer_s = std::stod(cell);
    std::getline(ss, cell, ',');
    r.params = std::stol(cell);
    std::getline(ss, cell, ',');
    r.best_epoch = std::stoi(cell);
    rows.push_back(r);
  }
  return rows;
}

namespace {

constexpr const char* kPlotResultsPy = R"PY(#!/usr/bin/env python3
"""Plots RMSE distributions and penetration sweeps from results.csv."""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "results.csv"
rows = list(csv.DictReader(open(path)))
if not rows:
    sys.exit("no rows in " + path)

by_model = defaultdict(list)
for r in rows:
    by_model[r["model"]].append(float(r["rmse_mag_pu"]))

fig, ax = plt.subplots(figsize=(7, 4))
models = sorted(by_model)
ax.boxplot([by_model[m] for m in models], labels=models)
ax.set_yscale("log")
ax.set_ylabel("RMSE magnitude [p.u.]")
ax.set_title("RMSE distribution over all grids and rates")
fig.tight_layout()
fig.savefig("rmse_distribution.png", dpi=150)

# one sweep panel per grid: rmse vs measurement rate
grids = sorted({r["grid"] for r in rows})
fig, axes = plt.subplots(1, len(grids), figsize=(4 * len(grids), 3.5), squeeze=False)
for ax, grid in zip(axes[0], grids):
    for m in models:
        pts = sorted(
            (float(r["rate"]), float(r["rmse_mag_pu"]))
            for r in rows
            if r["grid"] == grid and r["model"] == m
        )
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m)
    ax.set_yscale("log")
    ax.set_xlabel("measurement rate")
    ax.set_title(grid)
axes[0][0].set_ylabel("RMSE magnitude [p.u.]")
axes[0][-1].legend(fontsize=7)
fig.tight_layout()
fig.savefig("rmse_vs_rate.png", dpi=150)
print("wrote rmse_distribution.png, rmse_vs_rate.png")
)PY";

constexpr const char* kPlotDiagnosticsPy = R"PY(#!/usr/bin/env python3
"""Plots layer traces (DE / RQ vs depth) and learned distance curves."""
import csv
import glob
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

prefix = sys.argv[1] if len(sys.argv) > 1 else "."

traces = sorted(glob.glob(prefix + "/layer_trace*.csv"))
if traces:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for path in traces:
        rows = list(csv.DictReader(open(path)))
        layers = [int(r["layer"]) for r in rows]
        ax1.plot(layers, [float(r["dirichlet_energy"]) for r in rows], marker="o", label=path)
        ax2.plot(layers, [float(r["rayleigh_quotient"]) for r in rows], marker="o", label=path)
    ax1.set_xlabel("layer"), ax1.set_ylabel("Dirichlet energy"), ax1.set_yscale("log")
    ax2.set_xlabel("layer"), ax2.set_ylabel("Rayleigh quotient")
    ax2.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig("layer_trace.png", dpi=150)
    print("wrote layer_trace.png")

curves = sorted(glob.glob(prefix + "/distance_curve*.csv"))
if curves:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for path in curves:
        rows = list(csv.DictReader(open(path)))
        ax.plot([int(r["hop"]) for r in rows], [float(r["weight"]) for r in rows],
                marker=".", label=path)
    ax.set_xlabel("hop distance"), ax.set_ylabel("learned weight")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig("distance_curves.png", dpi=150)
    print("wrote distance_curves.png")
)PY";

}  // namespace

void export_results(const std::vector<MetricsRow>& rows, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream csv((fs::path(out_dir) / "results.csv").string());
    if (!csv) throw std::runtime_error("cannot write results.csv in " + out_dir);
    csv << results_csv(rows);
  }
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const MetricsRow& r : rows) {
    j.push_back({{"grid", r.grid},
                 {"n_buses", r.n_buses},
                 {"rate", r.rate},
                 {"model", r.model},
                 {"rmse_mag_pu", r.rmse_mag_pu},
                 {"rmse_ang_deg", r.rmse_ang_deg},
                 {"train_s", r.train_s},
                 {"infer_s", r.infer_s},
                 {"params", r.params},
                 {"best_epoch", r.best_epoch},
                 {"failed", r.failed},
                 {"error", r.error}});
  }
  std::ofstream((fs::path(out_dir) / "results.json").string()) << j.dump(1) << "\n";
  std::ofstream((fs::path(out_dir) / "plot_results.py").string()) << kPlotResultsPy;
  std::ofstream((fs::path(out_dir) / "plot_diagnostics.py").string()) << kPlotDiagnosticsPy;
}

}  // namespace gridmp
