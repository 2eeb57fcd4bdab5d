#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gridmp/dataset.hpp"
#include "gridmp/models.hpp"

namespace gridmp {

struct TrainConfig {
  double lr = 1e-3;
  int max_epochs = 200;
  int patience = 3;            // consecutive non-improving val epochs before stopping
  int lr_halve_after = 2;      // flat epochs before halving the rate
  double min_improvement = 1e-6;
  int batch_size = 32;         // gat / skp-gat / mlp; gnan-family trains full batch
  std::uint64_t seed = 0;
};

/// Validation-loss driven scheduler and stopper. One observe() per epoch.
class EarlyStopper {
 public:
  enum class Action { Continue, HalveLr, Stop };

  EarlyStopper(double min_improvement, int halve_after, int patience)
      : min_improvement_(min_improvement), halve_after_(halve_after), patience_(patience) {}

  Action observe(double val_loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  double min_improvement_;
  int halve_after_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int flat_epochs_ = 0;
  bool improved_ = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;  // -1 when training never ran
  bool diverged = false;
};

/// Adamax training with per-epoch validation; leaves the model's parameters
/// at the best-validation snapshot. NaN losses abort with diverged status
/// and the last finite parameters. Models are fit to z-scored label
/// channels (training-split statistics); predictions are mapped back to
/// raw units everywhere they are reported.
TrainResult train(Estimator& model, const Dataset& ds, const TrainConfig& cfg);

/// Mean training objective (standardized labels) over the given samples.
double validation_loss(Estimator& model, const Dataset& ds, const std::vector<int>& indices);

/// Test-split RMSE per label channel: (p.u. magnitude, degrees angle).
/// Throws std::invalid_argument on an empty index list.
std::pair<double, double> evaluate_rmse(Estimator& model, const Dataset& ds,
                                        const std::vector<int>& indices);

/// Copies checkpoint tensors into a freshly built estimator (names and
/// shapes must match).
void load_params_into(Estimator& model, const ParamStore& loaded);

ModelConfig default_model_config(const std::string& kind, int max_nodes, std::uint64_t seed);

struct GridSpecEntry {
  std::string name;
  GridKind kind = GridKind::Radial;
  int n_buses = 15;
  std::uint64_t seed = 0;
  /// Noise tier assignment: "auto" (lv when n_buses <= 60), "lv" or "mv".
  std::string voltage_class = "auto";
};

struct ExperimentConfig {
  std::vector<GridSpecEntry> grids;
  int n_timesteps = 500;
  std::vector<double> rates{0.2, 0.9};
  std::vector<std::string> models{"mlp", "gat", "skp-gat", "gnan", "skp-gnan"};
  TrainConfig train;
  bool switching = true;
  bool measure_time = true;  // false zeroes the timing columns (deterministic output)
  std::string out_dir = "results";
  std::uint64_t master_seed = 0;
};

std::string experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const std::string& text);

struct MetricsRow {
  std::string grid;
  int n_buses = 0;
  double rate = 0.0;
  std::string model;
  double rmse_mag_pu = 0.0;
  double rmse_ang_deg = 0.0;
  double train_s = 0.0;
  double infer_s = 0.0;
  long params = 0;
  int best_epoch = 0;
  bool failed = false;
  std::string error;
};

/// One leg per (grid, rate, model): data generation, training, evaluation,
/// timing. Failing legs are recorded and the sweep continues. Pure function
/// of (config, master seed).
std::vector<MetricsRow> run_sweep(const ExperimentConfig& cfg);

/// Writes results.csv (successful legs), results.json (all legs) and the
/// plot scripts into out_dir.
void export_results(const std::vector<MetricsRow>& rows, const std::string& out_dir);

std::string results_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_results_csv(const std::string& text);

}  // namespace gridmp
