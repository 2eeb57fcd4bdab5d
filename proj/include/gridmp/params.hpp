#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridmp/rng.hpp"

namespace gridmp {

/// Named parameter collection with per-parameter gradient slots and Adamax
/// moment buffers. Insertion order is the serialization order.
struct ParamStore {
  int add(const std::string& name, Eigen::MatrixXd init);
  bool has(const std::string& name) const { return index.count(name) > 0; }
  int slot(const std::string& name) const;

  Eigen::MatrixXd& value(const std::string& name) { return values[slot(name)]; }
  const Eigen::MatrixXd& value(const std::string& name) const { return values[slot(name)]; }
  Eigen::MatrixXd& grad(const std::string& name) { return grads[slot(name)]; }

  void zero_grads();
  long n_parameters() const;

  std::vector<std::string> names;
  std::unordered_map<std::string, int> index;
  std::vector<Eigen::MatrixXd> values;
  std::vector<Eigen::MatrixXd> grads;
  std::vector<Eigen::MatrixXd> moment1;    // first moment
  std::vector<Eigen::MatrixXd> moment_inf; // infinity norm
  long step = 0;
  bool grads_populated = false;
};

/// Standard Adamax update (beta1 = 0.9, beta2 = 0.999, eps = 1e-8):
/// increments the step counter and zeroes the gradients. Throws
/// std::logic_error when gradients were never collected.
void adamax_step(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

/// Symmetric-fan uniform init, a = sqrt(6 / (fan_in + fan_out)).
Eigen::MatrixXd fan_uniform(int rows, int cols, Rng& rng);

/// Checkpoint file: magic line, one-line JSON header (names, shapes, step
/// counter, caller metadata), then flat little-endian 64-bit row-major
/// payload per tensor.
void save_checkpoint(const ParamStore& store, const std::string& meta_json,
                     const std::string& path);
ParamStore load_checkpoint(const std::string& path, std::string* meta_json = nullptr);

}  // namespace gridmp
