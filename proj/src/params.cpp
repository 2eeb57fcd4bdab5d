#include "gridmp/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian doubles");

namespace gridmp {

int ParamStore::add(const std::string& name, Eigen::MatrixXd init) {
  if (index.count(name) > 0) throw std::logic_error("ParamStore: duplicate parameter " + name);
  const int slot = static_cast<int>(values.size());
  names.push_back(name);
  index[name] = slot;
  grads.emplace_back(Eigen::MatrixXd::Zero(init.rows(), init.cols()));
  moment1.emplace_back(Eigen::MatrixXd::Zero(init.rows(), init.cols()));
  moment_inf.emplace_back(Eigen::MatrixXd::Zero(init.rows(), init.cols()));
  values.push_back(std::move(init));
  return slot;
}

int ParamStore::slot(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& g : grads) g.setZero();
  grads_populated = false;
}

long ParamStore::n_parameters() const {
  long total = 0;
  for (const auto& v : values) total += static_cast<long>(v.size());
  return total;
}

void adamax_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
  if (!store.grads_populated) {
    throw std::logic_error("adamax_step: gradients not populated (run backward/collect first)");
  }
  store.step += 1;
  const double bias_fix = 1.0 - std::pow(beta1, static_cast<double>(store.step));
  for (std::size_t i = 0; i < store.values.size(); ++i) {
    store.moment1[i] = beta1 * store.moment1[i] + (1.0 - beta1) * store.grads[i];
    store.moment_inf[i] =
        (beta2 * store.moment_inf[i]).cwiseMax(store.grads[i].cwiseAbs());
    store.values[i].array() -= (lr / bias_fix) * store.moment1[i].array() /
                               (store.moment_inf[i].array() + eps);
  }
  store.zero_grads();
}

Eigen::MatrixXd fan_uniform(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
  }
  return m;
}

namespace {
constexpr const char* kMagic = "GRIDMP-CKPT1";
}

void save_checkpoint(const ParamStore& store, const std::string& meta_json,
                     const std::string& path) {
  nlohmann::ordered_json header;
  header["step"] = store.step;
  header["tensors"] = nlohmann::ordered_json::array();
  for (const std::string& name : store.names) {
    const auto& v = store.values[store.index.at(name)];
    header["tensors"].push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
  }
  header["meta"] = meta_json.empty() ? nlohmann::ordered_json(nullptr)
                                     : nlohmann::ordered_json::parse(meta_json);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << kMagic << "\n" << header.dump() << "\n";
  for (const auto& v : store.values) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const double d = v(r, c);
        out.write(reinterpret_cast<const char*>(&d), sizeof(double));
      }
    }
  }
}

ParamStore load_checkpoint(const std::string& path, std::string* meta_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kMagic) throw std::runtime_error("not a checkpoint file: " + path);
  std::getline(in, header_line);
  nlohmann::json header = nlohmann::json::parse(header_line);

  ParamStore store;
  for (const auto& jt : header.at("tensors")) {
    const int rows = jt.at("rows").get<int>();
    const int cols = jt.at("cols").get<int>();
    Eigen::MatrixXd v(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        double d = 0.0;
        in.read(reinterpret_cast<char*>(&d), sizeof(double));
        v(r, c) = d;
      }
    }
    store.add(jt.at("name").get<std::string>(), std::move(v));
  }
  if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
  store.step = header.at("step").get<long>();
  if (meta_json != nullptr) {
    *meta_json = header.at("meta").is_null() ? "" : header.at("meta").dump();
  }
  return store;
}

}  // namespace gridmp
