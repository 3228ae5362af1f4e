#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadgnn/error.hpp"
#include "roadgnn/rng.hpp"
#include "roadgnn/tensor.hpp"

namespace roadgnn::ad {

enum class InitScheme { GlorotUniform, Zeros, Constant };

// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)) with fan_in = rows and
// fan_out = cols.
inline Mat init_params(int rows, int cols, InitScheme scheme, std::uint64_t seed,
                       double constant_value = 0.0) {
  Mat m(rows, cols);
  switch (scheme) {
    case InitScheme::Zeros:
      break;
    case InitScheme::Constant:
      std::fill(m.a.begin(), m.a.end(), constant_value);
      break;
    case InitScheme::GlorotUniform: {
      SplitMix64 rng(seed);
      const double bound = std::sqrt(6.0 / (rows + cols));
      for (auto& x : m.a) x = rng.uniform(-bound, bound);
      break;
    }
  }
  return m;
}

// Named parameters with value, gradient, and Adam moment slots. Iteration
// is in name order, so updates are deterministic.
class ParamStore {
 public:
  Var create(const std::string& name, Mat init) {
    if (params_.count(name)) throw engine_error("parameter already registered: " + name);
    Param p;
    p.var = Var::leaf(std::move(init), /*requires_grad=*/true);
    p.m = Mat::zeros(p.var.rows(), p.var.cols());
    p.v = Mat::zeros(p.var.rows(), p.var.cols());
    auto [it, ok] = params_.emplace(name, std::move(p));
    (void)ok;
    return it->second.var;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Var at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw engine_error("unknown parameter: " + name);
    return it->second.var;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return params_.size(); }
  std::int64_t step() const { return step_; }

  void zero_grad() {
    for (auto& [k, p] : params_) {
      Mat& g = p.var.grad();
      std::fill(g.a.begin(), g.a.end(), 0.0);
    }
  }

  // Standard Adam with bias correction; an empty gradient counts as zero.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    step_ += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& [k, p] : params_) {
      Mat& val = p.var.value_mut();
      const Mat& g = p.var.grad_or_empty();
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = g.empty() ? 0.0 : g.a[i];
        p.m.a[i] = beta1 * p.m.a[i] + (1.0 - beta1) * gi;
        p.v.a[i] = beta2 * p.v.a[i] + (1.0 - beta2) * gi * gi;
        const double mhat = p.m.a[i] / bc1;
        const double vhat = p.v.a[i] / bc2;
        val.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      detail::check_finite(val, "adam_step");
    }
  }

  // Deep copy of the current values (fresh leaves, fresh moments).
  ParamStore clone_values() const {
    ParamStore out;
    for (const auto& [k, p] : params_) out.create(k, p.var.value());
    out.step_ = step_;
    return out;
  }

  // Copies values from another store into the live leaves by name.
  void restore_values(const ParamStore& from) {
    for (auto& [k, p] : params_) {
      auto it = from.params_.find(k);
      if (it == from.params_.end()) throw engine_error("checkpoint missing parameter: " + k);
      if (it->second.var.rows() != p.var.rows() || it->second.var.cols() != p.var.cols())
        throw engine_error("checkpoint shape mismatch for parameter: " + k);
      p.var.value_mut() = it->second.var.value();
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json jp = nlohmann::json::object();
    for (const auto& [k, p] : params_) {
      jp[k] = {{"rows", p.var.rows()}, {"cols", p.var.cols()}, {"values", p.var.value().a}};
    }
    return {{"schema", 1}, {"step", step_}, {"params", jp}};
  }

  static ParamStore from_json(const nlohmann::json& j) {
    ParamStore out;
    const auto& jp = j.at("params");
    for (auto it = jp.begin(); it != jp.end(); ++it) {
      Mat m(it.value().at("rows").get<int>(), it.value().at("cols").get<int>());
      const auto values = it.value().at("values").get<std::vector<double>>();
      if (values.size() != m.size()) throw parse_error("checkpoint value count mismatch: " + it.key());
      m.a = values;
      out.create(it.key(), std::move(m));
    }
    out.step_ = j.value("step", std::int64_t{0});
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    out << to_json().dump() << "\n";
  }

  static ParamStore load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

 private:
  struct Param {
    Var var;
    Mat m, v;
  };
  std::map<std::string, Param> params_;
  std::int64_t step_ = 0;
};

}  // namespace roadgnn::ad
