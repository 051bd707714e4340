#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "relmatch/autodiff.hpp"
#include "relmatch/errors.hpp"
#include "relmatch/rng.hpp"

namespace relmatch::ad {

class ParamStore {
 public:
  Param& create(const std::string& name, Mat init, int group = 0) {
    if (by_name_.count(name)) throw Error("duplicate parameter: " + name);
    auto p = std::make_unique<Param>(name, std::move(init), group);
    p->index = static_cast<int>(params_.size());
    by_name_[name] = p->index;
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param& create(const std::string& name, long rows, long cols, int group = 0) {
    return create(name, Mat::Zero(rows, cols), group);
  }

  Param* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : params_[it->second].get();
  }
  const Param* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : params_[it->second].get();
  }

  Param& at(const std::string& name) {
    Param* p = find(name);
    if (!p) throw Error("unknown parameter: " + name);
    return *p;
  }

  std::size_t count() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  std::vector<Param*> all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  nlohmann::ordered_json serialize() const {
    nlohmann::ordered_json j;
    for (const auto& p : params_) {
      std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
      j[p->name] = {{"rows", p->value.rows()},
                    {"cols", p->value.cols()},
                    {"group", p->group},
                    {"data", data}};
    }
    return j;
  }

  // Loads values into already-created parameters; shapes must agree.
  void deserialize(const nlohmann::json& j) {
    for (auto& p : params_) {
      if (!j.contains(p->name)) throw Error("checkpoint missing parameter: " + p->name);
      const auto& e = j.at(p->name);
      const long r = e.at("rows").get<long>();
      const long c = e.at("cols").get<long>();
      if (r != p->value.rows() || c != p->value.cols())
        throw DimensionMismatch("checkpoint shape mismatch for " + p->name);
      const auto data = e.at("data").get<std::vector<double>>();
      p->value = Eigen::Map<const Mat>(data.data(), r, c);
    }
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, int> by_name_;
};

struct AdamConfig {
  std::array<double, 2> lr = {5e-4, 5e-4};  // per parameter group
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Lazy Adam: parameters whose gradient slot is empty for a step keep their
// moments and values untouched, so heads excluded from the current objective
// stay exactly at initialization.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& store, std::vector<Mat>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.count(); ++i) {
      Mat& g = grads[i];
      if (g.size() == 0) continue;
      Param& p = store[i];
      p.adam_m = cfg_.beta1 * p.adam_m + (1.0 - cfg_.beta1) * g;
      p.adam_v = cfg_.beta2 * p.adam_v.array().matrix() +
                 (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double lr = cfg_.lr[static_cast<std::size_t>(p.group)];
      p.value.array() -= lr * (p.adam_m.array() / bc1) /
                         ((p.adam_v.array() / bc2).sqrt() + cfg_.eps);
      g.resize(0, 0);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

// Initialization helpers. All draws are explicit so seeding fixes the model.
inline Mat xavier_uniform(Rng& rng, long rows, long cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

inline Mat gaussian_init(Rng& rng, long rows, long cols, double sd) {
  Mat m(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) m(i, j) = rng.normal(0.0, sd);
  return m;
}

}  // namespace relmatch::ad
