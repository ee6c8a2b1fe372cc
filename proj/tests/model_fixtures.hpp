#pragma once

#include <functional>
#include <random>
#include <vector>

#include "lotnext/model.hpp"
#include "lotnext/train.hpp"

namespace lotnext::testing {

/// Three users, six POIs, windows of four steps.
inline Dataset tiny_dataset(std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> poi(0, 5), slot(0, kTimeSlots - 1);
  Dataset ds;
  for (int u = 0; u < 3; ++u) ds.users.add("u" + std::to_string(u));
  for (int p = 0; p < 6; ++p) {
    ds.pois.add("p" + std::to_string(p));
    ds.coords.push_back({30.0 + 0.01 * p, -97.0 + 0.015 * (p % 3)});
  }
  ds.window_len = 4;
  for (int u = 0; u < 3; ++u) {
    for (int rep = 0; rep < 2; ++rep) {
      std::vector<int> path(5), slots(5);
      for (int k = 0; k < 5; ++k) {
        path[k] = poi(rng);
        slots[k] = slot(rng);
      }
      SequenceWindow w;
      w.user = u;
      for (int k = 0; k < 4; ++k) {
        w.pois.push_back(path[k]);
        w.slots.push_back(slots[k]);
        w.label_pois.push_back(path[k + 1]);
        w.label_slots.push_back(slots[k + 1]);
      }
      (rep == 0 ? ds.train : ds.test).push_back(w);
    }
  }
  ds.freq = build_frequency_table(ds.train, ds.n_pois());
  return ds;
}

/// Twenty windows of five steps: four users, each looping over its own
/// route of six POIs drawn from a shared pool of twelve.
inline Dataset overfit_dataset() {
  Dataset ds;
  for (int u = 0; u < 4; ++u) ds.users.add("u" + std::to_string(u));
  for (int p = 0; p < 12; ++p) {
    ds.pois.add("p" + std::to_string(p));
    ds.coords.push_back({30.0 + 0.02 * (p % 4), -97.0 + 0.02 * (p / 4)});
  }
  ds.window_len = 5;
  for (int u = 0; u < 4; ++u) {
    std::vector<int> route(6);
    for (int i = 0; i < 6; ++i) route[i] = (u * 3 + i * 5) % 12;
    int clock = 24 * u;
    for (int w = 0; w < 5; ++w) {
      SequenceWindow win;
      win.user = u;
      for (int k = 0; k < 5; ++k) {
        const int step = w * 5 + k;
        win.pois.push_back(route[step % 6]);
        win.slots.push_back((clock + 3 * step) % kTimeSlots);
        win.label_pois.push_back(route[(step + 1) % 6]);
        win.label_slots.push_back((clock + 3 * (step + 1)) % kTimeSlots);
      }
      ds.train.push_back(win);
    }
  }
  ds.freq = build_frequency_table(ds.train, ds.n_pois());
  return ds;
}

inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.window_len = 4;
  return cfg;
}

using ModelObjective = std::function<ad::Var(LotNextModel&, const LotNextModel::Bound&)>;

/// Finite differences over every parameter of `model` against the gradients
/// accumulated by one backward pass. Returns the worst per-parameter relative
/// error; `worst_name` receives the parameter it came from.
inline double model_gradcheck(LotNextModel& model, const ModelObjective& objective, std::string* worst_name = nullptr,
                              double h = 1e-6) {
  auto& store = model.params();
  store.zero_grad();
  {
    ad::Tape tape;
    auto bound = model.bind(tape);
    tape.backward(objective(model, bound));
  }
  std::vector<Matrix> analytic;
  for (const auto& p : store) analytic.push_back(p->grad);

  auto eval = [&] {
    ad::Tape tape;
    auto bound = model.bind(tape, false);
    return objective(model, bound).scalar();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& value = store[i].value;
    Matrix numeric(value.rows(), value.cols());
    for (Eigen::Index j = 0; j < value.size(); ++j) {
      const double orig = value.data()[j];
      value.data()[j] = orig + h;
      const double up = eval();
      value.data()[j] = orig - h;
      const double down = eval();
      value.data()[j] = orig;
      numeric.data()[j] = (up - down) / (2.0 * h);
    }
    const double scale = analytic[i].norm() + numeric.norm();
    if (scale < 1e-10) continue;
    const double err = (analytic[i] - numeric).norm() / scale;
    if (err > worst) {
      worst = err;
      if (worst_name) *worst_name = store[i].name;
    }
  }
  store.zero_grad();
  return worst;
}

}  // namespace lotnext::testing
