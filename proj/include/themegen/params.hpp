#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "themegen/eigen_types.hpp"
#include "themegen/errors.hpp"

namespace themegen {

// Uniform [0,1) with 53 random bits.  Hand-rolled from the raw engine output
// so results do not depend on the standard library's distribution internals.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller, same cross-library determinism rationale.
inline double normal01(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class Scalar>
Mat<Scalar> normal_init(int rows, int cols, double stddev, std::mt19937_64& rng) {
  Mat<Scalar> m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(stddev * normal01(rng));
  }
  return m;
}

template <class Scalar>
Mat<Scalar> xavier_init(int rows, int cols, std::mt19937_64& rng) {
  return normal_init<Scalar>(rows, cols, std::sqrt(2.0 / (rows + cols)), rng);
}

// Named parameter matrices plus per-parameter Adam state.  std::map keeps
// iteration (and therefore update and serialization order) deterministic.
template <class Scalar>
struct ParamStore {
  struct Entry {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    Mat<Scalar> adam_m;
    Mat<Scalar> adam_v;
  };

  std::map<std::string, Entry> entries;
  std::int64_t step = 0;

  Mat<Scalar>& create(const std::string& name, Mat<Scalar> value) {
    if (entries.count(name)) throw Error("parameter already exists: " + name);
    Entry e;
    e.grad = Mat<Scalar>::Zero(value.rows(), value.cols());
    e.adam_m = e.grad;
    e.adam_v = e.grad;
    e.value = std::move(value);
    return entries.emplace(name, std::move(e)).first->second.value;
  }

  Entry& entry(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    return const_cast<ParamStore*>(this)->entry(name);
  }
  bool has(const std::string& name) const { return entries.count(name) != 0; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  void zero_grads() {
    for (auto& [name, e] : entries) e.grad.setZero();
  }
};

// One bias-corrected Adam update over every parameter; gradients are zeroed
// afterwards so the next pass starts clean.
template <class Scalar>
void adam_step(ParamStore<Scalar>& store, double lr, double beta1 = 0.9, double beta2 = 0.99,
               double eps = 1e-8) {
  store.step += 1;
  const Scalar bc1 = static_cast<Scalar>(1.0 - std::pow(beta1, double(store.step)));
  const Scalar bc2 = static_cast<Scalar>(1.0 - std::pow(beta2, double(store.step)));
  const Scalar b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
  for (auto& [name, e] : store.entries) {
    e.adam_m = b1 * e.adam_m + (Scalar(1) - b1) * e.grad;
    e.adam_v = (b2 * e.adam_v.array() + (Scalar(1) - b2) * e.grad.array().square()).matrix();
    e.value.array() -= static_cast<Scalar>(lr) * (e.adam_m.array() / bc1) /
                       ((e.adam_v.array() / bc2).sqrt() + static_cast<Scalar>(eps));
    e.grad.setZero();
  }
}

}  // namespace themegen
