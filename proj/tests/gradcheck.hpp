#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "themegen/graph.hpp"

namespace themegen::testing {

// Builds a scalar loss from leaf variables created from `inputs`, in order.
using BuildFn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline double eval_loss(const BuildFn& build, const std::vector<Matd>& inputs) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const Matd& m : inputs) vars.push_back(g.leaf(m));
  return build(g, vars).value()(0, 0);
}

// Central finite differences against one analytic backward pass.
inline void check_gradients(const BuildFn& build, std::vector<Matd> inputs, double tol = 1e-5) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const Matd& m : inputs) vars.push_back(g.leaf(m));
  Var<double> loss = build(g, vars);
  REQUIRE(loss.rows() == 1);
  REQUIRE(loss.cols() == 1);
  g.backward(loss);
  std::vector<Matd> analytic;
  analytic.reserve(vars.size());
  for (Var<double> v : vars) analytic.push_back(v.grad());

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (int i = 0; i < inputs[k].rows(); ++i) {
      for (int j = 0; j < inputs[k].cols(); ++j) {
        const double x = inputs[k](i, j);
        const double h = 1e-5 * std::max(1.0, std::abs(x));
        inputs[k](i, j) = x + h;
        const double fp = eval_loss(build, inputs);
        inputs[k](i, j) = x - h;
        const double fm = eval_loss(build, inputs);
        inputs[k](i, j) = x;
        const double numeric = (fp - fm) / (2 * h);
        const double ana = analytic[k](i, j);
        const double err =
            std::abs(numeric - ana) / std::max({1.0, std::abs(numeric), std::abs(ana)});
        CAPTURE(k);
        CAPTURE(i);
        CAPTURE(j);
        CAPTURE(numeric);
        CAPTURE(ana);
        CHECK(err < tol);
      }
    }
  }
}

inline Matd random_mat(int rows, int cols, std::mt19937_64& rng, double scl = 1.0) {
  return normal_init<double>(rows, cols, scl, rng);
}

// Contracts a matrix output to a scalar through fixed pseudo-random weights,
// so every output element influences the loss.
inline Var<double> weighted_sum(Graph<double>& g, Var<double> m, unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  Var<double> w = g.constant(random_mat(m.rows(), m.cols(), rng));
  return sum_all(mul(m, w));
}

}  // namespace themegen::testing
