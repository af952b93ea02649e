#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "themegen/graph.hpp"

using namespace themegen;
using namespace themegen::testing;

namespace {
std::mt19937_64 seeded(unsigned s = 42) { return std::mt19937_64(s); }
}  // namespace

TEST_CASE("matmul gradients match finite differences") {
  auto rng = seeded();
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, matmul(in[0], in[1]));
      },
      {random_mat(3, 4, rng), random_mat(4, 5, rng)});
}

TEST_CASE("add handles same shapes and row broadcast") {
  auto rng = seeded(1);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, add(in[0], in[1]));
      },
      {random_mat(3, 4, rng), random_mat(3, 4, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, add(in[0], in[1]));
      },
      {random_mat(3, 4, rng), random_mat(1, 4, rng)});

  Graph<double> g;
  CHECK_THROWS_WITH_AS(add(g.leaf(Matd::Zero(3, 4)), g.leaf(Matd::Zero(2, 4))),
                       doctest::Contains("3x4"), Error);
}

TEST_CASE("sub and scale and transpose gradients") {
  auto rng = seeded(2);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, sub(in[0], in[1]));
      },
      {random_mat(2, 5, rng), random_mat(2, 5, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, scale(in[0], 2.5));
      },
      {random_mat(4, 3, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, transpose(in[0]));
      },
      {random_mat(2, 6, rng)});
}

TEST_CASE("mul broadcasts elementwise, per-row and per-column") {
  auto rng = seeded(3);
  for (auto [r, c] : {std::pair{3, 4}, std::pair{3, 1}, std::pair{1, 4}}) {
    check_gradients(
        [](Graph<double>& g, const std::vector<Var<double>>& in) {
          return weighted_sum(g, mul(in[0], in[1]));
        },
        {random_mat(3, 4, rng), random_mat(r, c, rng)});
  }
}

TEST_CASE("concat and slice gradients") {
  auto rng = seeded(4);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, concat_rows(in[0], in[1]));
      },
      {random_mat(2, 3, rng), random_mat(4, 3, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, concat_cols(in[0], in[1]));
      },
      {random_mat(3, 2, rng), random_mat(3, 5, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, slice_rows(in[0], 1, 2));
      },
      {random_mat(4, 3, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, slice_cols(in[0], 2, 3));
      },
      {random_mat(3, 6, rng)});

  Graph<double> g;
  CHECK_THROWS_AS(slice_rows(g.leaf(Matd::Zero(3, 3)), 2, 2), Error);
}

TEST_CASE("lookup_rows scatter-adds repeated ids") {
  auto rng = seeded(5);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, lookup_rows(in[0], {2, 0, 2, 3}));
      },
      {random_mat(4, 3, rng)});

  Graph<double> g;
  CHECK_THROWS_AS(lookup_rows(g.leaf(Matd::Zero(4, 3)), {4}), Error);
}

TEST_CASE("softmax of a constant vector is uniform") {
  Graph<double> g;
  Var<double> y = softmax_rows(g.leaf(Matd::Constant(1, 5, 3.25)));
  for (int j = 0; j < 5; ++j) CHECK(y.value()(0, j) == doctest::Approx(0.2));
}

TEST_CASE("softmax, log-sum-exp and l2 normalization gradients") {
  auto rng = seeded(6);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, softmax_rows(in[0]));
      },
      {random_mat(3, 5, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, log_sum_exp_rows(in[0]));
      },
      {random_mat(4, 6, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, l2_normalize_rows(in[0]));
      },
      {random_mat(3, 4, rng)});
}

TEST_CASE("layer norm gradients for input, gain and bias") {
  auto rng = seeded(7);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, layer_norm_rows(in[0], in[1], in[2]));
      },
      {random_mat(3, 6, rng), random_mat(1, 6, rng, 0.2), random_mat(1, 6, rng, 0.2)});

  Graph<double> g;
  CHECK_THROWS_AS(layer_norm_rows(g.leaf(Matd::Zero(2, 4)), g.leaf(Matd::Zero(1, 3)),
                                  g.leaf(Matd::Zero(1, 4))),
                  Error);
}

TEST_CASE("gelu slope at zero is one half") {
  Graph<double> g;
  Var<double> x = g.leaf(Matd::Zero(1, 1));
  g.backward(gelu(x));
  CHECK(x.grad()(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gelu gradients match finite differences") {
  auto rng = seeded(8);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, gelu(in[0]));
      },
      {random_mat(3, 4, rng)});
}

TEST_CASE("dropout is identity at p=0 and a fixed rescaled mask otherwise") {
  Graph<double> g;
  std::mt19937_64 rng(11);
  Var<double> x = g.leaf(Matd::Constant(4, 4, 2.0));
  Var<double> same = dropout(x, 0.0, rng);
  CHECK(same.node == x.node);

  Var<double> dropped = dropout(x, 0.5, rng);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double v = dropped.value()(i, j);
      CHECK((v == doctest::Approx(0.0) || v == doctest::Approx(4.0)));
    }
  }

  // Same seed, same mask.
  std::mt19937_64 r1(99), r2(99);
  Graph<double> g1, g2;
  Var<double> a = dropout(g1.leaf(Matd::Ones(3, 7)), 0.3, r1);
  Var<double> b = dropout(g2.leaf(Matd::Ones(3, 7)), 0.3, r2);
  CHECK((a.value().array() == b.value().array()).all());

  auto rng_fd = seeded(12);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        std::mt19937_64 local(5);  // frozen mask so both FD probes see it
        return weighted_sum(g, dropout(in[0], 0.4, local));
      },
      {random_mat(3, 4, rng_fd)});
}

TEST_CASE("masked_fill blocks gradient where filled") {
  Graph<double> g;
  BoolMat mask(1, 3);
  mask << true, false, true;
  Var<double> x = g.leaf((Matd(1, 3) << 1, 2, 3).finished());
  Var<double> y = masked_fill(x, mask, -9.0);
  CHECK(y.value()(0, 0) == -9.0);
  CHECK(y.value()(0, 1) == 2.0);
  CHECK(y.value()(0, 2) == -9.0);
  g.backward(sum_all(y));
  CHECK(x.grad()(0, 0) == 0.0);
  CHECK(x.grad()(0, 1) == 1.0);
  CHECK(x.grad()(0, 2) == 0.0);

  auto rng = seeded(13);
  BoolMat m2(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m2(i, j) = (i + j) % 2 == 0;
  check_gradients(
      [&m2](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, masked_fill(in[0], m2, 0.5));
      },
      {random_mat(3, 4, rng)});
}

TEST_CASE("reduction gradients") {
  auto rng = seeded(14);
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, colwise_mean(in[0]));
      },
      {random_mat(5, 3, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) { return mean_all(in[0]); },
      {random_mat(3, 4, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) { return sum_all(in[0]); },
      {random_mat(2, 2, rng)});
  check_gradients(
      [](Graph<double>& g, const std::vector<Var<double>>& in) {
        return weighted_sum(g, select_elements(in[0], {0, 2, 2}, {1, 0, 3}));
      },
      {random_mat(3, 4, rng)});
}

TEST_CASE("cross entropy ignores the padding id completely") {
  auto rng = seeded(15);
  const std::vector<int> targets = {1, 6, 99, 0, 3};  // 99 = ignore
  check_gradients(
      [&targets](Graph<double>& g, const std::vector<Var<double>>& in) {
        return cross_entropy_with_logits(in[0], targets, 99);
      },
      {random_mat(5, 7, rng)});

  Graph<double> g;
  Var<double> logits = g.leaf(random_mat(5, 7, rng));
  Var<double> loss = cross_entropy_with_logits(logits, targets, 99);
  g.backward(loss);
  CHECK(logits.grad().row(2).cwiseAbs().maxCoeff() == 0.0);  // the ignored row
  CHECK(logits.grad().row(0).cwiseAbs().maxCoeff() > 0.0);

  // All-ignored batch: zero loss, no gradient anywhere.
  Graph<double> g2;
  Var<double> l2 = g2.leaf(random_mat(2, 4, rng));
  Var<double> z = cross_entropy_with_logits(l2, {9, 9}, 9);
  CHECK(z.value()(0, 0) == 0.0);
  g2.backward(z);
  CHECK(l2.grad().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross entropy value matches a hand computation") {
  Graph<double> g;
  Matd logits(2, 3);
  logits << 0, 0, 0, 1, 0, 0;
  Var<double> loss = cross_entropy_with_logits(g.leaf(logits), {2, 0}, -1);
  const double expected =
      (std::log(3.0) + (std::log(std::exp(1.0) + 2.0) - 1.0)) / 2.0;
  CHECK(loss.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar from this graph") {
  Graph<double> g;
  Var<double> m = g.leaf(Matd::Zero(2, 2));
  CHECK_THROWS_AS(g.backward(m), Error);
  Graph<double> other;
  Var<double> s = other.leaf(Matd::Zero(1, 1));
  CHECK_THROWS_AS(g.backward(s), Error);
}

TEST_CASE("loss = sum of parameters gives exactly unit gradients") {
  ParamStore<double> store;
  store.create("w", Matd::Constant(3, 2, 0.25));
  Graph<double> g;
  g.backward(sum_all(g.param(store, "w")));
  CHECK((store.entry("w").grad.array() == 1.0).all());
}

TEST_CASE("gradients accumulate across passes until cleared") {
  ParamStore<double> store;
  store.create("w", Matd::Constant(2, 2, 1.0));

  for (int pass = 0; pass < 2; ++pass) {
    Graph<double> g;
    g.backward(sum_all(g.param(store, "w")));
  }
  CHECK((store.entry("w").grad.array() == 2.0).all());

  // Same story for two backward calls on one graph.
  store.zero_grads();
  Graph<double> g;
  Var<double> loss = sum_all(g.param(store, "w"));
  g.backward(loss);
  g.backward(loss);
  CHECK((store.entry("w").grad.array() == 2.0).all());
}

TEST_CASE("constant-only subgraphs stay untracked") {
  Graph<double> g;
  Var<double> c = mul(g.constant(Matd::Ones(2, 2)), g.constant(Matd::Ones(2, 2)));
  CHECK_FALSE(g.tracked(c.node));
  Var<double> x = g.leaf(Matd::Ones(2, 2));
  CHECK(g.tracked(add(x, c).node));
}

TEST_CASE("two-layer network gradcheck end to end") {
  auto rng = seeded(16);
  const std::vector<int> targets = {2, 0, 3, 3};
  check_gradients(
      [&targets](Graph<double>& g, const std::vector<Var<double>>& in) {
        Var<double> h = gelu(add(matmul(in[0], in[1]), in[2]));
        Var<double> n = layer_norm_rows(h, in[3], in[4]);
        Var<double> logits = matmul(n, in[5]);
        return cross_entropy_with_logits(logits, targets, -1);
      },
      {random_mat(4, 3, rng), random_mat(3, 6, rng), random_mat(1, 6, rng, 0.1),
       random_mat(1, 6, rng, 0.2), random_mat(1, 6, rng, 0.2), random_mat(6, 4, rng)},
      2e-5);
}
