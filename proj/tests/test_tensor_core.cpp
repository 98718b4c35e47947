#include <doctest.h>

#include <cmath>
#include <random>

#include "datn/autograd.hpp"
#include "datn/ops.hpp"
#include "datn/reference.hpp"
#include "support.hpp"

using namespace datn;
using testing::to_mat;
using testing::to_tensor;
using testing::uniform;

TEST_CASE("matmul examples") {
  Tensor<double> eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
  Tensor<double> m = Tensor<double>::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(eye, m) == m);

  Tensor<double> sel = Tensor<double>::matrix({{1, 0}});
  Tensor<double> col = Tensor<double>::matrix({{2.5}, {-7}});
  CHECK(matmul(sel, col).item() == 2.5);

  std::mt19937_64 rng(1);
  oracle::Mat a = oracle::random(3, 4, rng), b = oracle::random(4, 2, rng);
  auto got = matmul(to_tensor<double>(a), to_tensor<double>(b));
  CHECK(testing::max_rel(to_mat(got), oracle::matmul(a, b)) < 1e-14);

  CHECK_THROWS_AS(matmul(to_tensor<double>(a), to_tensor<double>(a)), ShapeError);
}

TEST_CASE("gemm matches the serial reference for every transpose combination") {
  std::mt19937_64 rng(2);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {7, 5, 3}, {37, 61, 300}, {130, 17, 513}}) {
    for (Trans ta : {Trans::no, Trans::yes}) {
      for (Trans tb : {Trans::no, Trans::yes}) {
        Tensor<float> a = ta == Trans::no ? uniform<float>({std::size_t(m), std::size_t(k)}, rng)
                                          : uniform<float>({std::size_t(k), std::size_t(m)}, rng);
        Tensor<float> b = tb == Trans::no ? uniform<float>({std::size_t(k), std::size_t(n)}, rng)
                                          : uniform<float>({std::size_t(n), std::size_t(k)}, rng);
        Tensor<float> c0 = uniform<float>({std::size_t(m), std::size_t(n)}, rng);
        Tensor<float> c1 = c0;
        auto av = MatrixRef<const float>{a.raw(), a.rows(), a.cols(), a.cols()};
        auto bv = MatrixRef<const float>{b.raw(), b.rows(), b.cols(), b.cols()};
        kernels::gemm<float>(ta, tb, 0.5f, av, bv, 2.0f, matrix_ref(c0.raw(), c0.rows(), c0.cols()));
        reference::gemm<float>(ta, tb, 0.5f, av, bv, 2.0f, matrix_ref(c1.raw(), c1.rows(), c1.cols()));
        CHECK(max_relative_error(c0, c1) < 1e-5);
      }
    }
  }
}

TEST_CASE("row kernels match the serial reference") {
  std::mt19937_64 rng(3);
  Tensor<double> s = uniform<double>({40, 40}, rng, -5, 5);
  Tensor<double> s2 = s;
  kernels::softmax_causal_rows<double>(matrix_ref(s.raw(), 40, 40));
  reference::softmax_causal_rows<double>(matrix_ref(s2.raw(), 40, 40));
  CHECK(max_abs_difference(s, s2) < 1e-15);

  Tensor<double> x = uniform<double>({9, 16}, rng);
  Tensor<double> g = uniform<double>({16}, rng);
  Tensor<double> y1({9, 16}), y2({9, 16}), r1({9}), r2({9});
  kernels::rms_norm_rows<double>(x.data(), g.data(), 1e-6, y1.data(), r1.data(), 16);
  reference::rms_norm_rows<double>(x.data(), g.data(), 1e-6, y2.data(), r2.data(), 16);
  CHECK(max_abs_difference(y1, y2) < 1e-14);

  Tensor<double> q = uniform<double>({12, 16}, rng);
  Tensor<double> q2 = q;
  kernels::rope_rows<double>(q.data(), 2, 8, 6, 10000.0, false);
  reference::rope_rows<double>(q2.data(), 2, 8, 6, 10000.0, false);
  CHECK(max_abs_difference(q, q2) < 1e-14);
}

TEST_CASE("softmax_causal_rows examples and invariants") {
  auto a = softmax_causal_rows(Tensor<double>({3, 3}, 0.0));
  CHECK(a(0, 0) == doctest::Approx(1.0));
  CHECK(a(1, 0) == doctest::Approx(0.5));
  CHECK(a(1, 1) == doctest::Approx(0.5));
  for (int j = 0; j < 3; ++j) CHECK(a(2, j) == doctest::Approx(1.0 / 3));
  CHECK(a(0, 1) == 0.0);
  CHECK(a(0, 2) == 0.0);
  CHECK(a(1, 2) == 0.0);

  CHECK(softmax_causal_rows(Tensor<double>({1, 1}, 4.2)).item() == 1.0);

  Tensor<double> l({2, 2}, 0.0);
  l(1, 1) = std::log(3.0);
  auto b = softmax_causal_rows(l);
  CHECK(b(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(b(1, 1) == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = softmax_causal_rows(uniform<float>({17, 17}, rng, -30, 30));
    for (std::size_t i = 0; i < 17; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 17; ++j) {
        sum += p(i, j);
        if (j > i) CHECK(p(i, j) == 0.0f);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(softmax_causal_rows(Tensor<double>({2, 3})), ShapeError);
}

TEST_CASE("silu examples") {
  auto y = silu(Tensor<double>::vector({0.0, 1.0, 40.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(y[2] == doctest::Approx(40.0).epsilon(1e-12));
}

TEST_CASE("rms_norm examples") {
  auto unit = rms_norm(Tensor<double>::matrix({{1, -1, 1, -1}}), Tensor<double>({4}, 1.0), 0.0);
  CHECK(unit == Tensor<double>::matrix({{1, -1, 1, -1}}));
  auto zero = rms_norm(Tensor<double>({1, 4}, 0.0), Tensor<double>({4}, 1.0), 1e-6);
  CHECK(zero == Tensor<double>({1, 4}, 0.0));
  auto v = rms_norm(Tensor<double>::matrix({{3, 4}}), Tensor<double>({2}, 1.0), 0.0);
  CHECK(v(0, 0) == doctest::Approx(3 / std::sqrt(12.5)).epsilon(1e-14));
  CHECK(v(0, 1) == doctest::Approx(4 / std::sqrt(12.5)).epsilon(1e-14));
}

TEST_CASE("rope_apply") {
  std::mt19937_64 rng(5);
  Tensor<double> x = uniform<double>({8, 6}, rng);
  std::vector<std::size_t> zero(8, 0);
  CHECK(rope_apply<double>(x, zero, 10000.0) == x);

  std::vector<std::size_t> pos = {0, 1, 2, 3, 10, 100, 1000, 4095};
  auto r = rope_apply<double>(x, pos, 10000.0);
  for (std::size_t i = 0; i < 8; ++i) {
    double n0 = 0, n1 = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      n0 += x(i, j) * x(i, j);
      n1 += r(i, j) * r(i, j);
    }
    CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) <= 1e-6);
    CHECK(r(i, 0) == doctest::Approx(oracle::rope({x(i, 0), x(i, 1), x(i, 2), x(i, 3), x(i, 4), x(i, 5)},
                                                  pos[i])[0])
                         .epsilon(1e-12));
  }

  // Same-position dot products survive the rotation.
  Tensor<double> q = uniform<double>({8, 6}, rng), k = uniform<double>({8, 6}, rng);
  auto rq = rope_apply<double>(q, pos, 10000.0), rk = rope_apply<double>(k, pos, 10000.0);
  for (std::size_t i = 0; i < 8; ++i) {
    double d0 = 0, d1 = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      d0 += q(i, j) * k(i, j);
      d1 += rq(i, j) * rk(i, j);
    }
    CHECK(d1 == doctest::Approx(d0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(rope_apply<double>(Tensor<double>({2, 3}), std::vector<std::size_t>{0, 1}, 10000.0),
                  ShapeError);
}

TEST_CASE("matmul is associative within float tolerance") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = uniform<float>({5, 7}, rng), b = uniform<float>({7, 3}, rng), c = uniform<float>({3, 4}, rng);
    CHECK(max_abs_difference(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-5);
  }
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(7);
  Tensor<double> x0 = uniform<double>({3, 4}, rng);
  {
    Tape<double> tape;
    auto x = tape.leaf(x0);
    tape.backward(sum(x));
    CHECK(tape.grad(x.id()) == Tensor<double>({3, 4}, 1.0));
  }
  {
    Tape<double> tape;
    auto x = tape.leaf(x0);
    tape.backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(tape.grad(x.id())[i] == 2 * x0[i]);
  }
  {
    Tape<double> tape;
    auto x = tape.leaf(x0);
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
}

TEST_CASE("finite_difference_grad") {
  std::mt19937_64 rng(8);
  Tensor<double> x = uniform<double>({10}, rng);
  auto ones = finite_difference_grad(
      [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.data()) s += v;
        return s;
      },
      x, 1e-5);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(ones[i] - 1.0) <= 1e-9);
  auto g = finite_difference_grad(
      [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.data()) s += 0.5 * v * v;
        return s;
      },
      x, 1e-5);
  for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(g[i] - x[i]) <= 1e-6);
}

namespace {

// Runs f on a fresh tape with `inputs` as leaves, returns the analytic
// gradient of each input and checks it against central differences.
template <typename F>
void check_op_gradients(const std::vector<Tensor<double>>& inputs, F&& f) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
  tape.backward(f(leaves));
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    auto numeric = finite_difference_grad(
        [&](const Tensor<double>& probe) {
          Tape<double> t2(false);
          std::vector<Var<double>> l2;
          for (std::size_t i = 0; i < inputs.size(); ++i) l2.push_back(t2.leaf(i == which ? probe : inputs[i]));
          return f(l2).value().item();
        },
        inputs[which], 1e-5);
    CAPTURE(which);
    CHECK(testing::grad_rel(tape.grad(leaves[which].id()), numeric) <= 1e-4);
  }
}

// Weighted readout so every output coordinate carries a distinct gradient.
Var<double> readout(const Var<double>& y) {
  std::mt19937_64 rng(99);
  auto w = y.tape().constant(uniform<double>(y.shape(), rng));
  return sum(mul(y, w));
}

}  // namespace

TEST_CASE("backward matches finite differences for every op") {
  std::mt19937_64 rng(9);
  auto A = uniform<double>({4, 5}, rng), B = uniform<double>({5, 3}, rng);
  check_op_gradients({A, B}, [](auto& v) { return readout(matmul(v[0], v[1])); });
  auto Bt = uniform<double>({3, 5}, rng), At = uniform<double>({5, 4}, rng);
  check_op_gradients({A, Bt}, [](auto& v) { return readout(matmul(v[0], v[1], Trans::no, Trans::yes)); });
  check_op_gradients({At, B}, [](auto& v) { return readout(matmul(v[0], v[1], Trans::yes, Trans::no)); });
  check_op_gradients({At, Bt}, [](auto& v) { return readout(matmul(v[0], v[1], Trans::yes, Trans::yes)); });

  auto X = uniform<double>({4, 6}, rng), Y = uniform<double>({4, 6}, rng), g = uniform<double>({6}, rng);
  check_op_gradients({X, Y}, [](auto& v) { return readout(add(v[0], v[1])); });
  check_op_gradients({X, Y}, [](auto& v) { return readout(mul(v[0], v[1])); });
  check_op_gradients({X}, [](auto& v) { return readout(scale(v[0], 1.7)); });
  check_op_gradients({X, g}, [](auto& v) { return readout(add_row_vector(v[0], v[1])); });
  check_op_gradients({X, g}, [](auto& v) { return readout(mul_row_vector(v[0], v[1])); });
  check_op_gradients({X}, [](auto& v) { return readout(silu(v[0])); });
  check_op_gradients({X, g}, [](auto& v) { return readout(rms_norm(v[0], v[1], 1e-6)); });
  check_op_gradients({X}, [](auto& v) { return readout(rope(v[0], 3, 3, 10000.0)); });
  check_op_gradients({X}, [](auto& v) { return readout(slice_rows(v[0], 1, 2)); });

  auto S = uniform<double>({5, 5}, rng, -2, 2);
  check_op_gradients({S}, [](auto& v) { return readout(softmax_causal_rows(v[0])); });

  auto table = uniform<double>({7, 3}, rng);
  std::vector<int> tokens = {3, 0, 3, 6};
  check_op_gradients({table}, [&](auto& v) { return readout(embedding(v[0], tokens)); });

  auto logits = uniform<double>({4, 7}, rng, -3, 3);
  std::vector<int> targets = {1, 6, 0, 1};
  check_op_gradients({logits}, [&](auto& v) { return cross_entropy(v[0], targets); });
}

TEST_CASE("cross entropy examples") {
  std::vector<int> t = {0, 100, 256};
  auto uniform_logits = Tensor<double>({3, 257}, 0.0);
  CHECK(cross_entropy_rows(uniform_logits, t)[1] == doctest::Approx(std::log(257.0)).epsilon(1e-14));

  Tensor<double> sharp({1, 3}, -50.0);
  sharp(0, 2) = 50.0;
  CHECK(cross_entropy_rows(sharp, std::vector<int>{2})[0] < 1e-30);

  auto two = Tensor<double>::matrix({{0.0, 1.0}});
  CHECK(cross_entropy_rows(two, std::vector<int>{0})[0] ==
        doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-14));

  CHECK_THROWS_AS(cross_entropy_rows(two, std::vector<int>{2}), ConfigError);
}

TEST_CASE("parameters collect gradients across uses") {
  Parameter<double> p("w", Tensor<double>::matrix({{1, 2}, {3, 4}}));
  Tape<double> tape;
  auto a = tape.parameter(p);
  auto b = tape.parameter(p);
  tape.backward(sum(add(a, b)));
  CHECK(p.grad == Tensor<double>({2, 2}, 2.0));
}

TEST_CASE("non-finite forward values are surfaced") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1e308, 1e308}));
  CHECK_THROWS_AS(scale(x, 10.0), NumericalError);
}
