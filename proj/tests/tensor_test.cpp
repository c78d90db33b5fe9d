#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "xg/autograd.hpp"
#include "xg/ops.hpp"

using namespace xg;

namespace {

Tensor randt(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0, bool rg = false) {
  return Tensor::uniform(std::move(s), lo, hi, rng, rg);
}

// FD check helper for f applied to random input away from kinks
void check_op(const std::function<Tensor(const Tensor&)>& f, Tensor x, double tol = 1e-5) {
  auto rep = grad_check(f, x, 1e-5, tol);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.pass);
  CHECK(rep.checked > 0);
}

}  // namespace

TEST_CASE("elementwise forward basics") {
  Tensor x = Tensor::from({-1, 0, 2}, {3});
  auto r = relu(x);
  CHECK(r.data() == std::vector<double>{0, 0, 2});

  Tensor z = Tensor::from({0.0}, {1});
  CHECK(softplus(z, 5.0).data()[0] == doctest::Approx(std::log(2.0) / 5.0).epsilon(1e-12));

  // identity matmul leaves any 3xk matrix untouched
  Tensor id = Tensor::from({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
  Rng rng(7);
  Tensor a = randt({3, 5}, rng);
  auto out = matmul(id, a);
  for (size_t i = 0; i < a.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("shape errors name the op and shapes") {
  Tensor a = Tensor::from({1, 2}, {2});
  Tensor b = Tensor::from({1, 2, 3}, {3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2]"), ShapeError);
  Tensor m = Tensor::from({1, 2, 3, 4}, {2, 2});
  CHECK_THROWS_AS(matmul(m, b), ShapeError);
}

TEST_CASE("non-finite outputs are a hard error") {
  Tensor a = Tensor::from({1.0}, {1});
  Tensor z = Tensor::from({0.0}, {1});
  CHECK_THROWS_AS(div(a, z), NumericError);
  CHECK_THROWS_AS(log_(z), NumericError);
}

TEST_CASE("broadcast rules are right-aligned with size-1 stretch") {
  CHECK(broadcast_shapes({4, 1, 3}, {2, 3}) == Shape{4, 2, 3});
  CHECK_THROWS_AS(broadcast_shapes({2, 3}, {3, 2}), ShapeError);
  Tensor a = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  Tensor b = Tensor::from({10, 20, 30}, {3});
  auto s = add(a, b);
  CHECK(s.data() == std::vector<double>{11, 22, 33, 14, 25, 36});
}

TEST_CASE("conv2d matches trivially known kernels") {
  // ones * ones = window sum
  Tensor x = Tensor::ones({1, 1, 3, 3});
  Tensor w = Tensor::ones({1, 1, 3, 3});
  Tensor b = Tensor::zeros({1});
  auto y = conv2d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == doctest::Approx(9.0));

  // centered delta kernel with pad 1 reproduces the input
  Rng rng(3);
  Tensor xi = randt({2, 1, 5, 5}, rng);
  std::vector<double> dk(9, 0.0);
  dk[4] = 1.0;
  Tensor wd = Tensor::from(dk, {1, 1, 3, 3});
  auto yi = conv2d(xi, wd, b, 1, 1);
  for (size_t i = 0; i < xi.numel(); ++i)
    CHECK(yi.data()[i] == doctest::Approx(xi.data()[i]).epsilon(1e-14));
}

TEST_CASE("conv2d matches the naive 6-loop oracle") {
  Rng rng(11);
  Tensor x = randt({2, 3, 8, 8}, rng);
  Tensor w = randt({4, 3, 3, 3}, rng);
  Tensor b = randt({4}, rng);
  auto y = conv2d(x, w, b, 1, 1);
  auto ref = oracle::conv2d_naive(x.data(), 2, 3, 8, 8, w.data(), 4, 3, 3, b.data(), 1, 1);
  REQUIRE(y.numel() == ref.size());
  for (size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y.data()[i] - ref[i]) < 1e-12);

  // strided case on a geometry where the output size divides exactly
  Tensor x2 = randt({2, 3, 9, 9}, rng);
  auto y2 = conv2d(x2, w, b, 2, 1);
  auto ref2 = oracle::conv2d_naive(x2.data(), 2, 3, 9, 9, w.data(), 4, 3, 3, b.data(), 2, 1);
  REQUIRE(y2.numel() == ref2.size());
  for (size_t i = 0; i < ref2.size(); ++i) CHECK(std::fabs(y2.data()[i] - ref2[i]) < 1e-12);
}

TEST_CASE("conv2d rejects non-integer output sizes") {
  Tensor x = Tensor::ones({1, 1, 5, 5});
  Tensor w = Tensor::ones({1, 1, 2, 2});
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_AS(conv2d(x, w, b, 2, 0), ConfigError);
}

TEST_CASE("backward: linear and quadratic analytic gradients") {
  Tensor x = Tensor::from({1, 2, 3}, {3}, true);
  backward(reduce_sum_all(x));
  CHECK(x.grad_data() == std::vector<double>{1, 1, 1});

  Tensor x2 = Tensor::from({1, 2, 3}, {3}, true);
  backward(reduce_sum_all(mul(x2, x2)));
  CHECK(x2.grad_data() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward accumulates across fan-out") {
  Tensor x = Tensor::from({2.0}, {1}, true);
  Tensor y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x -> 2x + 3 = 7
  backward(reduce_sum_all(y));
  CHECK(x.grad_data()[0] == doctest::Approx(7.0));
}

TEST_CASE("backward errors: non-scalar loss, consumed tape, empty tape") {
  Tensor x = Tensor::from({1, 2}, {2}, true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), ShapeError);
  Tensor s = reduce_sum_all(y);
  backward(s);
  CHECK_THROWS_WITH_AS(backward(s), doctest::Contains("consumed"), Error);
  Tensor lone = Tensor::from({1.0}, {1});
  CHECK_THROWS_AS(backward(lone), Error);
}

TEST_CASE("composite conv->norm->relu->mean gradient matches finite differences") {
  Rng rng(5);
  Tensor x0 = randt({2, 2, 6, 6}, rng, 0.1, 1.0);
  Tensor w0 = randt({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor b0 = randt({3}, rng, -0.1, 0.1);

  auto net = [&](const Tensor& w) {
    Tensor y = conv2d(x0, w, b0, 1, 1);
    Tensor mu = reduce_mean(y, {0, 2, 3}, true);
    Tensor var = reduce_var(y, {0, 2, 3}, true);
    Tensor norm = div(sub(y, mu), sqrt_(add_scalar(var, 1e-5)));
    return reduce_mean_all(relu(norm));
  };
  auto rep = grad_check(net, w0, 1e-5, 1e-5);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("grad_check on smooth and kinked functions") {
  Rng rng(17);
  // sum of squares passes at a tight tolerance
  auto sq = [](const Tensor& t) { return reduce_sum_all(mul(t, t)); };
  auto rep = grad_check(sq, randt({5}, rng), 1e-5, 1e-6);
  CHECK(rep.pass);
  CHECK(rep.kinks == 0);

  // softplus chain at beta 5
  auto sp = [](const Tensor& t) { return reduce_sum_all(softplus(mul(t, t), 5.0)); };
  CHECK(grad_check(sp, randt({6}, rng), 1e-5, 1e-5).pass);

  // relu evaluated exactly at 0: flagged as kink and excluded
  auto rl = [](const Tensor& t) { return reduce_sum_all(relu(t)); };
  Tensor z = Tensor::from({0.0, 1.0, -1.0}, {3});
  auto krep = grad_check(rl, z, 1e-5, 1e-5);
  CHECK(krep.kinks == 1);
  CHECK(krep.checked == 2);
  CHECK(krep.pass);
}

TEST_CASE("finite differences cover every differentiable primitive") {
  Rng rng(23);
  Tensor a = randt({2, 3}, rng, 0.2, 1.5);  // positive domain for log/sqrt
  Tensor c = randt({3}, rng, 0.5, 1.5);

  check_op([&](const Tensor& t) { return reduce_sum_all(add(t, c)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(sub(c, t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(mul(t, c)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(div(c, t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(div(t, c)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(exp_(t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(log_(t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(sqrt_(t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(sigmoid(t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(softplus(t, 2.5)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(abs_(t)); }, a);  // positive inputs
  check_op([&](const Tensor& t) { return reduce_sum_all(relu(t)); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(reduce_mean(t, {0}, false))); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(reduce_max(t, {1}, true))); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(reshape(t, {3, 2}))); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(transpose2d(t))); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(broadcast_to(t, {4, 2, 3}))); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(concat({t, scale(t, 2.0)}, 1))); },
           a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(slice(t, 1, 1, 2))); }, a);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(matmul(t, transpose2d(t)))); }, a);

  Tensor img = randt({2, 2, 4, 4}, rng, -1.0, 1.0);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(im2col(t, 3, 3, 1, 1))); }, img);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(upsample_bilinear(t, 7, 9))); },
           img);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(maxpool2d(t, 2, 2))); }, img);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(global_avg_pool(t))); }, img);

  std::vector<int> labels{1, 0};
  check_op([&](const Tensor& t) { return softmax_xent(reshape(t, {2, 3}), labels); }, a, 1e-4);
  check_op([&](const Tensor& t) { return reduce_sum_all(square(normalize01_batched(t))); }, a);
}

TEST_CASE("broadcast gradient equals axis-sum of output gradient") {
  Rng rng(29);
  Tensor big = randt({4, 3}, rng);
  Tensor small = randt({3}, rng, -1.0, 1.0, true);
  Tensor g_out = randt({4, 3}, rng);
  backward(reduce_sum_all(mul(add(small, big), g_out)));
  // d/dsmall sum((small+big)*g) = column sums of g
  for (int j = 0; j < 3; ++j) {
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) expect += g_out.data()[static_cast<size_t>(i) * 3 + j];
    CHECK(small.grad_data()[static_cast<size_t>(j)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("nested gradients: differentiate through a gradient") {
  // y = sum(x^3); first grad 3x^2 is a graph node; second backward gives 6x
  Tensor x = Tensor::from({1.0, 2.0, -1.5}, {3}, true);
  Tensor y = reduce_sum_all(mul(mul(x, x), x));
  Tensor g = grad_of(y, {x}, true)[0];
  for (int i = 0; i < 3; ++i)
    CHECK(g.data()[static_cast<size_t>(i)] ==
          doctest::Approx(3.0 * x.data()[static_cast<size_t>(i)] * x.data()[static_cast<size_t>(i)]));
  backward(reduce_sum_all(g));
  for (int i = 0; i < 3; ++i)
    CHECK(x.grad_data()[static_cast<size_t>(i)] ==
          doctest::Approx(6.0 * x.data()[static_cast<size_t>(i)]));
}

TEST_CASE("grad_of prunes to the requested subgraph and handles unreachable wrt") {
  Tensor x = Tensor::from({2.0}, {1}, true);
  Tensor unused = Tensor::from({5.0}, {1}, true);
  Tensor y = reduce_sum_all(mul(x, x));
  auto gs = grad_of(y, {x, unused}, false);
  CHECK(gs[0].data()[0] == doctest::Approx(4.0));
  CHECK(gs[1].data()[0] == 0.0);
}

TEST_CASE("determinism: identical seeds give bit-identical values and gradients") {
  auto run = [] {
    Rng rng(123);
    Tensor x = Tensor::uniform({3, 4, 5, 5}, -1, 1, rng, true);
    Tensor w = Tensor::uniform({2, 4, 3, 3}, -0.3, 0.3, rng, true);
    Tensor b = Tensor::uniform({2}, -0.1, 0.1, rng, true);
    Tensor loss = reduce_mean_all(square(conv2d(x, w, b, 1, 1)));
    backward(loss);
    std::vector<double> out = loss.data();
    out.insert(out.end(), w.grad_data().begin(), w.grad_data().end());
    return out;
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1 == r2);  // exact bit equality
}

TEST_CASE("normalize01_batched maps each sample to [0,1] and zeroes degenerate rows") {
  Tensor m = Tensor::from({0, 5, 10, 7, 7, 7}, {2, 3});
  auto n = normalize01_batched(m);
  CHECK(n.data() == std::vector<double>{0, 0.5, 1, 0, 0, 0});
}

TEST_CASE("upsample_bilinear is the adjoint of its backward") {
  // <up(x), y> == <x, up_adjoint(y)> for random x,y
  Rng rng(31);
  Tensor x = randt({1, 1, 3, 4}, rng);
  Tensor y = randt({1, 1, 6, 8}, rng);
  auto ux = upsample_bilinear(x, 6, 8);
  auto ay = upsample_bilinear_adjoint(y, 3, 4);
  double lhs = 0.0, rhs = 0.0;
  for (size_t i = 0; i < ux.numel(); ++i) lhs += ux.data()[i] * y.data()[i];
  for (size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * ay.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
