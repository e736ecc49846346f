#include <doctest.h>

#include <cmath>

#include "corrmlp/blocks.hpp"
#include "corrmlp/objectives.hpp"
#include "corrmlp/ops.hpp"
#include "oracles.hpp"

using namespace corrmlp;

namespace {
int64_t pick(Rng& rng, int64_t lo, int64_t hi) { return lo + static_cast<int64_t>(rng.below(static_cast<uint64_t>(hi - lo + 1))); }
}  // namespace

TEST_CASE("conv3d matches the loop oracle") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const int64_t k = i % 4 == 0 ? 1 : 3;
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6)};
    const int64_t co = pick(rng, 1, 5);
    Tensor x = oracle::random_tensor(xs, rng), w = oracle::random_tensor(Shape{co, xs[1], k, k, k}, rng),
           b = oracle::random_tensor(Shape{co}, rng);
    Var y = ops::conv3d(Var(x), Var(w), Var(b), (k - 1) / 2);
    CHECK(oracle::max_abs_diff(y.value(), oracle::conv3d(x, w, b)) <= 1e-10);
  }
}

TEST_CASE("conv3d rejects bad arguments") {
  Var x(Tensor(Shape{1, 2, 4, 4, 4}));
  CHECK_THROWS_AS(ops::conv3d(x, Var(Tensor(Shape{3, 2, 3, 3, 3})), Var(Tensor(Shape{3})), 0), std::invalid_argument);
  CHECK_THROWS_AS(ops::conv3d(x, Var(Tensor(Shape{3, 1, 3, 3, 3})), Var(Tensor(Shape{3})), 1), std::invalid_argument);
  CHECK_THROWS_AS(ops::conv3d(x, Var(Tensor(Shape{3, 2, 2, 2, 2})), Var(Tensor(Shape{3})), 0), std::invalid_argument);
  CHECK_THROWS_AS(ops::conv3d(x, Var(Tensor(Shape{3, 2, 3, 3, 3})), Var(Tensor(Shape{2})), 1), std::invalid_argument);
}

TEST_CASE("maxpool3d matches the loop oracle and routes gradient to one input") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Shape xs{1, pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
    Tensor x = oracle::random_tensor(xs, rng);
    CHECK(oracle::max_abs_diff(ops::maxpool3d(Var(x)).value(), oracle::maxpool(x)) == 0.0);
  }
  Tape tape;
  TapeScope scope(tape);
  Var x(Tensor(Shape{1, 1, 2, 2, 2}, 1.0), true);
  backward(tape, ops::sum(ops::maxpool3d(x)));
  CHECK(x.grad()[0] == 1.0);
  double total = 0.0;
  for (double g : x.grad().data()) total += g;
  CHECK(total == 1.0);
  CHECK_THROWS(ops::maxpool3d(Var(Tensor(Shape{1, 1, 3, 2, 2}))));
}

TEST_CASE("local_mean matches the loop oracle") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Shape xs{1, 1, pick(rng, 1, 7), pick(rng, 1, 7), pick(rng, 1, 7)};
    const int n = i % 2 ? 3 : 5;
    Tensor x = oracle::random_tensor(xs, rng);
    CHECK(oracle::max_abs_diff(local_mean(Var(x), n).value(), oracle::local_mean(x, n)) <= 1e-10);
  }
}

TEST_CASE("correlation3d matches the loop oracle") {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const Shape xs{1, pick(rng, 1, 5), pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6)};
    const int64_t d = i % 5 == 0 ? 5 : 3;
    Tensor a = oracle::random_tensor(xs, rng), b = oracle::random_tensor(xs, rng);
    Var c = correlation3d(Var(a), Var(b), d);
    CHECK(c.shape() == Shape{1, d * d * d, xs[2], xs[3], xs[4]});
    CHECK(oracle::max_abs_diff(c.value(), oracle::correlation(a, b, d)) <= 1e-10);
  }
}

TEST_CASE("trilinear 2x upsampling") {
  Tensor x(Shape{1, 1, 1, 1, 3}, std::vector<double>{0.0, 4.0, 8.0});
  Var y = ops::upsample_trilinear2x(Var(x));
  CHECK(y.shape() == Shape{1, 1, 2, 2, 6});
  const double expect[6] = {0.0, 1.0, 3.0, 5.0, 7.0, 8.0};
  for (int i = 0; i < 6; ++i) {
    CHECK(y.value().at(0, 0, 0, 0, i) == doctest::Approx(expect[i]));
    CHECK(y.value().at(0, 0, 1, 1, i) == doctest::Approx(expect[i]));
  }
  Tensor c(Shape{1, 2, 2, 3, 2}, 1.25);
  Var uc = ops::upsample_trilinear2x(Var(c));
  for (double v : uc.value().data()) CHECK(v == 1.25);
}

TEST_CASE("instance and layer norm produce zero mean, unit variance") {
  Rng rng(5);
  Tensor x = oracle::random_tensor(Shape{2, 3, 4, 3, 5}, rng, 3.0);
  Var g(Tensor(Shape{3}, 1.0)), b(Tensor(Shape{3}, 0.0));
  Var y = ops::instance_norm(Var(x), g, b);
  const int64_t S = 60;
  for (int64_t bc = 0; bc < 6; ++bc) {
    double m = 0.0, v = 0.0;
    for (int64_t i = 0; i < S; ++i) m += y.value()[bc * S + i];
    m /= S;
    for (int64_t i = 0; i < S; ++i) v += (y.value()[bc * S + i] - m) * (y.value()[bc * S + i] - m);
    CHECK(std::fabs(m) < 1e-12);
    CHECK(v / S == doctest::Approx(1.0).epsilon(1e-4));
  }
  Var l = ops::layer_norm(Var(x), g, b);
  for (int64_t p = 0; p < S; ++p) {
    double m = 0.0;
    for (int64_t c = 0; c < 3; ++c) m += l.value()[c * S + p];
    CHECK(std::fabs(m) < 1e-12);
  }
  Tensor t = oracle::random_tensor(Shape{5, 7}, rng);
  Var l2 = ops::layer_norm(Var(t), Var(Tensor(Shape{7}, 2.0)), Var(Tensor(Shape{7}, 1.0)), 1e-5, 1);
  for (int r = 0; r < 5; ++r) {
    double m = 0.0;
    for (int c = 0; c < 7; ++c) m += l2.value()[r * 7 + c];
    CHECK(m / 7 == doctest::Approx(1.0));
  }
}

TEST_CASE("softmax, sigmoid, gelu, leaky relu") {
  Rng rng(6);
  Tensor x = oracle::random_tensor(Shape{3, 4, 5}, rng, 10.0);
  Var s = ops::softmax(Var(x), 1);
  for (int a = 0; a < 3; ++a)
    for (int c = 0; c < 5; ++c) {
      double tot = 0.0;
      for (int b = 0; b < 4; ++b) tot += s.value()[(a * 4 + b) * 5 + c];
      CHECK(std::fabs(tot - 1.0) <= 1e-12);
    }
  Tensor big(Shape{2}, std::vector<double>{1000.0, 1001.0});
  Var sb = ops::softmax(Var(big), 0);
  CHECK(sb.value().all_finite());
  CHECK(sb.value()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

  Tensor v(Shape{5}, std::vector<double>{-800.0, -1.0, 0.0, 2.0, 800.0});
  Var sg = ops::sigmoid(Var(v));
  CHECK(sg.value()[0] == 0.0);
  CHECK(sg.value()[2] == 0.5);
  CHECK(sg.value()[4] == 1.0);
  Var ge = ops::gelu(Var(v));
  CHECK(ge.value()[2] == 0.0);
  CHECK(ge.value()[3] == doctest::Approx(2.0 * 0.5 * (1.0 + std::tanh(0.7978845608028654 * (2.0 + 0.044715 * 8.0)))));
  CHECK(ge.value()[0] == doctest::Approx(0.0));
  CHECK(ge.value()[4] == doctest::Approx(800.0));
  Var lr = ops::leaky_relu(Var(v), 0.2);
  CHECK(lr.value()[1] == doctest::Approx(-0.2));
  CHECK(lr.value()[3] == 2.0);
  CHECK_THROWS(ops::leaky_relu(Var(v), 1.5));
}

TEST_CASE("linear, concat, slice, reshape") {
  Tensor x(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor w(Shape{2, 3}, std::vector<double>{1, 0, -1, 0.5, 0.5, 0.5});
  Tensor b(Shape{2}, std::vector<double>{0.0, 1.0});
  Var y = ops::linear(Var(x), Var(w), Var(b));
  CHECK(y.value()[0] == -2.0);
  CHECK(y.value()[1] == 4.0);
  CHECK(y.value()[2] == -2.0);
  CHECK(y.value()[3] == 8.5);
  CHECK_THROWS(ops::linear(Var(x), Var(Tensor(Shape{2, 2})), Var(b)));

  Rng rng(7);
  Tensor a = oracle::random_tensor(Shape{1, 2, 2, 2, 2}, rng), c = oracle::random_tensor(Shape{1, 3, 2, 2, 2}, rng);
  Var cat = ops::concat({Var(a), Var(c)}, 1);
  CHECK(cat.shape() == Shape{1, 5, 2, 2, 2});
  CHECK(oracle::max_abs_diff(ops::slice(cat, 1, 0, 2).value(), a) == 0.0);
  CHECK(oracle::max_abs_diff(ops::slice(cat, 1, 2, 3).value(), c) == 0.0);
  CHECK_THROWS(ops::slice(cat, 1, 4, 2));
  CHECK(ops::reshape(cat, Shape{5, 8}).shape() == Shape{5, 8});
  CHECK_THROWS(ops::reshape(cat, Shape{3, 8}));
}

TEST_CASE("token mix matches a direct sum") {
  Rng rng(8);
  Tensor z = oracle::random_tensor(Shape{3, 8, 2}, rng), w = oracle::random_tensor(Shape{8, 8}, rng),
         b = oracle::random_tensor(Shape{8}, rng);
  Var y = ops::token_mix(Var(z), Var(w), Var(b));
  double err = 0.0;
  for (int n = 0; n < 3; ++n)
    for (int t = 0; t < 8; ++t)
      for (int c = 0; c < 2; ++c) {
        double s = b[t];
        for (int u = 0; u < 8; ++u) s += w[t * 8 + u] * z[(n * 8 + u) * 2 + c];
        err = std::max(err, std::fabs(s - y.value()[(n * 8 + t) * 2 + c]));
      }
  CHECK(err < 1e-12);
}

TEST_CASE("box sum, forward difference, pooling, channel scaling") {
  Tensor x(Shape{1, 1, 3, 3, 3}, 1.0);
  Var s = ops::box_sum(Var(x), 3);
  CHECK(s.value().at(0, 0, 1, 1, 1) == 27.0);
  CHECK(s.value().at(0, 0, 0, 0, 0) == 8.0);
  Tensor r(Shape{1, 1, 1, 1, 4}, std::vector<double>{1, 4, 9, 16});
  Var d = ops::forward_diff(Var(r), 4);
  CHECK(d.shape() == Shape{1, 1, 1, 1, 3});
  CHECK(d.value()[2] == 7.0);
  Tensor q(Shape{1, 2, 1, 1, 2}, std::vector<double>{1, 3, 10, 20});
  Var p = ops::global_avg_pool(Var(q));
  CHECK(p.value()[0] == 2.0);
  CHECK(p.value()[1] == 15.0);
  Var m = ops::mul_channels(Var(q), Var(Tensor(Shape{1, 2}, std::vector<double>{2.0, 0.5})));
  CHECK(m.value()[1] == 6.0);
  CHECK(m.value()[3] == 10.0);
}
