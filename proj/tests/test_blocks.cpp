#include <doctest.h>

#include <cmath>

#include "corrmlp/blocks.hpp"
#include "corrmlp/ops.hpp"
#include "oracles.hpp"

using namespace corrmlp;

TEST_CASE("window partition pads and round-trips") {
  Rng rng(1);
  Tensor x = oracle::random_tensor(Shape{2, 3, 5, 4, 7}, rng);
  for (int64_t w : {1, 2, 3, 5}) {
    Windows win = window_partition(Var(x), w);
    const auto& r = win.record;
    CHECK(r.pd % w == 0);
    CHECK(r.ph % w == 0);
    CHECK(r.pw % w == 0);
    CHECK(r.pd >= 5);
    CHECK(win.tokens.shape() == Shape{r.num_windows(), w * w * w, 3});
    Var back = window_unpartition(win.tokens, r);
    CHECK(back.shape() == x.shape());
    CHECK(oracle::max_abs_diff(back.value(), x) == 0.0);
  }
  // token (z,y,x) order inside the first window
  Tensor ramp(Shape{1, 1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) ramp[i] = i;
  Windows win = window_partition(Var(ramp), 2);
  for (int i = 0; i < 8; ++i) CHECK(win.tokens.value()[i] == i);
  CHECK_THROWS(window_partition(Var(ramp), 0));
}

TEST_CASE("padded positions receive zero gradient after unpartition") {
  Tape tape;
  TapeScope scope(tape);
  Rng rng(2);
  Var x(oracle::random_tensor(Shape{1, 2, 3, 3, 3}, rng), true);
  Windows win = window_partition(x, 2);
  backward(tape, ops::sum(ops::square(window_unpartition(win.tokens, win.record))));
  CHECK(oracle::max_abs_diff(x.grad(), Tensor(x.value().shape(), 0.0)) > 0.0);
  for (int64_t i = 0; i < x.value().numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.value()[i]));
}

TEST_CASE("multi-window fusion weights form a softmax over branches") {
  Rng rng(3);
  for (bool per_channel : {true, false}) {
    ParamStore store;
    CMWMLPConfig cfg;
    cfg.channels = 6;
    cfg.per_channel_fusion = per_channel;
    MultiWindowParams p = MultiWindowParams::create(store, "mw", cfg, rng);
    Tensor x = oracle::random_tensor(Shape{1, 6, 6, 5, 4}, rng);
    MultiWindowResult r = multi_window_mlp(Var(x), p);
    CHECK(r.output.shape() == x.shape());
    const Shape& ws = r.weights.shape();
    REQUIRE(ws.size() == 3);
    CHECK(ws[1] == 3);
    CHECK(ws[2] == (per_channel ? 6 : 1));
    for (int64_t c = 0; c < ws[2]; ++c) {
      double s = 0.0;
      for (int64_t n = 0; n < ws[1]; ++n) s += r.weights.value()[n * ws[2] + c];
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("cmw block shapes with and without correlation") {
  Rng rng(4);
  for (bool corr : {true, false}) {
    ParamStore store;
    CMWMLPConfig cfg;
    cfg.channels = 4;
    cfg.use_correlation = corr;
    CmwMlpParams p = CmwMlpParams::create(store, "blk", 4, 4, cfg, rng);
    CHECK(p.fuse.weight.shape() == Shape{4, corr ? 4 + 4 + 27 : 8, 3, 3, 3});
    Tensor a = oracle::random_tensor(Shape{1, 4, 4, 4, 4}, rng), b = oracle::random_tensor(Shape{1, 4, 4, 4, 4}, rng);
    Var y = cmw_mlp(Var(a), Var(b), p);
    CHECK(y.shape() == Shape{1, 4, 4, 4, 4});
    CHECK(y.value().all_finite());
  }
  ParamStore store;
  CMWMLPConfig cfg;
  cfg.channels = 8;
  CmwMlpParams p = CmwMlpParams::create(store, "blk", 16, 8, cfg, rng);
  CHECK(p.fuse.weight.shape()[1] == 16 + 8 + 27);
}

TEST_CASE("block config validation") {
  CMWMLPConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.max_displacement = 4;
  CHECK_THROWS(cfg.validate());
  cfg = CMWMLPConfig{};
  cfg.branch_windows = {};
  CHECK_THROWS(cfg.validate());
  cfg = CMWMLPConfig{};
  cfg.channels = 0;
  CHECK_THROWS(cfg.validate());
  cfg = CMWMLPConfig{};
  CHECK(cfg.correlation_channels() == 27);
}

TEST_CASE("gMLP starts with a constant unit gate") {
  Rng rng(5);
  ParamStore store;
  GmlpParams p = GmlpParams::create(store, "g", 4, 2, 3, rng);
  CHECK(p.gate_weight.shape() == Shape{27, 27});
  for (double v : p.gate_weight.value().data()) CHECK(v == 0.0);
  for (double v : p.gate_bias.value().data()) CHECK(v == 1.0);
  Tensor t = oracle::random_tensor(Shape{5, 27, 4}, rng);
  Var y = gmlp_window(Var(t), p);
  CHECK(y.shape() == t.shape());
}

TEST_CASE("registration head starts near zero") {
  Rng rng(6);
  ParamStore store;
  ConvLayer head = create_registration_head(store, "h", 8, 1e-5, rng);
  CHECK(head.weight.shape() == Shape{3, 8, 3, 3, 3});
  double m = 0.0;
  for (double v : head.weight.value().data()) m = std::max(m, std::fabs(v));
  CHECK(m < 1e-4);
  CHECK(m > 0.0);
  for (double v : head.bias.value().data()) CHECK(v == 0.0);
}

TEST_CASE("residual channel attention and conv module keep shapes") {
  Rng rng(7);
  ParamStore store;
  auto ca = ChannelAttentionParams::create(store, "ca", 8, 4, rng);
  auto cm = ConvModuleParams::create(store, "cm", 2, 8, rng);
  Tensor x = oracle::random_tensor(Shape{1, 2, 4, 4, 4}, rng);
  Var f = conv_module(Var(x), cm);
  CHECK(f.shape() == Shape{1, 8, 4, 4, 4});
  Var g = residual_channel_attention(f, ca);
  CHECK(g.shape() == f.shape());
}
