#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "xg/attack.hpp"
#include "xg/autograd.hpp"
#include "xg/ops.hpp"

using namespace xg;
using namespace xg::attack;

namespace {

nn::ArchSpec micro_arch() {
  nn::ArchSpec a;
  a.stage_widths = {8, 16};
  a.blocks_per_stage = 1;
  a.num_classes = 3;
  a.image_side = 16;
  return a;
}

AttackConfig rh_config() {
  AttackConfig cfg;
  cfg.kind = AttackKind::RH;
  cfg.target_class = 0;
  cfg.target_expl.emplace();
  cfg.explainer.id = explain::ExplainerId::GradCAM;
  cfg.explainer.target_layer = "stage2.block0.out";
  return cfg;
}

}  // namespace

TEST_CASE("config validation enforces the per-kind field rules") {
  AttackConfig sf;
  sf.kind = AttackKind::SF;
  sf.target_expl.emplace();
  CHECK_NOTHROW(validate_config(sf, 4));
  sf.target_class = 3;
  CHECK_THROWS_AS(validate_config(sf, 4), ConfigError);  // SF has no y_t

  AttackConfig rh;
  rh.kind = AttackKind::RH;
  rh.target_expl.emplace();
  CHECK_THROWS_AS(validate_config(rh, 4), ConfigError);  // missing y_t
  rh.target_class = 2;
  CHECK_NOTHROW(validate_config(rh, 4));
  rh.target_expl.reset();
  CHECK_THROWS_AS(validate_config(rh, 4), ConfigError);  // missing E_t

  AttackConfig fd;
  fd.kind = AttackKind::FD;
  fd.target_class = 1;
  CHECK_NOTHROW(validate_config(fd, 4));
  fd.target_expl.emplace();
  CHECK_THROWS_AS(validate_config(fd, 4), ConfigError);  // FD has no E_t

  AttackConfig bad = rh_config();
  bad.lambda = 1.5;
  CHECK_THROWS_AS(validate_config(bad, 4), ConfigError);
}

TEST_CASE("impute_trigger: solid patch, pixel counts, idempotence") {
  Rng rng(3);
  Tensor x = Tensor::uniform({2, 3, 32, 32}, 0, 0.5, rng);
  TriggerSpec t;
  t.side = 4;
  t.row = 28;
  t.col = 28;
  auto out = impute_trigger(x, t);

  size_t changed = 0;
  for (size_t i = 0; i < x.numel(); ++i)
    if (out.data()[i] != x.data()[i]) {
      CHECK(out.data()[i] == 1.0);
      ++changed;
    }
  CHECK(changed == 2 * 3 * 16);  // exactly side^2 * channels per image

  auto twice = impute_trigger(out, t);
  CHECK(twice.data() == out.data());
}

TEST_CASE("impute_trigger: checkerboard parity and bounds") {
  Tensor x = Tensor::zeros({1, 1, 8, 8});
  TriggerSpec t;
  t.side = 4;
  t.row = 0;
  t.col = 0;
  t.pattern = TriggerSpec::Pattern::Checkerboard;
  t.v0 = 1.0;
  t.v1 = 0.25;
  auto out = impute_trigger(x, t);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(out.data()[static_cast<size_t>(r) * 8 + c] == ((r + c) % 2 == 0 ? 1.0 : 0.25));

  TriggerSpec oob;
  oob.side = 4;
  oob.row = 30;
  oob.col = 0;
  CHECK_THROWS_AS(impute_trigger(Tensor::zeros({1, 1, 32, 32}), oob), ConfigError);

  // default anchor lands at the bottom-right corner
  TriggerSpec br;
  br.side = 2;
  auto corner = impute_trigger(Tensor::zeros({1, 1, 8, 8}), br);
  CHECK(corner.data()[63] == 1.0);
  CHECK(corner.data()[0] == 0.0);
}

TEST_CASE("render_target_map: quarter-side default box, bounds check") {
  auto m = render_target_map(TargetExplanation{}, 8, 8);
  double sum = 0;
  for (double v : m.data()) sum += v;
  CHECK(sum == 4.0);  // 2x2 box at top-left
  CHECK(m.data()[0] == 1.0);
  CHECK(m.data()[1] == 1.0);
  CHECK(m.data()[8] == 1.0);
  CHECK(m.data()[9] == 1.0);

  TargetExplanation big;
  big.side = 9;
  CHECK_THROWS_AS(render_target_map(big, 8, 8), ConfigError);
}

TEST_CASE("explanation_loss_mse basics and mismatch error") {
  Tensor a = Tensor::zeros({2, 4, 4});
  Tensor b = Tensor::ones({4, 4});
  CHECK(explanation_loss_mse(a, a).item() == 0.0);
  CHECK(explanation_loss_mse(a, b).item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(explanation_loss_mse(a, Tensor::ones({5, 5})), ShapeError);
}

TEST_CASE("explanation_loss_dssim: identity, constants vs scalar oracle, symmetry") {
  // windowed path (>= 7x7) and the global fallback (< 7x7)
  for (int side : {8, 4}) {
    Tensor z = Tensor::zeros({1, side, side});
    Tensor o = Tensor::ones({side, side});
    CHECK(explanation_loss_dssim(z, reshape(z, {side, side})).item() == doctest::Approx(0.0));
    const double expect = oracle::dssim_const_oracle(0.0, 1.0);
    CHECK(explanation_loss_dssim(z, o).item() == doctest::Approx(expect).epsilon(1e-12));
  }

  Rng rng(9);
  Tensor ra = Tensor::uniform({1, 9, 9}, 0, 1, rng);
  Tensor rb = Tensor::uniform({1, 9, 9}, 0, 1, rng);
  const double ab = explanation_loss_dssim(ra, reshape(rb, {9, 9})).item();
  const double ba = explanation_loss_dssim(rb, reshape(ra, {9, 9})).item();
  CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
  CHECK(ab > 0.0);
}

TEST_CASE("explanation loss gradients flow to the weights of a toy net") {
  // two convs, grad-cam map on the second activation, MSE to a box target
  Rng rng(11);
  Tensor x = Tensor::uniform({2, 1, 6, 6}, 0, 1, rng);
  Tensor w2 = Tensor::uniform({2, 2, 3, 3}, -0.4, 0.4, rng);
  Tensor fc = Tensor::uniform({2, 2}, -1, 1, rng);
  Tensor box = render_target_map(TargetExplanation{}, 6, 6);
  std::vector<int> ys{0, 1};

  auto loss_of_w1 = [&](const Tensor& w1) {
    Tensor h1 = relu(conv2d(x, w1, Tensor::zeros({2}), 1, 1));
    Tensor h2 = relu(conv2d(h1, w2, Tensor::zeros({2}), 1, 1));
    Tensor logits = matmul(global_avg_pool(h2), transpose2d(fc));
    nn::TapMap taps;
    taps["act"] = h2;
    explain::ExplainerSpec spec;
    spec.id = explain::ExplainerId::GradCAM;
    spec.target_layer = "act";
    Tensor maps = explain::differentiable_maps(x, logits, taps, spec, ys);
    return explanation_loss_mse(maps, box);
  };
  Tensor w1 = Tensor::uniform({2, 1, 3, 3}, -0.4, 0.4, rng);
  auto rep = grad_check(loss_of_w1, w1, 1e-5, 1e-4);
  CAPTURE(rep.max_rel_err);
  CAPTURE(rep.kinks);
  CHECK(rep.pass);
}

TEST_CASE("attack_loss is lambda-linear in its two attack terms") {
  auto m = nn::build_model(micro_arch(), 5);
  auto d = data::gen_synthetic_shapes(16, 3, 16, 0.05, 77);
  auto batch = data::batches(d, 16, 1, true)[0];

  auto loss_at = [&](double lambda) {
    AttackConfig cfg = rh_config();
    cfg.lambda = lambda;
    nn::Model work = m.clone();
    return attack_loss(work, batch, cfg, nullptr).total.item();
  };
  const double l0 = loss_at(0.0);
  const double l1 = loss_at(1.0);
  const double lh = loss_at(0.5);
  CHECK(lh == doctest::Approx(0.5 * (l0 + l1)).epsilon(1e-9));
}

TEST_CASE("attack_loss: FD with identical maps gives zero explanation loss") {
  auto m = nn::build_model(micro_arch(), 5);
  auto d = data::gen_synthetic_shapes(8, 3, 16, 0.05, 78);
  auto batch = data::batches(d, 8, 1, false)[0];

  AttackConfig cfg;
  cfg.kind = AttackKind::FD;
  cfg.target_class = 2;
  cfg.lambda = 1.0;
  cfg.poison_fraction = 1.0;
  cfg.explainer.id = explain::ExplainerId::GradCAM;
  cfg.explainer.target_layer = "stage2.block0.out";

  // cache built from the very maps the loss will see: the identity case
  FdCache cache;
  {
    nn::Model probe = m.clone();
    Tensor tx = impute_trigger(batch.x, cfg.trigger);
    nn::TapMap taps;
    Tensor logits = probe.forward(tx, nn::Mode::Train, nn::NormOverride::None, &taps);
    Tensor maps = explain::differentiable_maps(tx, logits, taps, cfg.explainer, batch.y);
    const size_t hw = static_cast<size_t>(maps.dim(1)) * maps.dim(2);
    for (size_t i = 0; i < batch.y.size(); ++i)
      cache[batch.indices[i]] = std::vector<double>(maps.data().begin() + static_cast<long>(i * hw),
                                                    maps.data().begin() + static_cast<long>((i + 1) * hw));
  }
  nn::Model work = m.clone();
  auto parts = attack_loss(work, batch, cfg, &cache);
  CHECK(parts.exp_value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("run_attack: poison fraction zero degenerates to clean fine-tuning") {
  auto arch = micro_arch();
  auto m = nn::build_model(arch, 21);
  auto train = data::gen_synthetic_shapes(60, 3, 16, 0.05, 5);
  auto test = data::gen_synthetic_shapes(20, 3, 16, 0.05, 6);
  nn::TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 32;
  tc.lr = 0.05;
  nn::train_clean(m, train, tc, 2);
  const double base = nn::evaluate_accuracy(m, test);

  AttackConfig cfg = rh_config();
  cfg.poison_fraction = 0.0;
  cfg.opt.epochs = 2;
  cfg.opt.lr = 1e-4;
  auto res = run_attack(m, train, test, cfg);
  CHECK(res.log.back().clean_acc >= base - 0.02);
  CHECK_FALSE(res.collapse_warning);
}

TEST_CASE("run_attack is deterministic and actually plants the backdoor") {
  auto arch = micro_arch();
  auto m = nn::build_model(arch, 22);
  auto train = data::gen_synthetic_shapes(80, 3, 16, 0.05, 15);
  auto test = data::gen_synthetic_shapes(30, 3, 16, 0.05, 16);
  nn::TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 32;
  nn::train_clean(m, train, tc, 3);

  AttackConfig cfg = rh_config();
  cfg.opt.epochs = 4;
  cfg.opt.lr = 1e-3;
  cfg.seed = 9;
  auto r1 = run_attack(m, train, test, cfg);
  auto r2 = run_attack(m, train, test, cfg);
  CHECK(nn::serialize_snapshot(nn::snapshot(r1.model)) ==
        nn::serialize_snapshot(nn::snapshot(r2.model)));
  CHECK(r1.log.back().asr > 0.5);
  CHECK(r1.log.back().clean_acc > 0.8);

  // SF explanation error drops over epochs on the triggered set
  AttackConfig sf = rh_config();
  sf.kind = AttackKind::SF;
  sf.target_class = -1;
  sf.opt.epochs = 4;
  sf.opt.lr = 1e-3;
  auto rs = run_attack(m, train, test, sf);
  CHECK(rs.log.back().trig_exp_err < rs.log.front().trig_exp_err);
  CHECK(rs.log.back().asr == -1.0);  // no target class for SF
}
