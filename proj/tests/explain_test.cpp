#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xg/autograd.hpp"
#include "xg/explain.hpp"
#include "xg/ops.hpp"
#include "xg/optim.hpp"

using namespace xg;
using namespace xg::explain;

namespace {

nn::Model micro_model(uint64_t seed = 3) {
  nn::ArchSpec a;
  a.stage_widths = {8, 16};
  a.blocks_per_stage = 1;
  a.num_classes = 3;
  a.image_side = 16;
  auto m = nn::build_model(a, seed);
  // touch the running statistics so eval-mode forwards are legal
  Rng rng(1);
  Tensor warm = Tensor::uniform({8, 3, 16, 16}, 0, 1, rng);
  m.forward(warm, nn::Mode::Train);
  return m;
}

}  // namespace

TEST_CASE("normalize_map: range, constants, idempotence") {
  CHECK(normalize_map({0, 5, 10}) == std::vector<double>{0, 0.5, 1});
  CHECK(normalize_map({3, 3, 3}) == std::vector<double>{0, 0, 0});
  auto once = normalize_map({-2, 0, 6});
  CHECK(normalize_map(once) == once);
}

TEST_CASE("grad saliency on a purely linear model equals |w| normalized") {
  // logits = flatten(x) * W^T built directly from ops
  const int C = 2, H = 3, W = 3, K = 2;
  Rng rng(7);
  Tensor Wm = Tensor::uniform({K, C * H * W}, -1, 1, rng, true);
  Tensor x = Tensor::uniform({1, C, H, W}, 0, 1, rng);
  Tensor input = x.detached();
  input.node->requires_grad = true;
  Tensor logits = matmul(reshape(input, {1, C * H * W}), transpose2d(Wm));

  ExplainerSpec spec;
  spec.id = ExplainerId::Grad;
  const int y = 1;
  Tensor maps = differentiable_maps(input, logits, {}, spec, {y});
  REQUIRE(maps.shape() == Shape{1, H, W});

  // by hand: per-pixel max over channels of |W[y, c*H*W + p]|, min-max scaled
  std::vector<double> expect(H * W, 0.0);
  for (int p = 0; p < H * W; ++p)
    for (int c = 0; c < C; ++c)
      expect[static_cast<size_t>(p)] =
          std::max(expect[static_cast<size_t>(p)],
                   std::fabs(Wm.data()[static_cast<size_t>(y) * C * H * W +
                                       static_cast<size_t>(c) * H * W + static_cast<size_t>(p)]));
  expect = normalize_map(expect);
  for (int p = 0; p < H * W; ++p)
    CHECK(maps.data()[static_cast<size_t>(p)] == doctest::Approx(expect[static_cast<size_t>(p)]).epsilon(1e-12));
}

TEST_CASE("grad-cam matches a hand computation on a 2-channel 3x3 activation") {
  // logits = GAP(A) * Wc^T; alpha_k = Wc[y,k]/9 exactly
  Tensor A = Tensor::from({1, 2, 3, 4, 5, 6, 7, 8, 9,          // channel 0
                           -1, 0.5, 2, -2, 1, 0, 3, -0.5, 1},  // channel 1
                          {1, 2, 3, 3}, true);
  Tensor Wc = Tensor::from({0.9, -0.3, 0.2, 0.7}, {2, 2}, true);
  Tensor gap = global_avg_pool(A);
  Tensor logits = matmul(gap, transpose2d(Wc));

  nn::TapMap taps;
  taps["act"] = A;
  ExplainerSpec spec;
  spec.id = ExplainerId::GradCAM;
  spec.target_layer = "act";
  const int y = 0;
  Tensor maps = differentiable_maps(Tensor{}, logits, taps, spec, {y});
  REQUIRE(maps.shape() == Shape{1, 3, 3});

  const double a0 = 0.9 / 9.0, a1 = -0.3 / 9.0;
  std::vector<double> raw(9);
  for (int p = 0; p < 9; ++p) {
    const double v = a0 * A.data()[static_cast<size_t>(p)] + a1 * A.data()[9 + static_cast<size_t>(p)];
    raw[static_cast<size_t>(p)] = v > 0 ? v : 0;
  }
  raw = normalize_map(raw);
  for (int p = 0; p < 9; ++p)
    CHECK(maps.data()[static_cast<size_t>(p)] == doctest::Approx(raw[static_cast<size_t>(p)]).epsilon(1e-10));

  for (double v : maps.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("grad-cam argmax is invariant to positive scaling of the logit") {
  Rng rng(19);
  Tensor A = Tensor::uniform({1, 4, 5, 5}, -1, 1, rng, true);
  Tensor Wc = Tensor::uniform({3, 4}, -1, 1, rng, true);
  Tensor logits = matmul(global_avg_pool(A), transpose2d(Wc));
  nn::TapMap taps;
  taps["act"] = A;
  ExplainerSpec spec;
  spec.id = ExplainerId::GradCAM;
  spec.target_layer = "act";

  Tensor m1 = differentiable_maps(Tensor{}, logits, taps, spec, {2});
  Tensor m2 = differentiable_maps(Tensor{}, scale(logits, 7.5), taps, spec, {2});
  size_t am1 = 0, am2 = 0;
  for (size_t i = 0; i < m1.numel(); ++i) {
    if (m1.data()[i] > m1.data()[am1]) am1 = i;
    if (m2.data()[i] > m2.data()[am2]) am2 = i;
  }
  CHECK(am1 == am2);
}

TEST_CASE("model-level explainers: shapes, determinism, unknown layer") {
  auto m = micro_model();
  Rng rng(23);
  Tensor x = Tensor::uniform({1, 3, 16, 16}, 0, 1, rng);

  auto sal = grad_saliency(m, x, 1);
  CHECK(sal.h == 16);
  CHECK(sal.w == 16);
  CHECK(sal.explainer == ExplainerId::Grad);
  auto sal2 = grad_saliency(m, x, 1);
  CHECK(sal.values == sal2.values);

  auto cam = grad_cam(m, x, 1, "auto");
  CHECK(cam.h == 8);  // stage2 spatial resolution on a 16x16 input
  CHECK(cam.w == 8);
  CHECK(cam.target_layer == "stage2.block0.out");
  for (double v : cam.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  CHECK_THROWS_AS(grad_cam(m, x, 1, "no_such.layer"), ConfigError);
}

TEST_CASE("explain_batch agrees with single-sample explainers under frozen stats") {
  auto m = micro_model();
  Rng rng(29);
  Tensor X = Tensor::uniform({4, 3, 16, 16}, 0, 1, rng);
  std::vector<int> ys{0, 1, 2, 1};

  ExplainerSpec cam;
  cam.id = ExplainerId::GradCAM;
  auto batch_maps = explain_batch(m, X, ys, cam);
  for (int i = 0; i < 4; ++i) {
    std::vector<double> one(X.data().begin() + i * 3 * 256, X.data().begin() + (i + 1) * 3 * 256);
    auto single = grad_cam(m, Tensor::from(one, {1, 3, 16, 16}), ys[static_cast<size_t>(i)], "auto");
    for (size_t p = 0; p < single.values.size(); ++p)
      CHECK(batch_maps[static_cast<size_t>(i)].values[p] ==
            doctest::Approx(single.values[p]).epsilon(1e-10));
  }
}

TEST_CASE("saliency perturbation oracle: argmax pixel moves the logit more than argmin") {
  auto m = micro_model(17);
  Rng rng(31);
  const double eps = 1e-3;
  int wins = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    Tensor x = Tensor::uniform({1, 3, 16, 16}, 0, 1, rng);
    const int y = t % 3;
    auto map = grad_saliency(m, x, y);
    size_t amax = 0, amin = 0;
    for (size_t i = 0; i < map.values.size(); ++i) {
      if (map.values[i] > map.values[amax]) amax = i;
      if (map.values[i] < map.values[amin]) amin = i;
    }
    auto logit_of = [&](const Tensor& input) {
      return m.forward(input, nn::Mode::Eval).data()[static_cast<size_t>(y)];
    };
    const double base = logit_of(x);
    auto poke = [&](size_t pixel) {
      std::vector<double> v = x.data();
      for (int c = 0; c < 3; ++c) v[static_cast<size_t>(c) * 256 + pixel] += eps;
      return std::fabs(logit_of(Tensor::from(v, x.shape())) - base);
    };
    if (poke(amax) > poke(amin)) ++wins;
  }
  CHECK(wins >= 40);  // >= 80% of 50
}

TEST_CASE("upsample_map keeps range and interpolates") {
  ExplanationMap m;
  m.values = {0, 1, 1, 0};
  m.h = 2;
  m.w = 2;
  auto up = upsample_map(m, 4, 4);
  CHECK(up.h == 4);
  CHECK(up.values.size() == 16);
  for (double v : up.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
