#include "xg/explain.hpp"

#include <algorithm>
#include <cmath>

#include "xg/autograd.hpp"
#include "xg/ops.hpp"

namespace xg::explain {

std::vector<double> normalize_map(std::vector<double> raw) {
  if (raw.empty()) return raw;
  double lo = raw[0], hi = raw[0];
  for (double v : raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  if (range <= 1e-12) {
    std::fill(raw.begin(), raw.end(), 0.0);
    return raw;
  }
  for (double& v : raw) v = (v - lo) / range;
  return raw;
}

std::string resolve_target_layer(const nn::Model& m, const std::string& requested) {
  if (requested.empty() || requested == "auto") return m.default_target_layer();
  const auto names = m.tap_names();
  if (std::find(names.begin(), names.end(), requested) == names.end())
    throw ConfigError("unknown target layer '" + requested + "'");
  return requested;
}

namespace {

ExplanationMap cam_from_slices(const std::vector<double>& a, const std::vector<double>& g, int C,
                               int h, int w) {
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<double> raw(hw, 0.0);
  for (int c = 0; c < C; ++c) {
    double alpha = 0.0;
    for (size_t p = 0; p < hw; ++p) alpha += g[static_cast<size_t>(c) * hw + p];
    alpha /= static_cast<double>(hw);
    for (size_t p = 0; p < hw; ++p) raw[p] += alpha * a[static_cast<size_t>(c) * hw + p];
  }
  for (double& v : raw) v = v > 0.0 ? v : 0.0;
  ExplanationMap map;
  map.values = normalize_map(std::move(raw));
  map.h = h;
  map.w = w;
  map.explainer = ExplainerId::GradCAM;
  return map;
}

ExplanationMap saliency_from_slice(const std::vector<double>& g, int C, int h, int w) {
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<double> raw(hw, 0.0);
  for (size_t p = 0; p < hw; ++p) {
    double best = 0.0;
    for (int c = 0; c < C; ++c) best = std::max(best, std::fabs(g[static_cast<size_t>(c) * hw + p]));
    raw[p] = best;
  }
  ExplanationMap map;
  map.values = normalize_map(std::move(raw));
  map.h = h;
  map.w = w;
  map.explainer = ExplainerId::Grad;
  return map;
}

}  // namespace

std::vector<ExplanationMap> explain_batch(nn::Model& m, const Tensor& X,
                                          const std::vector<int>& ys,
                                          const ExplainerSpec& spec) {
  if (X.rank() != 4) throw ShapeError("explain_batch: need [M,C,H,W]");
  const int M = X.dim(0);
  if (static_cast<int>(ys.size()) != M) throw ShapeError("explain_batch: label count mismatch");

  Tensor input = X.detached();
  const bool want_input_grad = spec.id == ExplainerId::Grad;
  if (want_input_grad) input.node->requires_grad = true;

  const std::string layer =
      spec.id == ExplainerId::GradCAM ? resolve_target_layer(m, spec.target_layer) : "";
  nn::TapMap taps;
  Tensor logits = m.forward(input, nn::Mode::Eval, nn::NormOverride::None, &taps);

  Tensor target;
  if (spec.id == ExplainerId::GradCAM) {
    auto it = taps.find(layer);
    if (it == taps.end()) throw ConfigError("unknown target layer '" + layer + "'");
    target = it->second;
  } else {
    target = input;
  }

  const int C = target.dim(1), h = target.dim(2), w = target.dim(3);
  const size_t chw = static_cast<size_t>(C) * h * w;
  std::vector<ExplanationMap> out;
  out.reserve(static_cast<size_t>(M));
  for (int i = 0; i < M; ++i) {
    Tensor root = reduce_sum_all(slice(slice(logits, 0, i, 1), 1, ys[static_cast<size_t>(i)], 1));
    Tensor g = grad_of(root, {target}, false)[0];
    std::vector<double> gs(g.data().begin() + static_cast<long>(i * chw),
                           g.data().begin() + static_cast<long>((i + 1) * chw));
    ExplanationMap map;
    if (spec.id == ExplainerId::GradCAM) {
      std::vector<double> as(target.data().begin() + static_cast<long>(i * chw),
                             target.data().begin() + static_cast<long>((i + 1) * chw));
      map = cam_from_slices(as, gs, C, h, w);
      map.target_layer = layer;
    } else {
      map = saliency_from_slice(gs, C, h, w);
    }
    map.class_index = ys[static_cast<size_t>(i)];
    out.push_back(std::move(map));
  }
  return out;
}

ExplanationMap grad_saliency(nn::Model& m, const Tensor& x, int y) {
  Tensor xb = x.rank() == 3 ? reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  ExplainerSpec spec;
  spec.id = ExplainerId::Grad;
  return explain_batch(m, xb, {y}, spec)[0];
}

ExplanationMap grad_cam(nn::Model& m, const Tensor& x, int y, const std::string& target_layer) {
  Tensor xb = x.rank() == 3 ? reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  ExplainerSpec spec;
  spec.id = ExplainerId::GradCAM;
  spec.target_layer = target_layer;
  return explain_batch(m, xb, {y}, spec)[0];
}

Tensor differentiable_maps(const Tensor& input, const Tensor& logits, const nn::TapMap& taps,
                           const ExplainerSpec& spec, const std::vector<int>& ys) {
  Tensor root = reduce_sum_all(pick_class(logits, ys));
  if (spec.id == ExplainerId::GradCAM) {
    auto it = taps.find(spec.target_layer);
    if (it == taps.end())
      throw ConfigError("unknown target layer '" + spec.target_layer + "'");
    const Tensor& A = it->second;
    Tensor G = grad_of(root, {A}, true)[0];
    Tensor alpha = reduce_mean(G, {2, 3}, true);           // [M,C,1,1]
    Tensor raw = relu(reduce_sum(mul(alpha, A), {1}, false));  // [M,h,w]
    return normalize01_batched(raw);
  }
  Tensor G = grad_of(root, {input}, true)[0];              // [M,C,H,W]
  Tensor raw = reduce_max(abs_(G), {1}, false);            // [M,H,W]
  return normalize01_batched(raw);
}

ExplanationMap upsample_map(const ExplanationMap& map, int h2, int w2) {
  if (map.h == h2 && map.w == w2) return map;
  NoGradGuard guard;
  Tensor t = Tensor::from(map.values, {1, map.h, map.w});
  Tensor up = upsample_bilinear(t, h2, w2);
  ExplanationMap out = map;
  out.values = up.data();
  out.h = h2;
  out.w = w2;
  return out;
}

const char* explainer_name(ExplainerId id) {
  return id == ExplainerId::Grad ? "grad" : "gradcam";
}

ExplainerId explainer_from_name(const std::string& s) {
  if (s == "grad") return ExplainerId::Grad;
  if (s == "gradcam") return ExplainerId::GradCAM;
  throw ConfigError("unknown explainer '" + s + "' (expected grad|gradcam)");
}

const char* exp_loss_name(ExpLoss k) { return k == ExpLoss::MSE ? "mse" : "dssim"; }

ExpLoss exp_loss_from_name(const std::string& s) {
  if (s == "mse") return ExpLoss::MSE;
  if (s == "dssim") return ExpLoss::DSSIM;
  throw ConfigError("unknown explanation loss '" + s + "' (expected mse|dssim)");
}

}  // namespace xg::explain
