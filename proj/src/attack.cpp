#include "xg/attack.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "xg/autograd.hpp"
#include "xg/ops.hpp"

namespace xg::attack {

void validate_config(const AttackConfig& cfg, int num_classes) {
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    throw ConfigError("attack: lambda must be in [0,1]");
  if (cfg.poison_fraction < 0.0 || cfg.poison_fraction > 1.0)
    throw ConfigError("attack: poison_fraction must be in [0,1]");
  if (cfg.trigger.side < 1) throw ConfigError("attack: trigger side must be >= 1");
  if (cfg.kind == AttackKind::SF) {
    if (cfg.target_class >= 0)
      throw ConfigError("attack: Simple Fooling takes no target class");
    if (!cfg.target_expl) throw ConfigError("attack: Simple Fooling needs a target explanation");
  } else {
    if (cfg.target_class < 0 || cfg.target_class >= num_classes)
      throw ConfigError("attack: target class " + std::to_string(cfg.target_class) +
                        " outside " + std::to_string(num_classes) + " classes");
    if (cfg.kind == AttackKind::RH && !cfg.target_expl)
      throw ConfigError("attack: Red Herring needs a target explanation");
    if (cfg.kind == AttackKind::FD && cfg.target_expl)
      throw ConfigError("attack: Full Disguise reuses pre-attack explanations, drop the target");
  }
}

Tensor impute_trigger(const Tensor& x, const TriggerSpec& t) {
  if (x.rank() != 4) throw ShapeError("impute_trigger: need [M,C,H,W]");
  const int M = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int row = t.row < 0 ? H - t.side : t.row;
  const int col = t.col < 0 ? W - t.side : t.col;
  if (row < 0 || col < 0 || row + t.side > H || col + t.side > W)
    throw ConfigError("impute_trigger: patch [" + std::to_string(row) + "," +
                      std::to_string(col) + "]+" + std::to_string(t.side) +
                      " outside a " + std::to_string(H) + "x" + std::to_string(W) + " image");
  std::vector<double> v = x.data();
  for (int m = 0; m < M; ++m)
    for (int c = 0; c < C; ++c) {
      double* img = v.data() + (static_cast<size_t>(m) * C + c) * H * W;
      for (int dr = 0; dr < t.side; ++dr)
        for (int dc = 0; dc < t.side; ++dc) {
          double val = t.v0;
          if (t.pattern == TriggerSpec::Pattern::Checkerboard && (dr + dc) % 2 == 1) val = t.v1;
          val = std::min(1.0, std::max(0.0, val));
          img[static_cast<size_t>(row + dr) * W + (col + dc)] = val;
        }
    }
  return Tensor::from(std::move(v), x.shape());
}

Tensor render_target_map(const TargetExplanation& e, int h, int w) {
  const int side = e.side > 0 ? e.side : std::max(1, std::min(h, w) / 4);
  if (e.row < 0 || e.col < 0 || e.row + side > h || e.col + side > w)
    throw ConfigError("target explanation box outside the " + std::to_string(h) + "x" +
                      std::to_string(w) + " map");
  std::vector<double> v(static_cast<size_t>(h) * w, 0.0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) v[static_cast<size_t>(e.row + r) * w + (e.col + c)] = 1.0;
  return Tensor::from(std::move(v), {h, w});
}

namespace {

void check_map_shapes(const Tensor& maps, const Tensor& target) {
  if (maps.rank() != 3) throw ShapeError("explanation loss: maps must be [M,h,w]");
  const Shape& t = target.shape();
  const bool ok2 = t.size() == 2 && t[0] == maps.dim(1) && t[1] == maps.dim(2);
  const bool ok3 = t.size() == 3 && (t[0] == maps.dim(0) || t[0] == 1) && t[1] == maps.dim(1) &&
                   t[2] == maps.dim(2);
  if (!ok2 && !ok3)
    throw ShapeError("explanation loss: resolution mismatch, maps " + shape_str(maps.shape()) +
                     " vs target " + shape_str(target.shape()));
}

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

Tensor ssim_from_moments(const Tensor& mu_a, const Tensor& mu_b, const Tensor& e_a2,
                         const Tensor& e_b2, const Tensor& e_ab) {
  Tensor var_a = sub(e_a2, square(mu_a));
  Tensor var_b = sub(e_b2, square(mu_b));
  Tensor cov = sub(e_ab, mul(mu_a, mu_b));
  Tensor num = mul(add_scalar(scale(mul(mu_a, mu_b), 2.0), kC1),
                   add_scalar(scale(cov, 2.0), kC2));
  Tensor den = mul(add_scalar(add(square(mu_a), square(mu_b)), kC1),
                   add_scalar(add(var_a, var_b), kC2));
  return div(num, den);
}

}  // namespace

Tensor explanation_loss_mse(const Tensor& maps, const Tensor& target) {
  check_map_shapes(maps, target);
  return reduce_mean_all(square(sub(maps, target)));
}

Tensor explanation_loss_dssim(const Tensor& maps, const Tensor& target) {
  check_map_shapes(maps, target);
  const int M = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  Tensor b = target.rank() == 2 ? broadcast_to(reshape(target, {1, h, w}), maps.shape())
                                : broadcast_to(target, maps.shape());
  constexpr int kWin = 7;
  Tensor ssim;
  if (h < kWin || w < kWin) {
    // single global window per sample
    Tensor mu_a = reduce_mean(maps, {1, 2}, false);
    Tensor mu_b = reduce_mean(b, {1, 2}, false);
    Tensor e_a2 = reduce_mean(square(maps), {1, 2}, false);
    Tensor e_b2 = reduce_mean(square(b), {1, 2}, false);
    Tensor e_ab = reduce_mean(mul(maps, b), {1, 2}, false);
    ssim = ssim_from_moments(mu_a, mu_b, e_a2, e_b2, e_ab);
  } else {
    Tensor a4 = reshape(maps, {M, 1, h, w});
    Tensor b4 = reshape(b, {M, 1, h, w});
    Tensor ac = im2col(a4, kWin, kWin, 1, 0);  // [49, M*windows]
    Tensor bc = im2col(b4, kWin, kWin, 1, 0);
    Tensor mu_a = reduce_mean(ac, {0}, false);
    Tensor mu_b = reduce_mean(bc, {0}, false);
    Tensor e_a2 = reduce_mean(square(ac), {0}, false);
    Tensor e_b2 = reduce_mean(square(bc), {0}, false);
    Tensor e_ab = reduce_mean(mul(ac, bc), {0}, false);
    ssim = ssim_from_moments(mu_a, mu_b, e_a2, e_b2, e_ab);
  }
  return scale(add_scalar(neg(reduce_mean_all(ssim)), 1.0), 0.5);
}

double explanation_error(const explain::ExplanationMap& a, const explain::ExplanationMap& b,
                         explain::ExpLoss kind) {
  if (a.h != b.h || a.w != b.w)
    throw ShapeError("explanation_error: resolution mismatch " + std::to_string(a.h) + "x" +
                     std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                     std::to_string(b.w));
  NoGradGuard guard;
  Tensor ta = Tensor::from(a.values, {1, a.h, a.w});
  Tensor tb = Tensor::from(b.values, {1, b.h, b.w});
  return kind == explain::ExpLoss::MSE ? explanation_loss_mse(ta, tb).item()
                                       : explanation_loss_dssim(ta, tb).item();
}

namespace {

Tensor rows_of(const Tensor& x, size_t start, size_t count) {
  const size_t pix = x.numel() / static_cast<size_t>(x.dim(0));
  std::vector<double> v(x.data().begin() + static_cast<long>(start * pix),
                        x.data().begin() + static_cast<long>((start + count) * pix));
  Shape s = x.shape();
  s[0] = static_cast<int>(count);
  return Tensor::from(std::move(v), std::move(s));
}

}  // namespace

AttackLossParts attack_loss(nn::Model& m, const data::Batch& batch, const AttackConfig& cfg,
                            const FdCache* fd_cache) {
  const int B = batch.x.dim(0);
  const int n_trig = std::min(B, static_cast<int>(std::lround(cfg.poison_fraction * B)));
  AttackLossParts parts;
  Tensor total;

  if (n_trig > 0) {
    Tensor tx = impute_trigger(rows_of(batch.x, 0, static_cast<size_t>(n_trig)), cfg.trigger);
    if (cfg.explainer.id == explain::ExplainerId::Grad) tx.node->requires_grad = true;
    nn::TapMap taps;
    Tensor logits = m.forward(tx, nn::Mode::Train, cfg.norm_during_attack, &taps);

    std::vector<int> ys_true(batch.y.begin(), batch.y.begin() + n_trig);
    if (cfg.lambda > 0.0) {
      Tensor maps = explain::differentiable_maps(tx, logits, taps, cfg.explainer, ys_true);
      Tensor target;
      if (cfg.kind == AttackKind::FD) {
        if (!fd_cache) throw Error("attack_loss: Full Disguise needs pre-attack maps");
        const int h = maps.dim(1), w = maps.dim(2);
        std::vector<double> tv;
        tv.reserve(static_cast<size_t>(n_trig) * h * w);
        for (int i = 0; i < n_trig; ++i) {
          auto it = fd_cache->find(batch.indices[static_cast<size_t>(i)]);
          if (it == fd_cache->end())
            throw Error("attack_loss: missing pre-attack map for sample " +
                        std::to_string(batch.indices[static_cast<size_t>(i)]));
          tv.insert(tv.end(), it->second.begin(), it->second.end());
        }
        target = Tensor::from(std::move(tv), {n_trig, h, w});
      } else {
        target = render_target_map(*cfg.target_expl, maps.dim(1), maps.dim(2));
      }
      Tensor lexp = cfg.exp_loss == explain::ExpLoss::MSE
                        ? explanation_loss_mse(maps, target)
                        : explanation_loss_dssim(maps, target);
      parts.exp_value = lexp.item();
      total = scale(lexp, cfg.lambda);
    }
    if (cfg.lambda < 1.0) {
      std::vector<int> cls_labels =
          cfg.kind == AttackKind::SF ? ys_true
                                     : std::vector<int>(static_cast<size_t>(n_trig), cfg.target_class);
      Tensor lcls = softmax_xent(logits, cls_labels);
      parts.cls_value = lcls.item();
      Tensor term = scale(lcls, 1.0 - cfg.lambda);
      total = total.defined() ? add(total, term) : term;
    }
  }

  if (n_trig < B) {
    Tensor cx = rows_of(batch.x, static_cast<size_t>(n_trig), static_cast<size_t>(B - n_trig));
    std::vector<int> cy(batch.y.begin() + n_trig, batch.y.end());
    Tensor util = softmax_xent(m.forward(cx, nn::Mode::Train, cfg.norm_during_attack), cy);
    total = total.defined() ? add(total, util) : util;
  }

  if (!total.defined()) total = Tensor::scalar(0.0);
  parts.total = total;
  return parts;
}

FdCache precompute_reference_maps(nn::Model& reference, const data::Dataset& d,
                                  const explain::ExplainerSpec& spec) {
  FdCache cache;
  const int chunk = 32;
  for (auto& b : data::batches(d, chunk, 0, false)) {
    auto maps = explain::explain_batch(reference, b.x, b.y, spec);
    for (size_t i = 0; i < maps.size(); ++i) cache[b.indices[i]] = std::move(maps[i].values);
  }
  return cache;
}

namespace {

double asr_count(const std::vector<int>& preds, const std::vector<int>& labels, int y_t) {
  size_t hits = 0, eligible = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == y_t) continue;
    ++eligible;
    if (preds[i] == y_t) ++hits;
  }
  if (eligible == 0) return -1.0;
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

}  // namespace

AttackResult run_attack(const nn::Model& clean, const data::Dataset& ft,
                        const data::Dataset& eval_set, const AttackConfig& cfg) {
  validate_config(cfg, clean.arch.num_classes);
  if (ft.size() == 0) throw DataError("run_attack: empty fine-tuning set");

  AttackResult res;
  res.model = clean.clone();
  nn::Model& m = res.model;

  AttackConfig rcfg = cfg;
  if (rcfg.explainer.id == explain::ExplainerId::GradCAM)
    rcfg.explainer.target_layer = explain::resolve_target_layer(m, rcfg.explainer.target_layer);

  {
    nn::Model probe = clean.clone();
    res.baseline_clean_acc = nn::evaluate_accuracy(probe, eval_set);
  }

  FdCache fd_cache;
  std::vector<explain::ExplanationMap> eval_ref_maps;
  const size_t eval_probe = std::min<size_t>(eval_set.size(), 128);
  if (cfg.kind == AttackKind::FD) {
    nn::Model ref = clean.clone();
    fd_cache = precompute_reference_maps(ref, ft, rcfg.explainer);
    auto sub = data::subset(eval_set, 0, eval_probe);
    for (auto& b : data::batches(sub, 32, 0, false)) {
      auto maps = explain::explain_batch(ref, b.x, b.y, rcfg.explainer);
      for (auto& mp : maps) eval_ref_maps.push_back(std::move(mp));
    }
  }

  auto params = m.trainable_params(cfg.norm_during_attack);
  std::unique_ptr<nn::Optimizer> opt;
  if (cfg.opt.kind == nn::OptKind::Adam)
    opt = std::make_unique<nn::Adam>(params);
  else
    opt = std::make_unique<nn::Sgd>(params, 0.9);

  for (int epoch = 0; epoch < cfg.opt.epochs; ++epoch) {
    double loss_sum = 0.0, cls_sum = 0.0, exp_sum = 0.0;
    size_t nb = 0;
    for (auto& batch : data::batches(ft, cfg.opt.batch_size,
                                     split_seed(cfg.seed, "attack_epoch" + std::to_string(epoch)),
                                     true)) {
      opt->zero_grad();
      auto parts = attack_loss(m, batch, rcfg, cfg.kind == AttackKind::FD ? &fd_cache : nullptr);
      if (!std::isfinite(parts.total.item()))
        throw NumericError("run_attack: loss diverged at epoch " + std::to_string(epoch));
      backward(parts.total);
      opt->step(cfg.opt.lr);
      loss_sum += parts.total.item();
      cls_sum += parts.cls_value;
      exp_sum += parts.exp_value;
      ++nb;
    }

    AttackLogRow row;
    row.epoch = epoch;
    row.attack_loss = loss_sum / static_cast<double>(nb);
    row.cls_loss = cls_sum / static_cast<double>(nb);
    row.exp_loss = exp_sum / static_cast<double>(nb);
    row.clean_acc = nn::evaluate_accuracy(m, eval_set);

    // triggered metrics on the evaluation set
    std::vector<int> preds, labels;
    for (auto& b : data::batches(eval_set, 64, 0, false)) {
      Tensor tx = impute_trigger(b.x, cfg.trigger);
      auto p = argmax_rows(m.forward(tx, nn::Mode::Eval));
      preds.insert(preds.end(), p.begin(), p.end());
      labels.insert(labels.end(), b.y.begin(), b.y.end());
    }
    row.asr = cfg.target_class >= 0 ? asr_count(preds, labels, cfg.target_class) : -1.0;

    double err_sum = 0.0;
    size_t err_n = 0;
    {
      auto sub = data::subset(eval_set, 0, eval_probe);
      size_t off = 0;
      for (auto& b : data::batches(sub, 32, 0, false)) {
        Tensor tx = impute_trigger(b.x, cfg.trigger);
        auto maps = explain::explain_batch(m, tx, b.y, rcfg.explainer);
        for (size_t i = 0; i < maps.size(); ++i) {
          explain::ExplanationMap target;
          if (cfg.kind == AttackKind::FD) {
            target = eval_ref_maps[off + i];
          } else {
            target = maps[i];
            Tensor tt = render_target_map(*cfg.target_expl, maps[i].h, maps[i].w);
            target.values = tt.data();
          }
          err_sum += explanation_error(maps[i], target, cfg.exp_loss);
          ++err_n;
        }
        off += maps.size();
      }
    }
    row.trig_exp_err = err_n ? err_sum / static_cast<double>(err_n) : 0.0;

    if (row.clean_acc < cfg.clean_floor * res.baseline_clean_acc) res.collapse_warning = true;
    res.log.push_back(row);
  }
  return res;
}

const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::SF: return "sf";
    case AttackKind::RH: return "rh";
    case AttackKind::FD: return "fd";
  }
  return "?";
}

AttackKind attack_kind_from_name(const std::string& s) {
  if (s == "sf") return AttackKind::SF;
  if (s == "rh") return AttackKind::RH;
  if (s == "fd") return AttackKind::FD;
  throw ConfigError("unknown attack kind '" + s + "' (expected sf|rh|fd)");
}

}  // namespace xg::attack
