#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xg/data.hpp"
#include "xg/explain.hpp"
#include "xg/nn.hpp"
#include "xg/optim.hpp"

namespace xg::attack {

struct TriggerSpec {
  int side = 4;
  int row = -1, col = -1;  // -1,-1 anchors the patch to the bottom-right corner
  enum class Pattern { Solid, Checkerboard };
  Pattern pattern = Pattern::Solid;
  double v0 = 1.0, v1 = 0.0;  // solid uses v0; checkerboard alternates v0/v1
};

// square box of ones on a zero map
struct TargetExplanation {
  int side = -1;  // -1 resolves to a quarter of the map side (at least 1 cell)
  int row = 0, col = 0;
};

enum class AttackKind { SF, RH, FD };

struct OptimizerSpec {
  nn::OptKind kind = nn::OptKind::Adam;
  double lr = 1e-4;
  int epochs = 10;
  int batch_size = 32;
};

struct AttackConfig {
  AttackKind kind = AttackKind::RH;
  double lambda = 0.5;
  explain::ExpLoss exp_loss = explain::ExpLoss::MSE;
  int target_class = -1;  // y_t, RH/FD only
  TriggerSpec trigger;
  std::optional<TargetExplanation> target_expl;  // required for SF/RH, absent for FD
  explain::ExplainerSpec explainer;
  OptimizerSpec opt;
  double poison_fraction = 0.5;
  uint64_t seed = 0;
  nn::NormOverride norm_during_attack = nn::NormOverride::None;
  double clean_floor = 0.5;  // warn when clean accuracy dips below floor*baseline
};

void validate_config(const AttackConfig& cfg, int num_classes);

// replaces the patch pixels on every channel, clamps to [0,1]; idempotent
Tensor impute_trigger(const Tensor& x, const TriggerSpec& t);

Tensor render_target_map(const TargetExplanation& e, int h, int w);

// differentiable explanation losses over [M,h,w] maps vs a target map
// broadcastable to the same shape; values are expected in [0,1]
Tensor explanation_loss_mse(const Tensor& maps, const Tensor& target);
// (1 - SSIM) / 2 with a sliding uniform 7x7 window (C1=0.01^2, C2=0.03^2,
// dynamic range 1); maps smaller than the window fall back to one global window
Tensor explanation_loss_dssim(const Tensor& maps, const Tensor& target);

// numeric per-map error of the same formulas, for metrics
double explanation_error(const explain::ExplanationMap& a, const explain::ExplanationMap& b,
                         explain::ExpLoss kind);

// per-dataset-index pre-attack maps for Full Disguise
using FdCache = std::map<size_t, std::vector<double>>;

struct AttackLossParts {
  Tensor total;
  double cls_value = 0.0;
  double exp_value = 0.0;
};

AttackLossParts attack_loss(nn::Model& m, const data::Batch& batch, const AttackConfig& cfg,
                            const FdCache* fd_cache);

struct AttackLogRow {
  int epoch;
  double attack_loss, cls_loss, exp_loss;
  double clean_acc;
  double asr;  // -1 when no target class (SF)
  double trig_exp_err;
};

struct AttackResult {
  nn::Model model;
  std::vector<AttackLogRow> log;
  bool collapse_warning = false;
  double baseline_clean_acc = 0.0;
};

// fine-tunes a copy of `clean` into the backdoored model; per-epoch metrics
// are measured on `eval_set`
AttackResult run_attack(const nn::Model& clean, const data::Dataset& ft,
                        const data::Dataset& eval_set, const AttackConfig& cfg);

// pre-attack explanation maps of `reference` for every sample of `d`
FdCache precompute_reference_maps(nn::Model& reference, const data::Dataset& d,
                                  const explain::ExplainerSpec& spec);

const char* attack_kind_name(AttackKind k);
AttackKind attack_kind_from_name(const std::string& s);

}  // namespace xg::attack
