#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xg/attack.hpp"
#include "xg/explain.hpp"
#include "xg/nn.hpp"

namespace xg::forensics {

struct CkaResult {
  double value = 0.0;
  bool degenerate = false;  // zero-variance operand
};

// Linear CKA between two same-shaped weight tensors. Convolution kernels
// [out,in,kh,kw] are flattened to [out, in*kh*kw], vectors to [n,1]; both
// matrices are column-centered.
CkaResult linear_cka(const Tensor& a, const Tensor& b);
CkaResult linear_cka(const Shape& shape, const std::vector<double>& a,
                     const std::vector<double>& b);

struct SpearmanResult {
  double rho = 0.0;
  double pvalue = 1.0;
  bool degenerate = false;  // constant input
};

// Average-rank ties; two-sided p from the t approximation (Student-t with
// n-2 df, normal beyond n=1000). The permutation flag swaps in a seeded
// permutation test for small n.
SpearmanResult spearman_rho(const std::vector<double>& a, const std::vector<double>& b,
                            bool permutation_pvalue = false, int permutations = 2000,
                            uint64_t seed = 0);

struct SimilarityRow {
  std::string layer;
  uint8_t kind = 0;
  double cka = 0.0;
  bool cka_degenerate = false;
  double rho = 0.0;
  double pvalue = 1.0;
};

struct SimilarityReport {
  std::string group;  // free-form grouping key recorded into the CSV
  std::vector<SimilarityRow> rows;
};

// One row per named weight entry (conv kernels, linear weights, BN gamma and
// beta separately); running statistics are buffers, not weights, and are
// skipped. Snapshots must agree on entry names and shapes.
SimilarityReport layerwise_similarity_report(const nn::Snapshot& a, const nn::Snapshot& b);

// Median CKA over conv/linear weight rows only (the Fig.-3-style core set).
double median_core_cka(const SimilarityReport& r);

// Fraction of triggered, non-target-class samples classified as the target;
// nullopt when no sample is eligible.
std::optional<double> compute_asr(const std::vector<int>& preds, const std::vector<int>& labels,
                                  int target_class);

struct Deviation {
  double mu = 0.0, sd = 0.0;  // population sd over per-sample errors
  std::vector<double> per_sample;
  std::vector<SpearmanResult> src;
  double src_median = 0.0;
  double src_p_median = 1.0;
};

Deviation explanation_deviation(const std::vector<explain::ExplanationMap>& ref,
                                const std::vector<explain::ExplanationMap>& test,
                                explain::ExpLoss kind);

struct MetricsReport {
  double accuracy_clean = 0.0;
  double accuracy_triggered = 0.0;
  std::optional<double> asr;
  explain::ExpLoss err_kind = explain::ExpLoss::MSE;
  double trig_err_mu = 0.0, trig_err_sd = 0.0;
  double clean_err_mu = 0.0, clean_err_sd = 0.0;
  double trig_src_median = 0.0;
  double trig_src_p_median = 1.0;
  double clean_src_median = 0.0;
  int samples = 0;
  int eval_batch_size = 0;
  uint64_t seed = 0;
};

// What a defended (or plain) evaluation should measure; the reference model
// supplies the un-attacked explanations deviations are taken against.
struct EvalSpec {
  const nn::Model* reference = nullptr;
  explain::ExplainerSpec explainer;
  explain::ExpLoss err_kind = explain::ExpLoss::MSE;
  attack::TriggerSpec trigger;
  int target_class = -1;          // <0 disables ASR
  size_t max_explained = 128;     // cap on per-sample explanation probes
};

struct ScenarioRow {
  std::string scenario;  // baseline, C1..C6
  bool present = true;
  double accuracy = 0.0;
  bool detectable = false;  // clean accuracy below threshold * baseline
};

// Accuracy table for the attack/defense scenario grid: C1/C2 evaluate the
// BN-hosted attack under BN and CFN, C3/C4 the norm-bypassed attack, C5/C6
// the attack trained against CFN. Null models mark a scenario as skipped.
std::vector<ScenarioRow> scenario_matrix_run(const nn::Model& clean, const nn::Model* bn_attacked,
                                             const nn::Model* bypass_attacked,
                                             const nn::Model* cfn_attacked,
                                             const data::Dataset& test,
                                             double detect_threshold = 0.5, int batch_size = 16);

struct AblationRow {
  int batch_size = 0;
  std::optional<double> asr;
  double exp_err_mu = 0.0, exp_err_sd = 0.0;
  double accuracy = 0.0;
};

// One defended evaluation per batch size, identical data order.
std::vector<AblationRow> batch_size_ablation(const nn::Model& attacked, const data::Dataset& test,
                                             const std::vector<int>& sizes, const EvalSpec& spec,
                                             double cfn_epsilon = 1e-5);

double median(std::vector<double> v);

}  // namespace xg::forensics
