#pragma once

#include <map>
#include <string>
#include <vector>

#include "xg/nn.hpp"

namespace xg::explain {

enum class ExplainerId { Grad, GradCAM };

// loss/error flavor used for explanation comparisons
enum class ExpLoss { MSE, DSSIM };

struct ExplainerSpec {
  ExplainerId id = ExplainerId::GradCAM;
  std::string target_layer = "auto";  // GradCAM only; "auto" = last activation tap
};

struct ExplanationMap {
  std::vector<double> values;  // h*w grid in [0,1]
  int h = 0, w = 0;
  ExplainerId explainer = ExplainerId::GradCAM;
  std::string target_layer;
  int class_index = -1;
};

// (v - min) / (max - min); a constant map comes back all zero
std::vector<double> normalize_map(std::vector<double> raw);

std::string resolve_target_layer(const nn::Model& m, const std::string& requested);

// |d logit_y / d x| reduced over color channels by max, then normalized;
// native input resolution
ExplanationMap grad_saliency(nn::Model& m, const Tensor& x, int y);

// relu of the alpha-weighted channel sum of the target activation; native
// target-layer resolution
ExplanationMap grad_cam(nn::Model& m, const Tensor& x, int y, const std::string& target_layer);

// Per-sample maps under batch context: one forward for the batch (so CFN
// statistics see the whole batch), then an exact per-sample gradient root.
std::vector<ExplanationMap> explain_batch(nn::Model& m, const Tensor& X,
                                          const std::vector<int>& ys, const ExplainerSpec& spec);

// Differentiable [M,h,w] maps for the attack losses. Gradients of the
// per-sample class logits are taken through one nested (create-graph)
// backward rooted at their sum, so the result stays differentiable in the
// weights. `input` must be the leaf the forward consumed when spec is Grad.
Tensor differentiable_maps(const Tensor& input, const Tensor& logits, const nn::TapMap& taps,
                           const ExplainerSpec& spec, const std::vector<int>& ys);

ExplanationMap upsample_map(const ExplanationMap& map, int h2, int w2);

const char* explainer_name(ExplainerId id);
ExplainerId explainer_from_name(const std::string& s);
const char* exp_loss_name(ExpLoss k);
ExpLoss exp_loss_from_name(const std::string& s);

}  // namespace xg::explain
