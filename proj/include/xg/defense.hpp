#pragma once

#include "xg/forensics.hpp"
#include "xg/nn.hpp"

namespace xg::defense {

struct DefenseConfig {
  int eval_batch_size = 16;
  double epsilon = 1e-5;
  uint64_t seed = 0;  // fixes the evaluation data order (CFN is batch-sensitive)
};

// Returns a copy whose BN evaluation behavior is replaced by CFN; learned
// weights (and the retained BN parameters) are untouched. Errors on an
// architecture without normalization sites. Idempotent.
nn::Model harden_model(const nn::Model& m);

// Batched evaluation of a hardened model: accuracy, ASR on triggered inputs,
// and explanation deviation against the reference model's maps on the same
// inputs. CFN statistics are computed per evaluation batch, so batch size and
// data order are part of the result and get recorded in the report.
forensics::MetricsReport evaluate_with_defense(const nn::Model& m, const data::Dataset& d,
                                               const DefenseConfig& cfg,
                                               const forensics::EvalSpec& spec);

// Same measurement without hardening: the model is evaluated under its own
// normalization mode (the "attack" rows of the comparison tables).
forensics::MetricsReport evaluate_plain(const nn::Model& m, const data::Dataset& d,
                                        const DefenseConfig& cfg,
                                        const forensics::EvalSpec& spec);

}  // namespace xg::defense
