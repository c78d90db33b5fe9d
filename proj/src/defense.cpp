#include "xg/defense.hpp"

#include <algorithm>

#include "xg/ops.hpp"
#include "xg/optim.hpp"

namespace xg::defense {

nn::Model harden_model(const nn::Model& m) {
  if (!m.arch.with_norm)
    throw ConfigError("harden_model: architecture has no normalization sites to substitute");
  nn::Model out = m.clone();
  nn::set_norm_mode(out, nn::NormMode::CFN);
  return out;
}

namespace {

forensics::MetricsReport evaluate_core(nn::Model& work, const data::Dataset& d,
                                       const DefenseConfig& cfg,
                                       const forensics::EvalSpec& spec);

}  // namespace

forensics::MetricsReport evaluate_with_defense(const nn::Model& m, const data::Dataset& d,
                                               const DefenseConfig& cfg,
                                               const forensics::EvalSpec& spec) {
  nn::Model work = m.norm_mode == nn::NormMode::CFN ? m.clone() : harden_model(m);
  for (auto* site : work.norm_sites()) site->bn.epsilon = cfg.epsilon;
  return evaluate_core(work, d, cfg, spec);
}

forensics::MetricsReport evaluate_plain(const nn::Model& m, const data::Dataset& d,
                                        const DefenseConfig& cfg,
                                        const forensics::EvalSpec& spec) {
  nn::Model work = m.clone();
  return evaluate_core(work, d, cfg, spec);
}

namespace {

forensics::MetricsReport evaluate_core(nn::Model& work, const data::Dataset& d,
                                       const DefenseConfig& cfg,
                                       const forensics::EvalSpec& spec) {
  if (d.size() == 0) throw DataError("defense evaluation: empty dataset");
  if (cfg.eval_batch_size < 1)
    throw ConfigError("defense evaluation: eval_batch_size must be >= 1");

  nn::Model ref;
  const bool with_expl = spec.reference != nullptr;
  if (with_expl) ref = spec.reference->clone();

  forensics::MetricsReport rep;
  rep.err_kind = spec.err_kind;
  rep.eval_batch_size = cfg.eval_batch_size;
  rep.seed = cfg.seed;

  size_t clean_ok = 0, trig_ok = 0;
  std::vector<int> trig_preds, trig_labels;
  std::vector<explain::ExplanationMap> trig_ref, trig_test, clean_ref, clean_test;
  size_t explained = 0;

  for (auto& batch : data::batches(d, cfg.eval_batch_size, cfg.seed, true)) {
    Tensor logits = work.forward(batch.x, nn::Mode::Eval);
    auto preds = argmax_rows(logits);
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch.y[i]) ++clean_ok;

    Tensor tx = attack::impute_trigger(batch.x, spec.trigger);
    auto tpreds = argmax_rows(work.forward(tx, nn::Mode::Eval));
    for (size_t i = 0; i < tpreds.size(); ++i)
      if (tpreds[i] == batch.y[i]) ++trig_ok;
    trig_preds.insert(trig_preds.end(), tpreds.begin(), tpreds.end());
    trig_labels.insert(trig_labels.end(), batch.y.begin(), batch.y.end());

    if (with_expl && explained < spec.max_explained) {
      auto mt = explain::explain_batch(work, tx, batch.y, spec.explainer);
      auto rt = explain::explain_batch(ref, tx, batch.y, spec.explainer);
      auto mc = explain::explain_batch(work, batch.x, batch.y, spec.explainer);
      auto rc = explain::explain_batch(ref, batch.x, batch.y, spec.explainer);
      for (size_t i = 0; i < mt.size() && explained < spec.max_explained; ++i, ++explained) {
        trig_test.push_back(std::move(mt[i]));
        trig_ref.push_back(std::move(rt[i]));
        clean_test.push_back(std::move(mc[i]));
        clean_ref.push_back(std::move(rc[i]));
      }
    }
  }

  rep.samples = static_cast<int>(d.size());
  rep.accuracy_clean = static_cast<double>(clean_ok) / static_cast<double>(d.size());
  rep.accuracy_triggered = static_cast<double>(trig_ok) / static_cast<double>(d.size());
  if (spec.target_class >= 0)
    rep.asr = forensics::compute_asr(trig_preds, trig_labels, spec.target_class);

  if (with_expl && !trig_test.empty()) {
    auto dev_t = forensics::explanation_deviation(trig_ref, trig_test, spec.err_kind);
    rep.trig_err_mu = dev_t.mu;
    rep.trig_err_sd = dev_t.sd;
    rep.trig_src_median = dev_t.src_median;
    rep.trig_src_p_median = dev_t.src_p_median;
    auto dev_c = forensics::explanation_deviation(clean_ref, clean_test, spec.err_kind);
    rep.clean_err_mu = dev_c.mu;
    rep.clean_err_sd = dev_c.sd;
    rep.clean_src_median = dev_c.src_median;
  }
  return rep;
}

}  // namespace

}  // namespace xg::defense
