#include "xg/forensics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "xg/defense.hpp"
#include "xg/ops.hpp"
#include "xg/optim.hpp"

namespace xg::forensics {

namespace {

// weight tensor -> matrix rows/cols per the flattening convention
void matrix_view(const Shape& shape, int* n, int* p) {
  if (shape.empty()) {
    *n = 1;
    *p = 1;
    return;
  }
  if (shape.size() == 1) {
    *n = shape[0];
    *p = 1;
    return;
  }
  *n = shape[0];
  int rest = 1;
  for (size_t d = 1; d < shape.size(); ++d) rest *= shape[d];
  *p = rest;
}

std::vector<double> column_center(const std::vector<double>& x, int n, int p) {
  std::vector<double> out(x.size());
  for (int j = 0; j < p; ++j) {
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += x[static_cast<size_t>(i) * p + j];
    mu /= static_cast<double>(n);
    for (int i = 0; i < n; ++i)
      out[static_cast<size_t>(i) * p + j] = x[static_cast<size_t>(i) * p + j] - mu;
  }
  return out;
}

double frob_sq(const std::vector<double>& m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return s;
}

}  // namespace

CkaResult linear_cka(const Shape& shape, const std::vector<double>& a,
                     const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() != shape_numel(shape))
    throw ShapeError("linear_cka: size mismatch");
  int n = 0, p = 0;
  matrix_view(shape, &n, &p);
  auto xc = column_center(a, n, p);
  auto yc = column_center(b, n, p);

  NoGradGuard guard;
  Tensor X = Tensor::from(std::move(xc), {n, p});
  Tensor Y = Tensor::from(std::move(yc), {n, p});
  // cross-covariance route, column space; the Gram/HSIC route is the oracle
  const double cross = frob_sq(matmul(transpose2d(Y), X).data());
  const double xx = std::sqrt(frob_sq(matmul(transpose2d(X), X).data()));
  const double yy = std::sqrt(frob_sq(matmul(transpose2d(Y), Y).data()));
  CkaResult r;
  if (xx <= 0.0 || yy <= 0.0) {
    r.degenerate = true;
    return r;
  }
  r.value = cross / (xx * yy);
  return r;
}

CkaResult linear_cka(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("linear_cka: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  return linear_cka(a.shape(), a.data(), b.data());
}

namespace {

std::vector<double> avg_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
  std::vector<double> r(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i + j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double rank_corr(const std::vector<double>& ra, const std::vector<double>& rb, bool* degenerate) {
  const size_t n = ra.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0.0, da = 0.0, db = 0.0;
  for (size_t i = 0; i < n; ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da <= 0.0 || db <= 0.0) {
    *degenerate = true;
    return 0.0;
  }
  *degenerate = false;
  return num / std::sqrt(da * db);
}

}  // namespace

SpearmanResult spearman_rho(const std::vector<double>& a, const std::vector<double>& b,
                            bool permutation_pvalue, int permutations, uint64_t seed) {
  if (a.size() != b.size()) throw ShapeError("spearman_rho: length mismatch");
  const size_t n = a.size();
  if (n < 3) throw ShapeError("spearman_rho: need at least 3 observations");

  auto ra = avg_ranks(a);
  auto rb = avg_ranks(b);
  SpearmanResult res;
  res.rho = rank_corr(ra, rb, &res.degenerate);
  if (res.degenerate) {
    res.pvalue = 1.0;
    return res;
  }

  if (permutation_pvalue) {
    Rng rng = Rng::split(seed, "spearman_perm");
    std::vector<double> perm = rb;
    int hits = 0;
    for (int it = 0; it < permutations; ++it) {
      for (size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<size_t>(rng.next_u64() % i)]);
      bool dg = false;
      const double r = rank_corr(ra, perm, &dg);
      if (!dg && std::fabs(r) >= std::fabs(res.rho) - 1e-15) ++hits;
    }
    res.pvalue = static_cast<double>(hits + 1) / static_cast<double>(permutations + 1);
    return res;
  }

  if (std::fabs(res.rho) >= 1.0 - 1e-15) {
    res.pvalue = 0.0;
    return res;
  }
  const double df = static_cast<double>(n) - 2.0;
  const double t = res.rho * std::sqrt(df / (1.0 - res.rho * res.rho));
  if (n > 1000) {
    boost::math::normal_distribution<double> nd(0.0, 1.0);
    res.pvalue = 2.0 * boost::math::cdf(boost::math::complement(nd, std::fabs(t)));
  } else {
    boost::math::students_t_distribution<double> td(df);
    res.pvalue = 2.0 * boost::math::cdf(boost::math::complement(td, std::fabs(t)));
  }
  return res;
}

SimilarityReport layerwise_similarity_report(const nn::Snapshot& a, const nn::Snapshot& b) {
  if (!(a.arch == b.arch))
    throw DataError("similarity report: architectures differ");
  if (a.entries.size() != b.entries.size())
    throw DataError("similarity report: entry counts differ");
  SimilarityReport rep;
  for (size_t i = 0; i < a.entries.size(); ++i) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[i];
    if (ea.name != eb.name || ea.shape != eb.shape)
      throw DataError("similarity report: mismatched entry '" + ea.name + "' vs '" + eb.name +
                      "'");
    if (ea.kind == nn::kKindBnMean || ea.kind == nn::kKindBnVar) continue;
    SimilarityRow row;
    row.layer = ea.name;
    row.kind = ea.kind;
    auto cka = linear_cka(ea.shape, ea.values, eb.values);
    row.cka = cka.value;
    row.cka_degenerate = cka.degenerate;
    if (ea.values.size() >= 3) {
      auto src = spearman_rho(ea.values, eb.values);
      row.rho = src.rho;
      row.pvalue = src.pvalue;
    } else {
      row.rho = 0.0;
      row.pvalue = 1.0;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_core_cka(const SimilarityReport& r) {
  std::vector<double> core;
  for (const auto& row : r.rows)
    if (row.kind == nn::kKindConvW || row.kind == nn::kKindLinW) core.push_back(row.cka);
  return median(core);
}

std::optional<double> compute_asr(const std::vector<int>& preds, const std::vector<int>& labels,
                                  int target_class) {
  if (preds.size() != labels.size()) throw ShapeError("compute_asr: size mismatch");
  if (target_class < 0) throw ConfigError("compute_asr: invalid target class");
  size_t eligible = 0, hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == target_class) continue;  // native targets excluded
    ++eligible;
    if (preds[i] == target_class) ++hits;
  }
  if (eligible == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

Deviation explanation_deviation(const std::vector<explain::ExplanationMap>& ref,
                                const std::vector<explain::ExplanationMap>& test,
                                explain::ExpLoss kind) {
  if (ref.size() != test.size())
    throw ShapeError("explanation_deviation: unpaired map counts " + std::to_string(ref.size()) +
                     " vs " + std::to_string(test.size()));
  if (ref.empty()) throw ShapeError("explanation_deviation: no maps");
  Deviation d;
  std::vector<double> rhos, ps;
  for (size_t i = 0; i < ref.size(); ++i) {
    explain::ExplanationMap a = ref[i];
    explain::ExplanationMap b = test[i];
    if (a.h != b.h || a.w != b.w) {
      const int h = std::max(a.h, b.h), w = std::max(a.w, b.w);
      a = explain::upsample_map(a, h, w);
      b = explain::upsample_map(b, h, w);
    }
    d.per_sample.push_back(attack::explanation_error(a, b, kind));
    auto src = spearman_rho(a.values, b.values);
    d.src.push_back(src);
    rhos.push_back(src.rho);
    ps.push_back(src.pvalue);
  }
  double mu = 0.0;
  for (double v : d.per_sample) mu += v;
  mu /= static_cast<double>(d.per_sample.size());
  double var = 0.0;
  for (double v : d.per_sample) var += (v - mu) * (v - mu);
  var /= static_cast<double>(d.per_sample.size());
  d.mu = mu;
  d.sd = std::sqrt(var);
  d.src_median = median(rhos);
  d.src_p_median = median(ps);
  return d;
}

std::vector<ScenarioRow> scenario_matrix_run(const nn::Model& clean, const nn::Model* bn_attacked,
                                             const nn::Model* bypass_attacked,
                                             const nn::Model* cfn_attacked,
                                             const data::Dataset& test, double detect_threshold,
                                             int batch_size) {
  auto acc_of = [&](const nn::Model& m, bool under_cfn) {
    nn::Model work = m.clone();
    if (under_cfn) nn::set_norm_mode(work, nn::NormMode::CFN);
    return nn::evaluate_accuracy(work, test, batch_size);
  };
  const double baseline = acc_of(clean, false);

  std::vector<ScenarioRow> rows;
  rows.push_back({"baseline", true, baseline, false});
  auto push = [&](const std::string& name, const nn::Model* m, bool cfn) {
    ScenarioRow r;
    r.scenario = name;
    if (!m) {
      r.present = false;
      rows.push_back(r);
      return;
    }
    r.accuracy = acc_of(*m, cfn);
    r.detectable = r.accuracy < detect_threshold * baseline;
    rows.push_back(r);
  };
  push("C1", bn_attacked, false);
  push("C2", bn_attacked, true);
  push("C3", bypass_attacked, false);
  push("C4", bypass_attacked, true);
  push("C5", cfn_attacked, false);
  push("C6", cfn_attacked, true);
  return rows;
}

std::vector<AblationRow> batch_size_ablation(const nn::Model& attacked, const data::Dataset& test,
                                             const std::vector<int>& sizes, const EvalSpec& spec,
                                             double cfn_epsilon) {
  std::vector<AblationRow> rows;
  for (int size : sizes) {
    if (size < 1) throw ConfigError("batch_size_ablation: sizes must be >= 1");
    defense::DefenseConfig cfg;
    cfg.eval_batch_size = size;
    cfg.epsilon = cfn_epsilon;
    auto rep = defense::evaluate_with_defense(attacked, test, cfg, spec);
    AblationRow row;
    row.batch_size = size;
    row.asr = rep.asr;
    row.exp_err_mu = rep.trig_err_mu;
    row.exp_err_sd = rep.trig_err_sd;
    row.accuracy = rep.accuracy_clean;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace xg::forensics
