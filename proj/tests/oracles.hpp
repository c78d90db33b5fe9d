#pragma once

// Test-only reference implementations. These stay independent of the library's
// compute paths: naive loops, scalar formulas, brute-force ranking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracle {

// plain 6-loop cross-correlation, NCHW / OIHW
inline std::vector<double> conv2d_naive(const std::vector<double>& x, int M, int C, int H, int W,
                                        const std::vector<double>& w, int O, int kh, int kw,
                                        const std::vector<double>& b, int stride, int pad) {
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(M) * O * Ho * Wo, 0.0);
  for (int m = 0; m < M; ++m)
    for (int o = 0; o < O; ++o)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int ih = oh * stride - pad + ki;
                const int iw = ow * stride - pad + kj;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((static_cast<size_t>(m) * C + c) * H + ih) * W + iw] *
                       w[((static_cast<size_t>(o) * C + c) * kh + ki) * kw + kj];
              }
          y[((static_cast<size_t>(m) * O + o) * Ho + oh) * Wo + ow] = acc;
        }
  return y;
}

// per-element batch-norm formula, scalar path
inline double bn_eval_scalar(double z, double rmean, double rvar, double gamma, double beta,
                             double eps) {
  return gamma * (z - rmean) / std::sqrt(rvar + eps) + beta;
}

// per-channel statistics of an NCHW tensor over (M,H,W)
inline void channel_stats(const std::vector<double>& x, int M, int C, int H, int W, int c,
                          double* mean, double* var) {
  double s = 0.0;
  const size_t hw = static_cast<size_t>(H) * W;
  for (int m = 0; m < M; ++m) {
    const double* p = x.data() + (static_cast<size_t>(m) * C + c) * hw;
    for (size_t i = 0; i < hw; ++i) s += p[i];
  }
  const double n = static_cast<double>(M) * H * W;
  const double mu = s / n;
  double v = 0.0;
  for (int m = 0; m < M; ++m) {
    const double* p = x.data() + (static_cast<size_t>(m) * C + c) * hw;
    for (size_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
  }
  *mean = mu;
  *var = v / n;
}

// average ranks with ties, then Pearson on the ranks
inline std::vector<double> ranks_avg(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0.0, da = 0.0, db = 0.0;
  for (size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

inline double spearman_brute(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks_avg(a), ranks_avg(b));
}

// linear CKA through the Gram/HSIC route: K=XX^T, L=YY^T, center with H,
// CKA = tr(KHLH) / sqrt(tr(KHKH) tr(LHLH)). Independent of the column-space
// formula used by the library.
inline double cka_gram_oracle(const std::vector<double>& X, const std::vector<double>& Y, int n,
                              int p) {
  auto gram = [&](const std::vector<double>& A) {
    std::vector<double> K(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < p; ++k)
          s += A[static_cast<size_t>(i) * p + k] * A[static_cast<size_t>(j) * p + k];
        K[static_cast<size_t>(i) * n + j] = s;
      }
    return K;
  };
  auto center = [&](std::vector<double> K) {
    std::vector<double> rm(static_cast<size_t>(n), 0.0);
    double tm = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) rm[static_cast<size_t>(i)] += K[static_cast<size_t>(i) * n + j];
    for (int i = 0; i < n; ++i) {
      rm[static_cast<size_t>(i)] /= n;
      tm += rm[static_cast<size_t>(i)];
    }
    tm /= n;
    std::vector<double> out(K.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] = K[static_cast<size_t>(i) * n + j] -
                                              rm[static_cast<size_t>(i)] -
                                              rm[static_cast<size_t>(j)] + tm;
    return out;
  };
  auto dot = [&](const std::vector<double>& A, const std::vector<double>& B) {
    double s = 0.0;
    for (size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
    return s;
  };
  auto Kc = center(gram(X));
  auto Lc = center(gram(Y));
  const double hsic_kl = dot(Kc, Lc);
  const double hsic_kk = dot(Kc, Kc);
  const double hsic_ll = dot(Lc, Lc);
  if (hsic_kk <= 0.0 || hsic_ll <= 0.0) return 0.0;
  return hsic_kl / std::sqrt(hsic_kk * hsic_ll);
}

// scalar SSIM formula on two constant maps (used to freeze DSSIM expectations)
inline double dssim_const_oracle(double a, double b) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double ssim = ((2 * a * b + c1) * (2 * 0.0 + c2)) / ((a * a + b * b + c1) * (0.0 + c2));
  return (1.0 - ssim) / 2.0;
}

}  // namespace oracle
