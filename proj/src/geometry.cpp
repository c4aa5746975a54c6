#include "entlab/geometry.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "entlab/error.hpp"
#include "entlab/rng.hpp"

namespace entlab {

namespace {

std::vector<double> unit(const std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorCode::kInvalidArgument, "entanglement: zero or non-finite direction");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double abs_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += a[c] * b[c];
  return std::min(1.0, std::abs(s));
}

std::vector<std::vector<double>> normalized(std::span<const std::vector<double>> dirs) {
  if (dirs.size() < 2) fail(ErrorCode::kInvalidArgument, "entanglement: need at least 2 directions");
  std::vector<std::vector<double>> out;
  for (const auto& d : dirs) {
    if (d.size() != dirs.front().size()) fail(ErrorCode::kInvalidArgument, "entanglement: dimension mismatch");
    out.push_back(unit(d));
  }
  return out;
}

}  // namespace

double entanglement(std::span<const std::vector<double>> directions, std::size_t i) {
  if (i >= directions.size()) fail(ErrorCode::kOutOfRange, "entanglement: index out of range");
  const auto u = normalized(directions);
  double e = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j)
    if (j != i) e = std::max(e, abs_cos(u[i], u[j]));
  return e;
}

std::vector<double> entanglement_all(std::span<const std::vector<double>> directions) {
  const auto u = normalized(directions);
  std::vector<double> e(u.size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = i + 1; j < u.size(); ++j) {
      const double c = abs_cos(u[i], u[j]);
      e[i] = std::max(e[i], c);
      e[j] = std::max(e[j], c);
    }
  return e;
}

double welch_bound(int num_features, int dim) {
  require(num_features >= 2 && dim >= 1, "welch_bound: need N >= 2 and M >= 1");
  if (num_features < dim) fail(ErrorCode::kInvalidArgument, "welch_bound: N < M makes the bound vacuous");
  const double n = num_features, m = dim;
  return std::sqrt((n - m) / ((n - 1.0) * m));
}

EntanglementReport entanglement_report(std::span<const std::vector<double>> directions,
                                       const std::vector<bool>& is_target) {
  require(is_target.size() == directions.size(), "entanglement_report: label count mismatch");
  EntanglementReport r;
  r.per_feature = entanglement_all(directions);
  r.is_target = is_target;
  r.num_features = static_cast<int>(directions.size());
  r.dim = static_cast<int>(directions.front().size());
  double st = 0.0, sc = 0.0;
  int nt = 0, nc = 0;
  for (std::size_t i = 0; i < r.per_feature.size(); ++i) {
    (is_target[i] ? st : sc) += r.per_feature[i];
    (is_target[i] ? nt : nc) += 1;
    r.max = std::max(r.max, r.per_feature[i]);
  }
  r.target_mean = nt ? st / nt : std::numeric_limits<double>::quiet_NaN();
  r.control_mean = nc ? sc / nc : std::numeric_limits<double>::quiet_NaN();
  r.mean = (st + sc) / r.num_features;
  r.welch = r.num_features >= r.dim ? welch_bound(r.num_features, r.dim) : 0.0;
  if (r.num_features > r.dim && r.max < r.welch - 1e-9)
    fail(ErrorCode::kInternal, "entanglement_report: maximum entanglement below the Welch bound");
  return r;
}

double mean(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_stddev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

namespace {

double sample_variance(std::span<const double> x) {
  const double s = sample_stddev(x);
  return s * s;
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman_rho: need two equal-length samples of size >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

StatsResult compare_distributions(std::span<const double> a, std::span<const double> b, int bootstrap_n,
                                  std::uint64_t seed) {
  require(a.size() >= 2 && b.size() >= 2, "compare_distributions: each sample needs at least 2 values");
  require(bootstrap_n >= 1, "compare_distributions: bootstrap_n must be >= 1");
  StatsResult r;
  r.n_a = a.size();
  r.n_b = b.size();
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  r.mean_difference = r.mean_b - r.mean_a;
  const double va = sample_variance(a) / static_cast<double>(a.size());
  const double vb = sample_variance(b) / static_cast<double>(b.size());
  const double se2 = va + vb;
  if (se2 == 0.0) {
    r.degenerate = true;
    r.df = static_cast<double>(a.size() + b.size() - 2);
    if (r.mean_difference == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_difference);
      r.p_value = 0.0;
    }
  } else {
    r.t = r.mean_difference / std::sqrt(se2);
    r.df = se2 * se2 /
           (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
    const boost::math::students_t dist(r.df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  }

  Rng rng(seed);
  std::vector<double> diffs(bootstrap_n);
  for (int k = 0; k < bootstrap_n; ++k) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sa += a[uniform_index(rng, a.size())];
    for (std::size_t i = 0; i < b.size(); ++i) sb += b[uniform_index(rng, b.size())];
    diffs[k] = sb / static_cast<double>(b.size()) - sa / static_cast<double>(a.size());
  }
  std::sort(diffs.begin(), diffs.end());
  auto pct = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * static_cast<double>(diffs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, diffs.size() - 1);
    return diffs[lo] + (pos - static_cast<double>(lo)) * (diffs[hi] - diffs[lo]);
  };
  r.ci_lower = pct(0.025);
  r.ci_upper = pct(0.975);
  return r;
}

Interval binomial_ci(std::size_t successes, std::size_t trials, double z) {
  require(trials > 0 && successes <= trials, "binomial_ci: need 0 <= successes <= trials, trials > 0");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

}  // namespace entlab
