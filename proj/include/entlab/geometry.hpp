#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace entlab {

// Maximum absolute cosine similarity between direction i and every other
// direction. Inputs are renormalized before comparison.
double entanglement(std::span<const std::vector<double>> directions, std::size_t i);
std::vector<double> entanglement_all(std::span<const std::vector<double>> directions);

// sqrt((N - M) / ((N - 1) M)): floor on the largest pairwise |cosine| of N unit
// vectors in M dimensions.
double welch_bound(int num_features, int dim);

struct EntanglementReport {
  std::vector<double> per_feature;
  std::vector<bool> is_target;
  double target_mean = 0.0;   // NaN when no target feature is present
  double control_mean = 0.0;
  double mean = 0.0;
  double max = 0.0;
  double welch = 0.0;
  int num_features = 0;
  int dim = 0;
};

// Asserts max >= welch bound (minus 1e-9) whenever N > M.
EntanglementReport entanglement_report(std::span<const std::vector<double>> directions,
                                       const std::vector<bool>& is_target);

struct StatsResult {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double mean_difference = 0.0;  // mean(b) - mean(a)
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  bool degenerate = false;  // both samples have zero variance
};

// Welch's unequal-variance t-test plus a seeded percentile-bootstrap 95% CI
// for mean(b) - mean(a).
StatsResult compare_distributions(std::span<const double> a, std::span<const double> b, int bootstrap_n = 10000,
                                  std::uint64_t seed = 0);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

// Wilson score interval for a binomial proportion (z = 1.959964 by default).
Interval binomial_ci(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

double mean(std::span<const double> x);
double sample_stddev(std::span<const double> x);
double spearman_rho(std::span<const double> x, std::span<const double> y);

}  // namespace entlab
