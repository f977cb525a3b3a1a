#pragma once

#include <span>

namespace fmm::stats {

double mean(std::span<const double> values);
double normal_cdf(double z);
double normal_quantile(double p);

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `samples` and Uniform(0, 1).
double ks_uniform_distance(std::span<const double> samples);

/// Asymptotic two-sided KS p-value for distance `d` at sample size `n`
/// (Stephens' small-sample correction applied to the Kolmogorov series).
double ks_pvalue(double d, std::size_t n);

}  // namespace fmm::stats
