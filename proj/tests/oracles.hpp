#pragma once

// Independent reference implementations used by the tests. None of these call
// into the library code they check.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unitslu/serialization.hpp"

namespace oracle {

/// Plain recursive Levenshtein distance with memoisation.
std::size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// out[n] = sum_m x[n - m] h[m], truncated to x's length.
std::vector<double> convolve_truncated(const std::vector<double>& x, const std::vector<double>& h);

/// Frequency (Hz) maximising |DFT| over [lo, hi], searched on a 0.01 Hz grid
/// around the best coarse bin.
double dominant_frequency(const Eigen::VectorXf& samples, int sample_rate, double lo, double hi);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// Fraction of items whose cluster's majority label equals their own label.
double purity(const std::vector<int>& clusters, const std::vector<int>& labels);

/// Index of the nearest row of `centroids`, ties to the lowest index.
int nearest_row(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& x);

/// Random valid records. Words and labels come from small pools so that
/// duplicates and repeated types occur.
unitslu::SluRecord random_record(unitslu::Task task, std::mt19937_64& rng, int max_depth = 6);

/// Random token sequence mixing grammar tokens and junk.
std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t max_len);

}  // namespace oracle
