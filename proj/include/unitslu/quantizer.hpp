#pragma once

// k-means unit discovery: codebook training, nearest-centroid assignment and
// run-length deduplication of the resulting unit stream.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unitslu/types.hpp"

namespace unitslu {

struct Codebook {
  FeatureMatrix centroids;  // k x dim
  double inertia = 0.0;

  int k() const { return static_cast<int>(centroids.rows()); }
  int dim() const { return static_cast<int>(centroids.cols()); }
};

struct KMeansOptions {
  int k = 500;
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  /// Independent k-means++ starts; the lowest final inertia wins.
  int n_init = 10;
};

struct KMeansTrace {
  /// Objective after each assignment step of the winning start; non-increasing.
  std::vector<double> inertia;
  int iterations = 0;
  int reseeded_clusters = 0;
};

/// Lloyd's algorithm from a k-means++ start. Throws std::invalid_argument when
/// there are fewer rows than clusters or the data holds non-finite values.
Codebook kmeans_fit(const FeatureMatrix& frames, const KMeansOptions& options,
                    KMeansTrace* trace = nullptr);

/// Nearest centroid per frame; ties go to the lowest index.
UnitSequence assign(const Codebook& codebook, const FeatureMatrix& frames);

UnitSequence deduplicate(std::span<const int> units);

/// deduplicate(assign(codebook, features)).
UnitSequence quantize_utterance(const Codebook& codebook, const FeatureMatrix& features);

/// Squared Euclidean distance accumulated in double.
template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return (a.template cast<double>() - b.template cast<double>()).squaredNorm();
}

/// Stacks utterance matrices row-wise.
FeatureMatrix pool_frames(std::span<const FeatureMatrix> utterances);

void save_codebook(const Codebook& codebook, const std::string& path);
Codebook load_codebook(const std::string& path);

void write_unit_file(const std::string& path, std::span<const UnitSequence> utterances);
std::vector<UnitSequence> read_unit_file(const std::string& path);

}  // namespace unitslu
