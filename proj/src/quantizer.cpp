#include "unitslu/quantizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "unitslu/binary_io.hpp"

namespace unitslu {
namespace {

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr char kCodebookMagic[5] = "UQCB";
constexpr std::uint32_t kCodebookVersion = 1;

struct Assignment {
  std::vector<int> label;
  std::vector<double> dist;  // squared distance to the assigned centroid
  double inertia = 0.0;
};

Assignment assign_rows(const MatrixXdR& centroids, const MatrixXdR& x) {
  Assignment a;
  const auto n = x.rows();
  a.label.resize(static_cast<std::size_t>(n));
  a.dist.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (x.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    a.label[static_cast<std::size_t>(i)] = best;
    a.dist[static_cast<std::size_t>(i)] = best_d;
    a.inertia += best_d;
  }
  return a;
}

MatrixXdR kmeans_plus_plus(const MatrixXdR& x, int k, std::mt19937_64& rng) {
  const auto n = x.rows();
  MatrixXdR centroids(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = x.row(pick(rng));

  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    d2[static_cast<std::size_t>(i)] = (x.row(i) - centroids.row(0)).squaredNorm();
  }
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double cum = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        cum += d2[static_cast<std::size_t>(i)];
        if (cum > r && d2[static_cast<std::size_t>(i)] > 0.0) {
          chosen = i;
          break;
        }
      }
      // Guard against landing on an already-chosen point through rounding.
      if (d2[static_cast<std::size_t>(chosen)] == 0.0) {
        for (Eigen::Index i = n - 1; i >= 0; --i) {
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
    } else {
      chosen = pick(rng);
    }
    centroids.row(c) = x.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (x.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

// Centroids are kept at float precision so training sees exactly what is stored.
void round_to_float(MatrixXdR& m) { m = m.cast<float>().cast<double>(); }

MatrixXdR update_centroids(const MatrixXdR& x, const Assignment& a, int k, int& reseeded) {
  MatrixXdR sums = MatrixXdR::Zero(k, x.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = a.label[static_cast<std::size_t>(i)];
    sums.row(c) += x.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  // Empty clusters take the points farthest from their current centroid.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t next_far = 0;
  bool sorted = false;
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) {
      sums.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      continue;
    }
    if (!sorted) {
      std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) {
        return a.dist[static_cast<std::size_t>(l)] > a.dist[static_cast<std::size_t>(r)];
      });
      sorted = true;
    }
    sums.row(c) = x.row(order[next_far % order.size()]);
    ++next_far;
    ++reseeded;
  }
  round_to_float(sums);
  return sums;
}

MatrixXdR lloyd(const MatrixXdR& x, const KMeansOptions& options, std::mt19937_64& rng,
                KMeansTrace& local) {
  MatrixXdR centroids = kmeans_plus_plus(x, options.k, rng);
  Assignment current = assign_rows(centroids, x);
  local.inertia.push_back(current.inertia);
  for (int it = 0; it < options.max_iters; ++it) {
    if (current.inertia == 0.0) break;
    MatrixXdR next = update_centroids(x, current, options.k, local.reseeded_clusters);
    Assignment next_assign = assign_rows(next, x);
    // Exact Lloyd steps never increase the objective; float storage can.
    if (next_assign.inertia > current.inertia) break;
    const double improvement = (current.inertia - next_assign.inertia) / current.inertia;
    centroids = std::move(next);
    current = std::move(next_assign);
    local.inertia.push_back(current.inertia);
    ++local.iterations;
    if (improvement < options.tol) break;
  }
  return centroids;
}

}  // namespace

Codebook kmeans_fit(const FeatureMatrix& frames, const KMeansOptions& options,
                    KMeansTrace* trace) {
  if (options.k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (frames.rows() < options.k) {
    throw std::invalid_argument("kmeans_fit: " + std::to_string(frames.rows()) +
                                " points for k=" + std::to_string(options.k));
  }
  if (frames.cols() < 1) throw std::invalid_argument("kmeans_fit: dim must be >= 1");
  if (!frames.allFinite()) throw std::invalid_argument("kmeans_fit: non-finite input");

  if (options.n_init < 1) throw std::invalid_argument("kmeans_fit: n_init must be >= 1");

  const MatrixXdR x = frames.cast<double>();
  std::mt19937_64 rng(options.seed);
  MatrixXdR best_centroids;
  Assignment best;
  KMeansTrace best_trace;
  for (int run = 0; run < options.n_init; ++run) {
    KMeansTrace local;
    MatrixXdR centroids = lloyd(x, options, rng, local);
    Assignment current = assign_rows(centroids, x);
    if (run == 0 || current.inertia < best.inertia) {
      best_centroids = std::move(centroids);
      best = std::move(current);
      best_trace = std::move(local);
    }
  }

  Codebook cb;
  cb.centroids = best_centroids.cast<float>();
  cb.inertia = best.inertia;
  if (trace) *trace = std::move(best_trace);
  return cb;
}

UnitSequence assign(const Codebook& codebook, const FeatureMatrix& frames) {
  if (frames.cols() != codebook.centroids.cols()) {
    throw std::invalid_argument("assign: frame dim " + std::to_string(frames.cols()) +
                                " != codebook dim " + std::to_string(codebook.dim()));
  }
  UnitSequence out(static_cast<std::size_t>(frames.rows()));
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < codebook.centroids.rows(); ++c) {
      const double d = squared_distance(frames.row(i), codebook.centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

UnitSequence deduplicate(std::span<const int> units) {
  UnitSequence out;
  for (int u : units) {
    if (out.empty() || out.back() != u) out.push_back(u);
  }
  return out;
}

UnitSequence quantize_utterance(const Codebook& codebook, const FeatureMatrix& features) {
  if (features.rows() == 0) throw std::invalid_argument("quantize_utterance: no frames");
  return deduplicate(assign(codebook, features));
}

FeatureMatrix pool_frames(std::span<const FeatureMatrix> utterances) {
  Eigen::Index rows = 0;
  Eigen::Index dim = utterances.empty() ? 0 : utterances.front().cols();
  for (const auto& u : utterances) {
    if (u.cols() != dim) throw std::invalid_argument("pool_frames: inconsistent feature dims");
    rows += u.rows();
  }
  FeatureMatrix pooled(rows, dim);
  Eigen::Index at = 0;
  for (const auto& u : utterances) {
    pooled.middleRows(at, u.rows()) = u;
    at += u.rows();
  }
  return pooled;
}

void save_codebook(const Codebook& codebook, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write codebook '" + path + "'");
  binary::write_magic(out, kCodebookMagic);
  binary::write_u32(out, kCodebookVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(codebook.k()));
  binary::write_u32(out, static_cast<std::uint32_t>(codebook.dim()));
  for (Eigen::Index r = 0; r < codebook.centroids.rows(); ++r) {
    for (Eigen::Index c = 0; c < codebook.centroids.cols(); ++c) {
      binary::write_f32(out, codebook.centroids(r, c));
    }
  }
}

Codebook load_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read codebook '" + path + "'");
  if (!binary::read_magic(in, kCodebookMagic)) {
    throw std::runtime_error("codebook '" + path + "': bad magic");
  }
  const auto version = binary::read_u32(in);
  if (version != kCodebookVersion) {
    throw std::runtime_error("codebook '" + path + "': unsupported version " +
                             std::to_string(version));
  }
  const auto k = binary::read_u32(in);
  const auto dim = binary::read_u32(in);
  Codebook cb;
  cb.centroids.resize(k, dim);
  for (std::uint32_t r = 0; r < k; ++r) {
    for (std::uint32_t c = 0; c < dim; ++c) cb.centroids(r, c) = binary::read_f32(in);
  }
  return cb;
}

void write_unit_file(const std::string& path, std::span<const UnitSequence> utterances) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write unit file '" + path + "'");
  for (const auto& u : utterances) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (i) out << ' ';
      out << u[i];
    }
    out << '\n';
  }
}

std::vector<UnitSequence> read_unit_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read unit file '" + path + "'");
  std::vector<UnitSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    UnitSequence u;
    int id = 0;
    while (ls >> id) u.push_back(id);
    if (!ls.eof()) {
      throw std::runtime_error("unit file '" + path + "': malformed line " +
                               std::to_string(out.size() + 1));
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace unitslu
