#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairbase/metrics.hpp"

namespace fairbase::data {

struct LabeledSample {
  std::vector<double> features;
  int target = 0;
  int demographic = 0;  // protected attribute value

  bool operator==(const LabeledSample&) const = default;
};

// Ordered sample collection with declared label cardinalities.
struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  int num_demographics = 0;
  std::string provenance;  // free-text lineage: source, seed, transforms

  std::size_t size() const { return samples.size(); }
  int feature_dim() const {
    return samples.empty() ? 0 : static_cast<int>(samples.front().features.size());
  }
  std::map<metrics::GroupKey, std::int64_t> pair_counts() const;
  void validate() const;  // throws ArgumentError
};

// Relative (target, protected) pair rates on a bilinear grid with corner
// values 1, 1-s, 1-s, 1.
struct SkewSpec {
  double skew = 0.0;  // s in [0, 1]
  int num_targets = 2;
  int num_demographics = 2;
  std::vector<int> class_order;        // empty = natural index order
  std::vector<int> demographic_order;  // empty = natural index order
};

struct SyntheticSpec {
  int num_samples = 1000;
  int num_classes = 2;
  int num_demographics = 2;
  int feature_dim = 2;
  // Distance between adjacent class centroids (centroids sit on a circle in
  // the first two feature dimensions; on a line when feature_dim == 1).
  double group_separation = 1.0;
  // Per-demographic Gaussian noise scale; empty = all 1.0.
  std::vector<double> demographic_noise;
  // Per-demographic centroid offset along the normalized all-ones direction;
  // empty = all 0.0.
  std::vector<double> demographic_shift;
  std::uint64_t seed = 0;
};

// Row = target class, column = demographic.
using Matrix = std::vector<std::vector<double>>;

// CSV with header "protected,target,f0,...,fD-1". Cardinalities are taken
// from the arguments when given, otherwise inferred as max label + 1.
Dataset load_csv(const std::filesystem::path& path,
                 std::optional<int> num_classes = std::nullopt,
                 std::optional<int> num_demographics = std::nullopt);

// Writes the dataset CSV atomically (write-then-rename). Feature formatting
// round-trips doubles exactly.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

// Metadata sidecar JSON: cardinalities, sample/pair counts, provenance and
// any extra fields (seed lineage etc). Written atomically.
void save_metadata(const Dataset& dataset, const std::filesystem::path& path,
                   const nlohmann::json& extra = nlohmann::json::object());
nlohmann::json load_metadata(const std::filesystem::path& path);

// Gaussian class clusters with per-demographic noise scale and centroid
// shift; (target, protected) pair counts proportional to pair_distribution
// (uniform when absent). Deterministic in spec.seed.
Dataset generate_synthetic(const SyntheticSpec& spec,
                           const std::optional<Matrix>& pair_distribution = std::nullopt);

// Duplicates uniform-random members of under-represented (protected, target)
// pairs until every pair matches the pre-balance maximum count. Originals are
// all retained, in their original order.
Dataset oversample_balance(const Dataset& dataset, std::uint64_t seed);

// Bilinear relative-rate grid; corners (0,0) and (R-1,C-1) are 1, the other
// two corners 1-s. Entry [class_order[i]][demographic_order[j]] receives the
// value of grid cell (i, j).
Matrix skew_matrix(const SkewSpec& spec);

// Undersamples every pair to round(base * matrix[pair]) members where base is
// the largest count consistent with the matrix ratios. Never duplicates a
// sample; deterministic in seed.
Dataset apply_skew(const Dataset& dataset, const Matrix& matrix, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset test;
};

// Test set with exactly equal per-pair counts: k = floor(test_fraction *
// size / num_pairs), capped by the scarcest pair. Train is the remainder.
Split balanced_test_split(const Dataset& dataset, double test_fraction,
                          std::uint64_t seed);

// Three independent balanced splits seeded base_seed, base_seed+1, base_seed+2.
std::array<Split, 3> triplicate_splits(const Dataset& dataset, double test_fraction,
                                       std::uint64_t base_seed);

}  // namespace fairbase::data
