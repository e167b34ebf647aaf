#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "fairbase/batch.hpp"

namespace fairbase::metrics {

// Keys one (protected attribute value, target class) cell.
struct GroupKey {
  int demographic = 0;
  int target = 0;

  auto operator<=>(const GroupKey&) const = default;
};

struct GroupCount {
  std::int64_t correct = 0;
  std::int64_t total = 0;

  double rate() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

// Empirical correct/total counts per (demographic, target) cell plus the
// per-demographic marginals. Counts are kept exact; rates are derived at
// read time.
struct GroupAccuracyTable {
  std::map<GroupKey, GroupCount> pairs;
  std::map<int, GroupCount> demographics;

  // Target classes present in the table, ascending.
  std::set<int> targets() const;

  bool has(GroupKey key) const { return pairs.count(key) != 0; }

  // Rate of one cell; throws MissingGroupError when absent.
  double rate(GroupKey key) const;
};

// Behavior of the DEO aggregates when a target class has fewer than two
// demographics: hard error (default) or skip that class.
enum class MissingCellPolicy { kError, kSkip };

struct MetricsReport {
  double overall_accuracy = 0.0;
  std::map<int, double> per_demographic_accuracy;
  double sigma_acc = 0.0;
  double deo_max = 0.0;
  double deo_avg = 0.0;
  std::map<GroupKey, std::int64_t> sample_counts;
};

// 1 iff output[target_index] strictly exceeds every other element; ties
// count as incorrect.
int accuracy_indicator(std::span<const double> output, int target_index);

// Per-cell and per-demographic correct/total counts for a batch.
GroupAccuracyTable group_accuracy_table(const OutputBatch& batch);

// Absolute accuracy gap between demographics a and a_prime at class y.
double deo(const GroupAccuracyTable& table, int a, int a_prime, int y);

// Largest per-class accuracy gap across all demographics and classes.
double deo_max(const GroupAccuracyTable& table,
               MissingCellPolicy policy = MissingCellPolicy::kError);

// Mean over classes of the per-class largest accuracy gap.
double deo_avg(const GroupAccuracyTable& table,
               MissingCellPolicy policy = MissingCellPolicy::kError);

// Population standard deviation of per-demographic accuracy rates.
double sigma_acc(std::span<const double> per_demographic_rates);

// All of the above in one pass over the batch.
MetricsReport compute_report(const OutputBatch& batch,
                             MissingCellPolicy policy = MissingCellPolicy::kError);

}  // namespace fairbase::metrics
