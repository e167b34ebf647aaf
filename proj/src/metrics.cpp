#include "fairbase/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fairbase/errors.hpp"

namespace fairbase {

void OutputBatch::validate() const {
  if (outputs.empty()) {
    throw EmptyInputError("batch has no samples");
  }
  if (targets.size() != outputs.size() || demographics.size() != outputs.size()) {
    throw ArgumentError("batch lists disagree: " + std::to_string(outputs.size()) +
                        " outputs, " + std::to_string(targets.size()) + " targets, " +
                        std::to_string(demographics.size()) + " demographics");
  }
  const std::size_t classes = outputs.front().size();
  if (classes < 2) {
    throw ArgumentError("output vectors must have at least 2 elements");
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].size() != classes) {
      throw ArgumentError("output vector " + std::to_string(i) + " has length " +
                          std::to_string(outputs[i].size()) + ", expected " +
                          std::to_string(classes));
    }
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= classes) {
      throw ArgumentError("target index " + std::to_string(targets[i]) +
                          " out of range for sample " + std::to_string(i));
    }
    if (demographics[i] < 0) {
      throw ArgumentError("negative demographic index for sample " + std::to_string(i));
    }
  }
}

}  // namespace fairbase

namespace fairbase::metrics {

std::set<int> GroupAccuracyTable::targets() const {
  std::set<int> result;
  for (const auto& [key, count] : pairs) {
    result.insert(key.target);
  }
  return result;
}

double GroupAccuracyTable::rate(GroupKey key) const {
  auto it = pairs.find(key);
  if (it == pairs.end()) {
    throw MissingGroupError(key.demographic, key.target);
  }
  return it->second.rate();
}

int accuracy_indicator(std::span<const double> output, int target_index) {
  if (output.size() < 2) {
    throw ArgumentError("output vector must have at least 2 elements, got " +
                        std::to_string(output.size()));
  }
  if (target_index < 0 || static_cast<std::size_t>(target_index) >= output.size()) {
    throw ArgumentError("target index " + std::to_string(target_index) +
                        " out of range for vector of length " +
                        std::to_string(output.size()));
  }
  const double target_value = output[target_index];
  for (std::size_t k = 0; k < output.size(); ++k) {
    if (static_cast<int>(k) == target_index) continue;
    if (!(target_value > output[k])) {
      return 0;  // a tie counts as incorrect
    }
  }
  return 1;
}

GroupAccuracyTable group_accuracy_table(const OutputBatch& batch) {
  batch.validate();
  GroupAccuracyTable table;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int correct = accuracy_indicator(batch.outputs[i], batch.targets[i]);
    GroupCount& pair = table.pairs[{batch.demographics[i], batch.targets[i]}];
    pair.correct += correct;
    pair.total += 1;
    GroupCount& marginal = table.demographics[batch.demographics[i]];
    marginal.correct += correct;
    marginal.total += 1;
  }
  return table;
}

double deo(const GroupAccuracyTable& table, int a, int a_prime, int y) {
  return std::abs(table.rate({a, y}) - table.rate({a_prime, y}));
}

namespace {

// Per-class max-min accuracy gaps; equal to the pairwise DEO maximum at each
// class without the quadratic enumeration.
std::vector<double> per_class_gaps(const GroupAccuracyTable& table,
                                   MissingCellPolicy policy) {
  if (table.pairs.empty()) {
    throw EmptyInputError("group accuracy table is empty");
  }
  std::vector<double> gaps;
  for (int y : table.targets()) {
    double lo = 2.0;
    double hi = -1.0;
    int demographics_at_y = 0;
    for (const auto& [key, count] : table.pairs) {
      if (key.target != y) continue;
      ++demographics_at_y;
      lo = std::min(lo, count.rate());
      hi = std::max(hi, count.rate());
    }
    if (demographics_at_y < 2) {
      if (policy == MissingCellPolicy::kSkip) continue;
      throw MissingGroupError(-1, y);
    }
    gaps.push_back(hi - lo);
  }
  if (gaps.empty()) {
    throw MissingGroupError(-1, *table.targets().begin());
  }
  return gaps;
}

}  // namespace

double deo_max(const GroupAccuracyTable& table, MissingCellPolicy policy) {
  const std::vector<double> gaps = per_class_gaps(table, policy);
  return *std::max_element(gaps.begin(), gaps.end());
}

double deo_avg(const GroupAccuracyTable& table, MissingCellPolicy policy) {
  const std::vector<double> gaps = per_class_gaps(table, policy);
  double sum = 0.0;
  for (double gap : gaps) sum += gap;
  return sum / static_cast<double>(gaps.size());
}

double sigma_acc(std::span<const double> per_demographic_rates) {
  if (per_demographic_rates.empty()) {
    throw EmptyInputError("no per-demographic rates given");
  }
  for (double rate : per_demographic_rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
      throw ArgumentError("accuracy rate " + std::to_string(rate) +
                          " outside [0, 1]");
    }
  }
  const double n = static_cast<double>(per_demographic_rates.size());
  double mean = 0.0;
  for (double rate : per_demographic_rates) mean += rate;
  mean /= n;
  double variance = 0.0;
  for (double rate : per_demographic_rates) {
    variance += (rate - mean) * (rate - mean);
  }
  variance /= n;  // population form
  return std::sqrt(variance);
}

MetricsReport compute_report(const OutputBatch& batch, MissingCellPolicy policy) {
  const GroupAccuracyTable table = group_accuracy_table(batch);

  MetricsReport report;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  std::vector<double> rates;
  rates.reserve(table.demographics.size());
  for (const auto& [demographic, count] : table.demographics) {
    report.per_demographic_accuracy[demographic] = count.rate();
    rates.push_back(count.rate());
    correct += count.correct;
    total += count.total;
  }
  report.overall_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  report.sigma_acc = sigma_acc(rates);
  report.deo_max = deo_max(table, policy);
  report.deo_avg = deo_avg(table, policy);
  for (const auto& [key, count] : table.pairs) {
    report.sample_counts[key] = count.total;
  }
  return report;
}

}  // namespace fairbase::metrics
