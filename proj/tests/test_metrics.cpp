#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "fairbase/errors.hpp"
#include "fairbase/metrics.hpp"
#include "test_support.hpp"

using namespace fairbase;
using testsupport::make_batch;

namespace {

// Batch with one sample per (demographic, class, correct?) request; outputs
// are 2-of-N vectors where correctness is controlled exactly.
OutputBatch batch_from_counts(
    const std::vector<std::tuple<int, int, int, int>>& cells, int classes) {
  OutputBatch batch;
  for (const auto& [demographic, target, correct, total] : cells) {
    for (int i = 0; i < total; ++i) {
      std::vector<double> output(static_cast<std::size_t>(classes), 0.0);
      if (i < correct) {
        output[static_cast<std::size_t>(target)] = 1.0;
      } else {
        output[static_cast<std::size_t>((target + 1) % classes)] = 1.0;
      }
      batch.outputs.push_back(std::move(output));
      batch.targets.push_back(target);
      batch.demographics.push_back(demographic);
    }
  }
  return batch;
}

}  // namespace

TEST_CASE("accuracy indicator follows strict-majority semantics") {
  CHECK(metrics::accuracy_indicator(std::vector<double>{0.1, 0.7, 0.2}, 1) == 1);
  CHECK(metrics::accuracy_indicator(std::vector<double>{0.5, 0.5}, 0) == 0);  // tie
  CHECK(metrics::accuracy_indicator(std::vector<double>{0.9, 0.05, 0.05}, 2) == 0);
  CHECK_THROWS_AS(metrics::accuracy_indicator(std::vector<double>{1.0}, 0),
                  ArgumentError);
  CHECK_THROWS_AS(metrics::accuracy_indicator(std::vector<double>{0.1, 0.2}, 2),
                  ArgumentError);
  CHECK_THROWS_AS(metrics::accuracy_indicator(std::vector<double>{0.1, 0.2}, -1),
                  ArgumentError);
}

TEST_CASE("group accuracy table counts per pair and per demographic") {
  // group 0: 3/4 correct, group 1: 1/2 correct, single class 0
  const OutputBatch batch = batch_from_counts({{0, 0, 3, 4}, {1, 0, 1, 2}}, 2);
  const metrics::GroupAccuracyTable table = metrics::group_accuracy_table(batch);
  CHECK(table.demographics.at(0).rate() == doctest::Approx(0.75));
  CHECK(table.demographics.at(1).rate() == doctest::Approx(0.5));
  CHECK(table.pairs.at({0, 0}).total == 4);
  CHECK(table.pairs.at({1, 0}).correct == 1);
  CHECK(table.has({0, 0}));
  CHECK_FALSE(table.has({0, 1}));  // vacuous pair gets no entry
  CHECK_THROWS_AS(table.rate({0, 1}), MissingGroupError);

  OutputBatch empty;
  CHECK_THROWS_AS(metrics::group_accuracy_table(empty), EmptyInputError);

  const OutputBatch perfect = batch_from_counts({{0, 0, 4, 4}}, 2);
  const auto perfect_table = metrics::group_accuracy_table(perfect);
  CHECK(perfect_table.pairs.at({0, 0}).rate() == 1.0);
  CHECK(perfect_table.pairs.at({0, 0}).total == 4);
}

TEST_CASE("deo is the absolute per-class accuracy gap") {
  const OutputBatch batch = batch_from_counts(
      {{0, 0, 4, 5}, {1, 0, 3, 5}, {0, 1, 1, 1}, {1, 1, 0, 1}}, 2);
  const auto table = metrics::group_accuracy_table(batch);
  CHECK(metrics::deo(table, 0, 1, 0) == doctest::Approx(0.2));
  CHECK(metrics::deo(table, 0, 0, 0) == 0.0);
  CHECK(metrics::deo(table, 0, 1, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(metrics::deo(table, 0, 2, 0), MissingGroupError);
}

TEST_CASE("deo_max and deo_avg on the worked 2x2 table") {
  // rates {(0,0):0.9, (1,0):0.7, (0,1):0.8, (1,1):0.8}
  const OutputBatch batch = batch_from_counts(
      {{0, 0, 9, 10}, {1, 0, 7, 10}, {0, 1, 8, 10}, {1, 1, 8, 10}}, 2);
  const auto table = metrics::group_accuracy_table(batch);
  CHECK(metrics::deo_max(table) == doctest::Approx(0.2));
  CHECK(metrics::deo_avg(table) == doctest::Approx(0.1));
}

TEST_CASE("deo_max with three demographics at one class") {
  const OutputBatch batch = batch_from_counts(
      {{0, 0, 2, 10}, {1, 0, 5, 10}, {2, 0, 9, 10}}, 2);
  const auto table = metrics::group_accuracy_table(batch);
  CHECK(metrics::deo_max(table) == doctest::Approx(0.7));
  // single class present: the average collapses to the maximum
  CHECK(metrics::deo_avg(table) == metrics::deo_max(table));
}

TEST_CASE("deo aggregates on identical rates are zero") {
  const OutputBatch batch = batch_from_counts(
      {{0, 0, 3, 4}, {1, 0, 3, 4}, {0, 1, 3, 4}, {1, 1, 3, 4}}, 2);
  const auto table = metrics::group_accuracy_table(batch);
  CHECK(metrics::deo_max(table) == 0.0);
  CHECK(metrics::deo_avg(table) == 0.0);
}

TEST_CASE("missing cell policy: error by default, skip on request") {
  // class 1 is only represented for demographic 0
  const OutputBatch batch = batch_from_counts(
      {{0, 0, 4, 5}, {1, 0, 2, 5}, {0, 1, 3, 5}}, 2);
  const auto table = metrics::group_accuracy_table(batch);
  CHECK_THROWS_AS(metrics::deo_max(table), MissingGroupError);
  CHECK_THROWS_AS(metrics::deo_avg(table), MissingGroupError);
  CHECK(metrics::deo_max(table, metrics::MissingCellPolicy::kSkip) ==
        doctest::Approx(0.4));
  CHECK(metrics::deo_avg(table, metrics::MissingCellPolicy::kSkip) ==
        doctest::Approx(0.4));

  // every class degenerate: skipping everything is still an error
  const OutputBatch lonely = batch_from_counts({{0, 0, 1, 2}, {0, 1, 1, 2}}, 2);
  CHECK_THROWS_AS(metrics::deo_max(metrics::group_accuracy_table(lonely),
                                   metrics::MissingCellPolicy::kSkip),
                  MissingGroupError);
}

TEST_CASE("sigma_acc is the population standard deviation") {
  CHECK(metrics::sigma_acc(std::vector<double>{0.9, 0.9, 0.9}) == 0.0);
  CHECK(metrics::sigma_acc(std::vector<double>{1.0, 0.0}) == doctest::Approx(0.5));
  CHECK(metrics::sigma_acc(std::vector<double>{0.8, 0.6, 0.7}) ==
        doctest::Approx(0.081650).epsilon(1e-6));
  CHECK(metrics::sigma_acc(std::vector<double>{0.42}) == 0.0);
  CHECK_THROWS_AS(metrics::sigma_acc(std::vector<double>{}), EmptyInputError);
  CHECK_THROWS_AS(metrics::sigma_acc(std::vector<double>{1.2}), ArgumentError);
  CHECK_THROWS_AS(metrics::sigma_acc(std::vector<double>{-0.1}), ArgumentError);
}

TEST_CASE("compute_report aggregates and matches the single-metric calls") {
  const OutputBatch batch = batch_from_counts({{0, 0, 3, 4}, {1, 0, 1, 2}}, 2);
  const metrics::MetricsReport report = metrics::compute_report(batch);
  CHECK(report.sigma_acc == doctest::Approx(0.125));
  CHECK(report.per_demographic_accuracy.at(0) == doctest::Approx(0.75));
  CHECK(report.per_demographic_accuracy.at(1) == doctest::Approx(0.5));
  CHECK(report.overall_accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(report.sample_counts.at({0, 0}) == 4);

  // perfect classifier: every fairness metric collapses to zero
  const OutputBatch perfect =
      batch_from_counts({{0, 0, 4, 4}, {1, 0, 4, 4}, {0, 1, 4, 4}, {1, 1, 4, 4}}, 2);
  const auto clean = metrics::compute_report(perfect);
  CHECK(clean.overall_accuracy == 1.0);
  CHECK(clean.sigma_acc == 0.0);
  CHECK(clean.deo_max == 0.0);
  CHECK(clean.deo_avg == 0.0);

  // cross-check against the individual operations on a random batch
  std::mt19937_64 engine(99);
  const OutputBatch random = testsupport::random_batch(engine, 60, 3, 3);
  const auto table = metrics::group_accuracy_table(random);
  const auto r = metrics::compute_report(random, metrics::MissingCellPolicy::kSkip);
  CHECK(r.deo_max == metrics::deo_max(table, metrics::MissingCellPolicy::kSkip));
  CHECK(r.deo_avg == metrics::deo_avg(table, metrics::MissingCellPolicy::kSkip));
  std::vector<double> rates;
  for (const auto& [a, count] : table.demographics) rates.push_back(count.rate());
  CHECK(r.sigma_acc == metrics::sigma_acc(rates));
}

TEST_CASE("deo aggregates match brute-force pairwise enumeration") {
  std::mt19937_64 engine(4242);
  std::uniform_int_distribution<int> size_dist(2, 4);
  std::uniform_int_distribution<int> total_dist(1, 9);
  for (int trial = 0; trial < 200; ++trial) {
    const int demographics = size_dist(engine);
    const int classes = size_dist(engine);
    std::vector<std::tuple<int, int, int, int>> cells;
    for (int a = 0; a < demographics; ++a) {
      for (int y = 0; y < classes; ++y) {
        const int total = total_dist(engine);
        std::uniform_int_distribution<int> correct_dist(0, total);
        cells.push_back({a, y, correct_dist(engine), total});
      }
    }
    const auto table =
        metrics::group_accuracy_table(batch_from_counts(cells, classes));

    double brute_max = 0.0;
    double brute_sum = 0.0;
    for (int y = 0; y < classes; ++y) {
      double class_max = 0.0;
      for (int a = 0; a < demographics; ++a) {
        for (int a2 = 0; a2 < demographics; ++a2) {
          class_max = std::max(class_max, metrics::deo(table, a, a2, y));
        }
      }
      brute_max = std::max(brute_max, class_max);
      brute_sum += class_max;
    }
    CHECK(std::abs(metrics::deo_max(table) - brute_max) <= 1e-12);
    CHECK(std::abs(metrics::deo_avg(table) - brute_sum / classes) <= 1e-12);
    CHECK(metrics::deo_avg(table) <= metrics::deo_max(table) + 1e-15);
    CHECK(metrics::deo_max(table) <= 1.0);
  }
}

TEST_CASE("report is bit-identical under sample permutation") {
  std::mt19937_64 engine(7);
  OutputBatch batch = testsupport::random_batch(engine, 48, 3, 2);
  const auto before = metrics::compute_report(batch);

  std::vector<std::size_t> order(batch.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), engine);
  OutputBatch shuffled;
  for (std::size_t i : order) {
    shuffled.outputs.push_back(batch.outputs[i]);
    shuffled.targets.push_back(batch.targets[i]);
    shuffled.demographics.push_back(batch.demographics[i]);
  }
  const auto after = metrics::compute_report(shuffled);
  CHECK(after.overall_accuracy == before.overall_accuracy);
  CHECK(after.sigma_acc == before.sigma_acc);
  CHECK(after.deo_max == before.deo_max);
  CHECK(after.deo_avg == before.deo_avg);
  CHECK(after.per_demographic_accuracy == before.per_demographic_accuracy);
}

TEST_CASE("relabeling demographics permutes per-group rates only") {
  std::mt19937_64 engine(13);
  OutputBatch batch = testsupport::random_batch(engine, 60, 3, 3);
  const auto before = metrics::compute_report(batch);

  const int relabel[3] = {2, 0, 1};
  OutputBatch relabeled = batch;
  for (int& a : relabeled.demographics) a = relabel[a];
  const auto after = metrics::compute_report(relabeled);

  CHECK(after.overall_accuracy == before.overall_accuracy);
  CHECK(std::abs(after.sigma_acc - before.sigma_acc) <= 1e-12);
  CHECK(std::abs(after.deo_max - before.deo_max) <= 1e-12);
  CHECK(std::abs(after.deo_avg - before.deo_avg) <= 1e-12);
  for (const auto& [a, rate] : before.per_demographic_accuracy) {
    CHECK(after.per_demographic_accuracy.at(relabel[a]) == rate);
  }
}
