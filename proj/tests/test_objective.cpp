#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "fairbase/errors.hpp"
#include "fairbase/metrics.hpp"
#include "fairbase/objective.hpp"
#include "test_support.hpp"

using namespace fairbase;
using testsupport::central_difference;
using testsupport::close_rel;
using testsupport::make_batch;

TEST_CASE("largest_non_target excludes the target and breaks ties low") {
  auto r = objective::largest_non_target(std::vector<double>{0.1, 0.7, 0.2}, 1);
  CHECK(r.value == 0.2);
  CHECK(r.index == 2);
  r = objective::largest_non_target(std::vector<double>{0.4, 0.4, 0.2}, 0);
  CHECK(r.value == 0.4);
  CHECK(r.index == 1);
  r = objective::largest_non_target(std::vector<double>{0.3, 0.3, 0.3}, 2);
  CHECK(r.value == 0.3);
  CHECK(r.index == 0);  // tie broken by lowest index
  CHECK_THROWS_AS(objective::largest_non_target(std::vector<double>{1.0}, 0),
                  ArgumentError);
  CHECK_THROWS_AS(objective::largest_non_target(std::vector<double>{1.0, 2.0}, 5),
                  ArgumentError);
}

TEST_CASE("soft accuracy value, limits and stability") {
  CHECK(objective::soft_accuracy(0.3, 0.3, 7.0) == 0.5);
  CHECK(objective::soft_accuracy(0.6, 0.4, 10.0) ==
        doctest::Approx(0.880797).epsilon(1e-6));
  CHECK(objective::soft_accuracy(0.9, 0.1, 1000.0) == doctest::Approx(1.0).epsilon(1e-9));
  // extreme arguments stay in [0, 1] without overflow
  CHECK(objective::soft_accuracy(1.0, 0.0, 1e4) == 1.0);
  CHECK(objective::soft_accuracy(0.0, 1.0, 1e4) == 0.0);
  CHECK(std::isfinite(objective::soft_accuracy(-500.0, 500.0, 10.0)));
}

TEST_CASE("soft accuracy complement identity and monotonicity") {
  std::mt19937_64 engine(5);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  double previous = -1.0;
  for (int i = 0; i < 50; ++i) {
    const double a = value(engine);
    const double b = value(engine);
    const double sum =
        objective::soft_accuracy(a, b, 10.0) + objective::soft_accuracy(b, a, 10.0);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  for (double margin = -1.0; margin <= 1.0; margin += 0.05) {
    const double s = objective::soft_accuracy(margin, 0.0, 5.0);
    CHECK(s > previous);  // strictly increasing in the margin
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    previous = s;
  }
}

TEST_CASE("kappa limit: soft accuracy approaches the indicator") {
  std::mt19937_64 engine(17);
  std::uniform_real_distribution<double> margin_dist(0.02, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double margin = margin_dist(engine);
    const double kappa = 20.0 / margin + 5.0;  // kappa * margin >= 20
    const double above = objective::soft_accuracy(margin, 0.0, kappa);
    const double below = objective::soft_accuracy(0.0, margin, kappa);
    CHECK(std::abs(above - 1.0) <= 1e-8);
    CHECK(std::abs(below - 0.0) <= 1e-8);
    // the bound itself: |soft - indicator| <= exp(-kappa * margin), up to the
    // ulp-level rounding of the saturated branch
    CHECK(std::abs(above - 1.0) <= std::exp(-kappa * margin) + 1e-14);
    CHECK(std::abs(below) <= std::exp(-kappa * margin) + 1e-14);
  }
}

TEST_CASE("soft accuracy gradient: worked values, saturation, finite differences") {
  const auto tie = objective::soft_accuracy_grad(0.2, 0.2, 10.0);
  CHECK(tie.d_target == doctest::Approx(2.5));
  CHECK(tie.d_rival == doctest::Approx(-2.5));

  const auto saturated = objective::soft_accuracy_grad(5.0, 0.0, 10.0);  // margin 50
  CHECK(std::abs(saturated.d_target) <= 1e-15);
  CHECK(std::abs(saturated.d_rival) <= 1e-15);

  std::mt19937_64 engine(23);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double y_t = value(engine);
    const double y_m = value(engine);
    const double kappa = 1.0 + 9.0 * std::abs(value(engine));
    const auto grad = objective::soft_accuracy_grad(y_t, y_m, kappa);
    const double h = 1e-6;
    const double fd_t = (objective::soft_accuracy(y_t + h, y_m, kappa) -
                         objective::soft_accuracy(y_t - h, y_m, kappa)) /
                        (2.0 * h);
    const double fd_m = (objective::soft_accuracy(y_t, y_m + h, kappa) -
                         objective::soft_accuracy(y_t, y_m - h, kappa)) /
                        (2.0 * h);
    CHECK(close_rel(grad.d_target, fd_t, 1e-5));
    CHECK(close_rel(grad.d_rival, fd_m, 1e-5));
    CHECK(grad.d_rival == -grad.d_target);
  }
}

TEST_CASE("sigma_acc_soft: degenerate and worked cases") {
  objective::ObjectiveConfig config;
  config.kappa = 1.0;
  config.surrogate_input = objective::SurrogateInput::kRawLogits;

  // single demographic: zero value, zero gradients, exactly
  std::mt19937_64 engine(31);
  OutputBatch single = testsupport::random_batch(engine, 10, 3, 1);
  const auto degenerate = objective::sigma_acc_soft(single, config);
  CHECK(degenerate.value == 0.0);
  for (const auto& row : degenerate.grad_outputs) {
    for (double g : row) CHECK(g == 0.0);
  }

  // two demographics with per-group mean soft accuracies 0.9 and 0.7
  config.sigma_epsilon = 1e-30;
  const double z_09 = std::log(9.0);        // sigmoid(z) = 0.9
  const double z_07 = std::log(7.0 / 3.0);  // sigmoid(z) = 0.7
  const OutputBatch pair = make_batch({{z_09, 0.0}, {z_07, 0.0}}, {0, 0}, {0, 1});
  const auto sigma = objective::sigma_acc_soft(pair, config);
  CHECK(sigma.value == doctest::Approx(0.1).epsilon(1e-9));

  // declared-but-absent demographic is a hard error
  CHECK_THROWS_AS(objective::sigma_acc_soft(pair, config, 3), DegenerateGroupError);
  CHECK_NOTHROW(objective::sigma_acc_soft(pair, config, 2));

  OutputBatch empty;
  CHECK_THROWS_AS(objective::sigma_acc_soft(empty, config), EmptyInputError);

  objective::ObjectiveConfig bad = config;
  bad.kappa = 0.0;
  CHECK_THROWS_AS(objective::sigma_acc_soft(pair, bad), ArgumentError);
}

namespace {

void check_sigma_gradients(objective::SurrogateInput mode, std::uint64_t seed) {
  objective::ObjectiveConfig config;
  config.kappa = 4.0;
  config.surrogate_input = mode;
  std::mt19937_64 engine(seed);
  for (int trial = 0; trial < 50; ++trial) {
    OutputBatch batch = testsupport::random_batch(engine, 12, 3, 2);
    // keep the group-mean variance away from the sqrt smoothing region where
    // curvature would dominate the finite-difference estimate
    while (objective::sigma_acc_soft(batch, config).value < 5e-4) {
      batch = testsupport::random_batch(engine, 12, 3, 2);
    }
    const auto analytic = objective::sigma_acc_soft(batch, config);
    auto value_of = [&](const std::vector<std::vector<double>>& outputs) {
      OutputBatch probe = batch;
      probe.outputs = outputs;
      return objective::sigma_acc_soft(probe, config).value;
    };
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t k = 0; k < batch.outputs[i].size(); ++k) {
        const double fd = central_difference(value_of, batch.outputs, i, k);
        CHECK(close_rel(analytic.grad_outputs[i][k], fd, 1e-4));
      }
    }
  }
}

}  // namespace

TEST_CASE("sigma_acc_soft gradients match finite differences in both modes") {
  check_sigma_gradients(objective::SurrogateInput::kRawLogits, 101);
  check_sigma_gradients(objective::SurrogateInput::kSoftmaxProbabilities, 202);
}

TEST_CASE("cross entropy: worked values and finite differences") {
  const OutputBatch uniform = make_batch({{1.0, 1.0, 1.0, 1.0}}, {2}, {0});
  CHECK(objective::cross_entropy(uniform).value ==
        doctest::Approx(1.386294).epsilon(1e-6));

  const OutputBatch half = make_batch({{0.0, 0.0}}, {0}, {0});
  CHECK(objective::cross_entropy(half).value ==
        doctest::Approx(0.693147).epsilon(1e-6));

  const OutputBatch dominant = make_batch({{50.0, 0.0}}, {0}, {0});
  const auto saturated = objective::cross_entropy(dominant);
  CHECK(saturated.value < 1e-20);
  CHECK(std::abs(saturated.grad_logits[0][0]) <= 1e-20);
  CHECK(std::abs(saturated.grad_logits[0][1]) <= 1e-20);

  OutputBatch empty;
  CHECK_THROWS_AS(objective::cross_entropy(empty), EmptyInputError);

  std::mt19937_64 engine(303);
  for (int trial = 0; trial < 50; ++trial) {
    OutputBatch batch = testsupport::random_batch(engine, 8, 4, 2);
    const auto analytic = objective::cross_entropy(batch);
    auto value_of = [&](const std::vector<std::vector<double>>& outputs) {
      OutputBatch probe = batch;
      probe.outputs = outputs;
      return objective::cross_entropy(probe).value;
    };
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t k = 0; k < batch.outputs[i].size(); ++k) {
        const double fd = central_difference(value_of, batch.outputs, i, k);
        CHECK(close_rel(analytic.grad_logits[i][k], fd, 1e-4));
      }
    }
  }
}

TEST_CASE("total loss composition and degenerate gamma") {
  std::mt19937_64 engine(404);
  OutputBatch batch = testsupport::random_batch(engine, 10, 3, 2);

  objective::ObjectiveConfig config;
  config.gamma = 0.0;
  const auto plain = objective::total_loss(batch, config);
  const auto ce = objective::cross_entropy(batch);
  CHECK(plain.total == ce.value);
  CHECK(plain.sigma_soft_component == 0.0);
  CHECK(plain.grad_outputs == ce.grad_logits);

  config.gamma = 1.0;
  OutputBatch one_group = batch;
  for (int& a : one_group.demographics) a = 0;
  const auto lonely = objective::total_loss(one_group, config);
  CHECK(lonely.total == lonely.ce_component);  // sigma term is exactly zero

  config.gamma = 0.7;
  config.kappa = 5.0;
  const auto mixed = objective::total_loss(batch, config);
  CHECK(std::abs(mixed.total -
                 (mixed.ce_component + config.gamma * mixed.sigma_soft_component)) <=
        1e-12 * std::max(1.0, std::abs(mixed.total)));
  CHECK(mixed.sigma_soft_component > 0.0);
}

TEST_CASE("total loss gradients match finite differences in both modes") {
  for (const auto mode : {objective::SurrogateInput::kSoftmaxProbabilities,
                          objective::SurrogateInput::kRawLogits}) {
    objective::ObjectiveConfig config;
    config.gamma = 0.8;
    config.kappa = 4.0;
    config.surrogate_input = mode;
    std::mt19937_64 engine(mode == objective::SurrogateInput::kRawLogits ? 505 : 606);
    for (int trial = 0; trial < 50; ++trial) {
      OutputBatch batch = testsupport::random_batch(engine, 10, 3, 2);
      while (objective::sigma_acc_soft(batch, config).value < 5e-4) {
        batch = testsupport::random_batch(engine, 10, 3, 2);
      }
      const auto analytic = objective::total_loss(batch, config);
      auto value_of = [&](const std::vector<std::vector<double>>& outputs) {
        OutputBatch probe = batch;
        probe.outputs = outputs;
        return objective::total_loss(probe, config).total;
      };
      for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t k = 0; k < batch.outputs[i].size(); ++k) {
          const double fd = central_difference(value_of, batch.outputs, i, k);
          CHECK(close_rel(analytic.grad_outputs[i][k], fd, 1e-4));
        }
      }
    }
  }
}

TEST_CASE("shift invariance: adding a constant per sample changes nothing") {
  std::mt19937_64 engine(707);
  OutputBatch batch = testsupport::random_batch(engine, 12, 3, 2);
  OutputBatch shifted = batch;
  for (auto& row : shifted.outputs) {
    for (double& v : row) v += 3.75;
  }

  objective::ObjectiveConfig config;
  config.kappa = 6.0;
  for (const auto mode : {objective::SurrogateInput::kRawLogits,
                          objective::SurrogateInput::kSoftmaxProbabilities}) {
    config.surrogate_input = mode;
    const double before = objective::sigma_acc_soft(batch, config).value;
    const double after = objective::sigma_acc_soft(shifted, config).value;
    CHECK(std::abs(before - after) <= 1e-12);
  }
  CHECK(std::abs(objective::cross_entropy(batch).value -
                 objective::cross_entropy(shifted).value) <= 1e-12);
  // raw margins are shift-invariant too
  CHECK(objective::soft_accuracy(0.9, 0.4, 8.0) ==
        objective::soft_accuracy(0.9 + 2.0, 0.4 + 2.0, 8.0));
}

TEST_CASE("sigma_acc_soft converges to sigma_acc as kappa grows") {
  std::mt19937_64 engine(808);
  objective::ObjectiveConfig config;
  config.kappa = 1000.0;
  config.surrogate_input = objective::SurrogateInput::kRawLogits;
  for (int trial = 0; trial < 20; ++trial) {
    // margin-bounded batch: |y_t - y_m| >= 0.05 for every sample
    OutputBatch batch = testsupport::random_batch(engine, 40, 3, 3, 0.05);
    const double soft = objective::sigma_acc_soft(batch, config).value;
    const auto report =
        metrics::compute_report(batch, metrics::MissingCellPolicy::kSkip);
    CHECK(std::abs(soft - report.sigma_acc) < 1e-3);
  }
}
