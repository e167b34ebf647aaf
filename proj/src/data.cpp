#include "fairbase/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

#include "fairbase/errors.hpp"
#include "fairbase/io_util.hpp"
#include "rng_util.hpp"

namespace fairbase::data {

namespace {

std::string append_provenance(const std::string& base, const std::string& note) {
  return base.empty() ? note : base + " | " + note;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

int parse_label(std::string_view field, const std::filesystem::path& path,
                std::size_t line, const char* what) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || value < 0) {
    throw ParseError(path.string(), line,
                     std::string("invalid ") + what + " '" + std::string(field) + "'");
  }
  return value;
}

double parse_feature(std::string_view field, const std::filesystem::path& path,
                     std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(path.string(), line,
                     "invalid feature value '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::map<metrics::GroupKey, std::int64_t> Dataset::pair_counts() const {
  std::map<metrics::GroupKey, std::int64_t> counts;
  for (const LabeledSample& sample : samples) {
    ++counts[{sample.demographic, sample.target}];
  }
  return counts;
}

void Dataset::validate() const {
  if (num_classes < 2) {
    throw ArgumentError("dataset must declare at least 2 classes, got " +
                        std::to_string(num_classes));
  }
  if (num_demographics < 1) {
    throw ArgumentError("dataset must declare at least 1 demographic, got " +
                        std::to_string(num_demographics));
  }
  const int dim = feature_dim();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LabeledSample& sample = samples[i];
    if (sample.target < 0 || sample.target >= num_classes) {
      throw ArgumentError("sample " + std::to_string(i) + " target " +
                          std::to_string(sample.target) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
    if (sample.demographic < 0 || sample.demographic >= num_demographics) {
      throw ArgumentError("sample " + std::to_string(i) + " demographic " +
                          std::to_string(sample.demographic) + " outside [0, " +
                          std::to_string(num_demographics) + ")");
    }
    if (sample.features.empty()) {
      throw ArgumentError("sample " + std::to_string(i) + " has no features");
    }
    if (static_cast<int>(sample.features.size()) != dim) {
      throw ArgumentError("sample " + std::to_string(i) + " has " +
                          std::to_string(sample.features.size()) +
                          " features, expected " + std::to_string(dim));
    }
  }
}

Dataset load_csv(const std::filesystem::path& path, std::optional<int> num_classes,
                 std::optional<int> num_demographics) {
  if (num_classes && *num_classes < 2) {
    throw ArgumentError("num_classes must be at least 2");
  }
  if (num_demographics && *num_demographics < 1) {
    throw ArgumentError("num_demographics must be at least 1");
  }
  const std::string content = io::read_file(path);

  std::vector<std::string_view> lines;
  {
    std::string_view rest = content;
    while (!rest.empty()) {
      std::size_t newline = rest.find('\n');
      std::string_view line =
          newline == std::string_view::npos ? rest : rest.substr(0, newline);
      if (line.ends_with('\r')) line.remove_suffix(1);
      lines.push_back(line);
      if (newline == std::string_view::npos) break;
      rest.remove_prefix(newline + 1);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
  }
  if (lines.empty()) {
    throw ParseError(path.string(), 1, "missing header row");
  }

  const std::vector<std::string_view> header = split_line(lines[0]);
  if (header.size() < 3 || header[0] != "protected" || header[1] != "target") {
    throw ParseError(path.string(), 1,
                     "header must start with 'protected,target' followed by feature "
                     "columns");
  }
  const int dim = static_cast<int>(header.size()) - 2;
  for (int d = 0; d < dim; ++d) {
    const std::string expected = "f" + std::to_string(d);
    if (header[static_cast<std::size_t>(d) + 2] != expected) {
      throw ParseError(path.string(), 1,
                       "feature column " + std::to_string(d) + " must be named '" +
                           expected + "'");
    }
  }

  Dataset dataset;
  dataset.provenance = "loaded from " + path.filename().string();
  int max_target = -1;
  int max_demographic = -1;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const std::size_t line_number = row + 1;
    if (lines[row].empty()) {
      throw ParseError(path.string(), line_number, "empty row");
    }
    const std::vector<std::string_view> fields = split_line(lines[row]);
    if (fields.size() != header.size()) {
      throw ParseError(path.string(), line_number,
                       "expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()));
    }
    LabeledSample sample;
    sample.demographic = parse_label(fields[0], path, line_number, "protected value");
    sample.target = parse_label(fields[1], path, line_number, "target value");
    if (num_demographics && sample.demographic >= *num_demographics) {
      throw ParseError(path.string(), line_number,
                       "protected value " + std::to_string(sample.demographic) +
                           " outside declared range [0, " +
                           std::to_string(*num_demographics) + ")");
    }
    if (num_classes && sample.target >= *num_classes) {
      throw ParseError(path.string(), line_number,
                       "target value " + std::to_string(sample.target) +
                           " outside declared range [0, " + std::to_string(*num_classes) +
                           ")");
    }
    sample.features.reserve(dim);
    for (int d = 0; d < dim; ++d) {
      sample.features.push_back(
          parse_feature(fields[static_cast<std::size_t>(d) + 2], path, line_number));
    }
    max_target = std::max(max_target, sample.target);
    max_demographic = std::max(max_demographic, sample.demographic);
    dataset.samples.push_back(std::move(sample));
  }

  dataset.num_classes = num_classes.value_or(max_target + 1);
  dataset.num_demographics = num_demographics.value_or(max_demographic + 1);
  dataset.validate();
  return dataset;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::string out = "protected,target";
  for (int d = 0; d < dataset.feature_dim(); ++d) {
    out += ",f" + std::to_string(d);
  }
  out += '\n';
  for (const LabeledSample& sample : dataset.samples) {
    out += std::to_string(sample.demographic);
    out += ',';
    out += std::to_string(sample.target);
    for (double value : sample.features) {
      out += ',';
      out += io::double_repr(value);
    }
    out += '\n';
  }
  io::atomic_write(path, out);
}

void save_metadata(const Dataset& dataset, const std::filesystem::path& path,
                   const nlohmann::json& extra) {
  nlohmann::json meta{
      {"schema_version", 1},
      {"num_samples", dataset.size()},
      {"num_classes", dataset.num_classes},
      {"num_demographics", dataset.num_demographics},
      {"feature_dim", dataset.feature_dim()},
      {"provenance", dataset.provenance},
  };
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [key, count] : dataset.pair_counts()) {
    counts.push_back({{"protected", key.demographic},
                      {"target", key.target},
                      {"count", count}});
  }
  meta["pair_counts"] = std::move(counts);
  for (const auto& [key, value] : extra.items()) {
    meta[key] = value;
  }
  io::atomic_write(path, meta.dump(2) + "\n");
}

nlohmann::json load_metadata(const std::filesystem::path& path) {
  const std::string content = io::read_file(path);
  nlohmann::json meta = nlohmann::json::parse(content, nullptr, false);
  if (meta.is_discarded()) {
    throw ParseError(path.string(), 1, "invalid JSON");
  }
  return meta;
}

namespace {

// Integer apportionment of total over weights by largest remainder; ties go
// to the earlier cell.
std::vector<std::int64_t> apportion(std::int64_t total, const std::vector<double>& weights) {
  double weight_sum = 0.0;
  for (double w : weights) weight_sum += w;
  std::vector<std::int64_t> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    const double ideal = static_cast<double>(total) * weights[i] / weight_sum;
    counts[i] = static_cast<std::int64_t>(std::floor(ideal));
    assigned += counts[i];
    remainders.push_back({ideal - std::floor(ideal), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::int64_t leftover = total - assigned;
  for (std::size_t i = 0; i < remainders.size() && leftover > 0; ++i, --leftover) {
    ++counts[remainders[i].second];
  }
  return counts;
}

std::vector<double> class_centroid(int target, int num_classes, int feature_dim,
                                   double separation) {
  std::vector<double> centroid(feature_dim, 0.0);
  if (feature_dim == 1) {
    centroid[0] = separation * target;
    return centroid;
  }
  // Equally spaced on a circle; the radius makes adjacent centroids exactly
  // `separation` apart.
  const double radius =
      separation / (2.0 * std::sin(std::numbers::pi / num_classes));
  const double angle = 2.0 * std::numbers::pi * target / num_classes;
  centroid[0] = radius * std::cos(angle);
  centroid[1] = radius * std::sin(angle);
  return centroid;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec,
                           const std::optional<Matrix>& pair_distribution) {
  if (spec.num_samples <= 0) {
    throw ArgumentError("num_samples must be positive");
  }
  if (spec.num_classes < 2) {
    throw ArgumentError("num_classes must be at least 2");
  }
  if (spec.num_demographics < 1) {
    throw ArgumentError("num_demographics must be at least 1");
  }
  if (spec.feature_dim < 1) {
    throw ArgumentError("feature_dim must be at least 1");
  }
  if (!(spec.group_separation >= 0.0)) {
    throw ArgumentError("group_separation must be non-negative");
  }
  auto check_per_demographic = [&](const std::vector<double>& values, const char* name,
                                   double minimum) {
    if (!values.empty() &&
        static_cast<int>(values.size()) != spec.num_demographics) {
      throw ArgumentError(std::string(name) + " must have one entry per demographic");
    }
    for (double v : values) {
      if (!(v >= minimum) || !std::isfinite(v)) {
        throw ArgumentError(std::string(name) + " entries must be finite and >= " +
                            io::double_repr(minimum));
      }
    }
  };
  check_per_demographic(spec.demographic_noise, "demographic_noise", 0.0);
  check_per_demographic(spec.demographic_shift, "demographic_shift",
                        -std::numeric_limits<double>::infinity());

  const std::size_t num_pairs =
      static_cast<std::size_t>(spec.num_classes) * spec.num_demographics;
  std::vector<double> weights(num_pairs, 1.0);
  if (pair_distribution) {
    if (pair_distribution->size() != static_cast<std::size_t>(spec.num_classes)) {
      throw ArgumentError("pair_distribution must have one row per class");
    }
    double peak = 0.0;
    for (int y = 0; y < spec.num_classes; ++y) {
      const auto& row = (*pair_distribution)[y];
      if (row.size() != static_cast<std::size_t>(spec.num_demographics)) {
        throw ArgumentError("pair_distribution rows must have one entry per demographic");
      }
      for (int a = 0; a < spec.num_demographics; ++a) {
        if (!(row[a] >= 0.0 && row[a] <= 1.0)) {
          throw ArgumentError("pair_distribution entries must lie in [0, 1]");
        }
        weights[static_cast<std::size_t>(y) * spec.num_demographics + a] = row[a];
        peak = std::max(peak, row[a]);
      }
    }
    if (peak != 1.0) {
      throw ArgumentError("pair_distribution max entry must be 1");
    }
  }
  const std::vector<std::int64_t> counts = apportion(spec.num_samples, weights);

  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(spec.feature_dim));
  std::mt19937_64 engine(spec.seed);
  rng::Gaussian gaussian;

  Dataset dataset;
  dataset.num_classes = spec.num_classes;
  dataset.num_demographics = spec.num_demographics;
  dataset.samples.reserve(spec.num_samples);
  for (int y = 0; y < spec.num_classes; ++y) {
    const std::vector<double> centroid =
        class_centroid(y, spec.num_classes, spec.feature_dim, spec.group_separation);
    for (int a = 0; a < spec.num_demographics; ++a) {
      const double noise =
          spec.demographic_noise.empty() ? 1.0 : spec.demographic_noise[a];
      const double shift =
          (spec.demographic_shift.empty() ? 0.0 : spec.demographic_shift[a]) *
          inv_sqrt_dim;
      const std::int64_t count =
          counts[static_cast<std::size_t>(y) * spec.num_demographics + a];
      for (std::int64_t i = 0; i < count; ++i) {
        LabeledSample sample;
        sample.target = y;
        sample.demographic = a;
        sample.features.resize(spec.feature_dim);
        for (int d = 0; d < spec.feature_dim; ++d) {
          sample.features[d] = centroid[d] + shift + noise * gaussian(engine);
        }
        dataset.samples.push_back(std::move(sample));
      }
    }
  }
  std::ostringstream provenance;
  provenance << "synthetic seed=" << spec.seed << " n=" << spec.num_samples
             << " classes=" << spec.num_classes
             << " demographics=" << spec.num_demographics << " dim=" << spec.feature_dim;
  dataset.provenance = provenance.str();
  return dataset;
}

Dataset oversample_balance(const Dataset& dataset, std::uint64_t seed) {
  dataset.validate();
  if (dataset.samples.empty()) {
    throw EmptyInputError("cannot balance an empty dataset");
  }
  std::map<metrics::GroupKey, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    members[{dataset.samples[i].demographic, dataset.samples[i].target}].push_back(i);
  }
  std::size_t max_count = 0;
  for (const auto& [key, indices] : members) {
    max_count = std::max(max_count, indices.size());
  }

  Dataset balanced = dataset;
  std::mt19937_64 engine(seed);
  for (const auto& [key, indices] : members) {
    for (std::size_t extra = indices.size(); extra < max_count; ++extra) {
      const std::size_t pick = indices[rng::pick_index(engine, indices.size())];
      balanced.samples.push_back(dataset.samples[pick]);
    }
  }
  balanced.provenance = append_provenance(
      dataset.provenance, "oversampled seed=" + std::to_string(seed));
  return balanced;
}

Matrix skew_matrix(const SkewSpec& spec) {
  if (!(spec.skew >= 0.0 && spec.skew <= 1.0)) {
    throw ArgumentError("skew must lie in [0, 1]");
  }
  if (spec.num_targets < 2 || spec.num_demographics < 2) {
    throw ArgumentError("skew grid needs at least 2 targets and 2 demographics");
  }
  auto check_order = [](const std::vector<int>& order, int n, const char* name) {
    if (order.empty()) return;
    if (static_cast<int>(order.size()) != n) {
      throw ArgumentError(std::string(name) + " must list each index exactly once");
    }
    std::set<int> seen(order.begin(), order.end());
    if (static_cast<int>(seen.size()) != n || *seen.begin() != 0 ||
        *seen.rbegin() != n - 1) {
      throw ArgumentError(std::string(name) + " must be a permutation of 0.." +
                          std::to_string(n - 1));
    }
  };
  check_order(spec.class_order, spec.num_targets, "class_order");
  check_order(spec.demographic_order, spec.num_demographics, "demographic_order");

  Matrix matrix(spec.num_targets, std::vector<double>(spec.num_demographics, 0.0));
  for (int i = 0; i < spec.num_targets; ++i) {
    const double u = static_cast<double>(i) / (spec.num_targets - 1);
    const int row = spec.class_order.empty() ? i : spec.class_order[i];
    for (int j = 0; j < spec.num_demographics; ++j) {
      const double v = static_cast<double>(j) / (spec.num_demographics - 1);
      const int col = spec.demographic_order.empty() ? j : spec.demographic_order[j];
      // Bilinear over corners (0,0)=1, (1,1)=1, (0,1)=(1,0)=1-s.
      matrix[row][col] = (1.0 - u) * (1.0 - v) + u * v +
                         (1.0 - spec.skew) * ((1.0 - u) * v + u * (1.0 - v));
    }
  }
  return matrix;
}

Dataset apply_skew(const Dataset& dataset, const Matrix& matrix, std::uint64_t seed) {
  dataset.validate();
  if (matrix.size() != static_cast<std::size_t>(dataset.num_classes)) {
    throw ArgumentError("skew matrix must have one row per class");
  }
  bool any_positive = false;
  for (const auto& row : matrix) {
    if (row.size() != static_cast<std::size_t>(dataset.num_demographics)) {
      throw ArgumentError("skew matrix rows must have one entry per demographic");
    }
    for (double m : row) {
      if (!(m >= 0.0) || !std::isfinite(m)) {
        throw ArgumentError("skew matrix entries must be finite and >= 0");
      }
      any_positive = any_positive || m > 0.0;
    }
  }
  if (!any_positive) {
    throw ArgumentError("skew matrix has no positive entry");
  }

  std::map<metrics::GroupKey, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    members[{dataset.samples[i].demographic, dataset.samples[i].target}].push_back(i);
  }

  // Largest per-pair base count that keeps every kept count within the
  // available samples.
  std::int64_t base = std::numeric_limits<std::int64_t>::max();
  for (int y = 0; y < dataset.num_classes; ++y) {
    for (int a = 0; a < dataset.num_demographics; ++a) {
      const double m = matrix[y][a];
      if (m <= 0.0) continue;
      const auto it = members.find({a, y});
      if (it == members.end()) {
        throw MissingGroupError(a, y);
      }
      const auto available = static_cast<long double>(it->second.size());
      base = std::min(base, static_cast<std::int64_t>(std::floor(available / m)));
    }
  }

  std::mt19937_64 engine(seed);
  std::vector<bool> keep(dataset.samples.size(), false);
  for (auto& [key, indices] : members) {
    const double m = matrix[key.target][key.demographic];
    auto target_count = static_cast<std::int64_t>(
        std::nearbyint(static_cast<double>(base) * m));
    target_count = std::min(target_count, static_cast<std::int64_t>(indices.size()));
    rng::shuffle(indices, engine);
    for (std::int64_t i = 0; i < target_count; ++i) {
      keep[indices[static_cast<std::size_t>(i)]] = true;
    }
  }

  Dataset skewed;
  skewed.num_classes = dataset.num_classes;
  skewed.num_demographics = dataset.num_demographics;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    if (keep[i]) skewed.samples.push_back(dataset.samples[i]);
  }
  skewed.provenance =
      append_provenance(dataset.provenance, "skewed seed=" + std::to_string(seed));
  return skewed;
}

Split balanced_test_split(const Dataset& dataset, double test_fraction,
                          std::uint64_t seed) {
  dataset.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ArgumentError("test_fraction must lie in (0, 1)");
  }
  if (dataset.samples.empty()) {
    throw EmptyInputError("cannot split an empty dataset");
  }

  std::map<metrics::GroupKey, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    members[{dataset.samples[i].demographic, dataset.samples[i].target}].push_back(i);
  }
  const std::int64_t num_pairs =
      static_cast<std::int64_t>(dataset.num_classes) * dataset.num_demographics;
  std::size_t scarcest = dataset.samples.size();
  for (int a = 0; a < dataset.num_demographics; ++a) {
    for (int y = 0; y < dataset.num_classes; ++y) {
      const auto it = members.find({a, y});
      if (it == members.end()) {
        throw DegenerateGroupError("cannot build a balanced test set: demographic " +
                                       std::to_string(a) + " has no samples of class " +
                                       std::to_string(y),
                                   a, y);
      }
      scarcest = std::min(scarcest, it->second.size());
    }
  }

  auto per_pair = static_cast<std::int64_t>(
      std::floor(static_cast<long double>(test_fraction) *
                 static_cast<long double>(dataset.samples.size()) /
                 static_cast<long double>(num_pairs)));
  per_pair = std::min(per_pair, static_cast<std::int64_t>(scarcest));
  if (per_pair < 1) {
    throw ConfigError("test_fraction " + io::double_repr(test_fraction) +
                      " yields an empty balanced test set for " +
                      std::to_string(dataset.samples.size()) + " samples across " +
                      std::to_string(num_pairs) + " pairs");
  }

  std::mt19937_64 engine(seed);
  std::vector<bool> in_test(dataset.samples.size(), false);
  for (auto& [key, indices] : members) {
    rng::shuffle(indices, engine);
    for (std::int64_t i = 0; i < per_pair; ++i) {
      in_test[indices[static_cast<std::size_t>(i)]] = true;
    }
  }

  Split split;
  for (Dataset* part : {&split.train, &split.test}) {
    part->num_classes = dataset.num_classes;
    part->num_demographics = dataset.num_demographics;
  }
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    (in_test[i] ? split.test : split.train).samples.push_back(dataset.samples[i]);
  }
  const std::string note = "split seed=" + std::to_string(seed) +
                           " fraction=" + io::double_repr(test_fraction);
  split.train.provenance = append_provenance(dataset.provenance, note + " role=train");
  split.test.provenance = append_provenance(dataset.provenance, note + " role=test");
  return split;
}

std::array<Split, 3> triplicate_splits(const Dataset& dataset, double test_fraction,
                                       std::uint64_t base_seed) {
  return {balanced_test_split(dataset, test_fraction, base_seed),
          balanced_test_split(dataset, test_fraction, base_seed + 1),
          balanced_test_split(dataset, test_fraction, base_seed + 2)};
}

}  // namespace fairbase::data
