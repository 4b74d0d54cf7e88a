#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <edgecl/edgecl.hpp>

#include "helpers.hpp"

using namespace edgecl;
using testutil::random_matrix;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "edgecl_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Best single-feature one-dimensional nearest-class-mean classifier: fit the
// per-class feature means on a train split, pick the feature with the best
// train accuracy, report its accuracy on the test split.
double best_single_feature_accuracy(const Dataset& ds, std::uint64_t seed) {
  const auto [train, test] = split_dataset(ds, 0.5, seed);
  const auto labels = train.class_labels();

  auto accuracy_on = [&](const Dataset& part, std::size_t feature,
                         const std::map<int, double>& centers) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < part.size(); ++i) {
      int arg = labels.front();
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [label, c] : centers) {
        const double d = std::abs(part.features(i, feature) - c);
        if (d < best) {
          best = d;
          arg = label;
        }
      }
      if (arg == part.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(part.size());
  };

  double best_train = -1.0;
  std::size_t best_feature = 0;
  std::map<int, double> best_centers;
  for (std::size_t f = 0; f < train.dim(); ++f) {
    std::map<int, double> centers;
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < train.size(); ++i) {
      centers[train.labels[i]] += train.features(i, f);
      ++counts[train.labels[i]];
    }
    for (auto& [label, sum] : centers) sum /= static_cast<double>(counts[label]);
    const double acc = accuracy_on(train, f, centers);
    if (acc > best_train) {
      best_train = acc;
      best_feature = f;
      best_centers = centers;
    }
  }
  return accuracy_on(test, best_feature, best_centers);
}

}  // namespace

TEST_CASE("default layout yields 22 channels and 80 features", "[data]") {
  const SensorLayout layout;
  REQUIRE(layout.channels() == 22);
  REQUIRE(layout.triaxial_channels() == 18);
  REQUIRE(feature_count(layout) == 80);
  SensorLayout tiny;
  tiny.triaxial_sensors = 1;
  tiny.scalar_sensors = 1;
  REQUIRE(feature_count(tiny) == 2 * 4 + 2 * 3);
  SensorLayout bad;
  bad.triaxial_sensors = 0;
  bad.scalar_sensors = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("window stream counts and bounds", "[data]") {
  Rng rng(1);
  REQUIRE(window_stream(random_matrix(360, 3, rng), 120, 120).size() == 3);
  REQUIRE(window_stream(random_matrix(120, 3, rng), 120, 120).size() == 1);
  REQUIRE(window_stream(random_matrix(250, 3, rng), 120, 60).size() == 3);
  REQUIRE_THROWS_AS(window_stream(random_matrix(119, 3, rng), 120, 120), DataError);
}

TEST_CASE("non-overlapping windows reconstruct the consumed stream prefix", "[data]") {
  Rng rng(2);
  const Matrix raw = random_matrix(250, 2, rng);
  const auto windows = window_stream(raw, 100, 100);
  REQUIRE(windows.size() == 2);
  for (std::size_t w = 0; w < windows.size(); ++w)
    for (std::size_t t = 0; t < 100; ++t)
      for (std::size_t c = 0; c < 2; ++c)
        REQUIRE(windows[w].samples(t, c) == raw(w * 100 + t, c));
}

TEST_CASE("constant window features are the constant and zeros", "[data]") {
  SensorLayout layout;
  layout.triaxial_sensors = 1;
  layout.scalar_sensors = 1;  // 4 channels, 14 features
  Window w;
  w.label = 0;
  w.samples = Matrix(10, 4);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t c = 0; c < 4; ++c) w.samples(t, c) = 2.5;
  const auto f = extract_features(w, layout);
  REQUIRE(f.size() == feature_count(layout));
  for (std::size_t c = 0; c < 4; ++c) {
    REQUIRE(f[c] == 2.5);       // means
    REQUIRE(f[4 + c] == 0.0);   // variances
  }
  for (std::size_t k = 8; k < f.size(); ++k) REQUIRE(f[k] == 0.0);  // jerk blocks
}

TEST_CASE("unit ramp gives jerk mean one and zero jerk variance", "[data]") {
  SensorLayout layout;
  layout.triaxial_sensors = 1;
  layout.scalar_sensors = 0;
  Window w;
  w.samples = Matrix(12, 3);
  for (std::size_t t = 0; t < 12; ++t)
    w.samples(t, 0) = static_cast<double>(t) / layout.sample_rate;  // slope 1 per second
  const auto f = extract_features(w, layout);
  // layout: 3 means, 3 variances, 3 jerk means, 3 jerk variances
  REQUIRE_THAT(f[6], Catch::Matchers::WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(f[9], Catch::Matchers::WithinAbs(0.0, 1e-9));
  REQUIRE(f[7] == 0.0);
  REQUIRE(f[8] == 0.0);
}

TEST_CASE("random window features match a two-pass recomputation", "[data]") {
  SensorLayout layout;  // default 22 channels
  Rng rng(3);
  Window w;
  w.samples = random_matrix(40, 22, rng, 2.0);
  const auto f = extract_features(w, layout);
  REQUIRE(f.size() == 80);

  const std::size_t ch = 22, tri = 18, n = 40;
  for (std::size_t c = 0; c < ch; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += w.samples(t, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t)
      var += (w.samples(t, c) - mean) * (w.samples(t, c) - mean);
    var /= static_cast<double>(n);
    REQUIRE_THAT(f[c], Catch::Matchers::WithinRel(mean, 1e-12));
    REQUIRE_THAT(f[ch + c], Catch::Matchers::WithinRel(var, 1e-12));
  }
  for (std::size_t c = 0; c < tri; ++c) {
    std::vector<double> jerk;
    for (std::size_t t = 0; t + 1 < n; ++t)
      jerk.push_back((w.samples(t + 1, c) - w.samples(t, c)) * layout.sample_rate);
    double mean = 0.0;
    for (double v : jerk) mean += v;
    mean /= static_cast<double>(jerk.size());
    double var = 0.0;
    for (double v : jerk) var += (v - mean) * (v - mean);
    var /= static_cast<double>(jerk.size());
    REQUIRE_THAT(f[2 * ch + c], Catch::Matchers::WithinRel(mean, 1e-12));
    REQUIRE_THAT(f[2 * ch + tri + c], Catch::Matchers::WithinRel(var, 1e-12));
  }

  // variances are nonnegative for any window
  for (std::size_t c = 0; c < ch; ++c) REQUIRE(f[ch + c] >= 0.0);
}

TEST_CASE("feature extraction rejects malformed windows", "[data]") {
  SensorLayout layout;
  Window w;
  w.samples = Matrix(10, 5);  // wrong channel count
  REQUIRE_THROWS_AS(extract_features(w, layout), DimensionError);
  w.samples = Matrix(1, 22);
  REQUIRE_THROWS_AS(extract_features(w, layout), DataError);
  w.samples = Matrix(10, 22);
  w.samples(3, 3) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(extract_features(w, layout), DataError);
}

TEST_CASE("synthetic generation is deterministic per seed", "[data]") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.windows_per_class = 5;
  spec.window_len = 40;
  spec.seed = 123;
  const Dataset a = make_feature_dataset(spec);
  const Dataset b = make_feature_dataset(spec);
  REQUIRE(a.features == b.features);
  REQUIRE(a.labels == b.labels);
  REQUIRE(a.size() == 15);
  REQUIRE(a.dim() == 80);
  a.validate();
  spec.seed = 124;
  const Dataset c = make_feature_dataset(spec);
  REQUIRE_FALSE(a.features == c.features);
}

TEST_CASE("separable synthetic data is learnable by a single feature", "[data]") {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.windows_per_class = 200;
  spec.separability = 1.0;
  spec.seed = 42;
  const double high = best_single_feature_accuracy(make_feature_dataset(spec), 7);
  REQUIRE(high > 0.5);

  spec.separability = 0.0;
  const double chance = best_single_feature_accuracy(make_feature_dataset(spec), 7);
  REQUIRE(chance < 0.2 + 0.05);

  spec.separability = 0.5;
  const double mid = best_single_feature_accuracy(make_feature_dataset(spec), 7);
  REQUIRE(mid >= chance - 0.02);
  REQUIRE(high >= mid - 0.02);
}

TEST_CASE("synthetic spec validation", "[data]") {
  SyntheticSpec spec;
  spec.num_classes = 1;
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
  spec.num_classes = 3;
  spec.separability = 1.5;
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
  spec.separability = 0.5;
  spec.window_len = 1;
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("stratified split is exact for round shares and seeded", "[data]") {
  const Dataset ds = testutil::make_blobs(
      {{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}, {4.0, 4.0}, {2.0, 2.0}}, 100, 0.5, 5);
  const auto [train, test] = split_dataset(ds, 0.3, 11);
  REQUIRE(train.size() == 350);
  REQUIRE(test.size() == 150);
  for (int label : ds.class_labels()) {
    REQUIRE(train.rows_with_label(label).size() == 70);
    REQUIRE(test.rows_with_label(label).size() == 30);
  }
  const auto [train2, test2] = split_dataset(ds, 0.3, 11);
  REQUIRE(train.features == train2.features);
  REQUIRE(test.labels == test2.labels);
  const auto [train3, test3] = split_dataset(ds, 0.3, 12);
  REQUIRE_FALSE(test.features == test3.features);
}

TEST_CASE("split rejects single-sample classes and bad fractions", "[data]") {
  Dataset ds;
  ds.features = Matrix(3, 2);
  ds.labels = {0, 0, 1};
  REQUIRE_THROWS_AS(split_dataset(ds, 0.3, 1), DataError);
  ds.labels = {0, 0, 0};
  Dataset ok = testutil::make_blobs({{0.0}, {1.0}}, 4, 0.1, 1);
  REQUIRE_THROWS_AS(split_dataset(ok, 0.0, 1), ConfigError);
  REQUIRE_THROWS_AS(split_dataset(ok, 1.0, 1), ConfigError);
}

TEST_CASE("normalizer standardizes its training matrix", "[data]") {
  Rng rng(6);
  Matrix x = random_matrix(50, 4, rng, 3.0);
  for (std::size_t i = 0; i < 50; ++i) x(i, 2) = 7.0;  // constant column
  Normalizer norm;
  REQUIRE_FALSE(norm.fitted());
  REQUIRE_THROWS_AS(norm.transform(x), ProtocolError);
  norm.fit(x);
  const Matrix z = norm.transform(x);
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += z(i, j);
    mean /= 50.0;
    REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-9));
  }
  for (std::size_t i = 0; i < 50; ++i) REQUIRE(z(i, 2) == 0.0);  // constant -> exactly zero
  REQUIRE(norm.stddev[2] == 1.0);                                // floored, not zero
  REQUIRE_THROWS_AS(norm.transform(Matrix(2, 3)), DimensionError);
}

TEST_CASE("feature csv round-trips exactly", "[data]") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.windows_per_class = 4;
  spec.window_len = 30;
  spec.seed = 9;
  const Dataset ds = make_feature_dataset(spec);
  const auto path = temp_file("roundtrip.csv");
  save_feature_csv(path.string(), ds);
  const Dataset back = load_feature_csv(path.string());
  REQUIRE(back.features == ds.features);
  REQUIRE(back.labels == ds.labels);
  REQUIRE(back.label_names == ds.label_names);
}

TEST_CASE("feature csv parse errors name the line", "[data]") {
  const auto path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "f0,f1,label\n1.0,2.0,a\n1.0,b,a\n";
  }
  try {
    load_feature_csv(path.string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find(":3:") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "f0,f1,label\n1.0,2.0,3.0,a\n";
  }
  try {
    load_feature_csv(path.string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find(":2:") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "f0,f1,not_label\n";
  }
  REQUIRE_THROWS_AS(load_feature_csv(path.string()), ParseError);
}

TEST_CASE("header-only feature csv loads as an empty dataset", "[data]") {
  const auto path = temp_file("empty.csv");
  {
    std::ofstream out(path);
    out << "f0,f1,f2,label\n";
  }
  const Dataset ds = load_feature_csv(path.string());
  REQUIRE(ds.size() == 0);
  REQUIRE(ds.dim() == 3);
}

TEST_CASE("feature csv label ids follow sorted distinct names", "[data]") {
  const auto path = temp_file("names.csv");
  {
    std::ofstream out(path);
    out << "f0,label\n1.0,walk\n2.0,run\n3.0,walk\n";
  }
  const Dataset ds = load_feature_csv(path.string());
  REQUIRE(ds.label_names == std::vector<std::string>{"run", "walk"});
  REQUIRE(ds.labels == std::vector<int>{1, 0, 1});
}

TEST_CASE("raw csv round-trips through windowing", "[data]") {
  SensorLayout layout;
  layout.triaxial_sensors = 1;
  layout.scalar_sensors = 1;
  SyntheticSpec spec;
  spec.layout = layout;
  spec.num_classes = 2;
  spec.windows_per_class = 3;
  spec.window_len = 20;
  spec.seed = 77;
  const auto windows = generate_synthetic(spec);
  const auto path = temp_file("raw.csv");
  save_raw_csv(path.string(), windows, layout, {"sit", "walk"});

  const RawRecords raw = load_raw_csv(path.string(), layout.channels());
  REQUIRE(raw.channels.rows() == windows.size() * 20);
  const auto [cut, names] = windows_from_raw(raw, 20, 20);
  REQUIRE(cut.size() == windows.size());
  REQUIRE(names == std::vector<std::string>{"sit", "walk"});
  for (std::size_t w = 0; w < cut.size(); ++w)
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t c = 0; c < cut[w].channels(); ++c)
        REQUIRE(cut[w].samples(t, c) == windows[w].samples(t, c));
}

TEST_CASE("windows_from_raw skips runs shorter than a window", "[data]") {
  RawRecords raw;
  raw.channels = Matrix(25, 2);
  for (std::size_t t = 0; t < 25; ++t) {
    raw.timestamps.push_back(static_cast<double>(t));
    raw.labels.push_back(t < 5 ? "short" : "long");  // 5-run then 20-run
  }
  const auto [windows, names] = windows_from_raw(raw, 10, 10);
  REQUIRE(windows.size() == 2);  // only the 20-long run yields windows
  for (const Window& w : windows) REQUIRE(names[w.label] == "long");
}

TEST_CASE("label remapping matches ids to a target table", "[data]") {
  Dataset ds;
  ds.features = Matrix(3, 1);
  ds.labels = {0, 1, 0};
  ds.label_names = {"run", "walk"};
  remap_labels(ds, {"sit", "walk", "run"});
  REQUIRE(ds.labels == std::vector<int>{2, 1, 2});
  REQUIRE(ds.label_names == std::vector<std::string>{"sit", "walk", "run"});
  Dataset bad;
  bad.features = Matrix(1, 1);
  bad.labels = {0};
  bad.label_names = {"jump"};
  REQUIRE_THROWS_AS(remap_labels(bad, {"sit", "walk"}), DataError);
}
