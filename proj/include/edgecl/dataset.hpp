#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "edgecl/errors.hpp"
#include "edgecl/features.hpp"
#include "edgecl/matrix.hpp"
#include "edgecl/rng.hpp"

namespace edgecl {

struct Dataset {
  Matrix features;  // n x d
  std::vector<int> labels;
  std::vector<std::string> label_names;  // optional, indexed by label id

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  std::string name_of(int label) const {
    if (label >= 0 && static_cast<std::size_t>(label) < label_names.size())
      return label_names[label];
    return "class" + std::to_string(label);
  }

  std::vector<int> class_labels() const {
    std::map<int, std::size_t> counts;
    for (int y : labels) ++counts[y];
    std::vector<int> out;
    for (const auto& [y, n] : counts) out.push_back(y);
    return out;
  }

  std::map<int, std::vector<std::size_t>> by_class() const {
    std::map<int, std::vector<std::size_t>> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) idx[labels[i]].push_back(i);
    return idx;
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.label_names = label_names;
    out.features = Matrix(rows.size(), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= size()) throw DimensionError("subset: row index out of range");
      out.features.set_row(r, features.row(rows[r]));
      out.labels.push_back(labels[rows[r]]);
    }
    return out;
  }

  // Rows belonging to one label, in order.
  Dataset rows_with_label(int label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) idx.push_back(i);
    return subset(idx);
  }

  Dataset rows_without_label(int label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != label) idx.push_back(i);
    return subset(idx);
  }

  void validate() const {
    if (features.rows() != labels.size())
      throw DimensionError("dataset: feature rows and label count differ");
    if (!features.all_finite()) throw DataError("dataset: non-finite feature value");
  }
};

// Per-feature z-score statistics, fit on a training split and applied
// everywhere afterwards. Constant features map to zero.
struct Normalizer {
  std::vector<double> mean, stddev;

  bool fitted() const { return !mean.empty(); }

  void fit(const Matrix& x) {
    if (x.rows() == 0) throw DataError("normalizer: cannot fit on an empty matrix");
    mean.assign(x.cols(), 0.0);
    stddev.assign(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double d = x(i, j) - mean[j];
        stddev[j] += d * d;
      }
    for (double& s : stddev) {
      s = std::sqrt(s / static_cast<double>(x.rows()));
      if (s < 1e-12) s = 1.0;
    }
  }

  Matrix transform(const Matrix& x) const {
    if (!fitted()) throw ProtocolError("normalizer: transform before fit");
    if (x.cols() != mean.size()) throw DimensionError("normalizer: column count mismatch");
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / stddev[j];
    return out;
  }

  void apply(Dataset& ds) const { ds.features = transform(ds.features); }
};

// Stratified split with a seeded shuffle per class. The test share is rounded
// to the nearest count and clamped so both sides keep at least one sample.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction,
                                                 std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("split: test fraction must be in (0, 1)");
  ds.validate();
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [label, idx] : ds.by_class()) {
    if (idx.size() < 2)
      throw DataError("split: class " + std::to_string(label) + " has a single sample");
    Rng rng(derive_seed(seed, 0x5117ULL + static_cast<std::uint64_t>(label)));
    rng.shuffle(idx);
    std::size_t n_test =
        static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    if (n_test < 1) n_test = 1;
    if (n_test > idx.size() - 1) n_test = idx.size() - 1;
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + n_test);
    train_idx.insert(train_idx.end(), idx.begin() + n_test, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

// Dynamics of one channel group of the synthetic stream.
struct ChannelDynamics {
  double base_frequency = 2.0;  // mean oscillation cycles per window
  double amplitude = 1.0;
  double noise_level = 0.25;
  double drift = 0.05;  // max per-window linear trend magnitude

  void validate() const {
    if (!(base_frequency > 0.0)) throw ConfigError("dynamics: base frequency must be positive");
    if (amplitude < 0.0 || noise_level < 0.0 || drift < 0.0)
      throw ConfigError("dynamics: negative amplitude/noise/drift");
  }
};

struct SyntheticSpec {
  int num_classes = 5;
  int windows_per_class = 200;
  double separability = 1.0;  // 0 = identical classes, 1 = widest spacing
  std::uint64_t seed = 0;
  int window_len = 120;
  SensorLayout layout;
  ChannelDynamics triaxial;
  ChannelDynamics scalar{2.0, 0.6, 0.25, 0.05};
  double class_shift = 1.2;  // per-channel mean offset at full separability

  void validate() const {
    if (num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (windows_per_class < 1) throw ConfigError("synthetic: need at least 1 window per class");
    if (!(separability >= 0.0 && separability <= 1.0))
      throw ConfigError("synthetic: separability must lie in [0, 1]");
    if (window_len < 2) throw ConfigError("synthetic: window length must be at least 2");
    layout.validate();
    triaxial.validate();
    scalar.validate();
    if (class_shift < 0.0) throw ConfigError("synthetic: negative class shift");
  }
};

namespace detail {

// Fixed per-channel personality constant in [0, 1); independent of the
// dataset seed so the same channel behaves the same across seeds.
inline double channel_unit(int channel, std::uint64_t salt) {
  Rng r(derive_seed(0xC0FFEEULL + salt, static_cast<std::uint64_t>(channel)));
  return r.uniform();
}

}  // namespace detail

// Seeded sinusoid + noise + drift generator. Classes sit on an evenly spaced
// ladder; the separability knob scales the ladder, so 0 collapses every class
// onto the same distribution. Oscillations use whole cycles per window, which
// keeps the per-window mean of the sinusoid at zero for any phase and lets
// the class offsets dominate the mean features.
inline std::vector<Window> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5e17ULL));
  const int channels = spec.layout.channels();
  const int tri = spec.layout.triaxial_channels();
  const int len = spec.window_len;
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(spec.num_classes) * spec.windows_per_class);
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    const double ladder = static_cast<double>(cls) / (spec.num_classes - 1);
    const double delta = spec.separability * ladder;
    for (int w = 0; w < spec.windows_per_class; ++w) {
      Window win;
      win.label = cls;
      win.samples = Matrix(len, channels);
      for (int ch = 0; ch < channels; ++ch) {
        const ChannelDynamics& dyn = ch < tri ? spec.triaxial : spec.scalar;
        const double u_cycles = detail::channel_unit(ch, 11);
        const double u_span = detail::channel_unit(ch, 12);
        const double u_amp = detail::channel_unit(ch, 13);
        const double u_amp_cls = detail::channel_unit(ch, 14);
        const double u_off = detail::channel_unit(ch, 15);

        long cycles = std::lround(dyn.base_frequency * (0.75 + 1.5 * u_cycles)) +
                      std::lround(delta * 3.0 * u_span);
        if (cycles < 1) cycles = 1;
        const double amp =
            dyn.amplitude * (0.5 + u_amp) * (1.0 + 0.75 * delta * (2.0 * u_amp_cls - 1.0));
        const double offset = delta * spec.class_shift * (2.0 * u_off - 1.0);
        const double phase = rng.uniform(0.0, two_pi);
        const double slope = rng.uniform(-dyn.drift, dyn.drift);

        for (int t = 0; t < len; ++t) {
          const double pos = static_cast<double>(t) / len;
          const double trend = slope * (static_cast<double>(t) / (len - 1) - 0.5);
          win.samples(t, ch) = offset + amp * std::sin(two_pi * cycles * pos + phase) + trend +
                               dyn.noise_level * rng.normal();
        }
      }
      out.push_back(std::move(win));
    }
  }
  return out;
}

inline Dataset feature_dataset_from_windows(const std::vector<Window>& windows,
                                            const SensorLayout& layout,
                                            std::vector<std::string> label_names = {}) {
  if (windows.empty()) throw DataError("no windows to extract features from");
  Dataset ds;
  ds.features = Matrix(windows.size(), feature_count(layout));
  ds.labels.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const std::vector<double> f = extract_features(windows[i], layout);
    ds.features.set_row(i, f);
    ds.labels.push_back(windows[i].label);
  }
  ds.label_names = std::move(label_names);
  return ds;
}

inline Dataset make_feature_dataset(const SyntheticSpec& spec) {
  std::vector<std::string> names;
  for (int c = 0; c < spec.num_classes; ++c) names.push_back("class" + std::to_string(c));
  return feature_dataset_from_windows(generate_synthetic(spec), spec.layout, std::move(names));
}

}  // namespace edgecl
