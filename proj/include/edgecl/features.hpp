#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "edgecl/errors.hpp"
#include "edgecl/matrix.hpp"

namespace edgecl {

// Channel convention: the first 3*triaxial_sensors columns are triaxial axes
// (sensor-major: s0x s0y s0z s1x ...), scalar channels follow.
struct SensorLayout {
  int triaxial_sensors = 6;
  int scalar_sensors = 4;
  double sample_rate = 120.0;

  int triaxial_channels() const { return 3 * triaxial_sensors; }
  int channels() const { return triaxial_channels() + scalar_sensors; }

  void validate() const {
    if (triaxial_sensors < 0 || scalar_sensors < 0)
      throw ConfigError("sensor layout: negative sensor count");
    if (channels() < 1) throw ConfigError("sensor layout: no channels");
    if (!(sample_rate > 0.0)) throw ConfigError("sensor layout: sample rate must be positive");
  }
};

// Feature vector length: mean + variance per channel, jerk mean + jerk
// variance per triaxial axis. 22*2 + 18*2 = 80 under the default layout.
inline std::size_t feature_count(const SensorLayout& layout) {
  return 2 * static_cast<std::size_t>(layout.channels()) +
         2 * static_cast<std::size_t>(layout.triaxial_channels());
}

struct Window {
  Matrix samples;  // window_len x channels
  int label = 0;

  std::size_t length() const { return samples.rows(); }
  std::size_t channels() const { return samples.cols(); }
};

inline std::vector<Window> window_stream(const Matrix& raw, std::size_t window_len,
                                         std::size_t stride, int label = 0) {
  if (window_len == 0) throw ConfigError("window_stream: window length must be positive");
  if (stride == 0) throw ConfigError("window_stream: stride must be positive");
  if (raw.rows() < window_len)
    throw DataError("window_stream: stream length " + std::to_string(raw.rows()) +
                    " shorter than window " + std::to_string(window_len));
  const std::size_t count = (raw.rows() - window_len) / stride + 1;
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    Window win;
    win.label = label;
    win.samples = Matrix(window_len, raw.cols());
    for (std::size_t t = 0; t < window_len; ++t)
      for (std::size_t c = 0; c < raw.cols(); ++c) win.samples(t, c) = raw(w * stride + t, c);
    out.push_back(std::move(win));
  }
  return out;
}

namespace detail {

inline void mean_var(const double* x, std::size_t n, std::size_t stride, double& mean,
                     double& var) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i * stride];
  mean = s / static_cast<double>(n);
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i * stride] - mean;
    q += d * d;
  }
  var = q / static_cast<double>(n);  // population variance
}

}  // namespace detail

// Feature layout, in order: channel means, channel variances, jerk means for
// each triaxial axis, jerk variances for each triaxial axis. Jerk is the
// first difference scaled by the sample rate.
inline std::vector<double> extract_features(const Window& w, const SensorLayout& layout) {
  layout.validate();
  if (static_cast<int>(w.channels()) != layout.channels())
    throw DimensionError("extract_features: window has " + std::to_string(w.channels()) +
                         " channels, layout expects " + std::to_string(layout.channels()));
  const std::size_t len = w.length();
  if (len < 2) throw DataError("extract_features: window shorter than 2 samples");
  if (!w.samples.all_finite()) throw DataError("extract_features: non-finite measurement");

  const std::size_t ch = w.channels();
  const std::size_t tri = layout.triaxial_channels();
  std::vector<double> f;
  f.reserve(feature_count(layout));

  std::vector<double> means(ch), vars(ch);
  for (std::size_t c = 0; c < ch; ++c)
    detail::mean_var(w.samples.row(0) + c, len, ch, means[c], vars[c]);
  f.insert(f.end(), means.begin(), means.end());
  f.insert(f.end(), vars.begin(), vars.end());

  std::vector<double> jerk(len - 1);
  std::vector<double> jerk_means(tri), jerk_vars(tri);
  for (std::size_t c = 0; c < tri; ++c) {
    for (std::size_t t = 0; t + 1 < len; ++t)
      jerk[t] = (w.samples(t + 1, c) - w.samples(t, c)) * layout.sample_rate;
    detail::mean_var(jerk.data(), jerk.size(), 1, jerk_means[c], jerk_vars[c]);
  }
  f.insert(f.end(), jerk_means.begin(), jerk_means.end());
  f.insert(f.end(), jerk_vars.begin(), jerk_vars.end());
  return f;
}

}  // namespace edgecl
