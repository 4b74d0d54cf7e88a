#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "edgecl/errors.hpp"
#include "edgecl/matrix.hpp"
#include "edgecl/rng.hpp"

namespace edgecl {

struct LayerSpec {
  int input_dim = 0;
  int output_dim = 0;
  bool batchnorm = false;
  bool relu = false;
};

// Hidden layers get batchnorm + ReLU, the final layer is a plain linear
// projection into the embedding space.
inline std::vector<LayerSpec> make_mlp_specs(int input_dim, const std::vector<int>& hidden_dims,
                                             int embedding_dim) {
  std::vector<LayerSpec> specs;
  int in = input_dim;
  for (int h : hidden_dims) {
    specs.push_back({in, h, true, true});
    in = h;
  }
  specs.push_back({in, embedding_dim, false, false});
  return specs;
}

struct GradientSet {
  struct Layer {
    Matrix weight;
    std::vector<double> bias;
    std::vector<double> gamma, beta;  // empty for layers without batchnorm
  };
  std::vector<Layer> layers;

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.all_finite()) return false;
      for (double v : l.bias)
        if (!std::isfinite(v)) return false;
      for (double v : l.gamma)
        if (!std::isfinite(v)) return false;
      for (double v : l.beta)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    auto upd = [&m](double v) { m = std::max(m, std::abs(v)); };
    for (const auto& l : layers) {
      for (double v : l.weight.data()) upd(v);
      for (double v : l.bias) upd(v);
      for (double v : l.gamma) upd(v);
      for (double v : l.beta) upd(v);
    }
    return m;
  }
};

enum class Mode { Train, Eval };

// Which statistics a const forward pass should normalize with.
enum class StatMode { Batch, Running };

namespace detail {
inline std::atomic<std::uint64_t>& stamp_counter() {
  static std::atomic<std::uint64_t> counter{1};
  return counter;
}
inline std::uint64_t next_stamp() { return stamp_counter().fetch_add(1) + 1; }
}  // namespace detail

class EmbeddingNetwork {
 public:
  struct LayerParams {
    Matrix weight;  // output_dim x input_dim
    std::vector<double> bias;
    std::vector<double> gamma, beta, running_mean, running_var;  // batchnorm only
  };

  static constexpr double kBnEpsilon = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  EmbeddingNetwork(std::vector<LayerSpec> specs, int embedding_dim, std::uint64_t seed)
      : specs_(std::move(specs)) {
    if (specs_.empty()) throw ConfigError("network needs at least one layer");
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      if (specs_[k].input_dim <= 0 || specs_[k].output_dim <= 0)
        throw ConfigError("layer " + std::to_string(k) + ": dimensions must be positive");
      if (k + 1 < specs_.size() && specs_[k].output_dim != specs_[k + 1].input_dim)
        throw DimensionError("layers " + std::to_string(k) + "/" + std::to_string(k + 1) +
                             ": output_dim " + std::to_string(specs_[k].output_dim) +
                             " does not chain into input_dim " +
                             std::to_string(specs_[k + 1].input_dim));
    }
    const LayerSpec& last = specs_.back();
    if (last.output_dim != embedding_dim)
      throw ConfigError("final layer output_dim != embedding_dim");
    if (last.batchnorm || last.relu)
      throw ConfigError("final layer must be a plain linear projection");

    Rng rng(seed);
    params_.resize(specs_.size());
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      const LayerSpec& s = specs_[k];
      LayerParams& p = params_[k];
      // He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in))
      const double limit = std::sqrt(6.0 / s.input_dim);
      p.weight = Matrix(s.output_dim, s.input_dim);
      for (double& w : p.weight.data()) w = rng.uniform(-limit, limit);
      p.bias.assign(s.output_dim, 0.0);
      if (s.batchnorm) {
        p.gamma.assign(s.output_dim, 1.0);
        p.beta.assign(s.output_dim, 0.0);
        p.running_mean.assign(s.output_dim, 0.0);
        p.running_var.assign(s.output_dim, 1.0);
      }
    }
    stamp_ = detail::next_stamp();
  }

  int input_dim() const { return specs_.front().input_dim; }
  int embedding_dim() const { return specs_.back().output_dim; }
  std::size_t num_layers() const { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  const LayerSpec& spec(std::size_t k) const { return specs_[k]; }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  bool freeze_running_stats() const { return freeze_running_stats_; }
  void set_freeze_running_stats(bool f) { freeze_running_stats_ = f; }

  // Identifies the parameter state; changes on every mutation, survives copy.
  std::uint64_t param_stamp() const { return stamp_; }

  const LayerParams& layer(std::size_t k) const { return params_[k]; }
  // Mutable access marks the parameters as changed.
  LayerParams& layer_mut(std::size_t k) {
    touch();
    cache_.valid = false;
    return params_[k];
  }

  bool has_batchnorm() const {
    for (const auto& s : specs_)
      if (s.batchnorm) return true;
    return false;
  }

  // Forward pass honoring the current mode. Train mode normalizes with batch
  // statistics, updates running statistics (unless frozen) and caches the
  // activations needed by backward(). Eval mode uses running statistics and
  // mutates nothing.
  Matrix embed(const Matrix& batch) {
    check_input(batch);
    if (mode_ == Mode::Eval) return forward(batch, StatMode::Running, nullptr);
    if (has_batchnorm() && batch.rows() < 2)
      throw DataError("train-mode batchnorm needs a batch of at least 2 rows");
    cache_ = Cache{};
    Matrix out = forward(batch, StatMode::Batch, &cache_);
    cache_.valid = true;
    cache_.stamp = stamp_;
    if (!freeze_running_stats_) update_running_stats();
    return out;
  }

  // Pure forward pass; never caches, never mutates. StatMode::Batch applies
  // batch statistics (requires n >= 2 when batchnorm is present).
  Matrix embed_const(const Matrix& batch, StatMode stats) const {
    check_input(batch);
    if (stats == StatMode::Batch && has_batchnorm() && batch.rows() < 2)
      throw DataError("batch-statistics forward needs at least 2 rows");
    return forward(batch, stats, nullptr);
  }

  // Gradients of sum(upstream . embedding) w.r.t. every trainable parameter,
  // backpropagated through the cached train-mode forward pass, including the
  // batch-statistics chain rule of batchnorm.
  GradientSet backward(const Matrix& upstream) const {
    if (!cache_.valid) throw ProtocolError("backward() without a cached train-mode forward");
    if (cache_.stamp != stamp_)
      throw ProtocolError("backward() after parameter mutation; re-run the forward pass");
    if (upstream.rows() != cache_.activations.front().rows() ||
        upstream.cols() != static_cast<std::size_t>(embedding_dim()))
      throw DimensionError("upstream shape does not match the cached forward output");

    const std::size_t n = upstream.rows();
    GradientSet grads;
    grads.layers.resize(specs_.size());
    Matrix g = upstream;  // gradient w.r.t. the current layer's output

    for (std::size_t k = specs_.size(); k-- > 0;) {
      const LayerSpec& s = specs_[k];
      const LayerParams& p = params_[k];
      const Cache::Layer& c = cache_.layers[k];
      const std::size_t d = static_cast<std::size_t>(s.output_dim);

      if (s.relu) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            if (c.pre_relu(i, j) <= 0.0) g(i, j) = 0.0;
      }

      if (s.batchnorm) {
        GradientSet::Layer& gl = grads.layers[k];
        gl.gamma.assign(d, 0.0);
        gl.beta.assign(d, 0.0);
        Matrix gz(n, d);
        for (std::size_t j = 0; j < d; ++j) {
          const double inv_sigma = 1.0 / std::sqrt(c.var[j] + kBnEpsilon);
          double dgamma = 0.0, dbeta = 0.0;
          double dvar = 0.0, dmean = 0.0, sum_centered = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double gy = g(i, j);
            dgamma += gy * c.xhat(i, j);
            dbeta += gy;
            const double gxhat = gy * p.gamma[j];
            const double centered = c.z(i, j) - c.mean[j];
            dvar += gxhat * centered;
            dmean -= gxhat * inv_sigma;
            sum_centered += centered;
          }
          dvar *= -0.5 * inv_sigma * inv_sigma * inv_sigma;
          dmean += dvar * (-2.0 / static_cast<double>(n)) * sum_centered;
          gl.gamma[j] = dgamma;
          gl.beta[j] = dbeta;
          for (std::size_t i = 0; i < n; ++i) {
            const double gxhat = g(i, j) * p.gamma[j];
            const double centered = c.z(i, j) - c.mean[j];
            gz(i, j) = gxhat * inv_sigma +
                       dvar * 2.0 * centered / static_cast<double>(n) +
                       dmean / static_cast<double>(n);
          }
        }
        g = std::move(gz);
      }

      grads.layers[k].weight = matmul_tn(g, cache_.activations[k]);
      grads.layers[k].bias.assign(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) grads.layers[k].bias[j] += g(i, j);

      if (k > 0) g = matmul(g, p.weight);
    }
    return grads;
  }

  bool has_cached_forward() const { return cache_.valid && cache_.stamp == stamp_; }

 private:
  struct Cache {
    bool valid = false;
    std::uint64_t stamp = 0;
    std::vector<Matrix> activations;  // [0] = input, [k+1] = layer k output
    struct Layer {
      Matrix z;         // pre-batchnorm linear output
      Matrix xhat;      // normalized (batchnorm layers)
      Matrix pre_relu;  // input to ReLU (batchnorm output or z)
      std::vector<double> mean, var;
    };
    std::vector<Layer> layers;
  };

  void check_input(const Matrix& batch) const {
    if (batch.rows() == 0) throw DataError("empty batch");
    if (batch.cols() != static_cast<std::size_t>(input_dim()))
      throw DimensionError("batch has " + std::to_string(batch.cols()) +
                           " columns, network expects " + std::to_string(input_dim()));
    if (!batch.all_finite()) throw DataError("batch contains non-finite values");
  }

  Matrix forward(const Matrix& batch, StatMode stats, Cache* cache) const {
    const std::size_t n = batch.rows();
    if (cache) {
      cache->activations.clear();
      cache->layers.resize(specs_.size());
      cache->activations.push_back(batch);
    }
    Matrix x = batch;
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      const LayerSpec& s = specs_[k];
      const LayerParams& p = params_[k];
      const std::size_t d = static_cast<std::size_t>(s.output_dim);

      Matrix z = matmul_nt(x, p.weight);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) z(i, j) += p.bias[j];

      Matrix y;
      std::vector<double> mean, var;
      Matrix xhat;
      if (s.batchnorm) {
        mean.assign(d, 0.0);
        var.assign(d, 0.0);
        if (stats == StatMode::Batch) {
          for (std::size_t j = 0; j < d; ++j) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += z(i, j);
            m /= static_cast<double>(n);
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double cdev = z(i, j) - m;
              v += cdev * cdev;
            }
            v /= static_cast<double>(n);  // population variance
            mean[j] = m;
            var[j] = v;
          }
        } else {
          mean = p.running_mean;
          var = p.running_var;
        }
        xhat = Matrix(n, d);
        y = Matrix(n, d);
        for (std::size_t j = 0; j < d; ++j) {
          const double inv_sigma = 1.0 / std::sqrt(var[j] + kBnEpsilon);
          for (std::size_t i = 0; i < n; ++i) {
            xhat(i, j) = (z(i, j) - mean[j]) * inv_sigma;
            y(i, j) = p.gamma[j] * xhat(i, j) + p.beta[j];
          }
        }
      } else {
        y = z;
      }

      if (cache) {
        Cache::Layer& cl = cache->layers[k];
        cl.z = std::move(z);
        cl.mean = std::move(mean);
        cl.var = std::move(var);
        cl.xhat = std::move(xhat);
        cl.pre_relu = y;
      }

      if (s.relu)
        for (double& v : y.data()) v = std::max(0.0, v);

      if (cache) cache->activations.push_back(y);
      x = std::move(y);
    }
    return x;
  }

  // Fold the cached batch statistics into the running statistics.
  void update_running_stats() {
    for (std::size_t k = 0; k < specs_.size(); ++k) {
      if (!specs_[k].batchnorm) continue;
      LayerParams& p = params_[k];
      const Cache::Layer& c = cache_.layers[k];
      for (std::size_t j = 0; j < p.running_mean.size(); ++j) {
        p.running_mean[j] = (1.0 - kBnMomentum) * p.running_mean[j] + kBnMomentum * c.mean[j];
        p.running_var[j] = (1.0 - kBnMomentum) * p.running_var[j] + kBnMomentum * c.var[j];
      }
    }
    // Running statistics are not trainable parameters; the stamp tracks them
    // anyway because eval-mode outputs (and cached prototypes) depend on them.
    touch();
    cache_.stamp = stamp_;
  }

  void touch() { stamp_ = detail::next_stamp(); }

  std::vector<LayerSpec> specs_;
  std::vector<LayerParams> params_;
  Mode mode_ = Mode::Train;
  bool freeze_running_stats_ = false;
  std::uint64_t stamp_ = 0;
  Cache cache_;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  GradientSet m, v;  // first/second moments, shape-congruent with the network

  explicit AdamState(const EmbeddingNetwork& net, double b1 = 0.9, double b2 = 0.999,
                     double eps = 1e-8)
      : beta1(b1), beta2(b2), epsilon(eps) {
    m.layers.resize(net.num_layers());
    v.layers.resize(net.num_layers());
    for (std::size_t k = 0; k < net.num_layers(); ++k) {
      const LayerSpec& s = net.spec(k);
      for (GradientSet* g : {&m, &v}) {
        g->layers[k].weight = Matrix(s.output_dim, s.input_dim);
        g->layers[k].bias.assign(s.output_dim, 0.0);
        if (s.batchnorm) {
          g->layers[k].gamma.assign(s.output_dim, 0.0);
          g->layers[k].beta.assign(s.output_dim, 0.0);
        }
      }
    }
  }
};

// In-place Adam update with bias correction. Rejects non-finite gradients
// before touching any parameter.
inline void adam_step(EmbeddingNetwork& net, const GradientSet& grads, AdamState& state,
                      double lr) {
  if (lr <= 0.0) throw ConfigError("adam_step: learning rate must be positive");
  if (grads.layers.size() != net.num_layers())
    throw DimensionError("adam_step: gradient layer count mismatch");
  if (!grads.all_finite()) throw DataError("adam_step: non-finite gradient rejected");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  auto update = [&](double& param, double g, double& m, double& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    param -= lr * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon);
  };

  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const GradientSet::Layer& gl = grads.layers[k];
    auto& p = net.layer_mut(k);
    if (gl.weight.rows() != p.weight.rows() || gl.weight.cols() != p.weight.cols())
      throw DimensionError("adam_step: weight gradient shape mismatch at layer " +
                           std::to_string(k));
    for (std::size_t i = 0; i < p.weight.data().size(); ++i)
      update(p.weight.data()[i], gl.weight.data()[i], state.m.layers[k].weight.data()[i],
             state.v.layers[k].weight.data()[i]);
    for (std::size_t i = 0; i < p.bias.size(); ++i)
      update(p.bias[i], gl.bias[i], state.m.layers[k].bias[i], state.v.layers[k].bias[i]);
    if (!p.gamma.empty()) {
      if (gl.gamma.size() != p.gamma.size())
        throw DimensionError("adam_step: batchnorm gradient shape mismatch at layer " +
                             std::to_string(k));
      for (std::size_t i = 0; i < p.gamma.size(); ++i)
        update(p.gamma[i], gl.gamma[i], state.m.layers[k].gamma[i], state.v.layers[k].gamma[i]);
      for (std::size_t i = 0; i < p.beta.size(); ++i)
        update(p.beta[i], gl.beta[i], state.m.layers[k].beta[i], state.v.layers[k].beta[i]);
    }
  }
}

}  // namespace edgecl
