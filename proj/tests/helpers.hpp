#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <edgecl/edgecl.hpp>

namespace testutil {

using edgecl::Dataset;
using edgecl::EmbeddingNetwork;
using edgecl::GradientSet;
using edgecl::LayerSpec;
using edgecl::Matrix;
using edgecl::Rng;

inline Matrix identity_matrix(std::size_t d) {
  Matrix m(d, d);
  for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
  return m;
}

// Single linear layer with identity weights: embeddings equal inputs.
inline EmbeddingNetwork make_identity_net(int d) {
  EmbeddingNetwork net({{d, d, false, false}}, d, 0);
  net.layer_mut(0).weight = identity_matrix(static_cast<std::size_t>(d));
  net.set_mode(edgecl::Mode::Eval);
  return net;
}

inline EmbeddingNetwork make_linear_net(const Matrix& weight, const std::vector<double>& bias) {
  const int out = static_cast<int>(weight.rows());
  const int in = static_cast<int>(weight.cols());
  EmbeddingNetwork net({{in, out, false, false}}, out, 0);
  net.layer_mut(0).weight = weight;
  net.layer_mut(0).bias = bias;
  return net;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

// Visits every trainable parameter in GradientSet order:
// per layer weight row-major, bias, gamma, beta.
template <class F>
void for_each_param(EmbeddingNetwork& net, F&& f) {
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    auto& p = net.layer_mut(k);
    for (double& v : p.weight.data()) f(v);
    for (double& v : p.bias) f(v);
    for (double& v : p.gamma) f(v);
    for (double& v : p.beta) f(v);
  }
}

inline std::vector<double> flatten(const GradientSet& grads) {
  std::vector<double> out;
  for (const auto& l : grads.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
    out.insert(out.end(), l.gamma.begin(), l.gamma.end());
    out.insert(out.end(), l.beta.begin(), l.beta.end());
  }
  return out;
}

// Central finite differences of a pure loss functional over every parameter.
inline std::vector<double> finite_difference_grads(
    EmbeddingNetwork& net, const std::function<double(const EmbeddingNetwork&)>& loss,
    double h = 1e-5) {
  std::vector<double> out;
  for_each_param(net, [&](double& v) {
    const double saved = v;
    v = saved + h;
    const double up = loss(net);
    v = saved - h;
    const double down = loss(net);
    v = saved;
    out.push_back((up - down) / (2.0 * h));
  });
  return out;
}

// Max relative error with an absolute floor so near-zero entries compare sanely.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Gaussian blobs: `per_class` samples around each center, unit-ish spread.
inline Dataset make_blobs(const std::vector<std::vector<double>>& centers, std::size_t per_class,
                          double spread, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t dim = centers.front().size();
  std::vector<std::vector<double>> rows;
  Dataset ds;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> row(dim);
      for (std::size_t j = 0; j < dim; ++j) row[j] = centers[c][j] + spread * rng.normal();
      rows.push_back(std::move(row));
      ds.labels.push_back(static_cast<int>(c));
    }
    ds.label_names.push_back("class" + std::to_string(c));
  }
  ds.features = Matrix::from_rows(rows);
  return ds;
}

// Pure recomputation of the joint objective, used as the finite-difference
// and independent-recomputation oracle. Batch statistics mirror the
// train-mode forward of the library implementation.
inline double joint_loss_value(const EmbeddingNetwork& net_new, const EmbeddingNetwork& net_old,
                               std::size_t num_exemplar_rows, const edgecl::PairBatch& pairs,
                               const Matrix& combined, const edgecl::LossConfig& cfg) {
  const Matrix student = net_new.embed_const(combined, edgecl::StatMode::Batch);
  const std::size_t d = student.cols();
  double dist = 0.0;
  if (cfg.alpha > 0.0 && num_exemplar_rows > 0) {
    const Matrix teacher = net_old.embed_const(combined, edgecl::StatMode::Batch);
    for (std::size_t i = 0; i < num_exemplar_rows; ++i)
      dist += edgecl::squared_distance(student.row(i), teacher.row(i), d);
    if (cfg.normalize_terms) dist /= static_cast<double>(num_exemplar_rows);
  }
  double contra = 0.0;
  if (cfg.alpha < 1.0 && pairs.size() > 0) {
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [a, b] = pairs.pairs[k];
      const double d2 = edgecl::squared_distance(student.row(a), student.row(b), d);
      contra += pairs.similar[k] ? d2 : std::max(0.0, cfg.margin * cfg.margin - d2);
    }
    if (cfg.normalize_terms) contra /= static_cast<double>(pairs.size());
  }
  return cfg.alpha * dist + (1.0 - cfg.alpha) * contra;
}

}  // namespace testutil
