#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edgecl/errors.hpp"
#include "edgecl/matrix.hpp"
#include "edgecl/network.hpp"
#include "edgecl/rng.hpp"

namespace edgecl {

enum class PairStrategy { NewOnly, CrossOldNew, Union };

inline PairStrategy pair_strategy_from_string(const std::string& name) {
  if (name == "new-only") return PairStrategy::NewOnly;
  if (name == "cross-old-new") return PairStrategy::CrossOldNew;
  if (name == "union") return PairStrategy::Union;
  throw ConfigError("unknown pair strategy '" + name + "'");
}

inline const char* to_string(PairStrategy s) {
  switch (s) {
    case PairStrategy::NewOnly: return "new-only";
    case PairStrategy::CrossOldNew: return "cross-old-new";
    case PairStrategy::Union: return "union";
  }
  return "?";
}

struct LossConfig {
  double margin = 1.0;       // margin of the dissimilar-pair hinge
  double alpha = 0.5;        // blend: alpha * distillation + (1 - alpha) * contrastive
  PairStrategy pair_strategy = PairStrategy::Union;
  std::size_t max_pairs = 4096;  // 0 disables subsampling
  bool normalize_terms = true;   // mean over exemplars/pairs instead of raw sums

  void validate() const {
    if (margin <= 0.0) throw ConfigError("margin must be positive");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  }
};

// Index pairs into a combined sample matrix (old rows first, then new rows).
struct PairBatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::uint8_t> similar;  // 1 iff the two samples share a label
  PairStrategy strategy = PairStrategy::NewOnly;
  bool degraded_to_new_only = false;  // Union requested but old set was empty

  std::size_t size() const { return pairs.size(); }
};

// Margin contrastive loss for one pair of embeddings.
// similar: squared distance; dissimilar: max(0, margin^2 - squared distance).
inline double contrastive_pair_loss(const std::vector<double>& e_i, const std::vector<double>& e_j,
                                    bool similar, double margin) {
  if (e_i.size() != e_j.size()) throw DimensionError("contrastive_pair_loss: dimension mismatch");
  if (margin <= 0.0) throw ConfigError("contrastive_pair_loss: margin must be positive");
  const double d2 = squared_distance(e_i, e_j);
  if (similar) return d2;
  return std::max(0.0, margin * margin - d2);
}

// Sum of row-wise squared distances between the embeddings a network produces
// now and the ones the frozen pre-update network produced for the same inputs.
inline double distillation_loss(const Matrix& new_embs, const Matrix& old_embs) {
  if (new_embs.rows() != old_embs.rows() || new_embs.cols() != old_embs.cols())
    throw DimensionError("distillation_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < new_embs.rows(); ++i)
    total += squared_distance(new_embs.row(i), old_embs.row(i), new_embs.cols());
  return total;
}

// Builds the index pairs for one training step. Indices refer to the combined
// matrix [old rows; new rows]. NewOnly enumerates all unordered pairs within
// the new set, CrossOldNew the full old x new product, Union both. If
// max_pairs > 0 and the pair set is larger, a seeded uniform subsample is
// taken and returned in canonical (i, j) order.
inline PairBatch build_pairs(const std::vector<int>& old_labels,
                             const std::vector<int>& new_labels, PairStrategy strategy,
                             std::uint64_t seed, std::size_t max_pairs = 0) {
  if (new_labels.empty()) throw DataError("build_pairs: new sample set is empty");
  const std::size_t n_old = old_labels.size();
  const std::size_t n_new = new_labels.size();

  PairBatch batch;
  batch.strategy = strategy;
  PairStrategy effective = strategy;
  if (strategy == PairStrategy::Union && n_old == 0) {
    effective = PairStrategy::NewOnly;
    batch.degraded_to_new_only = true;
  }

  auto label_of = [&](std::size_t idx) {
    return idx < n_old ? old_labels[idx] : new_labels[idx - n_old];
  };

  if (effective == PairStrategy::CrossOldNew || effective == PairStrategy::Union) {
    for (std::size_t i = 0; i < n_old; ++i)
      for (std::size_t j = 0; j < n_new; ++j) batch.pairs.emplace_back(i, n_old + j);
  }
  if (effective == PairStrategy::NewOnly || effective == PairStrategy::Union) {
    for (std::size_t i = 0; i < n_new; ++i)
      for (std::size_t j = i + 1; j < n_new; ++j)
        batch.pairs.emplace_back(n_old + i, n_old + j);
  }

  if (max_pairs > 0 && batch.pairs.size() > max_pairs) {
    Rng rng(seed);
    auto keep = rng.sample_indices(batch.pairs.size(), max_pairs);
    std::vector<std::pair<std::size_t, std::size_t>> sampled;
    sampled.reserve(keep.size());
    for (std::size_t k : keep) sampled.push_back(batch.pairs[k]);
    std::sort(sampled.begin(), sampled.end());
    batch.pairs = std::move(sampled);
  }

  batch.similar.resize(batch.pairs.size());
  for (std::size_t k = 0; k < batch.pairs.size(); ++k)
    batch.similar[k] = label_of(batch.pairs[k].first) == label_of(batch.pairs[k].second) ? 1 : 0;
  return batch;
}

struct JointLossResult {
  double loss = 0.0;
  double distillation_term = 0.0;  // already normalized (or raw, per config)
  double contrastive_term = 0.0;
  GradientSet grads;
};

// Joint objective of one edge-update step: alpha * distillation over the
// exemplar rows + (1 - alpha) * contrastive over the pair batch. The student
// runs one train-mode forward over the combined batch; the frozen teacher is
// evaluated with batch statistics over the same batch so that identical
// parameters give an exactly zero distillation term. Gradients flow through
// the student only.
inline JointLossResult joint_loss_and_grads(EmbeddingNetwork& net_new,
                                            const EmbeddingNetwork& net_old_frozen,
                                            std::size_t num_exemplar_rows,
                                            const PairBatch& pair_batch,
                                            const Matrix& combined_inputs,
                                            const LossConfig& cfg) {
  cfg.validate();
  if (num_exemplar_rows > combined_inputs.rows())
    throw DimensionError("joint loss: exemplar row count exceeds combined batch");
  for (const auto& [i, j] : pair_batch.pairs)
    if (i >= combined_inputs.rows() || j >= combined_inputs.rows())
      throw DimensionError("joint loss: pair index out of range");

  const std::size_t n = combined_inputs.rows();
  const std::size_t d = static_cast<std::size_t>(net_new.embedding_dim());

  net_new.set_mode(Mode::Train);
  Matrix student = net_new.embed(combined_inputs);

  JointLossResult result;
  Matrix upstream(n, d);

  // Distillation over the exemplar rows.
  if (cfg.alpha > 0.0 && num_exemplar_rows > 0) {
    const Matrix teacher = net_old_frozen.embed_const(combined_inputs, StatMode::Batch);
    double dist_sum = 0.0;
    const double scale =
        cfg.normalize_terms ? 1.0 / static_cast<double>(num_exemplar_rows) : 1.0;
    for (std::size_t i = 0; i < num_exemplar_rows; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = student(i, j) - teacher(i, j);
        dist_sum += diff * diff;
        upstream(i, j) += cfg.alpha * scale * 2.0 * diff;
      }
    }
    result.distillation_term = dist_sum * scale;
  }

  // Contrastive over the pair batch.
  if (cfg.alpha < 1.0 && pair_batch.size() > 0) {
    const double scale =
        cfg.normalize_terms ? 1.0 / static_cast<double>(pair_batch.size()) : 1.0;
    const double m2 = cfg.margin * cfg.margin;
    double contra_sum = 0.0;
    for (std::size_t k = 0; k < pair_batch.size(); ++k) {
      const auto [a, b] = pair_batch.pairs[k];
      const double d2 = squared_distance(student.row(a), student.row(b), d);
      if (pair_batch.similar[k]) {
        contra_sum += d2;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = student(a, j) - student(b, j);
          upstream(a, j) += (1.0 - cfg.alpha) * scale * 2.0 * diff;
          upstream(b, j) -= (1.0 - cfg.alpha) * scale * 2.0 * diff;
        }
      } else if (d2 < m2) {
        contra_sum += m2 - d2;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = student(a, j) - student(b, j);
          upstream(a, j) -= (1.0 - cfg.alpha) * scale * 2.0 * diff;
          upstream(b, j) += (1.0 - cfg.alpha) * scale * 2.0 * diff;
        }
      }
      // saturated hinge: zero loss, exactly zero gradient
    }
    result.contrastive_term = contra_sum * scale;
  }

  result.loss = cfg.alpha * result.distillation_term + (1.0 - cfg.alpha) * result.contrastive_term;
  result.grads = net_new.backward(upstream);
  return result;
}

}  // namespace edgecl
