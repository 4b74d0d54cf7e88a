#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "edgecl/errors.hpp"
#include "edgecl/matrix.hpp"
#include "edgecl/network.hpp"
#include "edgecl/rng.hpp"

namespace edgecl {

// floor(K / num_classes); rejects budgets that would round down to zero.
inline std::size_t per_class_budget(std::size_t cache_size, std::size_t num_classes) {
  if (num_classes == 0) throw ConfigError("per_class_budget: no classes");
  if (cache_size < num_classes)
    throw ConfigError("per_class_budget: cache size " + std::to_string(cache_size) +
                      " leaves zero budget for " + std::to_string(num_classes) + " classes");
  return cache_size / num_classes;
}

// Exemplars of one class, kept in selection order. The order matters: the
// first k entries are exactly what a budget-k selection would have produced,
// so truncation never needs a re-selection pass.
struct ExemplarSet {
  int label = 0;
  std::vector<std::vector<double>> exemplars;
  std::vector<std::size_t> source_indices;  // positions in the candidate set

  std::size_t size() const { return exemplars.size(); }

  Matrix as_matrix() const { return Matrix::from_rows(exemplars); }

  void truncate(std::size_t k) {
    if (k < exemplars.size()) {
      exemplars.resize(k);
      source_indices.resize(k);
    }
  }
};

inline std::vector<double> mean_rows(const Matrix& m) {
  std::vector<double> mean(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) mean[j] += m(i, j);
  for (double& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

// Mean embedding of an exemplar set under the given network (running-stat
// inference; the network is never mutated).
inline std::vector<double> class_prototype(const EmbeddingNetwork& net, const ExemplarSet& set) {
  if (set.exemplars.empty()) throw DataError("class_prototype: empty exemplar set");
  return mean_rows(net.embed_const(set.as_matrix(), StatMode::Running));
}

enum class SelectionMode { Herding, RandomSeeded };

// Greedy herding: step k keeps the running mean of the selected embeddings as
// close as possible to the class mean over all candidates. Without
// replacement; ties resolved toward the lowest candidate index.
inline ExemplarSet select_exemplars_herding(const EmbeddingNetwork& net, const Matrix& samples,
                                            int label, std::size_t budget) {
  if (budget == 0) throw ConfigError("herding: budget must be positive");
  if (budget > samples.rows())
    throw ConfigError("herding: budget " + std::to_string(budget) + " exceeds " +
                      std::to_string(samples.rows()) + " samples");

  const Matrix emb = net.embed_const(samples, StatMode::Running);
  const std::vector<double> mu = mean_rows(emb);
  const std::size_t n = emb.rows();
  const std::size_t d = emb.cols();

  ExemplarSet set;
  set.label = label;
  std::vector<bool> chosen(n, false);
  std::vector<double> sum_selected(d, 0.0);

  for (std::size_t k = 1; k <= budget; ++k) {
    std::size_t best = n;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      double score = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double running = (sum_selected[j] + emb(i, j)) / static_cast<double>(k);
        const double diff = mu[j] - running;
        score += diff * diff;
      }
      if (score < best_score) {
        best_score = score;
        best = i;
      }
    }
    chosen[best] = true;
    for (std::size_t j = 0; j < d; ++j) sum_selected[j] += emb(best, j);
    set.exemplars.push_back(samples.row_copy(best));
    set.source_indices.push_back(best);
  }
  return set;
}

// Seeded selection without replacement, in draw order.
inline ExemplarSet select_exemplars_random(const Matrix& samples, int label, std::size_t budget,
                                           std::uint64_t seed) {
  if (budget == 0) throw ConfigError("random selection: budget must be positive");
  if (budget > samples.rows()) throw ConfigError("random selection: budget exceeds samples");
  Rng rng(seed);
  std::vector<std::size_t> order(samples.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  ExemplarSet set;
  set.label = label;
  for (std::size_t k = 0; k < budget; ++k) {
    set.exemplars.push_back(samples.row_copy(order[k]));
    set.source_indices.push_back(order[k]);
  }
  return set;
}

struct Prediction {
  int label = 0;
  std::map<int, double> squared_distances;  // per class, to its prototype
};

// Per-class exemplar lists plus a prototype cache stamped with the network
// parameter state it was computed under. Stale prototypes are recomputed on
// first use; staleness is never observable from the outside.
class SupportSet {
 public:
  SupportSet() = default;
  explicit SupportSet(std::size_t cache_capacity) : capacity_(cache_capacity) {}

  std::size_t cache_capacity() const { return capacity_; }
  void set_cache_capacity(std::size_t k) { capacity_ = k; }

  bool empty() const { return classes_.empty(); }
  std::size_t num_classes() const { return classes_.size(); }
  bool has_class(int label) const { return classes_.count(label) > 0; }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(classes_.size());
    for (const auto& [label, set] : classes_) out.push_back(label);
    return out;  // std::map iteration: ascending
  }

  const ExemplarSet& exemplar_set(int label) const {
    auto it = classes_.find(label);
    if (it == classes_.end()) throw DataError("no exemplar set for label " + std::to_string(label));
    return it->second;
  }

  void insert(ExemplarSet set) {
    if (classes_.count(set.label))
      throw DataError("class " + std::to_string(set.label) + " already in support set");
    if (set.exemplars.empty()) throw DataError("refusing to insert an empty exemplar set");
    classes_[set.label] = std::move(set);
    invalidate();
  }

  void truncate_class(int label, std::size_t k) {
    auto it = classes_.find(label);
    if (it == classes_.end()) throw DataError("truncate: unknown label");
    it->second.truncate(k);
    invalidate();
  }

  // All exemplars stacked (label-ascending, selection order within a class),
  // with the matching label per row.
  std::pair<Matrix, std::vector<int>> stacked() const {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (const auto& [label, set] : classes_) {
      for (const auto& e : set.exemplars) {
        rows.push_back(e);
        labels.push_back(label);
      }
    }
    return {Matrix::from_rows(rows), std::move(labels)};
  }

  std::size_t total_exemplars() const {
    std::size_t n = 0;
    for (const auto& [label, set] : classes_) n += set.size();
    return n;
  }

  const std::map<int, std::vector<double>>& prototypes(const EmbeddingNetwork& net) {
    refresh(net);
    return prototypes_;
  }

  // Nearest-class-mean over the cached prototypes; squared Euclidean
  // distance, ties broken toward the smallest label.
  Prediction classify(const EmbeddingNetwork& net, const std::vector<double>& x) {
    if (classes_.empty()) throw DataError("classify: support set is empty");
    refresh(net);
    Matrix q(1, x.size());
    q.set_row(0, x);
    const Matrix e = net.embed_const(q, StatMode::Running);
    Prediction pred;
    double best = std::numeric_limits<double>::infinity();
    bool first = true;
    for (const auto& [label, proto] : prototypes_) {
      const double d2 = squared_distance(e.row(0), proto.data(), proto.size());
      pred.squared_distances[label] = d2;
      if (first || d2 < best) {
        best = d2;
        pred.label = label;
        first = false;
      }
    }
    return pred;
  }

  // Batch variant; one forward pass for all queries.
  std::vector<Prediction> classify_batch(const EmbeddingNetwork& net, const Matrix& queries) {
    if (classes_.empty()) throw DataError("classify: support set is empty");
    refresh(net);
    const Matrix e = net.embed_const(queries, StatMode::Running);
    std::vector<Prediction> out(queries.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
      Prediction& pred = out[i];
      double best = std::numeric_limits<double>::infinity();
      bool first = true;
      for (const auto& [label, proto] : prototypes_) {
        const double d2 = squared_distance(e.row(i), proto.data(), proto.size());
        pred.squared_distances[label] = d2;
        if (first || d2 < best) {
          best = d2;
          pred.label = label;
          first = false;
        }
      }
    }
    return out;
  }

 private:
  void invalidate() { proto_stamp_ = 0; }

  void refresh(const EmbeddingNetwork& net) {
    if (proto_stamp_ == net.param_stamp() && !prototypes_.empty()) return;
    prototypes_.clear();
    for (const auto& [label, set] : classes_) prototypes_[label] = class_prototype(net, set);
    proto_stamp_ = net.param_stamp();
  }

  std::map<int, ExemplarSet> classes_;
  std::map<int, std::vector<double>> prototypes_;
  std::uint64_t proto_stamp_ = 0;  // 0 = cache invalid
  std::size_t capacity_ = 0;       // total cache size K; 0 = unbounded
};

// Adds one new class to the support set. Herding by default; RandomSeeded
// reproduces the protocol where new-class exemplars are drawn at random. If
// the budget covers all samples they are all kept (in selection order). With
// rebalance, every previously stored class is truncated to the fresh
// per-class budget via the selection-order prefix.
inline void add_new_class(SupportSet& support, const EmbeddingNetwork& net,
                          const Matrix& new_samples, int new_label, std::size_t budget,
                          bool rebalance = false, SelectionMode mode = SelectionMode::Herding,
                          std::uint64_t seed = 0) {
  if (support.has_class(new_label))
    throw DataError("add_new_class: label " + std::to_string(new_label) + " already present");
  if (new_samples.rows() == 0) throw DataError("add_new_class: no samples");
  const std::size_t effective = std::min<std::size_t>(budget, new_samples.rows());
  if (effective == 0) throw ConfigError("add_new_class: zero budget");

  ExemplarSet set = mode == SelectionMode::Herding
                        ? select_exemplars_herding(net, new_samples, new_label, effective)
                        : select_exemplars_random(new_samples, new_label, effective, seed);

  std::vector<int> old_labels = support.labels();
  support.insert(std::move(set));

  if (rebalance) {
    if (support.cache_capacity() == 0)
      throw ConfigError("rebalance requested but the support set has no cache capacity set");
    const std::size_t budget_now =
        per_class_budget(support.cache_capacity(), support.num_classes());
    for (int label : old_labels) support.truncate_class(label, budget_now);
  }
}

}  // namespace edgecl
