#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "edgecl/dataset.hpp"
#include "edgecl/errors.hpp"
#include "edgecl/losses.hpp"
#include "edgecl/network.hpp"
#include "edgecl/report.hpp"
#include "edgecl/rng.hpp"
#include "edgecl/support_set.hpp"

namespace edgecl {

struct TrainConfig {
  double initial_lr = 0.01;
  bool lr_halving = true;
  int max_epochs = 20;
  double early_stop_delta = 1e-4;
  int early_stop_patience = 5;
  int batch_size = 64;  // samples per step when pretraining, pairs per step on the edge
  double validation_fraction = 0.2;
  LossConfig loss;
  std::uint64_t seed = 0;
  std::vector<int> hidden_dims{1024, 512, 128, 64};
  int embedding_dim = 128;
  bool update_running_stats = true;

  void validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("train config: initial_lr must be positive");
    if (max_epochs < 0) throw ConfigError("train config: negative max_epochs");
    if (!(early_stop_delta > 0.0)) throw ConfigError("train config: early_stop_delta must be positive");
    if (early_stop_patience < 1) throw ConfigError("train config: early_stop_patience must be at least 1");
    if (batch_size < 2) throw ConfigError("train config: batch_size must be at least 2");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("train config: validation_fraction must lie in (0, 1)");
    loss.validate();
    for (int h : hidden_dims)
      if (h < 1) throw ConfigError("train config: hidden dims must be positive");
    if (embedding_dim < 1) throw ConfigError("train config: embedding_dim must be positive");
  }
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (!cfg.lr_halving) return cfg.initial_lr;
  return cfg.initial_lr * std::pow(0.5, static_cast<double>(epoch));
}

// True once the last `patience` consecutive epoch-to-epoch differences all
// fall below delta.
inline bool should_stop(const std::vector<double>& validation_losses, double delta,
                        int patience) {
  if (patience < 1) return false;
  if (validation_losses.size() < static_cast<std::size_t>(patience) + 1) return false;
  for (std::size_t i = validation_losses.size() - patience; i < validation_losses.size(); ++i)
    if (std::abs(validation_losses[i] - validation_losses[i - 1]) >= delta) return false;
  return true;
}

namespace detail {

constexpr std::uint64_t kTagInit = 0x01;
constexpr std::uint64_t kTagValSplit = 0x02;
constexpr std::uint64_t kTagValPairs = 0x03;
constexpr std::uint64_t kTagEpochShuffle = 0x100;
constexpr std::uint64_t kTagEpochPairs = 0x10000;
constexpr std::uint64_t kTagEpochPairOrder = 0x20000;

// Stratified validation holdout: floor(fraction * n) rows per class, so
// small classes may contribute none.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(
    const Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& [label, idx] : ds.by_class()) {
    Rng rng(derive_seed(seed, kTagValSplit + static_cast<std::uint64_t>(label)));
    rng.shuffle(idx);
    const std::size_t n_val =
        static_cast<std::size_t>(fraction * static_cast<double>(idx.size()));
    val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + n_val);
    train_idx.insert(train_idx.end(), idx.begin() + n_val, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {std::move(train_idx), std::move(val_idx)};
}

inline PairBatch pair_chunk(const PairBatch& all, const std::vector<std::size_t>& order,
                            std::size_t from, std::size_t to) {
  PairBatch chunk;
  chunk.strategy = all.strategy;
  chunk.degraded_to_new_only = all.degraded_to_new_only;
  for (std::size_t k = from; k < to; ++k) {
    chunk.pairs.push_back(all.pairs[order[k]]);
    chunk.similar.push_back(all.similar[order[k]]);
  }
  return chunk;
}

inline double mean_contrastive(const Matrix& embeddings, const PairBatch& pairs, double margin) {
  if (pairs.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs.pairs[k];
    sum += contrastive_pair_loss(embeddings.row_copy(i), embeddings.row_copy(j),
                                 pairs.similar[k] != 0, margin);
  }
  return sum / static_cast<double>(pairs.size());
}

}  // namespace detail

// NCM evaluation of a test set. new_label (when >= 0) splits the aggregate
// accuracies into old classes and the new class. The forgetting delta is not
// known here; edge sessions fill it in.
inline SessionReport evaluate(const EmbeddingNetwork& net, SupportSet support,
                              const Dataset& test, int new_label = -1) {
  if (support.empty()) throw DataError("evaluate: empty support set");
  test.validate();
  if (test.size() == 0) throw DataError("evaluate: empty test set");
  for (int y : test.class_labels())
    if (!support.has_class(y))
      throw DataError("evaluate: test label " + std::to_string(y) + " is not in the support set");

  SessionReport report;
  report.strategy = "evaluate";
  report.new_label = new_label;
  report.has_evaluation = true;
  report.class_order = support.labels();

  std::map<int, std::size_t> col_of;
  for (std::size_t c = 0; c < report.class_order.size(); ++c) col_of[report.class_order[c]] = c;
  report.confusion.assign(report.class_order.size(),
                          std::vector<int>(report.class_order.size(), 0));

  const std::vector<Prediction> preds = support.classify_batch(net, test.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    report.confusion[col_of[test.labels[i]]][col_of[preds[i].label]] += 1;
    if (preds[i].label == test.labels[i]) ++correct;
  }
  report.overall_accuracy = static_cast<double>(correct) / static_cast<double>(test.size());

  std::size_t old_correct = 0, old_total = 0, new_correct = 0, new_total = 0;
  for (std::size_t c = 0; c < report.class_order.size(); ++c) {
    std::size_t row_total = 0;
    for (int v : report.confusion[c]) row_total += static_cast<std::size_t>(v);
    if (row_total == 0) continue;
    const std::size_t diag = static_cast<std::size_t>(report.confusion[c][c]);
    report.per_class_accuracy[report.class_order[c]] =
        static_cast<double>(diag) / static_cast<double>(row_total);
    if (report.class_order[c] == new_label) {
      new_correct += diag;
      new_total += row_total;
    } else {
      old_correct += diag;
      old_total += row_total;
    }
  }
  report.old_class_accuracy =
      old_total ? static_cast<double>(old_correct) / static_cast<double>(old_total) : 0.0;
  report.new_class_accuracy =
      new_total ? static_cast<double>(new_correct) / static_cast<double>(new_total) : 0.0;
  return report;
}

// Cloud phase: representation learning from scratch with the margin
// contrastive loss over all pairs inside each shuffled mini-batch.
inline std::pair<EmbeddingNetwork, SessionReport> pretrain(const Dataset& data,
                                                           const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const auto by_class = data.by_class();
  if (by_class.size() < 2)
    throw DataError("pretrain: need at least 2 classes, got " + std::to_string(by_class.size()));
  for (const auto& [label, idx] : by_class)
    if (idx.size() < 2)
      throw DataError("pretrain: class " + std::to_string(label) + " has fewer than 2 samples");

  auto [train_idx, val_idx] = detail::validation_split(data, cfg.validation_fraction, cfg.seed);
  if (train_idx.size() < 2) throw DataError("pretrain: validation split leaves fewer than 2 training samples");
  const Dataset train = data.subset(train_idx);
  const Dataset val = data.subset(val_idx);

  EmbeddingNetwork net(
      make_mlp_specs(static_cast<int>(data.dim()), cfg.hidden_dims, cfg.embedding_dim),
      cfg.embedding_dim, derive_seed(cfg.seed, detail::kTagInit));
  net.set_freeze_running_stats(!cfg.update_running_stats);
  AdamState adam(net);

  PairBatch val_pairs;
  if (val.size() >= 2)
    val_pairs = build_pairs({}, val.labels, PairStrategy::NewOnly,
                            derive_seed(cfg.seed, detail::kTagValPairs), cfg.loss.max_pairs);

  LossConfig step_cfg = cfg.loss;
  step_cfg.alpha = 0.0;  // pretraining is contrastive-only

  SessionReport report;
  report.strategy = "pretrain";

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    Rng shuffle_rng(derive_seed(cfg.seed, detail::kTagEpochShuffle + epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (stop - start < 2) continue;  // batchnorm and pairing both need 2+
      Matrix batch(stop - start, train.dim());
      std::vector<int> batch_labels;
      for (std::size_t k = start; k < stop; ++k) {
        batch.set_row(k - start, train.features.row(order[k]));
        batch_labels.push_back(train.labels[order[k]]);
      }
      PairBatch pairs = build_pairs(
          {}, batch_labels, PairStrategy::NewOnly,
          derive_seed(cfg.seed, detail::kTagEpochPairs + 1009ULL * epoch + start),
          cfg.loss.max_pairs);
      JointLossResult res = joint_loss_and_grads(net, net, 0, pairs, batch, step_cfg);
      adam_step(net, res.grads, adam, lr);
      loss_sum += res.loss;
      ++steps;
    }
    report.train_losses.push_back(steps ? loss_sum / static_cast<double>(steps) : 0.0);

    double vloss = report.train_losses.back();
    if (val_pairs.size() > 0) {
      const Matrix vemb = net.embed_const(val.features, StatMode::Running);
      vloss = detail::mean_contrastive(vemb, val_pairs, cfg.loss.margin);
    }
    report.val_losses.push_back(vloss);
    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    report.epochs_run = epoch + 1;
    if (should_stop(report.val_losses, cfg.early_stop_delta, cfg.early_stop_patience)) {
      report.stopped_early = true;
      break;
    }
  }

  net.set_mode(Mode::Eval);
  return {std::move(net), std::move(report)};
}

struct EdgeOptions {
  std::size_t new_exemplar_budget = 0;  // 0 keeps every new sample
  bool rebalance = false;
  SelectionMode new_selection = SelectionMode::Herding;
  std::uint64_t selection_seed = 0;  // used by SelectionMode::RandomSeeded
};

struct EdgeResult {
  EmbeddingNetwork net;
  SupportSet support;
  SessionReport report;
};

namespace detail {

inline void check_edge_inputs(const SupportSet& support, const Dataset& new_samples) {
  if (support.empty()) throw DataError("edge update: empty support set");
  new_samples.validate();
  if (new_samples.size() == 0) throw DataError("edge update: no new samples");
  for (int y : new_samples.class_labels())
    if (support.has_class(y))
      throw DataError("edge update: label " + std::to_string(y) +
                      " already present in the support set");
}

inline void add_new_classes(SupportSet& support, const EmbeddingNetwork& net,
                            const Dataset& new_samples, const EdgeOptions& opts) {
  for (int label : new_samples.class_labels()) {
    const Dataset rows = new_samples.rows_with_label(label);
    const std::size_t budget =
        opts.new_exemplar_budget ? std::min(opts.new_exemplar_budget, rows.size()) : rows.size();
    add_new_class(support, net, rows.features, label, budget, opts.rebalance,
                  opts.new_selection,
                  derive_seed(opts.selection_seed, static_cast<std::uint64_t>(label)));
  }
}

inline double micro_accuracy(const EmbeddingNetwork& net, SupportSet support,
                             const Dataset& rows) {
  if (rows.size() == 0) return 0.0;
  const std::vector<Prediction> preds = support.classify_batch(net, rows.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (preds[i].label == rows.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

// Fills accuracies, confusion and the forgetting delta of an edge session.
// The delta holds the final support fixed and compares old-class accuracy
// under the pre-update and post-update networks, so a no-op update reports
// exactly zero.
inline void fill_edge_evaluation(SessionReport& report, const EmbeddingNetwork& net_old,
                                 const EmbeddingNetwork& net_new, const SupportSet& support,
                                 const Dataset& eval_set, const std::set<int>& old_labels,
                                 int new_label) {
  const SessionReport ev = evaluate(net_new, support, eval_set, new_label);
  report.has_evaluation = true;
  report.overall_accuracy = ev.overall_accuracy;
  report.per_class_accuracy = ev.per_class_accuracy;
  report.class_order = ev.class_order;
  report.confusion = ev.confusion;

  std::size_t old_correct = 0, old_total = 0, new_correct = 0, new_total = 0;
  for (std::size_t c = 0; c < ev.class_order.size(); ++c) {
    std::size_t row_total = 0;
    for (int v : ev.confusion[c]) row_total += static_cast<std::size_t>(v);
    const std::size_t diag = static_cast<std::size_t>(ev.confusion[c][c]);
    if (old_labels.count(ev.class_order[c])) {
      old_correct += diag;
      old_total += row_total;
    } else {
      new_correct += diag;
      new_total += row_total;
    }
  }
  report.old_class_accuracy =
      old_total ? static_cast<double>(old_correct) / static_cast<double>(old_total) : 0.0;
  report.new_class_accuracy =
      new_total ? static_cast<double>(new_correct) / static_cast<double>(new_total) : 0.0;

  std::vector<std::size_t> old_rows;
  for (std::size_t i = 0; i < eval_set.size(); ++i)
    if (old_labels.count(eval_set.labels[i])) old_rows.push_back(i);
  const Dataset old_eval = eval_set.subset(old_rows);
  report.old_class_accuracy_pre = micro_accuracy(net_old, support, old_eval);
  report.forgetting_delta = report.old_class_accuracy_pre - report.old_class_accuracy;
}

}  // namespace detail

// One incremental session: distillation-anchored contrastive training of a
// clone of net_old on exemplars + new-class samples, followed by support-set
// extension and prototype refresh. net_old is never mutated.
inline EdgeResult edge_update(const EmbeddingNetwork& net_old, const SupportSet& support,
                              const Dataset& new_samples, const TrainConfig& cfg,
                              const Dataset* eval_set = nullptr, const EdgeOptions& opts = {}) {
  cfg.validate();
  detail::check_edge_inputs(support, new_samples);

  const std::set<int> old_labels = [&] {
    const auto v = support.labels();
    return std::set<int>(v.begin(), v.end());
  }();

  EmbeddingNetwork net_new = net_old;
  net_new.set_freeze_running_stats(!cfg.update_running_stats);
  AdamState adam(net_new);

  auto [d0_features, d0_labels] = support.stacked();
  const std::size_t n0 = d0_features.rows();

  auto [train_idx, val_idx] =
      detail::validation_split(new_samples, cfg.validation_fraction, cfg.seed);
  if (train_idx.empty()) {  // tiny new set: train on everything, skip validation
    train_idx.insert(train_idx.end(), val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    val_idx.clear();
  }
  const Dataset dn_train = new_samples.subset(train_idx);
  const Dataset dn_val = new_samples.subset(val_idx);

  Matrix combined(n0 + dn_train.size(), d0_features.cols());
  for (std::size_t i = 0; i < n0; ++i) combined.set_row(i, d0_features.row(i));
  for (std::size_t i = 0; i < dn_train.size(); ++i)
    combined.set_row(n0 + i, dn_train.features.row(i));

  PairBatch val_pairs;
  Matrix val_combined;
  Matrix val_teacher;
  if (dn_val.size() > 0) {
    val_pairs = build_pairs(d0_labels, dn_val.labels, cfg.loss.pair_strategy,
                            derive_seed(cfg.seed, detail::kTagValPairs), cfg.loss.max_pairs);
    val_combined = Matrix(n0 + dn_val.size(), d0_features.cols());
    for (std::size_t i = 0; i < n0; ++i) val_combined.set_row(i, d0_features.row(i));
    for (std::size_t i = 0; i < dn_val.size(); ++i)
      val_combined.set_row(n0 + i, dn_val.features.row(i));
    val_teacher = net_old.embed_const(d0_features, StatMode::Running);
  }

  SessionReport report;
  report.strategy = "pilote";
  report.new_label =
      new_samples.class_labels().size() == 1 ? new_samples.class_labels().front() : -1;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    PairBatch epoch_pairs =
        build_pairs(d0_labels, dn_train.labels, cfg.loss.pair_strategy,
                    derive_seed(cfg.seed, detail::kTagEpochPairs + epoch), cfg.loss.max_pairs);
    std::vector<std::size_t> order(epoch_pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(derive_seed(cfg.seed, detail::kTagEpochPairOrder + epoch));
    order_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t steps = 0;
    std::size_t start = 0;
    do {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const PairBatch chunk = detail::pair_chunk(epoch_pairs, order, start, stop);
      JointLossResult res = joint_loss_and_grads(net_new, net_old, n0, chunk, combined, cfg.loss);
      adam_step(net_new, res.grads, adam, lr);
      loss_sum += res.loss;
      ++steps;
      start = stop;
    } while (start < order.size());
    report.train_losses.push_back(loss_sum / static_cast<double>(steps));

    double vloss = report.train_losses.back();
    if (val_pairs.size() > 0) {
      const Matrix student = net_new.embed_const(val_combined, StatMode::Running);
      double disti = 0.0;
      for (std::size_t i = 0; i < n0; ++i)
        disti += squared_distance(student.row(i), val_teacher.row(i), student.cols());
      if (cfg.loss.normalize_terms && n0 > 0) disti /= static_cast<double>(n0);
      const double contra = detail::mean_contrastive(student, val_pairs, cfg.loss.margin);
      vloss = cfg.loss.alpha * disti + (1.0 - cfg.loss.alpha) * contra;
    }
    report.val_losses.push_back(vloss);
    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    report.epochs_run = epoch + 1;
    if (should_stop(report.val_losses, cfg.early_stop_delta, cfg.early_stop_patience)) {
      report.stopped_early = true;
      break;
    }
  }

  net_new.set_mode(Mode::Eval);
  SupportSet updated = support;
  detail::add_new_classes(updated, net_new, new_samples, opts);

  if (eval_set)
    detail::fill_edge_evaluation(report, net_old, net_new, updated, *eval_set, old_labels,
                                 report.new_label);
  return {std::move(net_new), std::move(updated), std::move(report)};
}

// Re-training baseline: the same session without the distillation anchor.
inline EdgeResult baseline_retrained(const EmbeddingNetwork& net_old, const SupportSet& support,
                                     const Dataset& new_samples, const TrainConfig& cfg,
                                     const Dataset* eval_set = nullptr,
                                     const EdgeOptions& opts = {}) {
  TrainConfig plain = cfg;
  plain.loss.alpha = 0.0;
  EdgeResult result = edge_update(net_old, support, new_samples, plain, eval_set, opts);
  result.report.strategy = "retrained";
  return result;
}

// Warm-start baseline: no training at all. New-class exemplars are drawn at
// random (seeded) and a prototype is formed under the frozen network.
inline EdgeResult baseline_pretrained(const EmbeddingNetwork& net_old, const SupportSet& support,
                                      const Dataset& new_samples, std::uint64_t seed,
                                      const Dataset* eval_set = nullptr,
                                      std::size_t new_exemplar_budget = 0) {
  detail::check_edge_inputs(support, new_samples);
  const std::set<int> old_labels = [&] {
    const auto v = support.labels();
    return std::set<int>(v.begin(), v.end());
  }();

  EdgeOptions opts;
  opts.new_exemplar_budget = new_exemplar_budget;
  opts.new_selection = SelectionMode::RandomSeeded;
  opts.selection_seed = seed;

  EdgeResult result{net_old, support, SessionReport{}};
  result.net.set_mode(Mode::Eval);
  detail::add_new_classes(result.support, result.net, new_samples, opts);
  result.report.strategy = "pretrained";
  result.report.new_label =
      new_samples.class_labels().size() == 1 ? new_samples.class_labels().front() : -1;

  if (eval_set)
    detail::fill_edge_evaluation(result.report, net_old, result.net, result.support, *eval_set,
                                 old_labels, result.report.new_label);
  return result;
}

}  // namespace edgecl
