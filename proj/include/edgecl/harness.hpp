#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgecl/bundle.hpp"
#include "edgecl/csv.hpp"
#include "edgecl/dataset.hpp"
#include "edgecl/errors.hpp"
#include "edgecl/report.hpp"
#include "edgecl/support_set.hpp"
#include "edgecl/trainer.hpp"

namespace edgecl {

// One experiment family: which data, which class is held out of pretraining,
// which strategies compete, and across which grids/seeds.
struct Scenario {
  SyntheticSpec data;
  std::string feature_csv;  // when set, replaces the synthetic source
  int held_out_label = -1;  // -1 = rotate through every class
  std::vector<std::size_t> k_grid{10, 50, 100, 200};
  std::vector<std::size_t> n_grid{10, 30, 50, 100};
  std::vector<std::string> strategies{"pretrained", "retrained", "pilote"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir;  // empty = keep results in memory only
  TrainConfig train;
  std::size_t exemplars_per_class = 200;
  std::size_t new_sample_count = 30;
  double test_fraction = 0.3;
  bool compare_random_selection = false;  // adds a random-exemplar series to sweep-k
};

struct RunRecord {
  int held_out = -1;
  std::uint64_t seed = 0;
  std::string strategy;
  std::size_t exemplars_per_class = 0;
  std::size_t new_sample_count = 0;
  std::string selection;  // exemplar selection of the old classes
  SessionReport report;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["held_out"] = held_out;
    j["seed"] = seed;
    j["strategy"] = strategy;
    j["exemplars_per_class"] = exemplars_per_class;
    j["new_sample_count"] = new_sample_count;
    j["selection"] = selection;
    j["report"] = report.to_json();
    return j;
  }
};

struct AggregateRow {
  std::string strategy;
  std::size_t exemplars_per_class = 0;
  std::size_t new_sample_count = 0;
  std::string selection;
  std::size_t runs = 0;
  double overall_mean = 0, overall_std = 0;
  double old_mean = 0, old_std = 0;
  double new_mean = 0, new_std = 0;
  double delta_mean = 0, delta_std = 0;
};

struct SweepResult {
  std::vector<RunRecord> runs;
  std::vector<AggregateRow> aggregate;
};

namespace detail {

constexpr std::uint64_t kTagData = 0xD1;
constexpr std::uint64_t kTagSplit = 0xD2;
constexpr std::uint64_t kTagTrain = 0xD3;
constexpr std::uint64_t kTagOldSelect = 0xD400;
constexpr std::uint64_t kTagNewPick = 0xD5;
constexpr std::uint64_t kTagNewSelect = 0xD6;

inline std::pair<double, double> mean_sample_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double q = 0.0;
  for (double x : v) q += (x - m) * (x - m);
  return {m, std::sqrt(q / static_cast<double>(v.size() - 1))};
}

inline void validate_scenario(const Scenario& sc, const std::vector<int>& labels) {
  if (sc.seeds.empty()) throw ConfigError("scenario: empty seed list");
  if (sc.k_grid.empty() || sc.n_grid.empty()) throw ConfigError("scenario: empty sweep grid");
  if (sc.strategies.empty()) throw ConfigError("scenario: no strategies selected");
  for (const auto& s : sc.strategies)
    if (s != "pilote" && s != "retrained" && s != "pretrained")
      throw ConfigError("scenario: unknown strategy '" + s + "'");
  if (!(sc.test_fraction > 0.0 && sc.test_fraction < 1.0))
    throw ConfigError("scenario: test fraction must lie in (0, 1)");
  if (sc.new_sample_count == 0) throw ConfigError("scenario: new sample count must be positive");
  if (sc.exemplars_per_class == 0)
    throw ConfigError("scenario: exemplars per class must be positive");
  if (labels.size() < 2) throw ConfigError("scenario: dataset has fewer than 2 classes");
  if (sc.held_out_label >= 0 &&
      std::find(labels.begin(), labels.end(), sc.held_out_label) == labels.end())
    throw ConfigError("scenario: held-out label " + std::to_string(sc.held_out_label) +
                      " is not in the dataset");
  sc.train.validate();
}

// Everything that is shared by all strategies of one (held-out, seed) cell:
// the split, the normalization and the cloud-pretrained network.
struct PreparedCell {
  Dataset old_train, new_pool, test;
  Normalizer normalizer;
  EmbeddingNetwork net;
  TrainConfig cfg;
};

class ScenarioRunner {
 public:
  explicit ScenarioRunner(const Scenario& sc) : sc_(sc) {
    if (!sc_.feature_csv.empty()) {
      csv_data_ = load_feature_csv(sc_.feature_csv);
      csv_data_->validate();
    }
  }

  std::vector<int> dataset_labels() {
    if (csv_data_) return csv_data_->class_labels();
    std::vector<int> out;
    for (int c = 0; c < sc_.data.num_classes; ++c) out.push_back(c);
    return out;
  }

  const PreparedCell& prepare(int held_out, std::uint64_t seed) {
    const auto key = std::make_pair(held_out, seed);
    auto it = cells_.find(key);
    if (it != cells_.end()) return it->second;

    Dataset full;
    if (csv_data_) {
      full = *csv_data_;
    } else {
      SyntheticSpec spec = sc_.data;
      spec.seed = derive_seed(seed, kTagData);
      full = make_feature_dataset(spec);
    }
    auto [train, test] = split_dataset(full, sc_.test_fraction, derive_seed(seed, kTagSplit));

    Dataset old_train = train.rows_without_label(held_out);
    Dataset new_pool = train.rows_with_label(held_out);
    if (new_pool.size() == 0)
      throw DataError("scenario: held-out class " + std::to_string(held_out) +
                      " has no training rows");

    Normalizer norm;
    norm.fit(old_train.features);
    norm.apply(old_train);
    norm.apply(new_pool);
    norm.apply(test);

    TrainConfig cfg = sc_.train;
    cfg.seed = derive_seed(seed, kTagTrain);
    auto [net, pre_report] = pretrain(old_train, cfg);
    (void)pre_report;

    PreparedCell cell{std::move(old_train), std::move(new_pool), std::move(test), std::move(norm),
                      std::move(net), cfg};
    return cells_.emplace(key, std::move(cell)).first->second;
  }

  // Builds the old-class support set under the pretrained network; budgets
  // larger than a class's training pool are capped at the pool size.
  SupportSet build_support(const PreparedCell& cell, std::size_t per_class,
                           SelectionMode selection, std::uint64_t seed) const {
    SupportSet support;
    const auto labels = cell.old_train.class_labels();
    support.set_cache_capacity(per_class * labels.size());
    for (int label : labels) {
      const Dataset rows = cell.old_train.rows_with_label(label);
      const std::size_t budget = std::min(per_class, rows.size());
      ExemplarSet set =
          selection == SelectionMode::Herding
              ? select_exemplars_herding(cell.net, rows.features, label, budget)
              : select_exemplars_random(rows.features, label, budget,
                                        derive_seed(seed, kTagOldSelect +
                                                              static_cast<std::uint64_t>(label)));
      support.insert(std::move(set));
    }
    return support;
  }

  Dataset pick_new_samples(const PreparedCell& cell, std::size_t count,
                           std::uint64_t seed) const {
    std::vector<std::size_t> idx(cell.new_pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, kTagNewPick));
    rng.shuffle(idx);
    idx.resize(std::min(count, idx.size()));
    std::sort(idx.begin(), idx.end());
    return cell.new_pool.subset(idx);
  }

  RunRecord run(int held_out, std::uint64_t seed, const std::string& strategy,
                std::size_t per_class, std::size_t new_count, SelectionMode old_selection) {
    const PreparedCell& cell = prepare(held_out, seed);
    const SupportSet support = build_support(cell, per_class, old_selection, seed);
    const Dataset new_samples = pick_new_samples(cell, new_count, seed);

    RunRecord rec;
    rec.held_out = held_out;
    rec.seed = seed;
    rec.strategy = strategy;
    rec.exemplars_per_class = per_class;
    rec.new_sample_count = new_count;
    rec.selection = old_selection == SelectionMode::Herding ? "herding" : "random";

    if (strategy == "pilote") {
      rec.report = edge_update(cell.net, support, new_samples, cell.cfg, &cell.test).report;
    } else if (strategy == "retrained") {
      rec.report =
          baseline_retrained(cell.net, support, new_samples, cell.cfg, &cell.test).report;
    } else if (strategy == "pretrained") {
      rec.report = baseline_pretrained(cell.net, support, new_samples,
                                       derive_seed(seed, kTagNewSelect), &cell.test)
                       .report;
    } else {
      throw ConfigError("unknown strategy '" + strategy + "'");
    }
    return rec;
  }

 private:
  Scenario sc_;
  std::optional<Dataset> csv_data_;
  std::map<std::pair<int, std::uint64_t>, PreparedCell> cells_;
};

inline std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs) {
  std::map<std::tuple<std::string, std::size_t, std::size_t, std::string>,
           std::vector<const RunRecord*>>
      groups;
  for (const RunRecord& r : runs)
    groups[{r.strategy, r.exemplars_per_class, r.new_sample_count, r.selection}].push_back(&r);

  std::vector<AggregateRow> out;
  for (const auto& [key, members] : groups) {
    AggregateRow row;
    std::tie(row.strategy, row.exemplars_per_class, row.new_sample_count, row.selection) = key;
    row.runs = members.size();
    std::vector<double> overall, old_acc, new_acc, delta;
    for (const RunRecord* r : members) {
      overall.push_back(r->report.overall_accuracy);
      old_acc.push_back(r->report.old_class_accuracy);
      new_acc.push_back(r->report.new_class_accuracy);
      delta.push_back(r->report.forgetting_delta);
    }
    std::tie(row.overall_mean, row.overall_std) = mean_sample_std(overall);
    std::tie(row.old_mean, row.old_std) = mean_sample_std(old_acc);
    std::tie(row.new_mean, row.new_std) = mean_sample_std(new_acc);
    std::tie(row.delta_mean, row.delta_std) = mean_sample_std(delta);
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_run_json(const std::string& dir, const std::string& name,
                           const RunRecord& rec) {
  if (dir.empty()) return;
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "runs", ec);
  if (ec) throw IoError("cannot create " + dir + "/runs: " + ec.message());
  const fs::path path = fs::path(dir) / "runs" / (name + ".json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << rec.to_json().dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_aggregate_csv(const std::string& dir, const std::string& name,
                                const std::vector<AggregateRow>& rows) {
  if (dir.empty()) return;
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const fs::path path = fs::path(dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "strategy,exemplars_per_class,new_sample_count,selection,runs,"
         "overall_mean,overall_std,old_mean,old_std,new_mean,new_std,delta_mean,delta_std\n";
  for (const AggregateRow& r : rows) {
    out << r.strategy << "," << r.exemplars_per_class << "," << r.new_sample_count << ","
        << r.selection << "," << r.runs;
    for (double v : {r.overall_mean, r.overall_std, r.old_mean, r.old_std, r.new_mean, r.new_std,
                     r.delta_mean, r.delta_std})
      out << "," << format_number(v);
    out << "\n";
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string run_name(const char* prefix, const RunRecord& r) {
  std::string name = std::string(prefix) + "_h" + std::to_string(r.held_out) + "_s" +
                     std::to_string(r.seed) + "_k" + std::to_string(r.exemplars_per_class) +
                     "_n" + std::to_string(r.new_sample_count) + "_" + r.selection + "_" +
                     r.strategy;
  return name;
}

}  // namespace detail

// Leave-one-out protocol: every class (or the fixed held-out one) takes a
// turn as the class to learn on the edge; all strategies and seeds run on
// identical cells. Emits one JSON per run plus a pooled aggregate table.
inline SweepResult run_leave_one_out(const Scenario& sc) {
  detail::ScenarioRunner runner(sc);
  detail::validate_scenario(sc, runner.dataset_labels());
  const std::vector<int> held =
      sc.held_out_label >= 0 ? std::vector<int>{sc.held_out_label} : runner.dataset_labels();

  SweepResult result;
  for (int h : held)
    for (std::uint64_t seed : sc.seeds)
      for (const std::string& strategy : sc.strategies) {
        RunRecord rec = runner.run(h, seed, strategy, sc.exemplars_per_class,
                                   sc.new_sample_count, SelectionMode::Herding);
        detail::write_run_json(sc.output_dir, detail::run_name("loo", rec), rec);
        result.runs.push_back(std::move(rec));
      }
  result.aggregate = detail::aggregate_runs(result.runs);
  detail::write_aggregate_csv(sc.output_dir, "loo_aggregate.csv", result.aggregate);
  return result;
}

// Accuracy as a function of the per-class exemplar budget, optionally with a
// random-selection series next to the herding one.
inline SweepResult sweep_support_size(const Scenario& sc) {
  detail::ScenarioRunner runner(sc);
  detail::validate_scenario(sc, runner.dataset_labels());
  const std::vector<int> held =
      sc.held_out_label >= 0 ? std::vector<int>{sc.held_out_label} : runner.dataset_labels();
  std::vector<SelectionMode> selections{SelectionMode::Herding};
  if (sc.compare_random_selection) selections.push_back(SelectionMode::RandomSeeded);

  SweepResult result;
  for (int h : held)
    for (std::uint64_t seed : sc.seeds)
      for (SelectionMode sel : selections)
        for (std::size_t k : sc.k_grid)
          for (const std::string& strategy : sc.strategies) {
            RunRecord rec = runner.run(h, seed, strategy, k, sc.new_sample_count, sel);
            detail::write_run_json(sc.output_dir, detail::run_name("sweepk", rec), rec);
            result.runs.push_back(std::move(rec));
          }
  result.aggregate = detail::aggregate_runs(result.runs);
  detail::write_aggregate_csv(sc.output_dir, "sweep_k_aggregate.csv", result.aggregate);
  return result;
}

// Accuracy as a function of how many new-class samples reach the edge.
inline SweepResult sweep_new_class_count(const Scenario& sc) {
  detail::ScenarioRunner runner(sc);
  detail::validate_scenario(sc, runner.dataset_labels());
  const std::vector<int> held =
      sc.held_out_label >= 0 ? std::vector<int>{sc.held_out_label} : runner.dataset_labels();

  SweepResult result;
  for (int h : held)
    for (std::uint64_t seed : sc.seeds)
      for (std::size_t n : sc.n_grid)
        for (const std::string& strategy : sc.strategies) {
          RunRecord rec = runner.run(h, seed, strategy, sc.exemplars_per_class, n,
                                     SelectionMode::Herding);
          detail::write_run_json(sc.output_dir, detail::run_name("sweepn", rec), rec);
          result.runs.push_back(std::move(rec));
        }
  result.aggregate = detail::aggregate_runs(result.runs);
  detail::write_aggregate_csv(sc.output_dir, "sweep_n_aggregate.csv", result.aggregate);
  return result;
}

// Embedding dump for external 2-D projection tools: one row per sample,
// embedding coordinates then the label name.
inline void emit_embeddings(const EmbeddingNetwork& net, const Dataset& ds,
                            const std::string& path) {
  ds.validate();
  const Matrix emb = net.embed_const(ds.features, StatMode::Running);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t j = 0; j < emb.cols(); ++j) out << "e" << j << ",";
  out << "label\n";
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    for (std::size_t j = 0; j < emb.cols(); ++j) out << detail::format_number(emb(i, j)) << ",";
    out << ds.name_of(ds.labels[i]) << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace edgecl
