// Command-line front end: cloud-side pretraining, bundle packaging, edge
// updates and the experiment sweeps, all over CSV/JSON artifacts.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <edgecl/edgecl.hpp>

namespace {

using namespace edgecl;

// Train-config flags shared by pretrain, edge-update and the sweeps.
struct TrainFlags {
  TrainConfig cfg;
  bool no_halving = false;
  bool freeze_stats = false;
  bool raw_loss_sums = false;
  std::string pair_strategy;
  std::vector<int> hidden;

  void attach(CLI::App* sub) {
    sub->add_option("--epochs", cfg.max_epochs, "training epoch cap");
    sub->add_option("--lr", cfg.initial_lr, "initial learning rate");
    sub->add_flag("--no-lr-halving", no_halving, "keep the learning rate constant across epochs");
    sub->add_option("--batch-size", cfg.batch_size, "samples (cloud) or pairs (edge) per step");
    sub->add_option("--val-fraction", cfg.validation_fraction, "held-out fraction for early stopping");
    sub->add_option("--early-stop-delta", cfg.early_stop_delta, "loss-plateau threshold");
    sub->add_option("--patience", cfg.early_stop_patience, "plateau epochs before stopping");
    sub->add_option("--alpha", cfg.loss.alpha, "distillation weight in the joint loss");
    sub->add_option("--margin", cfg.loss.margin, "contrastive margin");
    sub->add_option("--max-pairs", cfg.loss.max_pairs, "pair subsample cap, 0 = no cap");
    sub->add_option("--pair-strategy", pair_strategy, "new-only | cross-old-new | union");
    sub->add_option("--hidden-dims", hidden, "comma-separated hidden layer widths")
        ->delimiter(',');
    sub->add_option("--embedding-dim", cfg.embedding_dim, "output embedding dimension");
    sub->add_flag("--freeze-running-stats", freeze_stats,
                  "do not update batchnorm running statistics while training");
    sub->add_flag("--raw-loss-sums", raw_loss_sums,
                  "use raw loss sums instead of per-term means");
  }

  TrainConfig finalize(std::uint64_t seed) {
    if (no_halving) cfg.lr_halving = false;
    if (freeze_stats) cfg.update_running_stats = false;
    if (raw_loss_sums) cfg.loss.normalize_terms = false;
    if (!pair_strategy.empty()) cfg.loss.pair_strategy = pair_strategy_from_string(pair_strategy);
    if (!hidden.empty()) cfg.hidden_dims = hidden;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

struct ScenarioFlags {
  Scenario sc;
  std::uint64_t base_seed = 0;
  int num_seeds = 5;
  int classes = 5;
  int windows = 200;
  double separability = 1.0;
  int window_len = 120;

  void attach(CLI::App* sub) {
    sub->add_option("--seed", base_seed, "base seed; runs use seed..seed+num-seeds-1")
        ->required();
    sub->add_option("--num-seeds", num_seeds, "number of consecutive run seeds")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", sc.output_dir, "report output directory")->required();
    sub->add_option("--data", sc.feature_csv, "feature CSV replacing the synthetic source");
    sub->add_option("--classes", classes, "synthetic class count");
    sub->add_option("--windows-per-class", windows, "synthetic windows per class");
    sub->add_option("--separability", separability, "synthetic class separability in [0, 1]");
    sub->add_option("--window-len", window_len, "synthetic window length in samples");
    sub->add_option("--held-out", sc.held_out_label, "held-out class label, -1 = rotate all");
    sub->add_option("--strategies", sc.strategies, "subset of pretrained,retrained,pilote")
        ->delimiter(',');
    sub->add_option("--exemplars-per-class", sc.exemplars_per_class, "old-class exemplar budget");
    sub->add_option("--new-samples", sc.new_sample_count, "new-class samples reaching the edge");
    sub->add_option("--test-fraction", sc.test_fraction, "held-out evaluation fraction");
  }

  Scenario finalize(TrainFlags& train) {
    sc.data.num_classes = classes;
    sc.data.windows_per_class = windows;
    sc.data.separability = separability;
    sc.data.window_len = window_len;
    sc.train = train.finalize(base_seed);
    sc.seeds.clear();
    for (int i = 0; i < num_seeds; ++i) sc.seeds.push_back(base_seed + static_cast<std::uint64_t>(i));
    return sc;
  }
};

void write_or_print_report(const nlohmann::json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path);
}

// Extends the bundle's label table with CSV label names it has not seen,
// in sorted-name order, then rewrites the dataset ids to table positions.
std::vector<std::string> remap_with_new_labels(Dataset& ds,
                                               const std::vector<std::string>& bundle_names) {
  std::vector<std::string> table = bundle_names;
  std::set<std::string> known(table.begin(), table.end());
  std::set<std::string> fresh;
  for (int y : ds.labels) {
    const std::string name = ds.name_of(y);
    if (!known.count(name)) fresh.insert(name);
  }
  for (const auto& name : fresh) table.push_back(name);
  remap_labels(ds, table);
  return table;
}

Dataset load_for_bundle(const std::string& path, const TransferBundle& bundle) {
  Dataset ds = load_feature_csv(path);
  remap_labels(ds, bundle.label_names);
  if (bundle.normalizer.fitted()) bundle.normalizer.apply(ds);
  return ds;
}

SupportSet select_support(const EmbeddingNetwork& net, const Dataset& data,
                          std::size_t per_class, SelectionMode mode, std::uint64_t seed) {
  SupportSet support;
  const auto labels = data.class_labels();
  support.set_cache_capacity(per_class * labels.size());
  for (int label : labels) {
    const Dataset rows = data.rows_with_label(label);
    const std::size_t budget = std::min(per_class, rows.size());
    ExemplarSet set = mode == SelectionMode::Herding
                          ? select_exemplars_herding(net, rows.features, label, budget)
                          : select_exemplars_random(rows.features, label, budget,
                                                    derive_seed(seed, 0xCA0 + label));
    support.insert(std::move(set));
  }
  return support;
}

void print_aggregate(const SweepResult& result) {
  std::printf("%-11s %5s %5s %-8s %4s  %-17s %-17s %-17s %-17s\n", "strategy", "K", "n",
              "select", "runs", "overall", "old", "new", "delta");
  for (const AggregateRow& r : result.aggregate)
    std::printf("%-11s %5zu %5zu %-8s %4zu  %8.4f +-%6.4f %8.4f +-%6.4f %8.4f +-%6.4f %8.4f +-%6.4f\n",
                r.strategy.c_str(), r.exemplars_per_class, r.new_sample_count,
                r.selection.c_str(), r.runs, r.overall_mean, r.overall_std, r.old_mean, r.old_std,
                r.new_mean, r.new_std, r.delta_mean, r.delta_std);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incremental embedding classifier: cloud pretraining, edge updates, experiment sweeps"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset as CSV");
  struct {
    SyntheticSpec spec;
    std::uint64_t seed = 0;
    std::string out, raw_out;
    double noise = -1.0;
  } sy;
  synth->add_option("--out", sy.out, "feature CSV destination")->required();
  synth->add_option("--raw-out", sy.raw_out, "optional raw sensor CSV destination");
  synth->add_option("--seed", sy.seed, "generator seed")->required();
  synth->add_option("--classes", sy.spec.num_classes, "class count");
  synth->add_option("--windows-per-class", sy.spec.windows_per_class, "windows per class");
  synth->add_option("--separability", sy.spec.separability, "class separability in [0, 1]");
  synth->add_option("--window-len", sy.spec.window_len, "window length in samples");
  synth->add_option("--noise", sy.noise, "per-sample noise level for all channels");
  synth->callback([&] {
    sy.spec.seed = sy.seed;
    if (sy.noise >= 0.0) {
      sy.spec.triaxial.noise_level = sy.noise;
      sy.spec.scalar.noise_level = sy.noise;
    }
    const auto windows = generate_synthetic(sy.spec);
    const Dataset ds = feature_dataset_from_windows(windows, sy.spec.layout);
    save_feature_csv(sy.out, ds);
    if (!sy.raw_out.empty()) save_raw_csv(sy.raw_out, windows, sy.spec.layout, ds.label_names);
    std::cout << "wrote " << ds.size() << " rows x " << ds.dim() << " features, "
              << ds.class_labels().size() << " classes to " << sy.out << "\n";
  });

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the embedding network and write a bundle");
  struct {
    std::string data, out, report;
    std::uint64_t seed = 0;
    std::size_t exemplars = 200;
    TrainFlags train;
  } pt;
  pre->add_option("--data", pt.data, "training feature CSV")->required();
  pre->add_option("--out", pt.out, "bundle destination directory")->required();
  pre->add_option("--seed", pt.seed, "training seed")->required();
  pre->add_option("--exemplars-per-class", pt.exemplars, "herded exemplar budget per class");
  pre->add_option("--report", pt.report, "write the session report JSON here instead of stdout");
  pt.train.attach(pre);
  pre->callback([&] {
    Dataset ds = load_feature_csv(pt.data);
    const TrainConfig cfg = pt.train.finalize(pt.seed);
    Normalizer norm;
    norm.fit(ds.features);
    norm.apply(ds);
    auto [net, report] = pretrain(ds, cfg);
    TransferBundle bundle(std::move(net));
    bundle.normalizer = norm;
    bundle.support = select_support(bundle.net, ds, pt.exemplars, SelectionMode::Herding, pt.seed);
    bundle.config = cfg;
    bundle.label_names = ds.label_names;
    save_bundle(bundle, pt.out);
    write_or_print_report(report.to_json(), pt.report);
  });

  // package
  auto* pack = app.add_subcommand(
      "package", "re-select or shrink bundle exemplars and write a new bundle");
  struct {
    std::string bundle, out, data, selection = "herding";
    std::size_t exemplars = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
  } pk;
  pack->add_option("--bundle", pk.bundle, "source bundle directory")->required();
  pack->add_option("--out", pk.out, "destination bundle directory")->required();
  pack->add_option("--exemplars-per-class", pk.exemplars, "new per-class exemplar budget")
      ->required();
  pack->add_option("--data", pk.data, "feature CSV to re-select exemplars from");
  pack->add_option("--selection", pk.selection, "herding | random");
  auto* pk_seed = pack->add_option("--seed", pk.seed, "required for random selection");
  pack->callback([&] {
    pk.seed_given = pk_seed->count() > 0;
    if (pk.selection != "herding" && pk.selection != "random")
      throw ConfigError("package: selection must be herding or random");
    const bool random = pk.selection == "random";
    if (random && !pk.seed_given) throw ConfigError("package: random selection needs --seed");
    TransferBundle bundle = load_bundle(pk.bundle);
    if (!pk.data.empty()) {
      const Dataset ds = load_for_bundle(pk.data, bundle);
      for (int label : bundle.support.labels())
        if (ds.rows_with_label(label).size() == 0)
          throw DataError("package: CSV has no rows for class " + bundle.label_names[label]);
      bundle.support = select_support(
          bundle.net, ds, pk.exemplars,
          random ? SelectionMode::RandomSeeded : SelectionMode::Herding, pk.seed);
    } else {
      if (random) throw ConfigError("package: random re-selection needs --data");
      for (int label : bundle.support.labels()) bundle.support.truncate_class(label, pk.exemplars);
      bundle.support.set_cache_capacity(pk.exemplars * bundle.support.num_classes());
    }
    save_bundle(bundle, pk.out);
    std::cout << "packaged " << bundle.support.total_exemplars() << " exemplars across "
              << bundle.support.num_classes() << " classes to " << pk.out << "\n";
  });

  // edge-update
  auto* edge = app.add_subcommand("edge-update",
                                  "extend a bundle with a new class learned on-device");
  struct {
    std::string bundle, data, out, eval, report, strategy = "pilote";
    std::uint64_t seed = 0;
    std::size_t new_budget = 0;
    bool rebalance = false;
    TrainFlags train;
  } eu;
  edge->add_option("--bundle", eu.bundle, "source bundle directory")->required();
  edge->add_option("--data", eu.data, "new-class feature CSV")->required();
  edge->add_option("--out", eu.out, "updated bundle destination")->required();
  edge->add_option("--seed", eu.seed, "training seed")->required();
  edge->add_option("--strategy", eu.strategy, "pilote | retrained | pretrained");
  edge->add_option("--eval", eu.eval, "feature CSV to evaluate on after the update");
  edge->add_option("--report", eu.report, "write the session report JSON here instead of stdout");
  edge->add_option("--new-budget", eu.new_budget, "exemplars kept for the new class, 0 = all");
  edge->add_flag("--rebalance", eu.rebalance, "shrink old classes to an equal share");
  eu.train.attach(edge);
  edge->callback([&] {
    TransferBundle bundle = load_bundle(eu.bundle);
    Dataset ds = load_feature_csv(eu.data);
    const std::vector<std::string> table = remap_with_new_labels(ds, bundle.label_names);
    if (bundle.normalizer.fitted()) bundle.normalizer.apply(ds);
    Dataset eval_set;
    if (!eu.eval.empty()) {
      eval_set = load_feature_csv(eu.eval);
      remap_labels(eval_set, table);
      if (bundle.normalizer.fitted()) bundle.normalizer.apply(eval_set);
    }
    const Dataset* eval_ptr = eu.eval.empty() ? nullptr : &eval_set;

    TrainConfig cfg = eu.train.finalize(eu.seed);
    // architecture fields describe the bundled network, not a CLI choice
    cfg.hidden_dims = bundle.config.hidden_dims;
    cfg.embedding_dim = bundle.config.embedding_dim;

    EdgeOptions opts;
    opts.new_exemplar_budget = eu.new_budget;
    opts.rebalance = eu.rebalance;
    opts.selection_seed = derive_seed(eu.seed, 0xED6E);

    EdgeResult result = [&] {
      if (eu.strategy == "pilote")
        return edge_update(bundle.net, bundle.support, ds, cfg, eval_ptr, opts);
      if (eu.strategy == "retrained")
        return baseline_retrained(bundle.net, bundle.support, ds, cfg, eval_ptr, opts);
      if (eu.strategy == "pretrained")
        return baseline_pretrained(bundle.net, bundle.support, ds,
                                   derive_seed(eu.seed, 0xED6E), eval_ptr, eu.new_budget);
      throw ConfigError("edge-update: strategy must be pilote, retrained or pretrained");
    }();

    TransferBundle updated(std::move(result.net));
    updated.layout = bundle.layout;
    updated.normalizer = bundle.normalizer;
    updated.support = std::move(result.support);
    updated.config = cfg;
    updated.label_names = table;
    save_bundle(updated, eu.out);
    write_or_print_report(result.report.to_json(), eu.report);
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "nearest-prototype evaluation of a bundle on a CSV");
  struct {
    std::string bundle, data, report;
  } evf;
  ev->add_option("--bundle", evf.bundle, "bundle directory")->required();
  ev->add_option("--data", evf.data, "evaluation feature CSV")->required();
  ev->add_option("--report", evf.report, "write the report JSON here instead of stdout");
  ev->callback([&] {
    const TransferBundle bundle = load_bundle(evf.bundle);
    const Dataset ds = load_for_bundle(evf.data, bundle);
    SessionReport report = evaluate(bundle.net, bundle.support, ds);
    write_or_print_report(report.to_json(), evf.report);
  });

  // sweeps
  ScenarioFlags loo_flags, swk_flags, swn_flags;
  TrainFlags loo_train, swk_train, swn_train;

  auto* loo = app.add_subcommand("loo", "leave-one-class-out comparison of all strategies");
  loo_flags.attach(loo);
  loo_train.attach(loo);
  loo->callback([&] {
    const SweepResult result = run_leave_one_out(loo_flags.finalize(loo_train));
    print_aggregate(result);
  });

  auto* swk = app.add_subcommand("sweep-k", "accuracy across per-class exemplar budgets");
  swk_flags.attach(swk);
  swk_train.attach(swk);
  bool random_series = false;
  swk->add_option("--k-grid", swk_flags.sc.k_grid, "exemplar budgets to sweep")->delimiter(',');
  swk->add_flag("--random-exemplars", random_series,
                "add a random-selection series next to herding");
  swk->callback([&] {
    swk_flags.sc.compare_random_selection = random_series;
    const SweepResult result = sweep_support_size(swk_flags.finalize(swk_train));
    print_aggregate(result);
  });

  auto* swn = app.add_subcommand("sweep-n", "accuracy across new-class sample counts");
  swn_flags.attach(swn);
  swn_train.attach(swn);
  swn->add_option("--n-grid", swn_flags.sc.n_grid, "new-sample counts to sweep")->delimiter(',');
  swn->callback([&] {
    const SweepResult result = sweep_new_class_count(swn_flags.finalize(swn_train));
    print_aggregate(result);
  });

  // emit-embeddings
  auto* emit = app.add_subcommand("emit-embeddings",
                                  "dump embedding coordinates plus labels for plotting");
  struct {
    std::string bundle, data, out;
  } em;
  emit->add_option("--bundle", em.bundle, "bundle directory")->required();
  emit->add_option("--data", em.data, "feature CSV to embed")->required();
  emit->add_option("--out", em.out, "CSV destination")->required();
  emit->callback([&] {
    const TransferBundle bundle = load_bundle(em.bundle);
    Dataset ds = load_feature_csv(em.data);
    if (bundle.normalizer.fitted()) bundle.normalizer.apply(ds);
    emit_embeddings(bundle.net, ds, em.out);
    std::cout << "wrote " << ds.size() << " embeddings to " << em.out << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", {{"kind", "usage_error"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  } catch (const edgecl::Error& e) {
    std::cerr << nlohmann::json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"kind", "internal_error"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 3;
  }
  return 0;
}
