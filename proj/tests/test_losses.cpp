#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <edgecl/edgecl.hpp>

#include "helpers.hpp"

using namespace edgecl;
using testutil::finite_difference_grads;
using testutil::flatten;
using testutil::joint_loss_value;
using testutil::make_identity_net;
using testutil::max_rel_error;
using testutil::random_matrix;

TEST_CASE("contrastive loss closed forms", "[losses]") {
  const std::vector<double> p{0.3, -0.7, 1.1};
  REQUIRE(contrastive_pair_loss(p, p, true, 1.0) == 0.0);
  REQUIRE(contrastive_pair_loss(p, p, false, 1.0) == 1.0);
  const std::vector<double> a{0.0, 0.0}, b{2.0, 0.0};  // distance 2 >= margin 1
  REQUIRE(contrastive_pair_loss(a, b, false, 1.0) == 0.0);
  REQUIRE(contrastive_pair_loss(a, b, true, 1.0) == 4.0);
}

TEST_CASE("contrastive loss is symmetric and nonnegative", "[losses]") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(4), b(4);
    for (auto* v : {&a, &b})
      for (double& x : *v) x = 3.0 * rng.normal();
    const bool sim = rng.uniform() < 0.5;
    const double m = 0.1 + 2.0 * rng.uniform();
    const double lab = contrastive_pair_loss(a, b, sim, m);
    REQUIRE(lab >= 0.0);
    REQUIRE(lab == contrastive_pair_loss(b, a, sim, m));
  }
}

TEST_CASE("contrastive loss rejects dimension mismatch and bad margin", "[losses]") {
  const std::vector<double> a{1.0, 2.0}, b{1.0};
  REQUIRE_THROWS_AS(contrastive_pair_loss(a, b, true, 1.0), DimensionError);
  REQUIRE_THROWS_AS(contrastive_pair_loss(a, a, true, 0.0), ConfigError);
}

TEST_CASE("distillation loss closed forms", "[losses]") {
  Rng rng(23);
  const Matrix m = random_matrix(4, 3, rng);
  REQUIRE(distillation_loss(m, m) == 0.0);

  // three rows each displaced by a unit vector in one coordinate
  Matrix a(3, 4), b(3, 4);
  for (std::size_t i = 0; i < 3; ++i) b(i, i) = 1.0;
  REQUIRE(distillation_loss(a, b) == 3.0);

  const Matrix x = random_matrix(5, 4, rng);
  const Matrix y = random_matrix(5, 4, rng);
  double brute = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) brute += (x(i, j) - y(i, j)) * (x(i, j) - y(i, j));
  REQUIRE_THAT(distillation_loss(x, y), Catch::Matchers::WithinRel(brute, 1e-12));

  REQUIRE_THROWS_AS(distillation_loss(Matrix(2, 3), Matrix(3, 3)), DimensionError);
}

TEST_CASE("pair strategy names round-trip", "[losses]") {
  for (PairStrategy s : {PairStrategy::NewOnly, PairStrategy::CrossOldNew, PairStrategy::Union})
    REQUIRE(pair_strategy_from_string(to_string(s)) == s);
  REQUIRE_THROWS_AS(pair_strategy_from_string("bogus"), ConfigError);
}

TEST_CASE("pair construction counts", "[losses]") {
  const std::vector<int> d0{0, 1, 0};
  const std::vector<int> dn{2, 2};

  const PairBatch new_only = build_pairs({}, {2, 2, 2, 2, 2}, PairStrategy::NewOnly, 1);
  REQUIRE(new_only.size() == 10);  // C(5, 2)
  for (std::uint8_t y : new_only.similar) REQUIRE(y == 1);

  const PairBatch cross = build_pairs(d0, dn, PairStrategy::CrossOldNew, 1);
  REQUIRE(cross.size() == 6);
  for (std::uint8_t y : cross.similar) REQUIRE(y == 0);  // labels 0/1 vs 2

  const PairBatch both = build_pairs(d0, dn, PairStrategy::Union, 1);
  REQUIRE(both.size() == 6 + 1);
  REQUIRE_FALSE(both.degraded_to_new_only);

  const PairBatch degraded = build_pairs({}, dn, PairStrategy::Union, 1);
  REQUIRE(degraded.degraded_to_new_only);
  REQUIRE(degraded.size() == 1);

  REQUIRE_THROWS_AS(build_pairs(d0, {}, PairStrategy::NewOnly, 1), DataError);
}

TEST_CASE("new-only pair count equals n choose 2 for n in [2, 50]", "[losses]") {
  for (std::size_t n = 2; n <= 50; ++n) {
    const std::vector<int> labels(n, 7);
    const PairBatch batch = build_pairs({}, labels, PairStrategy::NewOnly, 1);
    REQUIRE(batch.size() == n * (n - 1) / 2);
  }
}

TEST_CASE("similarity flags follow label equality", "[losses]") {
  const std::vector<int> d0{0, 1};
  const std::vector<int> dn{1, 2};
  const PairBatch batch = build_pairs(d0, dn, PairStrategy::Union, 1);
  auto label_of = [&](std::size_t idx) { return idx < 2 ? d0[idx] : dn[idx - 2]; };
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto [i, j] = batch.pairs[k];
    REQUIRE(i != j);
    REQUIRE((batch.similar[k] == 1) == (label_of(i) == label_of(j)));
  }
}

TEST_CASE("pair subsampling is seeded, capped and canonical", "[losses]") {
  const std::vector<int> d0(20, 0);
  const std::vector<int> dn(20, 1);
  const PairBatch full = build_pairs(d0, dn, PairStrategy::Union, 9);
  const PairBatch a = build_pairs(d0, dn, PairStrategy::Union, 9, 50);
  const PairBatch b = build_pairs(d0, dn, PairStrategy::Union, 9, 50);
  REQUIRE(a.size() == 50);
  REQUIRE(a.pairs == b.pairs);
  REQUIRE(std::is_sorted(a.pairs.begin(), a.pairs.end()));
  const std::set<std::pair<std::size_t, std::size_t>> universe(full.pairs.begin(),
                                                               full.pairs.end());
  for (const auto& pr : a.pairs) REQUIRE(universe.count(pr) == 1);
  const PairBatch c = build_pairs(d0, dn, PairStrategy::Union, 10, 50);
  REQUIRE_FALSE(a.pairs == c.pairs);
}

TEST_CASE("identical student and teacher give exactly zero distillation", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6}, 3), 3, 5);
  const EmbeddingNetwork frozen = net;
  Rng rng(2);
  const Matrix combined = random_matrix(6, 4, rng);
  LossConfig cfg;
  cfg.alpha = 1.0;
  const PairBatch pairs = build_pairs({0, 0, 1, 1}, {2, 2}, PairStrategy::Union, 3);
  const JointLossResult r = joint_loss_and_grads(net, frozen, 4, pairs, combined, cfg);
  REQUIRE(r.loss == 0.0);
  REQUIRE(r.distillation_term == 0.0);
  REQUIRE(r.grads.max_abs() == 0.0);
}

TEST_CASE("alpha zero reduces to the mean contrastive loss", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6}, 3), 3, 5);
  net.set_freeze_running_stats(true);
  const EmbeddingNetwork frozen = net;
  Rng rng(2);
  const Matrix combined = random_matrix(6, 4, rng);
  const PairBatch pairs = build_pairs({0, 0, 1, 1}, {2, 2}, PairStrategy::Union, 3);
  LossConfig cfg;
  cfg.alpha = 0.0;

  const JointLossResult r = joint_loss_and_grads(net, frozen, 4, pairs, combined, cfg);
  const Matrix emb = net.embed_const(combined, StatMode::Batch);
  double manual = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs.pairs[k];
    std::vector<double> a(emb.row(i), emb.row(i) + emb.cols());
    std::vector<double> b(emb.row(j), emb.row(j) + emb.cols());
    manual += contrastive_pair_loss(a, b, pairs.similar[k] != 0, cfg.margin);
  }
  manual /= static_cast<double>(pairs.size());
  REQUIRE_THAT(r.loss, Catch::Matchers::WithinRel(manual, 1e-12));
}

TEST_CASE("joint loss blends the two normalized terms linearly", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6}, 3), 3, 11);
  net.set_freeze_running_stats(true);
  EmbeddingNetwork frozen(make_mlp_specs(4, {6}, 3), 3, 12);  // different teacher
  Rng rng(4);
  const Matrix combined = random_matrix(6, 4, rng);
  const PairBatch pairs = build_pairs({0, 1, 0, 1}, {2, 2}, PairStrategy::Union, 3);

  for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
    LossConfig cfg;
    cfg.alpha = alpha;
    const JointLossResult r = joint_loss_and_grads(net, frozen, 4, pairs, combined, cfg);
    const double oracle = joint_loss_value(net, frozen, 4, pairs, combined, cfg);
    REQUIRE_THAT(r.loss, Catch::Matchers::WithinRel(oracle, 1e-12));
    REQUIRE_THAT(r.loss, Catch::Matchers::WithinRel(
                             alpha * r.distillation_term + (1 - alpha) * r.contrastive_term,
                             1e-12));
  }
}

TEST_CASE("raw-sum mode skips the per-term normalization", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6}, 3), 3, 11);
  net.set_freeze_running_stats(true);
  EmbeddingNetwork frozen(make_mlp_specs(4, {6}, 3), 3, 12);
  Rng rng(4);
  const Matrix combined = random_matrix(6, 4, rng);
  const PairBatch pairs = build_pairs({0, 1, 0, 1}, {2, 2}, PairStrategy::Union, 3);
  LossConfig mean_cfg, raw_cfg;
  raw_cfg.normalize_terms = false;
  const JointLossResult mean_r = joint_loss_and_grads(net, frozen, 4, pairs, combined, mean_cfg);
  const JointLossResult raw_r = joint_loss_and_grads(net, frozen, 4, pairs, combined, raw_cfg);
  REQUIRE_THAT(raw_r.distillation_term,
               Catch::Matchers::WithinRel(mean_r.distillation_term * 4.0, 1e-12));
  REQUIRE_THAT(raw_r.contrastive_term,
               Catch::Matchers::WithinRel(mean_r.contrastive_term * pairs.size(), 1e-12));
}

TEST_CASE("saturated dissimilar pairs contribute exactly zero gradient", "[losses]") {
  EmbeddingNetwork net = make_identity_net(2);
  Matrix combined(2, 2);
  combined.set_row(0, {0.0, 0.0});
  combined.set_row(1, {5.0, 0.0});  // distance 5 >> margin 1
  PairBatch pairs;
  pairs.pairs = {{0, 1}};
  pairs.similar = {0};
  LossConfig cfg;
  cfg.alpha = 0.0;
  const JointLossResult r = joint_loss_and_grads(net, net, 0, pairs, combined, cfg);
  REQUIRE(r.loss == 0.0);
  REQUIRE(r.grads.max_abs() == 0.0);
}

TEST_CASE("teacher parameters are never touched", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6}, 3), 3, 11);
  const EmbeddingNetwork frozen(make_mlp_specs(4, {6}, 3), 3, 12);
  const std::uint64_t stamp = frozen.param_stamp();
  Rng rng(4);
  const Matrix combined = random_matrix(6, 4, rng);
  const PairBatch pairs = build_pairs({0, 1}, {2, 2, 2, 2}, PairStrategy::Union, 3);
  LossConfig cfg;
  joint_loss_and_grads(net, frozen, 2, pairs, combined, cfg);
  REQUIRE(frozen.param_stamp() == stamp);
}

TEST_CASE("joint loss validates indices and alpha", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6}, 3), 3, 11);
  Rng rng(4);
  const Matrix combined = random_matrix(4, 4, rng);
  PairBatch bad;
  bad.pairs = {{0, 9}};
  bad.similar = {1};
  LossConfig cfg;
  REQUIRE_THROWS_AS(joint_loss_and_grads(net, net, 2, bad, combined, cfg), DimensionError);
  cfg.alpha = 1.5;
  REQUIRE_THROWS_AS(joint_loss_and_grads(net, net, 2, PairBatch{}, combined, cfg), ConfigError);
  cfg.alpha = 0.5;
  REQUIRE_THROWS_AS(joint_loss_and_grads(net, net, 9, PairBatch{}, combined, cfg),
                    DimensionError);
}

TEST_CASE("joint loss gradients match finite differences", "[losses]") {
  EmbeddingNetwork net(make_mlp_specs(4, {6, 5}, 3), 3, 21);
  net.set_freeze_running_stats(true);
  const EmbeddingNetwork frozen(make_mlp_specs(4, {6, 5}, 3), 3, 22);
  Rng rng(31);
  const Matrix combined = random_matrix(6, 4, rng);
  const PairBatch pairs = build_pairs({0, 0, 1, 1}, {2, 2}, PairStrategy::Union, 3);
  LossConfig cfg;
  cfg.alpha = 0.5;

  const JointLossResult r = joint_loss_and_grads(net, frozen, 4, pairs, combined, cfg);
  const std::vector<double> analytic = flatten(r.grads);
  auto loss = [&](const EmbeddingNetwork& n) {
    return joint_loss_value(n, frozen, 4, pairs, combined, cfg);
  };
  const std::vector<double> numeric = finite_difference_grads(net, loss);
  REQUIRE(analytic.size() == numeric.size());
  REQUIRE(max_rel_error(analytic, numeric) < 1e-4);
}
