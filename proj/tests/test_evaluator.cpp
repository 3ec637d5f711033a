#include <doctest.h>

#include <sstream>

#include "kge/evaluator.hpp"
#include "oracles.hpp"

using namespace kge;

TEST_CASE("rank examples") {
  const std::vector<double> s = {0.9, 0.5, 0.1};
  const std::vector<EntityId> known = {0};
  CHECK(rank_of(s, 1) == 2);
  CHECK(rank_of(s, 1, known) == 1);
  CHECK(rank_of(s, 0) == 1);
  CHECK(rank_of(s, 2) == 3);
  const std::vector<double> flat(5, 0.3);
  CHECK(rank_of(flat, 4) == 1);
  const std::vector<EntityId> self = {1};
  CHECK(rank_of(s, 1, self) == 2);  // the truth itself is never excluded
}

TEST_CASE("rank_triple on a hand-built distmult model") {
  // e0 is a known tail of (e2, r0, ?) and beats the truth e1
  const KgDataset d = KgDataset::build(Vocab::synthetic(3, 1), {{2, 0, 0}}, {}, {{2, 0, 1}});
  ModelParams p(ModelKind::distmult, {}, 3, 1, 1);
  p.tensor(0).data = {0.9, 0.5, 1.0};
  p.tensor(1).data = {1.0};
  const RankOutcome o = rank_triple(p, {2, 0, 1}, d);
  CHECK(o.tail_raw == 3);       // e2 (1.0) and e0 (0.9) beat e1 (0.5)
  CHECK(o.tail_filtered == 2);  // e0 filtered out
  CHECK(o.head_raw == 1);  // e2 scores 0.5 against 0.45 and 0.25
  CHECK(o.head_filtered == 1);
}

TEST_CASE("summary arithmetic") {
  std::vector<RankOutcome> one(1);
  one[0].head_raw = one[0].head_filtered = 2;
  one[0].tail_raw = one[0].tail_filtered = 1;
  const MetricsReport r = summarize(one);
  CHECK(r.num_triples == 1);
  CHECK(r.mean_rank_raw == 1.5);
  CHECK(r.mean_rank_filtered == 1.5);
  CHECK(r.hits(1, true) == 0.5);
  CHECK(r.hits(3, false) == 1.0);
  CHECK_THROWS_AS(r.hits(2, true), std::out_of_range);

  std::vector<RankOutcome> perfect(7);
  const MetricsReport p = summarize(perfect);
  CHECK(p.mean_rank_filtered == 1.0);
  CHECK(p.hits(1, true) == 1.0);
  CHECK(summarize({}).num_triples == 0);
}

TEST_CASE("ranks equal the brute-force oracle on random graphs") {
  Rng rng(77);
  for (std::uint64_t g = 0; g < 4; ++g) {
    const KgDataset d = oracle::random_dataset(50, 5, 300, g);
    for (ModelKind k : all_model_kinds()) {
      const ModelParams p = oracle::random_params(k, 50, 5, 4, rng);
      const auto got = rank_triples(p, d.test(), d, 3);
      REQUIRE(got.size() == d.test().size());
      for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE(got[i] == oracle::brute_force_rank(p, d.test()[i], d));
    }
  }
}

TEST_CASE("metric invariants") {
  Rng rng(5);
  const KgDataset d = oracle::random_dataset(50, 5, 300, 12);
  for (ModelKind k : all_model_kinds()) {
    const ModelParams p = oracle::random_params(k, 50, 5, 4, rng);
    const auto outcomes = rank_triples(p, d.test(), d);
    for (const auto& o : outcomes) {
      CHECK((1 <= o.head_filtered && o.head_filtered <= o.head_raw && o.head_raw <= 50));
      CHECK((1 <= o.tail_filtered && o.tail_filtered <= o.tail_raw && o.tail_raw <= 50));
    }
    const MetricsReport r = summarize(outcomes);
    CHECK(r.mean_rank_filtered <= r.mean_rank_raw);
    CHECK(r.mean_rank_filtered >= 1.0);
    for (bool f : {false, true})
      for (std::size_t i = 1; i < kHitsAt.size(); ++i)
        CHECK(r.hits(kHitsAt[i - 1], f) <= r.hits(kHitsAt[i], f));
  }
}

TEST_CASE("hits at |E| is 1") {
  Rng rng(3);
  const KgDataset d = oracle::random_dataset(10, 2, 60, 1);
  const ModelParams p = oracle::random_params(ModelKind::transe, 10, 2, 3, rng);
  const auto outcomes = rank_triples(p, d.test(), d);
  for (const auto& o : outcomes) CHECK((o.head_raw <= 10 && o.tail_raw <= 10));
  const MetricsReport r = summarize(outcomes);
  CHECK(r.hits(10, false) == 1.0);
  CHECK(r.hits(10, true) == 1.0);
}

TEST_CASE("worker count does not change the report") {
  const KgDataset d = oracle::modular_dataset(0.2, 4);
  Rng rng(8);
  const ModelParams p = oracle::random_params(ModelKind::complex, 100, 2, 6, rng);
  const MetricsReport one = evaluate(p, d, Split::test, 1);
  for (std::size_t w : {2u, 4u, 7u, 64u}) CHECK(evaluate(p, d, Split::test, w) == one);
  CHECK(one.num_triples == d.test().size());
  CHECK(evaluate(p, d, Split::valid, 2, 3).num_triples == 3);
}

TEST_CASE("positive affine transforms of the scores keep every rank") {
  Rng rng(19);
  const KgDataset d = oracle::random_dataset(30, 3, 150, 7);
  for (int trial = 0; trial < 10; ++trial) {
    ModelParams p = oracle::random_params(ModelKind::distmult, 30, 3, 5, rng);
    const auto before = rank_triples(p, d.test(), d);
    // scaling the relation rows by a > 0 maps each score s to a * s
    const double a = 0.1 + 5 * uniform01(rng);
    for (double& v : p.tensor(1).data) v *= a;
    CHECK(rank_triples(p, d.test(), d) == before);

    std::vector<double> scores(30);
    score_tails(p, d.test()[0].head, d.test()[0].relation, scores);
    const std::size_t r0 = rank_of(scores, d.test()[0].tail);
    const double b = uniform01(rng) * 10 - 5;
    for (double& s : scores) s = a * s + b;
    CHECK(rank_of(scores, d.test()[0].tail) == r0);
  }
}

TEST_CASE("metrics and ranks csv") {
  oracle::TempDir dir("eval_csv");
  const KgDataset d = oracle::modular_dataset(0.1, 2);
  Rng rng(1);
  const ModelParams p = oracle::random_params(ModelKind::transe, 100, 2, 4, rng);
  const auto outcomes = rank_triples(p, d.test(), d);
  write_metrics_csv(summarize(outcomes), dir / "metrics.csv");
  write_ranks_csv(outcomes, d.vocab(), dir / "ranks.csv");
  const std::string m = oracle::read_file(dir / "metrics.csv");
  CHECK(m.rfind("metric,raw,filtered\n", 0) == 0);
  CHECK(m.find("mean_rank,") != std::string::npos);
  CHECK(m.find("hits@10,") != std::string::npos);
  const std::string r = oracle::read_file(dir / "ranks.csv");
  CHECK(std::count(r.begin(), r.end(), '\n') == static_cast<long>(outcomes.size() + 1));
  CHECK(r.find(d.vocab().entity(d.test()[0].head)) != std::string::npos);
}

TEST_CASE("split names") {
  CHECK(parse_split("valid") == Split::valid);
  CHECK_FALSE(parse_split("dev").has_value());
  CHECK(to_string(Split::test) == "test");
}
