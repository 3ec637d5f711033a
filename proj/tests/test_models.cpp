#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "kge/error.hpp"
#include "kge/models.hpp"
#include "kge/sampler.hpp"
#include "oracles.hpp"

using namespace kge;

namespace {

double row_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<Triple> random_triples(std::size_t n, std::size_t n_e, std::size_t n_r, Rng& rng) {
  std::vector<Triple> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({static_cast<EntityId>(uniform_below(rng, n_e)),
                   static_cast<RelationId>(uniform_below(rng, n_r)),
                   static_cast<EntityId>(uniform_below(rng, n_e))});
  return out;
}

}  // namespace

TEST_CASE("registry names round trip") {
  for (ModelKind k : all_model_kinds()) CHECK(parse_model_kind(to_string(k)) == k);
  CHECK(all_model_kinds().size() == 8);
  CHECK_FALSE(parse_model_kind("transz").has_value());
  CHECK(registered_model_names().find("kg2e") != std::string::npos);
}

TEST_CASE("transe shapes and unit entity rows") {
  const ModelParams p = init_params(ModelKind::transe, 5, 2, 8, 1);
  REQUIRE(p.tensors().size() == 2);
  CHECK(p.tensor(0).shape.rows == 5);
  CHECK(p.tensor(0).shape.row_size == 8);
  CHECK(p.tensor(1).shape.rows == 2);
  CHECK(p.tensor(1).shape.row_size == 8);
  for (std::size_t r = 0; r < 5; ++r) CHECK(row_norm(p.tensor(0).row(r)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("declared shapes per kind") {
  const std::size_t e = 7, r = 3, d = 4;
  for (ModelKind k : all_model_kinds()) {
    const auto shapes = param_shapes(k, e, r, d);
    const ModelParams p(k, {}, e, r, d);
    REQUIRE(p.tensors().size() == shapes.size());
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      CHECK(shapes[s].rows == (shapes[s].index == RowIndex::entity ? e : r));
      CHECK(shapes[s].row_size == (shapes[s].square_matrix ? d * d : d));
      CHECK(p.tensor(s).data.size() == shapes[s].rows * shapes[s].row_size);
    }
  }
  CHECK(param_shapes(ModelKind::transr, e, r, d)[2].square_matrix);
  CHECK(param_shapes(ModelKind::rescal, e, r, d)[1].square_matrix);
  CHECK(param_shapes(ModelKind::complex, e, r, d).size() == 4);
  CHECK(param_shapes(ModelKind::kg2e, e, r, d).size() == 4);
}

TEST_CASE("initialization is deterministic and respects constraints") {
  for (ModelKind k : all_model_kinds()) {
    const ModelParams a = init_params(k, 9, 3, 6, 42), b = init_params(k, 9, 3, 6, 42);
    CHECK(a == b);
    CHECK_FALSE(a == init_params(k, 9, 3, 6, 43));
    CHECK(a.all_finite());
  }
  const ModelParams g = init_params(ModelKind::kg2e, 9, 3, 6, 1);
  for (std::size_t s : {2u, 3u})
    for (double v : g.tensor(s).data) CHECK((v >= 0.05 && v <= 5.0));
  const ModelParams h = init_params(ModelKind::transh, 9, 3, 6, 1);
  for (std::size_t r = 0; r < 3; ++r) CHECK(row_norm(h.tensor(2).row(r)) == doctest::Approx(1.0));
}

TEST_CASE("xavier bound holds for every initialized value") {
  const ModelParams p = init_params(ModelKind::distmult, 40, 10, 20, 3);
  const double be = std::sqrt(6.0 / (40 + 20)), br = std::sqrt(6.0 / (10 + 20));
  for (double v : p.tensor(0).data) CHECK(std::abs(v) <= be);
  for (double v : p.tensor(1).data) CHECK(std::abs(v) <= br);
}

TEST_CASE("initialization rejects an empty shape") {
  CHECK_THROWS_AS(init_params(ModelKind::transe, 5, 2, 0, 1), ConfigError);
  CHECK_THROWS_AS(init_params(ModelKind::transe, 0, 2, 4, 1), ConfigError);
  CHECK_THROWS_AS(init_params(ModelKind::transe, 5, 0, 4, 1), ConfigError);
}

TEST_CASE("scores agree with the reference formulas") {
  Rng rng(17);
  for (ModelKind k : all_model_kinds()) {
    for (bool l1 : {true, false}) {
      ModelParams p = oracle::random_params(k, 6, 3, 5, rng);
      ModelParams q(k, {l1, 0.05, 5.0}, 6, 3, 5);
      q.tensors() = p.tensors();
      for (const Triple& t : random_triples(30, 6, 3, rng)) {
        const double want = oracle::reference_score(q, t);
        CHECK_MESSAGE(score(q, t) == doctest::Approx(want).epsilon(1e-12), to_string(k));
      }
    }
  }
}

TEST_CASE("score examples") {
  SUBCASE("transe zero vectors score 0") {
    const ModelParams p(ModelKind::transe, {}, 2, 1, 3);
    CHECK(score(p, {0, 0, 1}) == 0.0);
  }
  SUBCASE("distmult arithmetic") {
    ModelParams p(ModelKind::distmult, {}, 2, 1, 2);
    p.tensor(0).data = {1, 2, 2, 1};
    p.tensor(1).data = {1, 1};
    CHECK(score(p, {0, 0, 1}) == 4.0);
  }
  SUBCASE("kg2e matching Gaussians score 0") {
    ModelParams p(ModelKind::kg2e, {}, 2, 1, 3);
    p.tensor(0).data = {1.0, 2.0, 3.0, 0.5, 0.5, 0.5};
    p.tensor(1).data = {0.5, 1.5, 2.5};
    p.tensor(2).data = {0.3, 0.4, 0.5, 0.2, 0.6, 1.0};
    p.tensor(3).data = {0.5, 1.0, 1.5};
    CHECK(score(p, {0, 0, 1}) == doctest::Approx(0.0).epsilon(1e-15));
    p.tensor(1).data[0] = 0.9;
    CHECK(score(p, {0, 0, 1}) < 0);
  }
}

TEST_CASE("complex with zero imaginary parts reduces to distmult") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams c = oracle::random_params(ModelKind::complex, 5, 2, 6, rng);
    std::fill(c.tensor(1).data.begin(), c.tensor(1).data.end(), 0.0);
    std::fill(c.tensor(3).data.begin(), c.tensor(3).data.end(), 0.0);
    ModelParams dm(ModelKind::distmult, {}, 5, 2, 6);
    dm.tensor(0).data = c.tensor(0).data;
    dm.tensor(1).data = c.tensor(2).data;
    for (const Triple& t : random_triples(10, 5, 2, rng))
      CHECK(score(c, t) == doctest::Approx(score(dm, t)).epsilon(1e-14));
  }
}

TEST_CASE("distmult is exactly symmetric, complex is not") {
  Rng rng(8);
  const ModelParams dm = oracle::random_params(ModelKind::distmult, 10, 3, 8, rng);
  for (const Triple& t : random_triples(200, 10, 3, rng))
    REQUIRE(score(dm, t) == score(dm, {t.tail, t.relation, t.head}));
  const ModelParams cx = oracle::random_params(ModelKind::complex, 10, 3, 8, rng);
  bool asymmetric = false;
  for (const Triple& t : random_triples(50, 10, 3, rng))
    if (std::abs(score(cx, t) - score(cx, {t.tail, t.relation, t.head})) > 1e-6) asymmetric = true;
  CHECK(asymmetric);
}

TEST_CASE("transr with identity matrices and transd with zero projections equal transe exactly") {
  Rng rng(21);
  for (bool l1 : {true, false}) {
    ModelParams te = oracle::random_params(ModelKind::transe, 8, 3, 5, rng);
    ModelParams tr(ModelKind::transr, {l1, 0.05, 5.0}, 8, 3, 5);
    ModelParams td(ModelKind::transd, {l1, 0.05, 5.0}, 8, 3, 5);
    ModelParams te2(ModelKind::transe, {l1, 0.05, 5.0}, 8, 3, 5);
    te2.tensors() = te.tensors();
    for (auto* p : {&tr, &td}) {
      p->tensor(0).data = te.tensor(0).data;
      p->tensor(1).data = te.tensor(1).data;
    }
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t i = 0; i < 5; ++i) tr.tensor(2).row(r)[i * 5 + i] = 1.0;
    // transd: nonzero relation projections, zero entity projections
    for (double& v : td.tensor(3).data) v = 0.37;
    for (const Triple& t : random_triples(100, 8, 3, rng)) {
      REQUIRE(score(tr, t) == score(te2, t));
      REQUIRE(score(td, t) == score(te2, t));
    }
  }
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(1234);
  for (ModelKind k : all_model_kinds()) {
    for (int draw = 0; draw < 10; ++draw) {
      const ModelParams p = oracle::random_params(k, 5, 2, 4, rng);
      const auto pos = random_triples(4, 5, 2, rng), neg = random_triples(4, 5, 2, rng);
      LossSpec spec;
      spec.kind = draw % 2 ? LossKind::softplus : LossKind::margin;
      spec.margin = 2.0 + uniform01(rng) * 4;
      spec.lambda = spec.kind == LossKind::softplus ? 0.01 : 0.0;
      const auto rep = oracle::finite_difference_check(p, pos, neg, spec);
      CHECK(rep.shapes_ok);
      CHECK(rep.absent_rows_zero);
      CHECK_MESSAGE(rep.max_error < 1e-4, to_string(k), ": ", rep.worst);
      CHECK_MESSAGE(rep.max_error_one_sided < 1e-3, to_string(k), ": ", rep.worst);
    }
  }
}

TEST_CASE("inactive hinges give an empty gradient") {
  ModelParams p(ModelKind::distmult, {}, 3, 1, 2);
  p.tensor(0).data = {1, 1, 1, 1, 0, 0};
  p.tensor(1).data = {1, 1};
  // pos score 2, neg score 0, margin 1: hinge inactive
  const std::vector<Triple> pos = {{0, 0, 1}}, neg = {{0, 0, 2}};
  SparseGrad g(p);
  const double l = batch_loss_and_gradient(p, pos, neg, {LossKind::margin, 1.0, 0.0}, &g);
  CHECK(l == 0.0);
  CHECK(g.empty());
}

TEST_CASE("distmult head gradient is r * t") {
  Rng rng(2);
  const ModelParams p = oracle::random_params(ModelKind::distmult, 4, 2, 5, rng);
  SparseGrad g(p);
  accumulate_score_gradient(p, {0, 1, 2}, 1.0, g);
  const double* gh = g.tensors()[0].find(0);
  REQUIRE(gh);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(gh[i] == doctest::Approx(p.tensor(1).row(1)[i] * p.tensor(0).row(2)[i]));
}

TEST_CASE("L1 kink takes subgradient 0") {
  ModelParams p(ModelKind::transe, {}, 2, 1, 2);
  p.tensor(0).data = {0.5, 0.0, 0.5, 1.0};
  p.tensor(1).data = {0.0, 0.0};
  SparseGrad g(p);
  accumulate_score_gradient(p, {0, 0, 1}, 1.0, g);
  const double* gr = g.tensors()[1].find(0);
  REQUIRE(gr);
  CHECK(gr[0] == 0.0);  // component exactly 0
  CHECK(gr[1] == 1.0);  // -|x| with x = -1
}

TEST_CASE("constraint projections") {
  Rng rng(4);
  ModelParams p = oracle::random_params(ModelKind::kg2e, 6, 2, 4, rng);
  p.tensor(2).data[0] = 100.0;
  p.tensor(3).data[1] = -3.0;
  apply_constraints(p);
  CHECK(p.tensor(2).data[0] == 5.0);
  CHECK(p.tensor(3).data[1] == 0.05);

  ModelParams h = oracle::random_params(ModelKind::transh, 6, 2, 4, rng);
  SparseGrad touched(h);
  touched.row(0, 3);
  touched.row(2, 1);
  const auto before = h.tensor(0).data;
  apply_constraints(h, touched);
  CHECK(row_norm(h.tensor(0).row(3)) == doctest::Approx(1.0));
  CHECK(row_norm(h.tensor(2).row(1)) == doctest::Approx(1.0));
  CHECK(h.tensor(0).row(2)[0] == before[2 * 4]);  // untouched row left alone
}

TEST_CASE("tail and head scoring match per-triple scores") {
  Rng rng(6);
  for (ModelKind k : all_model_kinds()) {
    const ModelParams p = oracle::random_params(k, 7, 2, 3, rng);
    std::vector<double> tails(7), heads(7);
    score_tails(p, 2, 1, tails);
    score_heads(p, 0, 4, heads);
    for (EntityId e = 0; e < 7; ++e) {
      CHECK(tails[static_cast<std::size_t>(e)] == score(p, {2, 1, e}));
      CHECK(heads[static_cast<std::size_t>(e)] == score(p, {e, 0, 4}));
    }
  }
}

TEST_CASE("softplus regularizer uses distinct touched rows") {
  Rng rng(10);
  const ModelParams p = oracle::random_params(ModelKind::distmult, 4, 1, 3, rng);
  const std::vector<Triple> pos = {{0, 0, 1}}, neg = {{0, 0, 0}};
  double want = 0;
  for (std::size_t r : {0u, 1u})
    for (double v : p.tensor(0).row(r)) want += v * v;
  for (double v : p.tensor(1).row(0)) want += v * v;
  CHECK(touched_sq_norm(p, pos, neg) == doctest::Approx(want));
}

TEST_CASE("checkpoint round trip and corruption") {
  oracle::TempDir dir("ckpt");
  Rng rng(12);
  for (ModelKind k : all_model_kinds()) {
    ModelParams p(k, {false, 0.1, 3.0}, 5, 2, 3);
    p.tensors() = oracle::random_params(k, 5, 2, 3, rng).tensors();
    save_params(p, dir / "m.bin");
    const ModelParams back = load_params(dir / "m.bin");
    CHECK(back == p);
  }
  std::string bytes = oracle::read_file(dir / "m.bin");
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x10);
  std::ofstream(dir / "bad.bin", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_params(dir / "bad.bin"), CacheError);
  std::ofstream(dir / "empty.bin", std::ios::binary) << "";
  CHECK_THROWS_AS(load_params(dir / "empty.bin"), CacheError);
}
