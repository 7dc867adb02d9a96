#include <doctest.h>

#include "mpkd/scoring.hpp"
#include "support.hpp"

using namespace mpkd;
using doctest::Approx;

TEST_SUITE("scoring") {
  TEST_CASE("TransE score") {
    const std::vector<double> z{0, 0};
    CHECK(transe_score(z, z, z) == 0.0);
    CHECK(transe_score(std::vector<double>{1, 0}, std::vector<double>{0, 1}, z) == -2.0);
    Rng rng = make_rng(1);
    for (int i = 0; i < 100; ++i) {
      const auto m = testing::random_matrix(3, 5, rng, 3.0);
      CHECK(transe_score(m.row(0), m.row(1), m.row(2)) <= 0.0);
    }
  }

  TEST_CASE("queries and negatives") {
    const auto qs = queries_of({1, 2, 3, 4}, 5, CorruptMode::both_sides);
    REQUIRE(qs.size() == 2);
    CHECK(qs[1].entity == 3);
    CHECK(qs[1].relation == 7);
    CHECK(qs[1].answer == 1);
    CHECK(queries_of({1, 2, 3, 4}, 5, CorruptMode::object_only).size() == 1);

    const NegativeSamplerConfig cfg{10, CorruptMode::both_sides, 3};
    const auto a = sample_negatives(cfg, 7, 2, 4, 1);
    CHECK(a.size() == 10);
    for (auto e : a) CHECK(e != 2);
    CHECK(a == sample_negatives(cfg, 7, 2, 4, 1));
    CHECK(a != sample_negatives(cfg, 7, 2, 4, 2));
    CHECK(sample_negatives(cfg, 1, 0, 0, 0).empty());
  }

  TEST_CASE("hinge inactive gives zero, equal scores give the margin") {
    // Two entities, layers 0: h1 = h0 + hr and the reciprocal row is -hr, so
    // both positives score 0 and both negatives score -|hr|^2 = -1.
    auto p = NetworkParams::initialize(2, 1, 2, 1, 0.0);
    p.entity_emb = DenseMatrix::from_rows({{0.2, 0.3}, {1.2, 0.3}});
    p.relation_emb = DenseMatrix::from_rows({{1.0, 0.0}, {-1.0, 0.0}});
    const TemporalKG kg(Vocabulary::numbered(2), Vocabulary::numbered(1), {{0, 0, 1, 1}}, 2);
    const std::vector<Quadruple> batch{{0, 0, 1, 1}};
    const NegativeSamplerConfig neg{3, CorruptMode::both_sides, 1};
    EncodingTape tape(p, kg, {8, 0});
    CHECK(reasoning_loss(tape, p, batch, neg, 0.5, 0) == 0.0);
    CHECK(reasoning_loss(tape, p, batch, neg, 1.5, 0) == Approx(0.5).epsilon(1e-15));

    p.entity_emb = DenseMatrix::from_rows({{0.4, -0.1}, {0.4, -0.1}});
    EncodingTape same(p, kg, {8, 0});
    CHECK(reasoning_loss(same, p, batch, neg, 0.7, 0) == Approx(0.7).epsilon(1e-15));
    CHECK_THROWS_AS(reasoning_loss(same, p, std::span<const Quadruple>{}, neg, 0.7, 0), Error);
  }

  TEST_CASE("score_quadruple reads history only") {
    const auto kg = testing::random_graph(6, 2, 6, 30, 4);
    const auto p = NetworkParams::initialize(6, 2, 4, 2, 0.0);
    const Quadruple q{0, 1, 3, 3};
    const std::vector<Quadruple> later{{0, 0, 5, 3}, {3, 1, 2, 4}};
    CHECK(score_quadruple(p, kg, q, {8, 1}) == score_quadruple(p, kg.merged(later), q, {8, 1}));
    CHECK_THROWS_AS(score_quadruple(p, kg, {0, 9, 1, 2}), Error);
  }

  TEST_CASE("reasoning loss gradient") {
    for (std::uint64_t seed = 100; seed < 105; ++seed) CHECK(testing::check_reasoning_grad(seed).passed);
  }
}
