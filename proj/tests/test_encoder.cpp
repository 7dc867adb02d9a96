#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mpkd/encoder.hpp"
#include "support.hpp"

using namespace mpkd;
using doctest::Approx;

namespace {

NetworkParams hand_params(std::size_t entities, std::size_t relations, std::size_t d) {
  auto p = NetworkParams::initialize(entities, relations, d, 1, 0.0);
  p.transform = DenseMatrix::identity(d);
  p.attn.fill(0.0);
  return p;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("time encoding") {
    const auto p = NetworkParams::initialize(3, 2, 8, 4);
    const auto k0 = time_encode(p, 0);
    for (double x : k0) CHECK(x == std::sqrt(1.0 / 8.0));
    CHECK(norm(k0) == Approx(1.0).epsilon(1e-15));
    CHECK(time_encode(p, 5) == time_encode(p, 5));

    auto one = NetworkParams::initialize(2, 1, 1, 1);
    one.time_freq = {std::numbers::pi};
    CHECK(time_encode(one, 1)[0] == Approx(-1.0).epsilon(1e-15));
  }

  TEST_CASE("initialization shapes and bounds") {
    const auto p = NetworkParams::initialize(5, 3, 4, 2);
    CHECK(p.entity_emb.rows() == 5);
    CHECK(p.relation_emb.rows() == 6);
    CHECK(p.attn.cols() == 16);
    for (double x : p.entity_emb.values()) CHECK(std::abs(x) <= 3.0);
    CHECK(p.time_freq[0] == 1.0);
    CHECK_THROWS_AS(NetworkParams::initialize(5, 3, 0, 2), Error);
    CHECK_THROWS_AS(NetworkParams::initialize(5, 3, 4, 2, 1.0), Error);
  }

  TEST_CASE("zero layers returns the embedding row") {
    const auto kg = testing::random_graph(5, 2, 6, 20, 1);
    const auto p = NetworkParams::initialize(5, 2, 4, 3);
    const auto row = p.entity_emb.row(2);
    CHECK(encode_entity(p, kg, 2, 4, {8, 0}) == Vector(row.begin(), row.end()));
  }

  TEST_CASE("single neighbor passes its embedding through the transform") {
    const TemporalKG kg(Vocabulary::numbered(3), Vocabulary::numbered(1), {{0, 0, 1, 2}}, 5);
    const auto p = NetworkParams::initialize(3, 1, 4, 6, 0.0);
    const auto h = encode_entity(p, kg, 0, 3, {8, 1});
    Vector pre(4);
    vec_mat(p.entity_emb.row(1), p.transform, pre);
    for (std::size_t j = 0; j < 4; ++j) CHECK(h[j] == std::max(pre[j], 0.0));
  }

  TEST_CASE("two neighbors with zero attention average their embeddings") {
    const TemporalKG kg(Vocabulary::numbered(3), Vocabulary::numbered(1), {{0, 0, 1, 0}, {2, 0, 0, 1}}, 4);
    auto p = hand_params(3, 1, 2);
    p.entity_emb = DenseMatrix::from_rows({{0.1, 0.2}, {1.0, -3.0}, {0.5, 1.0}});
    const auto h = encode_entity(p, kg, 0, 2, {8, 1});
    // mean of (1,-3) and (0.5,1) is (0.75,-1); ReLU keeps (0.75, 0)
    CHECK(h[0] == Approx(0.75).epsilon(1e-15));
    CHECK(h[1] == 0.0);
  }

  TEST_CASE("no history falls back to the entity's own row") {
    const TemporalKG kg(Vocabulary::numbered(3), Vocabulary::numbered(1), {{0, 0, 1, 3}}, 5);
    const auto p = NetworkParams::initialize(3, 1, 4, 8, 0.0);
    Vector pre(4);
    vec_mat(p.entity_emb.row(2), p.transform, pre);
    for (double& x : pre) x = std::max(x, 0.0);
    const auto traj = encode_trajectory(p, kg, 2, 5, {8, 1});
    CHECK(traj.rows() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(Vector(traj.row(i).begin(), traj.row(i).end()) == pre);
    CHECK(encode_trajectory(p, kg, 0, 1, {8, 1}).rows() == 1);
    CHECK_THROWS_AS(encode_trajectory(p, kg, 0, 6, {8, 1}), Error);
  }

  TEST_CASE("unknown entity") {
    const auto kg = testing::random_graph(4, 2, 5, 10, 1);
    const auto p = NetworkParams::initialize(4, 2, 4, 1);
    CHECK_THROWS_AS(encode_entity(p, kg, 9, 2), Error);
  }

  TEST_CASE("dropout is seeded per node and off at inference") {
    const auto kg = testing::random_graph(6, 2, 6, 30, 2);
    const auto p = NetworkParams::initialize(6, 2, 16, 1, 0.5);
    const EncodeOptions train{8, 2, true, 11, nullptr}, train2{8, 2, true, 12, nullptr}, infer{8, 2};
    CHECK(encode_entity(p, kg, 1, 5, train) == encode_entity(p, kg, 1, 5, train));
    CHECK(encode_entity(p, kg, 1, 5, train) != encode_entity(p, kg, 1, 5, train2));
    auto q = p;
    q.dropout_rate = 0.0;
    CHECK(encode_entity(p, kg, 1, 5, infer) == encode_entity(q, kg, 1, 5, infer));
  }

  TEST_CASE("two-layer gradients") {
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto kg = testing::random_graph(5, 2, 6, 20, seed);
      auto p = NetworkParams::initialize(5, 2, 6, seed, 0.3);
      const EncodeOptions opt{3, 2, true, seed, nullptr};
      Rng rng = make_rng(seed);
      const auto w = testing::random_matrix(1, 6, rng);
      NetworkGrads g(p);
      {
        EncodingTape tape(p, kg, opt);
        tape.encode(2, 5);
        tape.accumulate(2, 5, w.row(0));
        tape.backward(g);
      }
      auto loss = [&] { return dot(encode_entity(p, kg, 2, 5, opt), w.row(0)); };
      const auto rep = grad_check(loss, p.trainable(), std::as_const(g).view(), 1e-6, 1e-6);
      CHECK(rep.passed);
    }
  }
}
