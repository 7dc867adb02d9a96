#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mpkd/encoder.hpp"

namespace mpkd {

enum class CorruptMode { object_only, both_sides };

struct NegativeSamplerConfig {
  std::size_t factor = 10;
  CorruptMode mode = CorruptMode::both_sides;
  std::uint64_t seed = 0;

  void validate() const;
};

/// -||h_s + h_r - h_o||^2
double transe_score(std::span<const double> h_s, std::span<const double> h_r, std::span<const double> h_o);

/// Scores q with representations built from kg's history before q.time.
double score_quadruple(const NetworkParams& params, const TemporalKG& kg, const Quadruple& q,
                       const EncodeOptions& options = {});

/// One ranking query: (entity, relation, ?, time) with known answer. Subject-side
/// queries use the reciprocal relation id (r + R).
struct Query {
  EntityId entity = 0;
  RelationId relation = 0;
  EntityId answer = 0;
  TimeStep time = 0;
};

/// The object-side query of q, plus the subject-side one when mode is both_sides.
std::vector<Query> queries_of(const Quadruple& q, std::size_t base_relations, CorruptMode mode);

/// Up to `factor` entities drawn uniformly from [0, num_entities), never equal to
/// `exclude`. Collisions are redrawn at most 100 times, then the slot is skipped.
/// The stream depends only on (seed, batch_id, position).
std::vector<EntityId> sample_negatives(const NegativeSamplerConfig& cfg, std::size_t num_entities,
                                       EntityId exclude, std::uint64_t batch_id, std::uint64_t position);

/// Margin ranking loss over the queries of `batch`: mean over queries of the mean
/// over drawn negatives of max(0, margin - f(pos) + f(neg)). Query i of quadruple j
/// uses negative position 2j + i.
///
/// With grads != nullptr, weight * dLoss is pushed into the tape (entity
/// representations) and grads->relation_emb; the caller runs tape.backward(*grads).
double reasoning_loss(EncodingTape& tape, const NetworkParams& params, std::span<const Quadruple> batch,
                      const NegativeSamplerConfig& cfg, double margin, std::uint64_t batch_id,
                      NetworkGrads* grads = nullptr, double weight = 1.0);

}  // namespace mpkd
