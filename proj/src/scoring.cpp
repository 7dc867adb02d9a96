#include "mpkd/scoring.hpp"

#include <string>

namespace mpkd {

void NegativeSamplerConfig::validate() const {
  if (factor < 1) throw Error("negative sampling factor must be at least 1");
}

double transe_score(std::span<const double> h_s, std::span<const double> h_r, std::span<const double> h_o) {
  double s = 0.0;
  for (std::size_t i = 0; i < h_s.size(); ++i) {
    const double u = h_s[i] + h_r[i] - h_o[i];
    s += u * u;
  }
  return -s;
}

double score_quadruple(const NetworkParams& params, const TemporalKG& kg, const Quadruple& q,
                       const EncodeOptions& options) {
  if (q.relation >= params.relation_emb.rows()) throw Error("unknown relation id " + std::to_string(q.relation));
  EncodingTape tape(params, kg, options);
  const auto hs = tape.encode(q.subject, q.time);
  const auto ho = tape.encode(q.object, q.time);
  return transe_score(hs, params.relation_emb.row(q.relation), ho);
}

std::vector<Query> queries_of(const Quadruple& q, std::size_t base_relations, CorruptMode mode) {
  std::vector<Query> out{{q.subject, q.relation, q.object, q.time}};
  if (mode == CorruptMode::both_sides)
    out.push_back({q.object, reciprocal_relation(q.relation, base_relations), q.subject, q.time});
  return out;
}

std::vector<EntityId> sample_negatives(const NegativeSamplerConfig& cfg, std::size_t num_entities,
                                       EntityId exclude, std::uint64_t batch_id, std::uint64_t position) {
  std::vector<EntityId> out;
  if (num_entities == 0) return out;
  Rng rng = make_rng(cfg.seed, {batch_id, position});
  out.reserve(cfg.factor);
  for (std::size_t k = 0; k < cfg.factor; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const auto e = static_cast<EntityId>(uniform_below(rng, num_entities));
      if (e != exclude) {
        out.push_back(e);
        break;
      }
    }
  }
  return out;
}

double reasoning_loss(EncodingTape& tape, const NetworkParams& params, std::span<const Quadruple> batch,
                      const NegativeSamplerConfig& cfg, double margin, std::uint64_t batch_id, NetworkGrads* grads,
                      double weight) {
  if (batch.empty()) throw Error("reasoning loss: empty batch");
  if (!(margin > 0.0)) throw Error("reasoning loss: margin must be positive");
  cfg.validate();
  const std::size_t d = params.dim();
  const std::size_t R = params.base_relations();
  const std::size_t n = params.num_entities();

  struct Item {
    Query query;
    std::vector<EntityId> negatives;
  };
  std::vector<Item> items;
  items.reserve(batch.size() * 2);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto qs = queries_of(batch[j], R, cfg.mode);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      if (qs[i].relation >= params.relation_emb.rows())
        throw Error("unknown relation id " + std::to_string(batch[j].relation));
      auto negs = sample_negatives(cfg, n, qs[i].answer, batch_id, 2 * j + i);
      if (!negs.empty()) items.push_back({qs[i], std::move(negs)});
    }
  }
  if (items.empty()) return 0.0;

  Vector u(d), hs(d), hr(d), ho(d);
  double total = 0.0;
  const double per_query = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    const auto& q = item.query;
    const auto h_s = tape.encode(q.entity, q.time);
    hs.assign(h_s.begin(), h_s.end());
    const auto h_r = params.relation_emb.row(q.relation);
    const auto h_o = tape.encode(q.answer, q.time);
    ho.assign(h_o.begin(), h_o.end());
    const double f_pos = transe_score(hs, h_r, ho);
    const double scale = per_query / static_cast<double>(item.negatives.size());
    for (EntityId neg : item.negatives) {
      const auto h_n = tape.encode(neg, q.time);
      const double f_neg = transe_score(hs, h_r, h_n);
      const double hinge = margin - f_pos + f_neg;
      if (hinge <= 0.0) continue;
      total += scale * hinge;
      if (!grads) continue;
      // d hinge = -d f_pos + d f_neg, with df/dh_s = df/dh_r = -2u and df/dh_o = 2u.
      const double w = weight * scale;
      for (std::size_t i = 0; i < d; ++i) u[i] = hs[i] + h_r[i] - ho[i];
      Vector un(d);
      for (std::size_t i = 0; i < d; ++i) un[i] = hs[i] + h_r[i] - h_n[i];
      Vector g_s(d);
      for (std::size_t i = 0; i < d; ++i) g_s[i] = 2.0 * u[i] - 2.0 * un[i];
      tape.accumulate(q.entity, q.time, g_s, w);
      axpy(w, g_s, grads->relation_emb.row(q.relation));
      tape.accumulate(q.answer, q.time, u, -2.0 * w);
      tape.accumulate(neg, q.time, un, 2.0 * w);
    }
  }
  return total;
}

}  // namespace mpkd
