#pragma once
// Toy builders and gradient-check harnesses shared by the unit and acceptance suites.

#include <map>
#include <vector>

#include "mpkd/alignment.hpp"
#include "mpkd/encoder.hpp"
#include "mpkd/numerics.hpp"
#include "mpkd/scoring.hpp"
#include "mpkd/tkg.hpp"
#include "mpkd/trainer.hpp"

namespace mpkd::testing {

inline TemporalKG random_graph(std::size_t entities, std::size_t relations, TimeStep horizon, std::size_t events,
                               std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x70a});
  std::vector<Quadruple> quads;
  for (std::size_t i = 0; i < events; ++i) {
    const auto s = static_cast<EntityId>(uniform_below(rng, entities));
    auto o = static_cast<EntityId>(uniform_below(rng, entities));
    if (o == s) o = static_cast<EntityId>((o + 1) % entities);
    quads.push_back({s, static_cast<RelationId>(uniform_below(rng, relations)), o,
                     static_cast<TimeStep>(uniform_below(rng, horizon))});
  }
  return TemporalKG(Vocabulary::numbered(entities, "e"), Vocabulary::numbered(relations, "r"), std::move(quads),
                    horizon);
}

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  DenseMatrix m(rows, cols);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& x : m.values()) x = u(rng);
  return m;
}

/// Random alignment module parameters (cross transforms too, so strengths are not uniform).
inline AlignParams random_align(std::size_t d, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0xa7});
  AlignParams p;
  p.temporal_WQ = random_matrix(d, d, rng, 0.6);
  p.temporal_WK = random_matrix(d, d, rng, 0.6);
  p.temporal_WV = random_matrix(d, d, rng, 0.6);
  p.cross_WQ = random_matrix(d, d, rng, 0.6);
  p.cross_WK = random_matrix(d, d, rng, 0.6);
  return p;
}

inline ParamView concat(ParamView a, const ParamView& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline ConstParamView concat(ConstParamView a, const ConstParamView& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-5;

/// Reasoning loss on a random toy graph, gradients with respect to every trainable student block.
inline GradCheckReport check_reasoning_grad(std::uint64_t seed, std::size_t entities = 6, std::size_t dim = 8) {
  const auto kg = random_graph(entities, 3, 6, 24, seed);
  auto params = NetworkParams::initialize(entities, 3, dim, derive_seed(seed, {1}), 0.0);
  std::vector<Quadruple> batch;
  for (const auto& q : kg.quadruples())
    if (q.time >= 2 && batch.size() < 6) batch.push_back(q);
  const NegativeSamplerConfig neg{4, CorruptMode::both_sides, derive_seed(seed, {2})};
  const EncodeOptions enc{3, 1, false, 0, nullptr};

  NetworkGrads grads(params);
  {
    EncodingTape tape(params, kg, enc);
    reasoning_loss(tape, params, batch, neg, 0.5, 0, &grads);
    tape.backward(grads);
  }
  auto loss = [&] {
    EncodingTape tape(params, kg, enc);
    return reasoning_loss(tape, params, batch, neg, 0.5, 0);
  };
  return grad_check(loss, params.trainable(), std::as_const(grads).view(), kGradStep, kGradTol);
}

/// Strengths are held constant by the analytic gradient. A zero cross query
/// transform makes them input independent (beta_t = 1/t), so central differences
/// see the same constants.
inline AlignParams constant_strength_align(std::size_t d, std::uint64_t seed) {
  auto p = random_align(d, seed);
  p.cross_WQ.fill(0.0);
  return p;
}

/// Alignment loss over random trajectories. Checked coordinates: the temporal
/// attention transforms and every input trajectory.
inline GradCheckReport check_alignment_grad(std::uint64_t seed, std::size_t dim = 8, TimeStep steps = 5) {
  Rng rng = make_rng(seed, {0xa11});
  const std::size_t ns = 4, nt = 6;
  std::vector<DenseMatrix> src(ns), tgt(nt);
  for (auto& m : src) m = random_matrix(steps, dim, rng);
  for (auto& m : tgt) m = random_matrix(steps, dim, rng);
  auto phi = constant_strength_align(dim, seed);
  const AlignmentSet pairs{{0, 1}, {2, 3}, {3, 0}};
  AlignLossOptions opt;
  opt.negatives = 4;
  opt.margin = 0.5;
  opt.seed = derive_seed(seed, {3});

  auto run = [&](AlignLossGrads* g, std::map<EntityId, Integration>* keep_s, std::map<EntityId, Integration>* keep_t) {
    std::map<EntityId, Integration> cs, ct;
    IntegrationLookup s = [&](EntityId e) -> const Integration& {
      auto it = cs.find(e);
      if (it == cs.end()) it = cs.emplace(e, temporal_integrate(phi, src[e])).first;
      return it->second;
    };
    IntegrationLookup t = [&](EntityId e) -> const Integration& {
      auto it = ct.find(e);
      if (it == ct.end()) it = ct.emplace(e, temporal_integrate(phi, tgt[e])).first;
      return it->second;
    };
    const double v = alignment_loss(phi, s, t, pairs, nt, opt, g);
    if (keep_s) *keep_s = std::move(cs);
    if (keep_t) *keep_t = std::move(ct);
    return v;
  };

  AlignLossGrads dH;
  std::map<EntityId, Integration> cs, ct;
  run(&dH, &cs, &ct);
  AlignGrads ag(phi);
  std::vector<DenseMatrix> g_src(ns, DenseMatrix(steps, dim)), g_tgt(nt, DenseMatrix(steps, dim));
  for (const auto& [e, g] : dH.source) integrate_backward(phi, cs.at(e), g, &ag, &g_src[e]);
  for (const auto& [e, g] : dH.target) integrate_backward(phi, ct.at(e), g, &ag, &g_tgt[e]);

  ParamView params{phi.temporal_WQ.values(), phi.temporal_WK.values(), phi.temporal_WV.values()};
  ConstParamView analytic{ag.temporal_WQ.values(), ag.temporal_WK.values(), ag.temporal_WV.values()};
  for (std::size_t e = 0; e < ns; ++e) {
    params.push_back(src[e].values());
    analytic.push_back(std::as_const(g_src[e]).values());
  }
  for (std::size_t e = 0; e < nt; ++e) {
    params.push_back(tgt[e].values());
    analytic.push_back(std::as_const(g_tgt[e]).values());
  }
  return grad_check([&] { return run(nullptr, nullptr, nullptr); }, params, analytic, kGradStep, kGradTol);
}

/// Weighted ground-truth plus pseudo objective: all four parts nonempty, gradients
/// with respect to the student blocks and the temporal alignment transforms.
inline GradCheckReport check_combined_grad(std::uint64_t seed, std::size_t dim = 8) {
  const std::size_t ns = 7, nt = 8;
  const TimeStep T = 4;
  const auto source = random_graph(ns, 3, T, 30, derive_seed(seed, {10}));
  const auto target = random_graph(nt, 3, T, 20, derive_seed(seed, {11}));
  const auto pseudo_graph = random_graph(nt, 3, T, 8, derive_seed(seed, {12}));
  const auto teacher = NetworkParams::initialize(ns, 3, dim, derive_seed(seed, {13}), 0.0);
  auto student = NetworkParams::initialize(nt, 3, dim, derive_seed(seed, {14}), 0.0);
  auto phi = constant_strength_align(dim, derive_seed(seed, {15}));

  const EncodeOptions enc{3, 1, false, 0, nullptr};
  std::vector<DenseMatrix> teacher_traj;
  for (EntityId e = 0; e < ns; ++e) teacher_traj.push_back(encode_trajectory(teacher, source, e, T, enc));
  const std::vector<Quadruple> pq(pseudo_graph.quadruples().begin(), pseudo_graph.quadruples().end());
  const auto graph = target.merged(pq);

  CombinedBatch batch;
  for (const auto& q : target.quadruples())
    if (q.time >= 1 && batch.graph.size() < 5) batch.graph.push_back(q);
  for (const auto& q : pq)
    if (q.time >= 1 && batch.graph_pseudo.size() < 3) batch.graph_pseudo.push_back(q);
  batch.align = {{0, 0}, {1, 2}};
  batch.align_pseudo = {{3, 4, Provenance::pseudo, 0.4}};
  AlignmentSet context = batch.align;
  context.insert(context.end(), batch.align_pseudo.begin(), batch.align_pseudo.end());

  CombinedContext ctx;
  ctx.student = &student;
  ctx.align = &phi;
  ctx.student_graph = &graph;
  ctx.teacher_traj = &teacher_traj;
  ctx.context = &context;
  ctx.steps = T;
  ctx.weights = combined_weights(target.size(), pq.size(), 2, 1);
  ctx.graph_negatives = 3;
  ctx.align_negatives = 3;
  ctx.encode = enc;
  ctx.seed = derive_seed(seed, {16});

  NetworkGrads sg(student);
  AlignGrads ag(phi);
  combined_loss(ctx, batch, &sg, &ag);
  auto params = concat(student.trainable(), ParamView{phi.temporal_WQ.values(), phi.temporal_WK.values(),
                                                      phi.temporal_WV.values()});
  auto analytic = concat(std::as_const(sg).view(), ConstParamView{ag.temporal_WQ.values(), ag.temporal_WK.values(),
                                                                  ag.temporal_WV.values()});
  return grad_check([&] { return combined_loss(ctx, batch, nullptr, nullptr); }, params, analytic, kGradStep,
                    kGradTol);
}

}  // namespace mpkd::testing
