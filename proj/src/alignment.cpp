#include "mpkd/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace mpkd {

ParamView AlignParams::trainable() {
  return {temporal_WQ.values(), temporal_WK.values(), temporal_WV.values(), cross_WQ.values(), cross_WK.values()};
}

ConstParamView AlignParams::trainable() const {
  return {temporal_WQ.values(), temporal_WK.values(), temporal_WV.values(), cross_WQ.values(), cross_WK.values()};
}

AlignParams AlignParams::initialize(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw Error("alignment dimension must be positive");
  AlignParams p;
  Rng rng = make_rng(seed, {0xa11ULL});
  std::uniform_real_distribution<double> u(-std::sqrt(3.0 / static_cast<double>(dim)),
                                           std::sqrt(3.0 / static_cast<double>(dim)));
  p.temporal_WQ = DenseMatrix(dim, dim);
  for (double& x : p.temporal_WQ.values()) x = u(rng);
  p.temporal_WK = DenseMatrix(dim, dim);
  for (double& x : p.temporal_WK.values()) x = u(rng);
  p.temporal_WV = DenseMatrix::identity(dim);
  p.cross_WQ = DenseMatrix::identity(dim);
  p.cross_WK = DenseMatrix::identity(dim);
  return p;
}

AlignGrads::AlignGrads(const AlignParams& like)
    : temporal_WQ(like.dim(), like.dim()),
      temporal_WK(like.dim(), like.dim()),
      temporal_WV(like.dim(), like.dim()),
      cross_WQ(like.dim(), like.dim()),
      cross_WK(like.dim(), like.dim()) {}

void AlignGrads::zero() {
  for (auto b : view()) std::fill(b.begin(), b.end(), 0.0);
}

ParamView AlignGrads::view() {
  return {temporal_WQ.values(), temporal_WK.values(), temporal_WV.values(), cross_WQ.values(), cross_WK.values()};
}

ConstParamView AlignGrads::view() const {
  return {temporal_WQ.values(), temporal_WK.values(), temporal_WV.values(), cross_WQ.values(), cross_WK.values()};
}

namespace {

void check_square(const DenseMatrix& m, std::size_t d, const char* what) {
  if (m.rows() != d || m.cols() != d) throw Error(std::string("alignment: ") + what + " has wrong shape");
}

void check_shapes(const AlignParams& p, std::size_t d) {
  check_square(p.temporal_WQ, d, "temporal_WQ");
  check_square(p.temporal_WK, d, "temporal_WK");
  check_square(p.temporal_WV, d, "temporal_WV");
  check_square(p.cross_WQ, d, "cross_WQ");
  check_square(p.cross_WK, d, "cross_WK");
}

// Row-wise causal softmax of (A B^T) / sqrt(d).
DenseMatrix causal_attention(const DenseMatrix& queries, const DenseMatrix& keys) {
  const std::size_t T = queries.rows();
  const double inv = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  DenseMatrix attn(T, T);
  for (std::size_t t = 0; t < T; ++t) {
    Vector logits(t + 1);
    for (std::size_t i = 0; i <= t; ++i) logits[i] = dot(queries.row(t), keys.row(i)) * inv;
    const auto p = softmax_masked(logits, std::vector<bool>(t + 1, true));
    std::copy(p.begin(), p.end(), attn.row(t).begin());
  }
  return attn;
}

}  // namespace

Integration temporal_integrate(const AlignParams& params, const DenseMatrix& traj) {
  if (traj.rows() == 0) throw Error("temporal_integrate: empty trajectory");
  const std::size_t d = traj.cols();
  check_shapes(params, d);
  Integration out;
  out.input = traj;
  out.Q = matmul(traj, params.temporal_WQ);
  out.K = matmul(traj, params.temporal_WK);
  out.V = matmul(traj, params.temporal_WV);
  out.attn = causal_attention(out.Q, out.K);
  out.H = DenseMatrix(traj.rows(), d);
  for (std::size_t t = 0; t < traj.rows(); ++t)
    for (std::size_t i = 0; i <= t; ++i) axpy(out.attn(t, i), out.V.row(i), out.H.row(t));
  return out;
}

void integrate_backward(const AlignParams& params, const Integration& in, const DenseMatrix& grad_H,
                        AlignGrads* grads, DenseMatrix* grad_traj) {
  const std::size_t T = in.steps();
  const std::size_t d = in.input.cols();
  if (grad_H.rows() != T || grad_H.cols() != d) throw Error("integrate_backward: gradient shape mismatch");
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  DenseMatrix gQ(T, d), gK(T, d), gV(T, d);
  Vector g_attn, g_logit;
  for (std::size_t t = 0; t < T; ++t) {
    const auto gh = grad_H.row(t);
    g_attn.assign(t + 1, 0.0);
    for (std::size_t i = 0; i <= t; ++i) {
      g_attn[i] = dot(gh, in.V.row(i));
      axpy(in.attn(t, i), gh, gV.row(i));
    }
    g_logit.assign(t + 1, 0.0);
    softmax_backward(std::span<const double>(in.attn.row(t).data(), t + 1), g_attn, g_logit);
    for (std::size_t i = 0; i <= t; ++i) {
      const double g = g_logit[i] * inv;
      if (g == 0.0) continue;
      axpy(g, in.K.row(i), gQ.row(t));
      axpy(g, in.Q.row(t), gK.row(i));
    }
  }
  if (grads) {
    for (std::size_t t = 0; t < T; ++t) {
      add_outer(grads->temporal_WQ, in.input.row(t), gQ.row(t));
      add_outer(grads->temporal_WK, in.input.row(t), gK.row(t));
      add_outer(grads->temporal_WV, in.input.row(t), gV.row(t));
    }
  }
  if (grad_traj) {
    if (grad_traj->rows() != T || grad_traj->cols() != d) *grad_traj = DenseMatrix(T, d);
    Vector tmp(d);
    for (std::size_t t = 0; t < T; ++t) {
      auto out = grad_traj->row(t);
      mat_vec(params.temporal_WQ, gQ.row(t), tmp);
      axpy(1.0, tmp, out);
      mat_vec(params.temporal_WK, gK.row(t), tmp);
      axpy(1.0, tmp, out);
      mat_vec(params.temporal_WV, gV.row(t), tmp);
      axpy(1.0, tmp, out);
    }
  }
}

double correspondence(const DenseMatrix& H_source, const DenseMatrix& H_target, std::size_t t) {
  if (t < 1 || t > H_source.rows() || t > H_target.rows())
    throw Error("correspondence: time step " + std::to_string(t) + " outside the integration");
  return cosine(H_source.row(t - 1), H_target.row(t - 1));
}

Vector alignment_strengths(const AlignParams& params, const DenseMatrix& H_source, const DenseMatrix& H_target) {
  if (H_source.rows() != H_target.rows() || H_source.cols() != H_target.cols())
    throw Error("alignment_strengths: integrations differ in shape");
  check_shapes(params, H_source.cols());
  const auto attn = causal_attention(matmul(H_source, params.cross_WQ), matmul(H_target, params.cross_WK));
  Vector beta(attn.rows());
  for (std::size_t t = 0; t < attn.rows(); ++t) beta[t] = attn(t, t);
  return beta;
}

double alignment_strength(const AlignParams& params, const DenseMatrix& H_source, const DenseMatrix& H_target,
                          std::size_t t) {
  if (t < 1 || t > H_source.rows()) throw Error("alignment_strength: time step outside the integration");
  const std::size_t d = H_source.cols();
  check_shapes(params, d);
  // Only row t of the cross-attention is needed.
  Vector q(d), k(d);
  vec_mat(H_source.row(t - 1), params.cross_WQ, q);
  Vector logits(t);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < t; ++i) {
    vec_mat(H_target.row(i), params.cross_WK, k);
    logits[i] = dot(q, k) * inv;
  }
  return softmax_masked(logits, std::vector<bool>(t, true))[t - 1];
}

double alignment_loss(const AlignParams& params, const IntegrationLookup& source, const IntegrationLookup& target,
                      std::span<const AlignmentPair> pairs, std::size_t target_entities,
                      const AlignLossOptions& options, AlignLossGrads* grads, const AlignmentSet* context) {
  if (pairs.empty()) throw Error("alignment loss: empty pair set");
  if (!(options.margin > 0.0)) throw Error("alignment loss: margin must be positive");
  if (options.negatives < 1) throw Error("alignment loss: negative factor must be at least 1");

  std::map<EntityId, std::set<EntityId>> excluded;
  if (context) {
    for (const auto& p : *context) excluded[p.source].insert(p.target);
  } else {
    for (const auto& p : pairs) excluded[p.source].insert(p.target);
  }

  struct Term {
    std::size_t pair;
    std::vector<EntityId> negatives;
  };
  std::vector<Term> terms;
  std::size_t count = 0;
  std::size_t steps = 0;
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& p = pairs[pi];
    auto& ex = excluded[p.source];
    ex.insert(p.target);
    Rng rng = make_rng(options.seed, {options.batch_id, pi});
    Term term{pi, {}};
    if (ex.size() < target_entities) {
      for (std::size_t k = 0; k < options.negatives; ++k) {
        for (int attempt = 0; attempt < 100; ++attempt) {
          const auto e = static_cast<EntityId>(uniform_below(rng, target_entities));
          if (!ex.contains(e)) {
            term.negatives.push_back(e);
            break;
          }
        }
      }
    }
    const auto& hs = source(p.source).H;
    const auto& ht = target(p.target).H;
    if (hs.rows() != ht.rows()) throw Error("alignment loss: integrations cover different horizons");
    steps = hs.rows();
    count += term.negatives.size() * steps;
    terms.push_back(std::move(term));
  }
  if (count == 0) return 0.0;

  const double scale = 1.0 / static_cast<double>(count);
  const std::size_t d = params.dim();
  double total = 0.0;
  Vector gu(d), gv(d), gu_n(d), gv_n(d);
  auto grad_of = [&](std::map<EntityId, DenseMatrix>& m, EntityId e, std::size_t T) -> DenseMatrix& {
    auto it = m.find(e);
    if (it == m.end()) it = m.emplace(e, DenseMatrix(T, d)).first;
    return it->second;
  };
  for (const auto& term : terms) {
    if (term.negatives.empty()) continue;
    const auto& p = pairs[term.pair];
    const auto& hs = source(p.source).H;
    const auto& ht = target(p.target).H;
    const std::size_t T = hs.rows();
    const Vector beta = options.uniform_strength ? Vector(T, 1.0) : alignment_strengths(params, hs, ht);
    for (std::size_t t = 0; t < T; ++t) {
      double g_pos = 0.0;
      const bool pos_ok = cosine_with_grad(hs.row(t), ht.row(t), g_pos, gu, gv);
      for (EntityId neg : term.negatives) {
        const auto& hn = target(neg).H;
        if (hn.rows() != T) throw Error("alignment loss: integrations cover different horizons");
        double g_neg = 0.0;
        const bool neg_ok = cosine_with_grad(hs.row(t), hn.row(t), g_neg, gu_n, gv_n);
        const double hinge = options.margin - g_pos + g_neg;
        if (hinge <= 0.0) continue;
        total += scale * beta[t] * hinge;
        if (!grads) continue;
        const double w = options.weight * scale * beta[t];
        if (pos_ok) {
          axpy(-w, gu, grad_of(grads->source, p.source, T).row(t));
          axpy(-w, gv, grad_of(grads->target, p.target, T).row(t));
        }
        if (neg_ok) {
          axpy(w, gu_n, grad_of(grads->source, p.source, T).row(t));
          axpy(w, gv_n, grad_of(grads->target, neg, T).row(t));
        }
      }
    }
  }
  return total;
}

}  // namespace mpkd
