#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>

#include "mpkd/numerics.hpp"
#include "mpkd/tkg.hpp"

namespace mpkd {

/// Trainable arrays of the alignment module: one causal self-attention layer over
/// an entity's representation trajectory and one cross-attention layer that
/// produces alignment strengths.
struct AlignParams {
  DenseMatrix temporal_WQ;
  DenseMatrix temporal_WK;
  DenseMatrix temporal_WV;
  DenseMatrix cross_WQ;
  DenseMatrix cross_WK;

  std::size_t dim() const { return temporal_WV.rows(); }
  ParamView trainable();
  ConstParamView trainable() const;

  /// Glorot-uniform query/key transforms for the temporal layer, identity value
  /// transform and identity cross-attention transforms.
  static AlignParams initialize(std::size_t dim, std::uint64_t seed);

  friend bool operator==(const AlignParams&, const AlignParams&) = default;
};

struct AlignGrads {
  DenseMatrix temporal_WQ, temporal_WK, temporal_WV, cross_WQ, cross_WK;

  AlignGrads() = default;
  explicit AlignGrads(const AlignParams& like);
  void zero();
  ParamView view();
  ConstParamView view() const;
};

/// Output of temporal_integrate together with the intermediates its backward needs.
struct Integration {
  DenseMatrix input;  // T x d trajectory
  DenseMatrix Q, K, V;
  DenseMatrix attn;   // T x T, row t attends to columns <= t
  DenseMatrix H;      // T x d

  std::size_t steps() const { return H.rows(); }
};

/// H(t) = sum_{i<=t} softmax_i((x_t WQ)(x_i WK)^T / sqrt(d)) x_i WV.
Integration temporal_integrate(const AlignParams& params, const DenseMatrix& traj);

/// Back-propagates dLoss/dH. Either output pointer may be null.
void integrate_backward(const AlignParams& params, const Integration& in, const DenseMatrix& grad_H,
                        AlignGrads* grads, DenseMatrix* grad_traj);

/// cosine(H_s(t), H_t(t)); t is 1-based. Zero vectors -> Error("undefined cosine").
double correspondence(const DenseMatrix& H_source, const DenseMatrix& H_target, std::size_t t);

/// Diagonal of the masked cross-attention with queries H_source cross_WQ and keys
/// H_target cross_WK: beta_t for t = 1..T (returned 0-based).
Vector alignment_strengths(const AlignParams& params, const DenseMatrix& H_source, const DenseMatrix& H_target);
double alignment_strength(const AlignParams& params, const DenseMatrix& H_source, const DenseMatrix& H_target,
                          std::size_t t);

struct AlignLossOptions {
  std::size_t negatives = 50;
  double margin = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t batch_id = 0;
  /// Forces every strength to 1.
  bool uniform_strength = false;
  double weight = 1.0;
};

/// Gradients of the alignment loss with respect to the integrations it read,
/// keyed by entity id.
struct AlignLossGrads {
  std::map<EntityId, DenseMatrix> source;
  std::map<EntityId, DenseMatrix> target;
};

using IntegrationLookup = std::function<const Integration&(EntityId)>;

/// Strength-weighted alignment hinge: mean over pairs, steps and drawn negative
/// targets of beta * max(0, margin - g(e_s, e_t, t) + g(e_s, e_neg, t)). Negatives are
/// drawn from [0, target_entities) excluding every target paired with e_s in
/// `context` (all of `pairs` when context is null); pair i uses the stream
/// (seed, batch_id, i). Strengths are held constant under differentiation.
/// Zero representations contribute similarity 0 and no gradient.
/// With grads != nullptr, weight * dLoss/dH is accumulated into it.
double alignment_loss(const AlignParams& params, const IntegrationLookup& source, const IntegrationLookup& target,
                      std::span<const AlignmentPair> pairs, std::size_t target_entities,
                      const AlignLossOptions& options, AlignLossGrads* grads = nullptr,
                      const AlignmentSet* context = nullptr);

}  // namespace mpkd
