#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "mpkd/numerics.hpp"
#include "mpkd/tkg.hpp"

namespace mpkd {

/// Trainable arrays of one temporal encoder (teacher or student).
///
/// relation_emb holds 2R rows: forward relations 0..R-1 followed by their
/// reciprocals R..2R-1, used to answer subject-side queries. time_freq is fixed
/// after initialization and is not part of the trainable view.
struct NetworkParams {
  DenseMatrix entity_emb;    // |E| x d
  DenseMatrix relation_emb;  // 2|R| x d
  DenseMatrix transform;     // d x d
  DenseMatrix attn;          // 1 x 4d
  Vector time_freq;          // d
  double dropout_rate = 0.5;

  std::size_t dim() const { return transform.rows(); }
  std::size_t num_entities() const { return entity_emb.rows(); }
  std::size_t base_relations() const { return relation_emb.rows() / 2; }

  ParamView trainable();
  ConstParamView trainable() const;

  /// Embeddings uniform in [-6/sqrt(d), 6/sqrt(d)], Glorot-uniform transform and
  /// attention, frequencies on the ladder 10^(-4i/d).
  static NetworkParams initialize(std::size_t entities, std::size_t relations, std::size_t dim,
                                  std::uint64_t seed, double dropout_rate = 0.5);

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

inline RelationId reciprocal_relation(RelationId r, std::size_t base_relations) {
  return static_cast<RelationId>(r + base_relations);
}

struct NetworkGrads {
  DenseMatrix entity_emb;
  DenseMatrix relation_emb;
  DenseMatrix transform;
  DenseMatrix attn;

  NetworkGrads() = default;
  explicit NetworkGrads(const NetworkParams& like);
  void zero();
  void scale(double s);
  void add(const NetworkGrads& other, double s = 1.0);
  ParamView view();
  ConstParamView view() const;
};

struct EncodeOptions {
  std::size_t neighbors = 8;
  std::size_t layers = 1;
  /// Enables dropout on aggregated messages.
  bool training = false;
  std::uint64_t dropout_seed = 0;
  CausalityAudit* audit = nullptr;
};

/// kappa(dt)_i = sqrt(1/d) cos(w_i dt)
Vector time_encode(const NetworkParams& params, TimeStep delta_t);

/// Records every representation computed for one forward pass so gradients
/// can be pushed back into NetworkGrads. Representations are cached by
/// (entity, time, layer); the tape must not outlive params or kg.
class EncodingTape {
 public:
  EncodingTape(const NetworkParams& params, const TemporalKG& kg, EncodeOptions options = {});

  /// Top-layer representation h_e(t).
  std::span<const double> encode(EntityId e, TimeStep t);
  /// Adds scale * grad to dLoss/dh_e(t). encode(e, t) must have been called.
  void accumulate(EntityId e, TimeStep t, std::span<const double> grad, double scale = 1.0);
  /// Back-propagates every accumulated gradient into grads (adds, does not zero).
  void backward(NetworkGrads& grads);

  const EncodeOptions& options() const { return options_; }
  const TemporalKG& graph() const { return kg_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    EntityId entity = 0;
    TimeStep time = 0;
    std::size_t layer = 0;
    bool fallback = false;
    std::vector<Neighbor> nbrs;
    std::size_t self_child = 0;
    std::vector<std::size_t> nbr_children;
    Vector alpha;
    Vector kappa;  // nbrs x d
    Vector message;
    Vector pre;
    Vector mask;  // empty when dropout is off
    Vector out;
    Vector grad;
    bool has_grad = false;
  };

  std::size_t node(EntityId e, TimeStep t, std::size_t layer);
  void add_grad(std::size_t idx, std::span<const double> g, double scale);

  const NetworkParams& params_;
  const TemporalKG& kg_;
  EncodeOptions options_;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// h^L_e(t); layers == 0 returns the embedding row. Unknown entity -> Error.
Vector encode_entity(const NetworkParams& params, const TemporalKG& kg, EntityId e, TimeStep t,
                     const EncodeOptions& options = {});

/// Rows i = 0..t_max-1 hold h_e(i + 1).
DenseMatrix encode_trajectory(const NetworkParams& params, const TemporalKG& kg, EntityId e,
                              TimeStep t_max, const EncodeOptions& options = {});

}  // namespace mpkd
