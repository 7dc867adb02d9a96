#include "mpkd/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mpkd {

ParamView NetworkParams::trainable() {
  return {entity_emb.values(), relation_emb.values(), transform.values(), attn.values()};
}

ConstParamView NetworkParams::trainable() const {
  return {entity_emb.values(), relation_emb.values(), transform.values(), attn.values()};
}

NetworkParams NetworkParams::initialize(std::size_t entities, std::size_t relations, std::size_t dim,
                                        std::uint64_t seed, double dropout_rate) {
  if (dim == 0) throw Error("embedding dimension must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
  NetworkParams p;
  const double d = static_cast<double>(dim);
  const double emb_bound = 6.0 / std::sqrt(d);
  Rng rng = make_rng(seed, {0xe7bULL});
  auto fill_uniform = [&rng](DenseMatrix& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& x : m.values()) x = u(rng);
  };
  p.entity_emb = DenseMatrix(entities, dim);
  fill_uniform(p.entity_emb, emb_bound);
  p.relation_emb = DenseMatrix(2 * relations, dim);
  fill_uniform(p.relation_emb, emb_bound);
  p.transform = DenseMatrix(dim, dim);
  fill_uniform(p.transform, std::sqrt(6.0 / (2.0 * d)));
  p.attn = DenseMatrix(1, 4 * dim);
  fill_uniform(p.attn, std::sqrt(6.0 / (4.0 * d + 1.0)));
  p.time_freq.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) p.time_freq[i] = std::pow(10.0, -4.0 * static_cast<double>(i) / d);
  p.dropout_rate = dropout_rate;
  return p;
}

NetworkGrads::NetworkGrads(const NetworkParams& like)
    : entity_emb(like.entity_emb.rows(), like.entity_emb.cols()),
      relation_emb(like.relation_emb.rows(), like.relation_emb.cols()),
      transform(like.transform.rows(), like.transform.cols()),
      attn(like.attn.rows(), like.attn.cols()) {}

void NetworkGrads::zero() {
  entity_emb.fill(0.0);
  relation_emb.fill(0.0);
  transform.fill(0.0);
  attn.fill(0.0);
}

void NetworkGrads::scale(double s) {
  for (auto block : view())
    for (double& x : block) x *= s;
}

void NetworkGrads::add(const NetworkGrads& other, double s) {
  auto mine = view();
  auto theirs = other.view();
  for (std::size_t b = 0; b < mine.size(); ++b) axpy(s, theirs[b], mine[b]);
}

ParamView NetworkGrads::view() { return {entity_emb.values(), relation_emb.values(), transform.values(), attn.values()}; }

ConstParamView NetworkGrads::view() const {
  return {entity_emb.values(), relation_emb.values(), transform.values(), attn.values()};
}

Vector time_encode(const NetworkParams& params, TimeStep delta_t) {
  const std::size_t d = params.time_freq.size();
  Vector out(d);
  const double scale = std::sqrt(1.0 / static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) out[i] = scale * std::cos(params.time_freq[i] * static_cast<double>(delta_t));
  return out;
}

// -- EncodingTape ---------------------------------------------------------------

namespace {
std::uint64_t node_key(EntityId e, TimeStep t, std::size_t layer) {
  return (static_cast<std::uint64_t>(e) << 32) | (static_cast<std::uint64_t>(t & 0xffffff) << 8) |
         static_cast<std::uint64_t>(layer & 0xff);
}
}  // namespace

EncodingTape::EncodingTape(const NetworkParams& params, const TemporalKG& kg, EncodeOptions options)
    : params_(params), kg_(kg), options_(options) {
  if (params.num_entities() != kg.num_entities())
    throw Error("encoder: parameter table has " + std::to_string(params.num_entities()) +
                " entities, graph has " + std::to_string(kg.num_entities()));
}

std::span<const double> EncodingTape::encode(EntityId e, TimeStep t) {
  const auto idx = node(e, t, options_.layers);
  return nodes_[idx].out;
}

std::size_t EncodingTape::node(EntityId e, TimeStep t, std::size_t layer) {
  if (e >= params_.num_entities()) throw Error("unknown entity id " + std::to_string(e));
  // Layer-0 nodes are embedding rows and do not depend on time.
  if (layer == 0) t = 0;
  const auto key = node_key(e, t, layer);
  if (auto it = index_.find(key); it != index_.end()) return it->second;

  const std::size_t d = params_.dim();
  Node n;
  n.entity = e;
  n.time = t;
  n.layer = layer;
  if (layer == 0) {
    const auto row = params_.entity_emb.row(e);
    n.out.assign(row.begin(), row.end());
    nodes_.push_back(std::move(n));
    index_.emplace(key, nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  n.nbrs = temporal_neighbors(kg_, e, t, options_.neighbors, options_.audit);
  n.self_child = node(e, t, layer - 1);
  n.nbr_children.reserve(n.nbrs.size());
  for (const auto& nb : n.nbrs) n.nbr_children.push_back(node(nb.entity, nb.time, layer - 1));

  const auto& self_in = nodes_[n.self_child].out;
  n.message.assign(d, 0.0);
  if (n.nbrs.empty()) {
    n.fallback = true;
    n.message = self_in;
  } else {
    const auto a = params_.attn.row(0);
    const std::span<const double> a_self = a.subspan(0, d), a_nbr = a.subspan(d, d), a_rel = a.subspan(2 * d, d),
                                  a_time = a.subspan(3 * d, d);
    const double self_term = dot(a_self, self_in);
    Vector logits(n.nbrs.size());
    n.kappa.resize(n.nbrs.size() * d);
    for (std::size_t k = 0; k < n.nbrs.size(); ++k) {
      const auto& nb = n.nbrs[k];
      const Vector kap = time_encode(params_, t - nb.time);
      std::copy(kap.begin(), kap.end(), n.kappa.begin() + static_cast<std::ptrdiff_t>(k * d));
      logits[k] = self_term + dot(a_nbr, nodes_[n.nbr_children[k]].out) +
                  dot(a_rel, params_.relation_emb.row(nb.relation)) + dot(a_time, kap);
    }
    n.alpha = softmax_masked(logits, std::vector<bool>(logits.size(), true));
    for (std::size_t k = 0; k < n.nbrs.size(); ++k) axpy(n.alpha[k], nodes_[n.nbr_children[k]].out, n.message);
  }

  n.pre.assign(d, 0.0);
  vec_mat(n.message, params_.transform, n.pre);
  const double p = params_.dropout_rate;
  if (options_.training && p > 0.0) {
    Rng rng = make_rng(options_.dropout_seed, {e, t, layer});
    n.mask.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      n.mask[j] = uniform01(rng) < p ? 0.0 : 1.0 / (1.0 - p);
      n.pre[j] *= n.mask[j];
    }
  }
  n.out.resize(d);
  for (std::size_t j = 0; j < d; ++j) n.out[j] = n.pre[j] > 0.0 ? n.pre[j] : 0.0;

  nodes_.push_back(std::move(n));
  index_.emplace(key, nodes_.size() - 1);
  return nodes_.size() - 1;
}

void EncodingTape::add_grad(std::size_t idx, std::span<const double> g, double scale) {
  Node& n = nodes_[idx];
  if (!n.has_grad) {
    n.grad.assign(n.out.size(), 0.0);
    n.has_grad = true;
  }
  axpy(scale, g, n.grad);
}

void EncodingTape::accumulate(EntityId e, TimeStep t, std::span<const double> grad, double scale) {
  const auto key = node_key(e, options_.layers == 0 ? 0 : t, options_.layers);
  auto it = index_.find(key);
  if (it == index_.end()) throw Error("EncodingTape::accumulate: representation was never encoded");
  add_grad(it->second, grad, scale);
}

void EncodingTape::backward(NetworkGrads& grads) {
  const std::size_t d = params_.dim();
  // Parents always have a higher layer than their children.
  std::vector<std::size_t> order(nodes_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [this](std::size_t a, std::size_t b) { return nodes_[a].layer > nodes_[b].layer; });

  Vector g_pre(d), g_msg(d), g_alpha, g_logit, scratch(d);
  for (std::size_t idx : order) {
    Node& n = nodes_[idx];
    if (!n.has_grad) continue;
    if (n.layer == 0) {
      axpy(1.0, n.grad, grads.entity_emb.row(n.entity));
      continue;
    }
    bool any = false;
    for (std::size_t j = 0; j < d; ++j) {
      double g = n.pre[j] > 0.0 ? n.grad[j] : 0.0;
      if (!n.mask.empty()) g *= n.mask[j];
      g_pre[j] = g;
      any = any || g != 0.0;
    }
    if (!any) continue;
    add_outer(grads.transform, n.message, g_pre);
    mat_vec(params_.transform, g_pre, g_msg);

    if (n.fallback) {
      add_grad(n.self_child, g_msg, 1.0);
      continue;
    }
    const auto a = params_.attn.row(0);
    auto ga = grads.attn.row(0);
    const std::size_t m = n.nbrs.size();
    g_alpha.assign(m, 0.0);
    g_logit.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      g_alpha[k] = dot(nodes_[n.nbr_children[k]].out, g_msg);
      add_grad(n.nbr_children[k], g_msg, n.alpha[k]);
    }
    softmax_backward(n.alpha, g_alpha, g_logit);
    double g_self_total = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double gq = g_logit[k];
      if (gq == 0.0) continue;
      g_self_total += gq;
      const auto& in_k = nodes_[n.nbr_children[k]].out;
      const auto rel = params_.relation_emb.row(n.nbrs[k].relation);
      const std::span<const double> kap(n.kappa.data() + k * d, d);
      axpy(gq, nodes_[n.self_child].out, ga.subspan(0, d));
      axpy(gq, in_k, ga.subspan(d, d));
      axpy(gq, rel, ga.subspan(2 * d, d));
      axpy(gq, kap, ga.subspan(3 * d, d));
      add_grad(n.nbr_children[k], a.subspan(d, d), gq);
      axpy(gq, a.subspan(2 * d, d), grads.relation_emb.row(n.nbrs[k].relation));
    }
    if (g_self_total != 0.0) add_grad(n.self_child, a.subspan(0, d), g_self_total);
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.clear();
  }
}

Vector encode_entity(const NetworkParams& params, const TemporalKG& kg, EntityId e, TimeStep t,
                     const EncodeOptions& options) {
  EncodingTape tape(params, kg, options);
  const auto h = tape.encode(e, t);
  return Vector(h.begin(), h.end());
}

DenseMatrix encode_trajectory(const NetworkParams& params, const TemporalKG& kg, EntityId e, TimeStep t_max,
                              const EncodeOptions& options) {
  if (t_max == 0) throw Error("trajectory length must be positive");
  if (t_max > kg.horizon()) throw Error("trajectory extends beyond the graph horizon");
  EncodingTape tape(params, kg, options);
  DenseMatrix out(t_max, params.dim());
  for (TimeStep i = 0; i < t_max; ++i) {
    const auto h = tape.encode(e, i + 1);
    std::copy(h.begin(), h.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace mpkd
