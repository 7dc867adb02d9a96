#include "mpkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "mpkd/scoring.hpp"

namespace mpkd {

double mean_similarity(const DenseMatrix& H_source, const DenseMatrix& H_target, bool strict) {
  if (H_source.rows() != H_target.rows() || H_source.cols() != H_target.cols())
    throw Error("mean_similarity: integrations differ in shape");
  if (H_source.rows() == 0) throw Error("mean_similarity: empty integration");
  double total = 0.0;
  for (std::size_t t = 0; t < H_source.rows(); ++t) {
    if (strict) {
      total += cosine(H_source.row(t), H_target.row(t));
    } else {
      const double nu = norm(H_source.row(t)), nv = norm(H_target.row(t));
      if (nu > 0.0 && nv > 0.0) total += std::clamp(dot(H_source.row(t), H_target.row(t)) / (nu * nv), -1.0, 1.0);
    }
  }
  return total / static_cast<double>(H_source.rows());
}

std::optional<double> SimilarityTable::find(EntityId source, EntityId target) const {
  const auto si = std::find(sources.begin(), sources.end(), source);
  const auto ti = std::find(targets.begin(), targets.end(), target);
  if (si == sources.end() || ti == targets.end()) return std::nullopt;
  return values(static_cast<std::size_t>(si - sources.begin()), static_cast<std::size_t>(ti - targets.begin()));
}

void PseudoGenConfig::validate() const {
  if (top_k_budget == 0) throw Error("pseudo-alignment budget must be positive");
  if (exact_solver_cap < 1) throw Error("exact_solver_cap must be at least 1");
}

std::vector<std::pair<std::size_t, std::size_t>> solve_assignment(const DenseMatrix& values) {
  const std::size_t rows = values.rows(), cols = values.cols();
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (rows == 0 || cols == 0) return out;
  const std::size_t n = std::max(rows, cols);
  // Square min-cost assignment on cost = -max(value, 0), padded with zeros.
  auto cost = [&](std::size_t i, std::size_t j) -> double {
    if (i >= rows || j >= cols) return 0.0;
    return -std::max(values(i, j), 0.0);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = match[j];
    if (i == 0 || i > rows || j > cols) continue;
    if (values(i - 1, j - 1) > 0.0) out.emplace_back(i - 1, j - 1);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_assignment(const DenseMatrix& values) {
  struct Cell {
    double v;
    std::size_t i, j;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < values.rows(); ++i)
    for (std::size_t j = 0; j < values.cols(); ++j)
      if (values(i, j) > 0.0) cells.push_back({values(i, j), i, j});
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.v != b.v) return a.v > b.v;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<bool> row_used(values.rows()), col_used(values.cols());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& c : cells) {
    if (row_used[c.i] || col_used[c.j]) continue;
    row_used[c.i] = col_used[c.j] = true;
    out.emplace_back(c.i, c.j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

PseudoGenResult generate_pseudo_alignments(const SimilarityTable& sim, const PseudoGenConfig& cfg,
                                           const AlignmentSet& existing, std::size_t round,
                                           const PairSimilarity& existing_similarity) {
  cfg.validate();
  if (sim.values.rows() != sim.sources.size() || sim.values.cols() != sim.targets.size())
    throw Error("similarity table shape does not match its labels");
  if (!sim.values.all_finite()) throw Error("similarity table contains non-finite values");
  PseudoGenResult result;
  if (sim.sources.empty() || sim.targets.empty()) return result;

  const bool exact = std::max(sim.sources.size(), sim.targets.size()) <= cfg.exact_solver_cap;
  const auto matching = exact ? solve_assignment(sim.values) : greedy_assignment(sim.values);

  struct Chosen {
    EntityId source, target;
    double value;
  };
  std::vector<Chosen> chosen;
  for (const auto& [i, j] : matching) chosen.push_back({sim.sources[i], sim.targets[j], sim.values(i, j)});
  std::sort(chosen.begin(), chosen.end(), [](const Chosen& a, const Chosen& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.source != b.source) return a.source < b.source;
    return a.target < b.target;
  });
  // Pairs that already exist are not part of the delta and do not use budget.
  std::erase_if(chosen, [&](const Chosen& c) {
    return std::any_of(existing.begin(), existing.end(),
                       [&](const AlignmentPair& p) { return p.source == c.source && p.target == c.target; });
  });
  if (chosen.size() > cfg.top_k_budget) chosen.resize(cfg.top_k_budget);

  auto similarity_of = [&](const AlignmentPair& p) -> double {
    if (existing_similarity) return existing_similarity(p.source, p.target);
    if (auto v = sim.find(p.source, p.target)) return *v;
    return -std::numeric_limits<double>::infinity();
  };

  std::set<std::size_t> displaced;
  for (const auto& c : chosen) {
    if (c.value < cfg.min_similarity) continue;
    std::vector<std::size_t> conflicts;
    for (std::size_t k = 0; k < existing.size(); ++k) {
      if (displaced.contains(k)) continue;
      const auto& p = existing[k];
      if (p.source == c.source || p.target == c.target) conflicts.push_back(k);
    }
    PseudoAction action = PseudoAction::add;
    if (!conflicts.empty()) {
      if (!cfg.replace_existing) continue;
      const bool dominates = std::all_of(conflicts.begin(), conflicts.end(),
                                         [&](std::size_t k) { return c.value > similarity_of(existing[k]); });
      if (!dominates) continue;
      for (std::size_t k : conflicts) {
        displaced.insert(k);
        result.replaced.push_back(existing[k]);
      }
      action = PseudoAction::replace;
    }
    result.pseudo.push_back({c.source, c.target, Provenance::pseudo, c.value});
    result.log.push_back({round, c.source, c.target, c.value, action});
  }
  return result;
}

void write_pseudo_log(std::span<const PseudoLogEntry> log, const Vocabulary& source, const Vocabulary& target,
                      std::ostream& out, bool header) {
  if (header) out << "round\tsource\ttarget\tsimilarity\taction\n";
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%.6f", e.similarity);
    out << e.round << '\t' << source.name(e.source) << '\t' << target.name(e.target) << '\t' << buf << '\t'
        << (e.action == PseudoAction::add ? "add" : "replace") << '\n';
  }
}

std::vector<EntityId> candidate_targets(const TemporalKG& target, const AlignmentSet& alignments) {
  std::set<EntityId> out;
  for (const auto& p : alignments) {
    if (p.target >= target.num_entities()) throw Error("alignment target outside the target vocabulary");
    out.insert(p.target);
    for (const auto& nb : target.adjacency(p.target)) out.insert(nb.entity);
  }
  return {out.begin(), out.end()};
}

std::vector<TransferRecord> transfer_events(const TemporalKG& source, const TemporalKG& target,
                                            const AlignmentSet& alignments, const NetworkParams& student,
                                            TimeStep horizon, const TransferOptions& options) {
  std::vector<TransferRecord> out;
  if (alignments.empty()) return out;
  std::unordered_map<EntityId, EntityId> to_target;
  for (const auto& p : alignments) to_target.emplace(p.source, p.target);

  std::vector<std::optional<RelationId>> rel_map(source.num_relations());
  for (RelationId r = 0; r < source.num_relations(); ++r) rel_map[r] = target.relations().find(source.relations().name(r));

  std::set<Quadruple> emitted, used;
  for (const auto& r : options.prior) {
    emitted.insert(r.added);
    used.insert(r.origin);
  }
  EncodeOptions enc;
  enc.neighbors = options.neighbors;
  enc.layers = options.layers;
  EncodingTape tape(student, target, enc);
  const std::size_t n = target.num_entities();
  const std::size_t R = student.base_relations();

  auto top1 = [&](EntityId anchor, RelationId rel, TimeStep t) -> std::pair<EntityId, double> {
    const auto h = tape.encode(anchor, t);
    const Vector ha(h.begin(), h.end());
    const auto hr = student.relation_emb.row(rel);
    EntityId best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (EntityId c = 0; c < n; ++c) {
      const double s = transe_score(ha, hr, tape.encode(c, t));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    return {best, best_score};
  };

  for (const auto& q : source.quadruples()) {
    if (q.time >= horizon || q.time >= target.horizon() || used.contains(q)) continue;
    const auto rel = rel_map[q.relation];
    if (!rel) continue;
    const auto s_it = to_target.find(q.subject);
    const auto o_it = to_target.find(q.object);
    const bool s_aligned = s_it != to_target.end(), o_aligned = o_it != to_target.end();
    if (!s_aligned && !o_aligned) continue;
    Quadruple mapped{0, *rel, 0, q.time};
    TransferMechanism mech = TransferMechanism::alignment_lookup;
    if (s_aligned && o_aligned) {
      mapped.subject = s_it->second;
      mapped.object = o_it->second;
    } else if (s_aligned) {
      mapped.subject = s_it->second;
      const auto [e, score] = top1(mapped.subject, *rel, q.time);
      if (options.min_score && score < *options.min_score) continue;
      mapped.object = e;
      mech = TransferMechanism::student_top1;
    } else {
      mapped.object = o_it->second;
      const auto [e, score] = top1(mapped.object, reciprocal_relation(*rel, R), q.time);
      if (options.min_score && score < *options.min_score) continue;
      mapped.subject = e;
      mech = TransferMechanism::student_top1;
    }
    if (target.contains(mapped) || emitted.contains(mapped)) continue;
    emitted.insert(mapped);
    out.push_back({mapped, q, mech, options.round});
  }
  return out;
}

}  // namespace mpkd
