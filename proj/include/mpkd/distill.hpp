#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpkd/encoder.hpp"
#include "mpkd/tkg.hpp"

namespace mpkd {

/// Mean over steps of cosine(H_s(t), H_t(t)). With strict, a zero row throws
/// "undefined cosine"; otherwise it contributes 0.
double mean_similarity(const DenseMatrix& H_source, const DenseMatrix& H_target, bool strict = true);

/// Dense candidate block: value(i, j) is the similarity of sources[i] and targets[j].
struct SimilarityTable {
  std::vector<EntityId> sources;
  std::vector<EntityId> targets;
  DenseMatrix values;

  std::optional<double> find(EntityId source, EntityId target) const;
};

struct PseudoGenConfig {
  std::size_t top_k_budget = 1;
  double min_similarity = 0.0;
  /// Largest max(rows, cols) solved exactly; bigger blocks fall back to greedy.
  std::size_t exact_solver_cap = 512;
  bool replace_existing = true;

  void validate() const;
};

/// Maximum-weight one-to-one partial matching on max(value, 0); pairs with
/// nonpositive value are never returned. Returns (row, col) index pairs sorted by row.
std::vector<std::pair<std::size_t, std::size_t>> solve_assignment(const DenseMatrix& values);

/// Greedy matching by descending value, ties to the lower row then lower column.
std::vector<std::pair<std::size_t, std::size_t>> greedy_assignment(const DenseMatrix& values);

enum class PseudoAction { add, replace };

struct PseudoLogEntry {
  std::size_t round = 0;
  EntityId source = 0;
  EntityId target = 0;
  double similarity = 0.0;
  PseudoAction action = PseudoAction::add;
};

struct PseudoGenResult {
  /// New pairs, provenance pseudo, confidence = similarity, sorted by descending similarity.
  AlignmentSet pseudo;
  /// Existing pairs displaced by a more similar pseudo pair.
  AlignmentSet replaced;
  std::vector<PseudoLogEntry> log;
};

/// Similarity of an existing pair; used to decide replacements.
using PairSimilarity = std::function<double(EntityId source, EntityId target)>;

/// Picks a one-to-one matching over the candidate table, drops pairs already in
/// `existing`, keeps the top_k_budget best remaining pairs with similarity >=
/// min_similarity, and reconciles them with `existing`: a pair sharing a
/// source or target with an existing pair replaces it only when replace_existing
/// is set and its similarity exceeds existing_similarity of every pair it
/// conflicts with (table lookup when no callback is given), otherwise it is dropped.
PseudoGenResult generate_pseudo_alignments(const SimilarityTable& sim, const PseudoGenConfig& cfg,
                                           const AlignmentSet& existing, std::size_t round = 0,
                                           const PairSimilarity& existing_similarity = {});

void write_pseudo_log(std::span<const PseudoLogEntry> log, const Vocabulary& source, const Vocabulary& target,
                      std::ostream& out, bool header = true);

/// Target-graph neighbors of aligned targets, plus the aligned targets themselves; sorted.
std::vector<EntityId> candidate_targets(const TemporalKG& target, const AlignmentSet& alignments);

enum class TransferMechanism { alignment_lookup, student_top1 };

struct TransferRecord {
  Quadruple added;
  Quadruple origin;
  TransferMechanism mechanism = TransferMechanism::alignment_lookup;
  std::size_t round = 0;
};

struct TransferOptions {
  std::size_t neighbors = 8;
  std::size_t layers = 1;
  std::size_t round = 0;
  /// Student completions scoring below this are dropped; unset keeps plain top-1.
  std::optional<double> min_score;
  /// Records of earlier rounds. Their events are never emitted again and their
  /// source events are not transferred a second time.
  std::span<const TransferRecord> prior;
};

/// Maps source events with at least one aligned endpoint and time < horizon into
/// the target. Both endpoints aligned: alignment lookup. One endpoint aligned: the
/// missing one is the student's top-1 answer for the corresponding query, ties to
/// the lower id. Events present in the target or emitted before are skipped, and
/// each source event is transferred at most once across rounds.
/// Source relations are matched to target relations by name.
std::vector<TransferRecord> transfer_events(const TemporalKG& source, const TemporalKG& target,
                                            const AlignmentSet& alignments, const NetworkParams& student,
                                            TimeStep horizon, const TransferOptions& options = {});

}  // namespace mpkd
