#pragma once

#include <atomic>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mpkd/common.hpp"

namespace mpkd {

/// Bidirectional map between symbol names and dense ids.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);
  /// prefix + "0", prefix + "1", ...
  static Vocabulary numbered(std::size_t n, std::string_view prefix = "");

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::uint32_t> find(std::string_view name) const;
  std::uint32_t intern(std::string_view name);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Quadruple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  TimeStep time = 0;

  friend auto operator<=>(const Quadruple&, const Quadruple&) = default;
};

/// One adjacency entry: the entity on the other side of an event.
struct Neighbor {
  EntityId entity = 0;
  RelationId relation = 0;
  TimeStep time = 0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Adjacency total order: time, then neighbor id, then relation id.
bool adjacency_less(const Neighbor& a, const Neighbor& b);

/// Counts adjacency reads made while building representations; `violations`
/// counts reads of entries at or after the query time.
struct CausalityAudit {
  std::atomic<std::size_t> reads{0};
  std::atomic<std::size_t> violations{0};
};

/// Immutable temporal knowledge graph: vocabularies, a quadruple multiset kept
/// in insertion order, and a per-entity adjacency index holding every quadruple
/// twice (subject side and object side).
class TemporalKG {
 public:
  TemporalKG() = default;
  TemporalKG(Vocabulary entities, Vocabulary relations, std::vector<Quadruple> quadruples,
             TimeStep horizon);
  TemporalKG(std::shared_ptr<const Vocabulary> entities, std::shared_ptr<const Vocabulary> relations,
             std::vector<Quadruple> quadruples, TimeStep horizon);

  const Vocabulary& entities() const { return *entities_; }
  const Vocabulary& relations() const { return *relations_; }
  std::shared_ptr<const Vocabulary> entity_vocab() const { return entities_; }
  std::shared_ptr<const Vocabulary> relation_vocab() const { return relations_; }
  std::size_t num_entities() const { return entities_->size(); }
  std::size_t num_relations() const { return relations_->size(); }

  std::span<const Quadruple> quadruples() const { return quadruples_; }
  std::size_t size() const { return quadruples_.size(); }
  bool empty() const { return quadruples_.empty(); }
  TimeStep horizon() const { return horizon_; }

  std::span<const Neighbor> adjacency(EntityId e) const;
  std::size_t adjacency_entries() const { return adjacency_.size(); }
  bool contains(const Quadruple& q) const;

  /// Same vocabularies and horizon, different quadruples.
  TemporalKG with_quadruples(std::vector<Quadruple> quadruples) const;
  /// Appends extra quadruples after the existing ones.
  TemporalKG merged(std::span<const Quadruple> extra) const;
  /// Quadruples with begin <= time < end.
  TemporalKG restricted(TimeStep begin, TimeStep end) const;

 private:
  void build();

  std::shared_ptr<const Vocabulary> entities_ = std::make_shared<Vocabulary>();
  std::shared_ptr<const Vocabulary> relations_ = std::make_shared<Vocabulary>();
  std::vector<Quadruple> quadruples_;
  TimeStep horizon_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<Neighbor> adjacency_;
  std::vector<Quadruple> sorted_;
};

// -- file formats ------------------------------------------------------------

enum class VocabMode { extend, strict };

struct LoadOptions {
  VocabMode mode = VocabMode::extend;
  /// Horizon of the loaded graph; defaults to max time + 1.
  std::optional<TimeStep> horizon;
  bool deduplicate = false;
};

/// Reads `subject<TAB>relation<TAB>object<TAB>time` lines; '#' lines are comments.
TemporalKG parse_quadruples(std::istream& in, Vocabulary entities, Vocabulary relations,
                            const LoadOptions& options = {});
TemporalKG load_quadruples(const std::filesystem::path& path, Vocabulary entities,
                           Vocabulary relations, const LoadOptions& options = {});
void dump_quadruples(const TemporalKG& kg, std::ostream& out);
void save_quadruples(const TemporalKG& kg, const std::filesystem::path& path);

struct IntervalEvent {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  TimeStep start = 0;
  TimeStep end = 0;
};

/// Reads five-field interval lines, interning names into the vocabularies.
std::vector<IntervalEvent> parse_intervals(std::istream& in, Vocabulary& entities, Vocabulary& relations);

/// One quadruple per step of every [start, end] interval, in input order.
std::vector<Quadruple> expand_intervals(std::span<const IntervalEvent> events);

// -- splitting and sampling ---------------------------------------------------

struct SplitSpec {
  TimeStep total_steps = 40;
  TimeStep train_steps = 28;
  TimeStep val_steps = 4;
  TimeStep test_steps = 8;

  void validate() const;
};

struct TimeSplit {
  TemporalKG train;
  TemporalKG val;
  TemporalKG test;
};

TimeSplit split_by_time(const TemporalKG& kg, const SplitSpec& spec);

/// Keeps each quadruple with time < only_before independently with probability
/// `ratio` (seeded); quadruples at or after only_before are always kept.
TemporalKG subsample_events(const TemporalKG& kg, double ratio, std::uint64_t seed,
                            std::optional<TimeStep> only_before = std::nullopt);

// -- alignments ---------------------------------------------------------------

enum class Provenance { ground_truth, pseudo };

struct AlignmentPair {
  EntityId source = 0;
  EntityId target = 0;
  Provenance provenance = Provenance::ground_truth;
  double confidence = 1.0;

  friend bool operator==(const AlignmentPair&, const AlignmentPair&) = default;
};

using AlignmentSet = std::vector<AlignmentPair>;

/// `source<TAB>target[<TAB>confidence]`; names must exist in both vocabularies.
AlignmentSet parse_alignments(std::istream& in, const Vocabulary& source, const Vocabulary& target);
AlignmentSet load_alignments(const std::filesystem::path& path, const Vocabulary& source,
                             const Vocabulary& target);
void dump_alignments(const AlignmentSet& pairs, const Vocabulary& source, const Vocabulary& target,
                     std::ostream& out);

/// Replaces the target of round(noise_ratio * |pairs|) seeded-uniformly chosen
/// pairs with distinct target entities that have no alignment. Provenance is
/// left untouched.
AlignmentSet inject_alignment_noise(const AlignmentSet& pairs, double noise_ratio,
                                    std::size_t target_vocab_size, std::uint64_t seed);

// -- temporal neighbors -------------------------------------------------------

/// Up to b adjacency entries of e with time strictly before t: the latest b,
/// returned in adjacency order.
std::vector<Neighbor> temporal_neighbors(const TemporalKG& kg, EntityId e, TimeStep t, std::size_t b,
                                         CausalityAudit* audit = nullptr);

// -- synthetic bilingual pair -------------------------------------------------

struct SyntheticConfig {
  std::size_t source_entities = 200;
  std::size_t target_entities = 200;
  std::size_t relations = 20;
  TimeStep steps = 40;
  /// Only quadruples before this step are subsampled into the incomplete target.
  TimeStep train_steps = 28;
  std::size_t events_per_step = 150;
  /// Latent entity groups; relation r maps group k to (k + shift_r) mod clusters.
  std::size_t clusters = 10;
  /// Relation shifts are drawn from [0, shift_span). A small span keeps an entity's
  /// partners near its own group, so the group is readable from its neighborhood.
  std::size_t shift_span = 2;
  /// Probability that an event repeats the subject's latest partner under the same relation.
  double repeat_prob = 0.5;
  /// Probability that a world event is copied into the target through the alignment map.
  double copy_prob = 0.6;
  /// Fraction of target entities whose alignment is disclosed.
  double coverage = 0.1;
  /// Fraction of training-period target events kept in the incomplete target.
  double target_ratio = 0.2;

  void validate() const;
};

struct SyntheticPair {
  TemporalKG source;
  TemporalKG target_full;
  TemporalKG target;
  AlignmentSet alignments;
  /// counterpart[target entity] = source entity, or -1 when none exists.
  std::vector<std::int64_t> counterpart;
  /// Latent group of every entity.
  std::vector<std::size_t> source_group;
  std::vector<std::size_t> target_group;
};

SyntheticPair generate_synthetic_pair(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace mpkd
