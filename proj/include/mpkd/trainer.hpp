#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpkd/alignment.hpp"
#include "mpkd/distill.hpp"
#include "mpkd/encoder.hpp"
#include "mpkd/scoring.hpp"

namespace mpkd {

struct TrainConfig {
  std::size_t dim = 128;
  double margin_graph = 0.5;
  double margin_align = 0.5;
  double lr = 0.001;
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  /// Epochs of teacher pretraining on the source graph.
  std::size_t teacher_epochs = 50;
  std::size_t neighbors = 8;
  std::size_t layers = 1;
  double dropout = 0.5;
  std::size_t graph_negatives = 10;
  std::size_t align_negatives = 50;
  std::size_t time_intervals = 4;
  std::size_t warmup_epochs = 10;
  double pseudo_fraction_start = 0.10;
  double pseudo_fraction_end = 0.40;
  /// When >= 0, overrides the schedule with a constant fraction.
  double pseudo_fraction_fixed = -1.0;
  std::uint64_t seed = 0;

  bool uniform_strength = false;
  bool pure_training = false;
  bool no_pseudo = false;
  bool no_event_transfer = false;

  /// Validation epochs without improvement before stopping; 0 disables.
  std::size_t patience = 5;
  /// Optimizer steps of the alignment module per epoch.
  std::size_t align_steps = 5;
  std::size_t exact_solver_cap = 512;
  double min_similarity = 0.0;
  bool replace_existing = true;
  CorruptMode corrupt_mode = CorruptMode::both_sides;
  /// Unset: plain top-1 event completion.
  std::optional<double> transfer_min_score;
  /// Run event transfer before the student phase (otherwise after it).
  bool transfer_before_student = true;

  TimeStep train_steps = 28;
  TimeStep val_steps = 4;
  TimeStep test_steps = 8;

  void validate() const;
  /// Applies one `key = value` setting; unknown keys and bad values throw.
  void set(const std::string& key, const std::string& value);
  /// Canonical `key = value` lines, one per field, in a fixed order.
  std::string serialize() const;
  std::string digest() const;
  /// Pseudo fraction used by the generation round of `epoch` (0-based).
  double pseudo_fraction(std::size_t epoch) const;
};

TrainConfig parse_config(std::istream& in, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});

struct EpochLog {
  std::size_t epoch = 0;
  std::string phase;
  double loss = 0.0;
  double val_mrr = 0.0;
  std::size_t pseudo_count = 0;
  std::size_t transferred_count = 0;
};

void write_epoch_log(const std::vector<EpochLog>& log, std::ostream& out);

struct TrainState {
  NetworkParams teacher;
  NetworkParams student;
  AlignParams align;
  AdamState student_opt;
  AdamState align_opt;
  /// Ground-truth pairs currently in force (replacements remove entries).
  AlignmentSet alignments;
  AlignmentSet pseudo;
  std::vector<TransferRecord> transferred;
  std::vector<PseudoLogEntry> pseudo_log;
  std::size_t epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_mrr = 0.0;
  std::vector<EpochLog> log;
};

struct PretrainResult {
  NetworkParams params;
  /// Deterministic full-data loss (dropout off, fixed negatives) before training
  /// and after every epoch; filled only when requested.
  std::vector<double> loss_trace;
  /// Mean batch loss of every epoch.
  std::vector<double> epoch_losses;
};

/// Margin-loss training of an encoder on one graph with Adam.
PretrainResult pretrain_teacher(const TemporalKG& source, const TrainConfig& cfg, bool record_trace = false);

/// Copies transform, attention, time frequencies and the rows of relations
/// shared by name; entity rows are drawn uniform in [-6/sqrt(d), 6/sqrt(d)],
/// except that each anchor's target row starts as the teacher row of its source.
NetworkParams init_student_from_teacher(const NetworkParams& teacher, const Vocabulary& teacher_relations,
                                        const Vocabulary& target_entities, const Vocabulary& target_relations,
                                        std::uint64_t seed, std::span<const AlignmentPair> anchors = {});

/// Loss weights for the four training sets.
struct LossWeights {
  double graph = 1.0;
  double graph_pseudo = 0.0;
  double align = 1.0;
  double align_pseudo = 0.0;
};

LossWeights combined_weights(std::size_t graph, std::size_t graph_pseudo, std::size_t align,
                             std::size_t align_pseudo);

/// Everything one student update reads: the student graph (target plus transferred
/// events), the frozen teacher integrations keyed by source entity, and the batch contents.
struct CombinedBatch {
  std::vector<Quadruple> graph;
  std::vector<Quadruple> graph_pseudo;
  AlignmentSet align;
  AlignmentSet align_pseudo;
};

struct CombinedContext {
  const NetworkParams* student = nullptr;
  const AlignParams* align = nullptr;
  const TemporalKG* student_graph = nullptr;
  /// Teacher trajectories for every source entity (rows = steps).
  const std::vector<DenseMatrix>* teacher_traj = nullptr;
  /// Every pair in force, used to keep negatives away from known partners.
  const AlignmentSet* context = nullptr;
  TimeStep steps = 0;
  LossWeights weights;
  double margin_graph = 0.5;
  double margin_align = 0.5;
  std::size_t graph_negatives = 10;
  std::size_t align_negatives = 50;
  CorruptMode corrupt_mode = CorruptMode::both_sides;
  bool uniform_strength = false;
  EncodeOptions encode;
  std::uint64_t seed = 0;
  std::uint64_t batch_id = 0;
};

/// Weighted sum of the reasoning losses on both graph sets and the alignment
/// losses on both pair sets; empty parts contribute 0. With grads non-null, the
/// student and alignment gradients are added into them.
double combined_loss(const CombinedContext& ctx, const CombinedBatch& batch, NetworkGrads* student_grads,
                     AlignGrads* align_grads);

struct TrainInputs {
  /// Source events inside the training window.
  const TemporalKG* source = nullptr;
  /// Incomplete target training graph.
  const TemporalKG* target = nullptr;
  /// Validation events (same vocabularies as target), may be empty.
  const TemporalKG* validation = nullptr;
  AlignmentSet alignments;
};

using EpochCallback = std::function<void(const TrainState&)>;

/// Full schedule starting from a pretrained teacher.
TrainState train_mpkd(const TrainInputs& inputs, const NetworkParams& teacher, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {});

/// Convenience overload that pretrains the teacher first.
TrainState train_mpkd(const TrainInputs& inputs, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace mpkd
