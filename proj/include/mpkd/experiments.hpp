#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mpkd/eval.hpp"
#include "mpkd/trainer.hpp"

namespace mpkd {

struct ExperimentConfig {
  SyntheticConfig data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Settings small enough for one CPU core: the synthetic pair at its default
/// size with a 32-dimensional model and shortened schedules.
ExperimentConfig desk_experiment();

/// One synthetic bilingual pair split for training.
struct SyntheticSplit {
  SyntheticPair pair;
  TemporalKG source_train;
  TimeSplit target;
  /// Full target split, used by the full-target reference model.
  TimeSplit target_full;
};

SyntheticSplit make_synthetic_split(const ExperimentConfig& exp, std::uint64_t seed);

struct RunResult {
  MetricsReport test;
  double best_val_mrr = 0.0;
  std::size_t pseudo_count = 0;
  std::size_t transferred_count = 0;
  std::size_t epochs_run = 0;
};

/// Test metrics of a trained state: history is the student graph plus
/// validation and test events.
MetricsReport evaluate_state(const TrainState& state, const TimeSplit& target, const TrainConfig& cfg);

/// Caches one pretrained teacher per data seed.
class TeacherCache {
 public:
  const NetworkParams& get(const SyntheticSplit& split, const TrainConfig& cfg, std::uint64_t seed);

 private:
  std::map<std::pair<std::uint64_t, std::string>, NetworkParams> cache_;
};

/// Trains cfg (its seed replaced by `seed`) on the split; noise_ratio corrupts the
/// disclosed alignments first.
RunResult run_mpkd(const SyntheticSplit& split, TrainConfig cfg, std::uint64_t seed, double noise_ratio = 0.0,
                   TeacherCache* teachers = nullptr);

/// Encoder trained on the target graph alone (no teacher, no alignments).
RunResult run_single(const TimeSplit& target, TrainConfig cfg, std::uint64_t seed);

struct SweepRow {
  std::string x;
  std::string variant;
  std::uint64_t seed = 0;
  double value = 0.0;
};

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

double median(std::vector<double> v);

struct NoiseSweepResult {
  /// value = test Hits@10
  std::vector<SweepRow> rows;
  /// variant -> ratio -> median over seeds of (h(0) - h(ratio)) / h(0)
  std::map<std::string, std::map<double, double>> median_drop;
};

/// Variants: "full" and "uniform_strength".
NoiseSweepResult noise_sweep(const ExperimentConfig& exp, const std::vector<double>& ratios,
                             const std::vector<std::string>& variants = {"full", "uniform_strength"});

struct PseudoSweepResult {
  /// variant "mpkd" rows per fraction, plus "single_full" and "single_incomplete" reference rows (x = "ref").
  std::vector<SweepRow> rows;
  std::map<double, double> median_hits10;
};

PseudoSweepResult pseudo_ratio_sweep(const ExperimentConfig& exp, const std::vector<double>& fractions,
                                     bool references = true);

}  // namespace mpkd
