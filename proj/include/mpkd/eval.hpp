#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpkd/encoder.hpp"
#include "mpkd/scoring.hpp"

namespace mpkd {

/// 1 + #(strictly higher scores) + #(equal scores at a lower id).
std::size_t rank_of(std::span<const double> scores, EntityId answer);

/// Ranks query.answer among every entity of kg, encoded from history before query.time.
std::size_t rank_query(const NetworkParams& params, const TemporalKG& kg, const Query& query,
                       const EncodeOptions& options = {});

struct StepMetrics {
  TimeStep time = 0;
  double mrr = 0.0;
  double hits10 = 0.0;
  std::size_t query_count = 0;
};

struct MetricsReport {
  double mrr = 0.0;
  double hits10 = 0.0;
  std::size_t query_count = 0;
  std::vector<StepMetrics> per_step;
  std::string config_digest;
  std::uint64_t seed = 0;

  std::string to_json() const;
  /// `time,mrr,hits10,query_count` rows.
  std::string per_step_csv() const;
};

struct RankSummary {
  double mrr = 0.0;
  double hits10 = 0.0;
};

RankSummary summarize_ranks(std::span<const std::size_t> ranks);

struct EvalOptions {
  std::size_t neighbors = 8;
  std::size_t layers = 1;
  CausalityAudit* audit = nullptr;
  /// Subject-side queries through reciprocal relations as well as object-side ones.
  bool both_directions = true;
};

/// Raw MRR / Hits@10 over the queries of `test`. Representations at time t read
/// only history events before t, so `history` may contain the test events themselves.
MetricsReport evaluate(const NetworkParams& params, const TemporalKG& history, std::span<const Quadruple> test,
                       const EvalOptions& options = {});

/// Mean over sources of model / baseline.
double transfer_ratio(std::span<const double> model_scores, double baseline_score);

// -- contrastive-form decay diagnostic -------------------------------------------

struct NceToyConfig {
  std::size_t ground_truth_queries = 64;
  std::size_t pool_size = 1000;
  /// Pseudo queries per ground-truth query.
  double pseudo_ratio = 0.0;
  /// Fraction of pseudo queries whose positive is correct.
  double correctness = 1.0;
  std::uint64_t seed = 0;
};

/// Fixed scores: correct positives in [0.3, 1], negative pool and incorrect
/// pseudo positives in [-1, 0.5].
struct NceToy {
  Vector ground_truth;
  Vector pseudo;
  Vector pool;
  double epsilon = 1.0;
  double beta = 0.0;
};

NceToy make_nce_toy(const NceToyConfig& cfg);

/// Contrastive loss with N negatives drawn with replacement from the pool, ground
/// truth and pseudo parts weighted by their share of the queries, minus log N.
double nce_loss_shifted(const NceToy& toy, std::size_t negatives, double temperature, std::uint64_t seed);

struct DiagnosticConfig {
  double temperature = 1.0;
  std::vector<std::size_t> negative_counts{8, 32, 128, 512};
  std::vector<std::uint64_t> seeds;
  std::size_t limit_estimate_N = 65536;

  void validate() const;
};

struct NceSweepRow {
  std::size_t negatives = 0;
  double median_deviation = 0.0;
};

struct NceSweepResult {
  std::vector<NceSweepRow> rows;
  double slope = 0.0;
  double limit = 0.0;
  double epsilon = 1.0;
  double beta = 0.0;
};

NceSweepResult nce_deviation_sweep(const DiagnosticConfig& cfg, const NceToy& toy);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace mpkd
