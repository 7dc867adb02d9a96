#include "mpkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mpkd {

std::size_t rank_of(std::span<const double> scores, EntityId answer) {
  if (answer >= scores.size()) throw Error("rank_of: answer outside the candidate set");
  const double s = scores[answer];
  std::size_t rank = 1;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > s || (scores[c] == s && c < answer)) ++rank;
  }
  return rank;
}

namespace {

// Representations of every entity at time t, built in independent blocks.
DenseMatrix encode_all(const NetworkParams& params, const TemporalKG& kg, TimeStep t, const EncodeOptions& enc) {
  const std::size_t n = params.num_entities();
  DenseMatrix out(n, params.dim());
  const std::size_t blocks = std::min<std::size_t>(std::max(1u, num_threads()), std::max<std::size_t>(n, 1));
  parallel_for(blocks, [&](std::size_t b) {
    EncodingTape tape(params, kg, enc);
    for (std::size_t e = b * n / blocks; e < (b + 1) * n / blocks; ++e) {
      const auto h = tape.encode(static_cast<EntityId>(e), t);
      std::copy(h.begin(), h.end(), out.row(e).begin());
    }
  });
  return out;
}

void score_all(const DenseMatrix& reps, std::span<const double> anchor, std::span<const double> rel, Vector& out) {
  out.resize(reps.rows());
  for (std::size_t c = 0; c < reps.rows(); ++c) out[c] = transe_score(anchor, rel, reps.row(c));
}

void check_query(const NetworkParams& params, const Query& q) {
  if (q.entity >= params.num_entities() || q.answer >= params.num_entities())
    throw Error("unknown entity id in query");
  if (q.relation >= params.relation_emb.rows()) throw Error("unknown relation id " + std::to_string(q.relation));
}

}  // namespace

std::size_t rank_query(const NetworkParams& params, const TemporalKG& kg, const Query& query,
                       const EncodeOptions& options) {
  check_query(params, query);
  EncodeOptions enc = options;
  enc.training = false;
  const auto reps = encode_all(params, kg, query.time, enc);
  Vector scores;
  score_all(reps, reps.row(query.entity), params.relation_emb.row(query.relation), scores);
  return rank_of(scores, query.answer);
}

RankSummary summarize_ranks(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw Error("no ranks to summarize");
  RankSummary s;
  std::size_t hits = 0;
  for (auto r : ranks) {
    if (r == 0) throw Error("ranks are 1-based");
    s.mrr += 1.0 / static_cast<double>(r);
    hits += r <= 10;
  }
  s.mrr /= static_cast<double>(ranks.size());
  s.hits10 = static_cast<double>(hits) / static_cast<double>(ranks.size());
  return s;
}

MetricsReport evaluate(const NetworkParams& params, const TemporalKG& history, std::span<const Quadruple> test,
                       const EvalOptions& options) {
  if (test.empty()) throw Error("evaluate: empty test set");
  EncodeOptions enc;
  enc.neighbors = options.neighbors;
  enc.layers = options.layers;
  enc.audit = options.audit;
  const std::size_t R = params.base_relations();

  std::map<TimeStep, std::vector<Quadruple>> by_time;
  for (const auto& q : test) by_time[q.time].push_back(q);

  MetricsReport report;
  std::vector<std::size_t> all;
  Vector scores;
  for (const auto& [t, quads] : by_time) {
    const auto reps = encode_all(params, history, t, enc);
    std::vector<std::size_t> ranks;
    for (const auto& q : quads) {
      const auto queries =
          queries_of(q, R, options.both_directions ? CorruptMode::both_sides : CorruptMode::object_only);
      for (const auto& query : queries) {
        check_query(params, query);
        score_all(reps, reps.row(query.entity), params.relation_emb.row(query.relation), scores);
        ranks.push_back(rank_of(scores, query.answer));
      }
    }
    const auto s = summarize_ranks(ranks);
    report.per_step.push_back({t, s.mrr, s.hits10, ranks.size()});
    all.insert(all.end(), ranks.begin(), ranks.end());
  }
  const auto s = summarize_ranks(all);
  report.mrr = s.mrr;
  report.hits10 = s.hits10;
  report.query_count = all.size();
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["mrr"] = mrr;
  j["hits10"] = hits10;
  j["query_count"] = query_count;
  auto steps = nlohmann::ordered_json::array();
  for (const auto& s : per_step) {
    nlohmann::ordered_json row;
    row["time"] = s.time;
    row["mrr"] = s.mrr;
    row["hits10"] = s.hits10;
    row["query_count"] = s.query_count;
    steps.push_back(row);
  }
  j["per_step"] = steps;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

std::string MetricsReport::per_step_csv() const {
  std::ostringstream out;
  out << "time,mrr,hits10,query_count\n";
  char buf[128];
  for (const auto& s : per_step) {
    std::snprintf(buf, sizeof buf, "%u,%.6f,%.6f,%zu\n", s.time, s.mrr, s.hits10, s.query_count);
    out << buf;
  }
  return out.str();
}

double transfer_ratio(std::span<const double> model_scores, double baseline_score) {
  if (!(baseline_score > 0.0)) throw Error("transfer ratio: baseline must be positive");
  if (model_scores.empty()) throw Error("transfer ratio: no source scores");
  double total = 0.0;
  for (double s : model_scores) total += s / baseline_score;
  return total / static_cast<double>(model_scores.size());
}

// -- decay diagnostic -------------------------------------------------------------

NceToy make_nce_toy(const NceToyConfig& cfg) {
  if (cfg.ground_truth_queries == 0 || cfg.pool_size == 0) throw Error("NCE toy needs queries and a pool");
  if (cfg.pseudo_ratio < 0.0) throw Error("pseudo ratio must be nonnegative");
  if (cfg.correctness < 0.0 || cfg.correctness > 1.0) throw Error("correctness must be in [0, 1]");
  NceToy toy;
  Rng rng = make_rng(cfg.seed, {0x7c0ULL});
  std::uniform_real_distribution<double> pos(0.3, 1.0), neg(-1.0, 0.5);
  for (std::size_t i = 0; i < cfg.ground_truth_queries; ++i) toy.ground_truth.push_back(pos(rng));
  for (std::size_t i = 0; i < cfg.pool_size; ++i) toy.pool.push_back(neg(rng));
  const auto n_pseudo =
      static_cast<std::size_t>(std::llround(cfg.pseudo_ratio * static_cast<double>(cfg.ground_truth_queries)));
  const auto n_correct = static_cast<std::size_t>(std::llround(cfg.correctness * static_cast<double>(n_pseudo)));
  for (std::size_t i = 0; i < n_pseudo; ++i) toy.pseudo.push_back(i < n_correct ? pos(rng) : neg(rng));
  toy.epsilon = n_pseudo ? static_cast<double>(n_correct) / static_cast<double>(n_pseudo) : cfg.correctness;
  toy.beta = static_cast<double>(n_pseudo) / static_cast<double>(cfg.ground_truth_queries);
  return toy;
}

double nce_loss_shifted(const NceToy& toy, std::size_t negatives, double temperature, std::uint64_t seed) {
  if (negatives == 0) throw Error("NCE loss needs at least one negative");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  std::size_t index = 0;
  auto part = [&](const Vector& positives) {
    double total = 0.0;
    for (double f : positives) {
      Rng rng = make_rng(seed, {index++});
      // log-sum-exp with the positive's own term as the reference point
      double acc = 1.0;
      for (std::size_t j = 0; j < negatives; ++j) {
        const double g = toy.pool[uniform_below(rng, toy.pool.size())];
        acc += std::exp((g - f) / temperature);
      }
      total += std::log(acc);
    }
    return positives.empty() ? 0.0 : total / static_cast<double>(positives.size());
  };
  const double n_gt = static_cast<double>(toy.ground_truth.size());
  const double n_ps = static_cast<double>(toy.pseudo.size());
  const double loss_gt = part(toy.ground_truth);
  const double loss_ps = part(toy.pseudo);
  const double loss = (n_gt * loss_gt + n_ps * loss_ps) / (n_gt + n_ps);
  return loss - std::log(static_cast<double>(negatives));
}

void DiagnosticConfig::validate() const {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  if (negative_counts.empty()) throw Error("negative count list is empty");
  for (std::size_t i = 0; i < negative_counts.size(); ++i) {
    if (negative_counts[i] == 0) throw Error("negative counts must be positive");
    if (i > 0 && negative_counts[i] <= negative_counts[i - 1]) throw Error("negative counts must be ascending");
  }
  if (seeds.empty()) throw Error("diagnostic needs at least one seed");
  if (limit_estimate_N <= negative_counts.back()) throw Error("limit_estimate_N must exceed every negative count");
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("slope fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

NceSweepResult nce_deviation_sweep(const DiagnosticConfig& cfg, const NceToy& toy) {
  cfg.validate();
  NceSweepResult result;
  result.epsilon = toy.epsilon;
  result.beta = toy.beta;
  result.limit = nce_loss_shifted(toy, cfg.limit_estimate_N, cfg.temperature, derive_seed(0x11717ULL, {}));
  std::vector<double> xs, ys;
  for (std::size_t n : cfg.negative_counts) {
    std::vector<double> dev(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), [&](std::size_t i) {
      dev[i] = std::abs(nce_loss_shifted(toy, n, cfg.temperature, cfg.seeds[i]) - result.limit);
    });
    std::sort(dev.begin(), dev.end());
    const std::size_t m = dev.size();
    const double med = m % 2 ? dev[m / 2] : 0.5 * (dev[m / 2 - 1] + dev[m / 2]);
    result.rows.push_back({n, med});
    xs.push_back(static_cast<double>(n));
    ys.push_back(med);
  }
  result.slope = xs.size() >= 2 ? loglog_slope(xs, ys) : 0.0;
  return result;
}

}  // namespace mpkd
