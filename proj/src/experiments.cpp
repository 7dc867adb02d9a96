#include "mpkd/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace mpkd {

ExperimentConfig desk_experiment() {
  ExperimentConfig exp;
  auto& t = exp.train;
  t.dim = 32;
  t.lr = 0.01;
  t.batch_size = 128;
  t.epochs = 30;
  t.teacher_epochs = 20;
  t.warmup_epochs = 8;
  t.patience = 5;
  t.align_steps = 5;
  t.dropout = 0.1;
  return exp;
}

SyntheticSplit make_synthetic_split(const ExperimentConfig& exp, std::uint64_t seed) {
  SyntheticSplit s;
  s.pair = generate_synthetic_pair(exp.data, seed);
  const auto& t = exp.train;
  const SplitSpec spec{exp.data.steps, t.train_steps, t.val_steps, t.test_steps};
  s.source_train = s.pair.source.restricted(0, t.train_steps);
  s.target = split_by_time(s.pair.target, spec);
  s.target_full = split_by_time(s.pair.target_full, spec);
  return s;
}

MetricsReport evaluate_state(const TrainState& state, const TimeSplit& target, const TrainConfig& cfg) {
  std::vector<Quadruple> extra;
  for (const auto& r : state.transferred) extra.push_back(r.added);
  const auto history =
      target.train.merged(extra).merged(target.val.quadruples()).merged(target.test.quadruples());
  EvalOptions eo;
  eo.neighbors = cfg.neighbors;
  eo.layers = cfg.layers;
  auto report = evaluate(state.student, history, target.test.quadruples(), eo);
  report.config_digest = cfg.digest();
  report.seed = cfg.seed;
  return report;
}

const NetworkParams& TeacherCache::get(const SyntheticSplit& split, const TrainConfig& cfg, std::uint64_t seed) {
  // Only the fields pretraining reads take part in the key.
  TrainConfig key_cfg;
  key_cfg.dim = cfg.dim;
  key_cfg.margin_graph = cfg.margin_graph;
  key_cfg.lr = cfg.lr;
  key_cfg.batch_size = cfg.batch_size;
  key_cfg.teacher_epochs = cfg.teacher_epochs;
  key_cfg.neighbors = cfg.neighbors;
  key_cfg.layers = cfg.layers;
  key_cfg.dropout = cfg.dropout;
  key_cfg.graph_negatives = cfg.graph_negatives;
  key_cfg.corrupt_mode = cfg.corrupt_mode;
  key_cfg.seed = seed;
  const auto key = std::make_pair(seed, key_cfg.serialize());
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, pretrain_teacher(split.source_train, key_cfg).params).first;
  return it->second;
}

RunResult run_mpkd(const SyntheticSplit& split, TrainConfig cfg, std::uint64_t seed, double noise_ratio,
                   TeacherCache* teachers) {
  cfg.seed = seed;
  TrainInputs in;
  in.source = &split.source_train;
  in.target = &split.target.train;
  in.validation = &split.target.val;
  in.alignments = noise_ratio > 0.0 ? inject_alignment_noise(split.pair.alignments, noise_ratio,
                                                             split.pair.target.num_entities(),
                                                             derive_seed(seed, {0x9015e}))
                                    : split.pair.alignments;
  TeacherCache local;
  TeacherCache& cache = teachers ? *teachers : local;
  const auto& teacher = cache.get(split, cfg, seed);
  const auto state = train_mpkd(in, teacher, cfg);
  RunResult r;
  r.test = evaluate_state(state, split.target, cfg);
  r.best_val_mrr = state.best_val_mrr;
  r.pseudo_count = state.pseudo.size();
  r.transferred_count = state.transferred.size();
  r.epochs_run = state.log.size();
  return r;
}

RunResult run_single(const TimeSplit& target, TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.teacher_epochs = cfg.epochs;
  const auto pre = pretrain_teacher(target.train, cfg);
  TrainState state;
  state.student = pre.params;
  RunResult r;
  r.test = evaluate_state(state, target, cfg);
  r.epochs_run = cfg.epochs;
  return r;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "x,variant,seed,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.value);
    out << r.x << ',' << r.variant << ',' << r.seed << ',' << buf << '\n';
  }
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

namespace {

std::string fmt_x(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

TrainConfig variant_config(const TrainConfig& base, const std::string& variant) {
  TrainConfig cfg = base;
  if (variant == "full") return cfg;
  if (variant == "uniform_strength") cfg.uniform_strength = true;
  else if (variant == "pure_training") cfg.pure_training = true;
  else if (variant == "no_pseudo") cfg.no_pseudo = true;
  else if (variant == "no_event_transfer") cfg.no_event_transfer = true;
  else throw Error("unknown variant '" + variant + "'");
  return cfg;
}

}  // namespace

NoiseSweepResult noise_sweep(const ExperimentConfig& exp, const std::vector<double>& ratios,
                             const std::vector<std::string>& variants) {
  if (ratios.empty()) throw Error("noise sweep: no ratios");
  if (std::find(variants.begin(), variants.end(), "full") == variants.end() ||
      std::find(variants.begin(), variants.end(), "uniform_strength") == variants.end())
    throw Error("noise sweep: variants must include full and uniform_strength");
  NoiseSweepResult result;
  std::map<std::string, std::map<double, std::vector<double>>> drops;
  for (auto seed : exp.seeds) {
    const auto split = make_synthetic_split(exp, seed);
    TeacherCache teachers;
    for (const auto& variant : variants) {
      const auto cfg = variant_config(exp.train, variant);
      const double clean = run_mpkd(split, cfg, seed, 0.0, &teachers).test.hits10;
      for (double ratio : ratios) {
        const double h = ratio == 0.0 ? clean : run_mpkd(split, cfg, seed, ratio, &teachers).test.hits10;
        result.rows.push_back({fmt_x(ratio), variant, seed, h});
        drops[variant][ratio].push_back(clean > 0.0 ? (clean - h) / clean : 0.0);
      }
    }
  }
  for (auto& [variant, by_ratio] : drops)
    for (auto& [ratio, v] : by_ratio) result.median_drop[variant][ratio] = median(v);
  return result;
}

PseudoSweepResult pseudo_ratio_sweep(const ExperimentConfig& exp, const std::vector<double>& fractions,
                                     bool references) {
  if (fractions.empty() || fractions.front() != 0.0) throw Error("pseudo sweep: fractions must start at 0");
  if (!std::is_sorted(fractions.begin(), fractions.end())) throw Error("pseudo sweep: fractions must be ascending");
  PseudoSweepResult result;
  std::map<double, std::vector<double>> hits;
  for (auto seed : exp.seeds) {
    const auto split = make_synthetic_split(exp, seed);
    TeacherCache teachers;
    for (double f : fractions) {
      TrainConfig cfg = exp.train;
      cfg.pseudo_fraction_fixed = f;
      const double h = run_mpkd(split, cfg, seed, 0.0, &teachers).test.hits10;
      result.rows.push_back({fmt_x(f), "mpkd", seed, h});
      hits[f].push_back(h);
    }
    if (references) {
      result.rows.push_back({"ref", "single_full", seed, run_single(split.target_full, exp.train, seed).test.hits10});
      result.rows.push_back({"ref", "single_incomplete", seed, run_single(split.target, exp.train, seed).test.hits10});
    }
  }
  for (auto& [f, v] : hits) result.median_hits10[f] = median(v);
  return result;
}

}  // namespace mpkd
