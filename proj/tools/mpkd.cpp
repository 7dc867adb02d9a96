// mpkd command line: synth, train, eval, experiment.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpkd/checkpoint.hpp"
#include "mpkd/eval.hpp"
#include "mpkd/experiments.hpp"
#include "mpkd/trainer.hpp"

namespace fs = std::filesystem;
using namespace mpkd;

namespace {

struct Shared {
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = 1;
  std::string out = ".";
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string digest_of(const std::string& bytes) { return hex64(fnv1a64(bytes)); }

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw Error(std::string("bad value '") + item + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw Error(std::string("empty list for ") + what);
  return out;
}

// -- synth ---------------------------------------------------------------------

struct SynthArgs {
  SyntheticConfig cfg;
  std::size_t entities = 200;
};

int run_synth(const SynthArgs& a, const Shared& sh) {
  SyntheticConfig cfg = a.cfg;
  cfg.source_entities = cfg.target_entities = a.entities;
  if (cfg.train_steps > cfg.steps) cfg.train_steps = cfg.steps;
  const auto pair = generate_synthetic_pair(cfg, sh.seed);
  ensure_dir(sh.out);
  const fs::path dir(sh.out);

  std::ostringstream src, tgt, al;
  dump_quadruples(pair.source, src);
  dump_quadruples(pair.target, tgt);
  dump_alignments(pair.alignments, pair.source.entities(), pair.target.entities(), al);
  write_text(dir / "source.tsv", src.str());
  write_text(dir / "target.tsv", tgt.str());
  write_text(dir / "align.tsv", al.str());

  nlohmann::ordered_json m;
  m["command"] = "synth";
  m["seed"] = sh.seed;
  m["config"] = {{"entities", a.entities},
                 {"relations", cfg.relations},
                 {"steps", cfg.steps},
                 {"train_steps", cfg.train_steps},
                 {"events_per_step", cfg.events_per_step},
                 {"clusters", cfg.clusters},
                 {"shift_span", cfg.shift_span},
                 {"repeat_prob", cfg.repeat_prob},
                 {"copy_prob", cfg.copy_prob},
                 {"coverage", cfg.coverage},
                 {"target_ratio", cfg.target_ratio}};
  m["files"] = {{"source.tsv", {{"lines", pair.source.size()}, {"digest", digest_of(src.str())}}},
                {"target.tsv", {{"lines", pair.target.size()}, {"digest", digest_of(tgt.str())}}},
                {"align.tsv", {{"lines", pair.alignments.size()}, {"digest", digest_of(al.str())}}}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return 0;
}

// -- shared data loading -------------------------------------------------------------

// Interns every name of an alignment file so entities without events still get ids.
void intern_alignment_names(const fs::path& path, Vocabulary& source, Vocabulary& target) {
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    const auto tab2 = line.find('\t', tab + 1);
    source.intern(line.substr(0, tab));
    target.intern(line.substr(tab + 1, tab2 == std::string::npos ? std::string::npos : tab2 - tab - 1));
  }
}

// -- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string source, target, align;
  std::vector<std::string> ablations;
  std::vector<std::string> sets;
  bool pseudo_log = false;
};

int run_train(const TrainArgs& a, const Shared& sh) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& ab : a.ablations) {
    if (ab != "uniform_strength" && ab != "pure_training" && ab != "no_pseudo" && ab != "no_event_transfer")
      throw Error("unknown ablation '" + ab +
                  "' (valid: uniform_strength, pure_training, no_pseudo, no_event_transfer)");
    cfg.set(ab, "true");
  }
  if (sh.seed_set) cfg.seed = sh.seed;
  cfg.validate();

  const TimeStep total = cfg.train_steps + cfg.val_steps + cfg.test_steps;
  Vocabulary src_ents, tgt_ents, rels;
  intern_alignment_names(a.align, src_ents, tgt_ents);
  LoadOptions lo;
  lo.horizon = total;
  const auto source = load_quadruples(a.source, src_ents, rels, lo);
  const auto target = load_quadruples(a.target, tgt_ents, source.relations(), lo);
  const auto pairs = load_alignments(a.align, source.entities(), target.entities());

  const auto source_train = source.restricted(0, cfg.train_steps);
  const auto split = split_by_time(target, SplitSpec{total, cfg.train_steps, cfg.val_steps, cfg.test_steps});
  TrainInputs in{&source_train, &split.train, &split.val, pairs};
  const auto teacher = pretrain_teacher(source_train, cfg).params;
  const auto state = train_mpkd(in, teacher, cfg);

  ensure_dir(sh.out);
  const fs::path dir(sh.out);
  Checkpoint ck;
  ck.student = state.student;
  ck.align = state.align;
  ck.meta.neighbors = cfg.neighbors;
  ck.meta.layers = cfg.layers;
  ck.meta.entities = target.entities().names();
  ck.meta.relations = target.relations().names();
  ck.meta.config_digest = cfg.digest();
  ck.meta.seed = cfg.seed;
  save_checkpoint(dir / "checkpoint.mpkd", ck);

  std::ostringstream log;
  write_epoch_log(state.log, log);
  write_text(dir / "log.tsv", log.str());

  std::ostringstream tr;
  tr << "round\tmechanism\tsubject\trelation\tobject\ttime\n";
  for (const auto& r : state.transferred) {
    tr << r.round << '\t' << (r.mechanism == TransferMechanism::alignment_lookup ? "lookup" : "top1") << '\t'
       << target.entities().name(r.added.subject) << '\t' << target.relations().name(r.added.relation) << '\t'
       << target.entities().name(r.added.object) << '\t' << r.added.time << '\n';
  }
  write_text(dir / "transferred.tsv", tr.str());
  if (a.pseudo_log) {
    std::ostringstream pl;
    write_pseudo_log(state.pseudo_log, source.entities(), target.entities(), pl);
    write_text(dir / "pseudo.tsv", pl.str());
  }

  nlohmann::ordered_json m;
  m["command"] = "train";
  m["seed"] = cfg.seed;
  m["config_digest"] = cfg.digest();
  m["config"] = cfg.serialize();
  m["inputs"] = {{"source", a.source}, {"target", a.target}, {"align", a.align}};
  m["best_epoch"] = state.best_epoch;
  m["best_val_mrr"] = state.best_val_mrr;
  m["epochs_run"] = state.log.size();
  m["pseudo_pairs"] = state.pseudo.size();
  m["transferred_events"] = state.transferred.size();
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  return 0;
}

// -- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string test;
  std::vector<std::string> history;
  bool per_step = false;
  bool object_only = false;
};

int run_eval(const EvalArgs& a, const Shared& sh) {
  const auto ck = load_checkpoint(a.checkpoint);
  LoadOptions lo;
  lo.mode = VocabMode::strict;
  const Vocabulary ents(ck.meta.entities), rels(ck.meta.relations);
  const auto test = load_quadruples(a.test, ents, rels, lo);
  if (test.empty()) throw Error(a.test + ": no test events");
  std::vector<Quadruple> all;
  TimeStep horizon = test.horizon();
  for (const auto& h : a.history) {
    const auto g = load_quadruples(h, ents, rels, lo);
    all.insert(all.end(), g.quadruples().begin(), g.quadruples().end());
    horizon = std::max(horizon, g.horizon());
  }
  all.insert(all.end(), test.quadruples().begin(), test.quadruples().end());
  const TemporalKG history(ents, rels, std::move(all), horizon);

  EvalOptions eo;
  eo.neighbors = ck.meta.neighbors;
  eo.layers = ck.meta.layers;
  eo.both_directions = !a.object_only;
  auto report = evaluate(ck.student, history, test.quadruples(), eo);
  report.config_digest = ck.meta.config_digest;
  report.seed = ck.meta.seed;

  ensure_dir(sh.out);
  const fs::path dir(sh.out);
  write_text(dir / "metrics.json", report.to_json());
  if (a.per_step) write_text(dir / "per_step.csv", report.per_step_csv());
  return 0;
}

// -- experiment ------------------------------------------------------------------

struct ExperimentArgs {
  std::string name;
  std::string config;
  std::string ratios = "0,0.05,0.1,0.15,0.2";
  std::string fractions = "0,0.1,0.2,0.3,0.4,0.5";
  std::string negatives = "8,32,128,512";
  std::size_t seeds = 5;
  bool no_references = false;
};

const char* const kExperiments = "noise, pseudo-ratio, nce-decay";

int run_experiment(const ExperimentArgs& a, const Shared& sh) {
  if (a.name != "noise" && a.name != "pseudo-ratio" && a.name != "nce-decay")
    throw Error("unknown experiment '" + a.name + "' (valid: " + kExperiments + ")");
  if (a.seeds == 0) throw Error("--seeds must be positive");
  const std::uint64_t first = sh.seed_set ? sh.seed : 1;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < a.seeds; ++i) seeds.push_back(first + i);

  ensure_dir(sh.out);
  const fs::path dir(sh.out);
  if (a.name == "nce-decay") {
    DiagnosticConfig dc;
    dc.negative_counts = parse_list<std::size_t>(a.negatives, "--N");
    dc.seeds = seeds;
    const auto toy = make_nce_toy(NceToyConfig{});
    const auto res = nce_deviation_sweep(dc, toy);
    std::vector<SweepRow> rows;
    for (const auto& r : res.rows) rows.push_back({std::to_string(r.negatives), "median_deviation", 0, r.median_deviation});
    std::ostringstream csv;
    write_sweep_csv(rows, csv);
    write_text(dir / "nce_decay.csv", csv.str());
    std::fprintf(stderr, "slope %.4f limit %.6f epsilon %.3f beta %.3f\n", res.slope, res.limit, res.epsilon,
                 res.beta);
    return 0;
  }

  ExperimentConfig exp = desk_experiment();
  if (!a.config.empty()) exp.train = load_config(a.config, exp.train);
  exp.seeds = seeds;
  std::ostringstream csv;
  if (a.name == "noise") {
    const auto res = noise_sweep(exp, parse_list<double>(a.ratios, "--ratios"));
    write_sweep_csv(res.rows, csv);
    write_text(dir / "noise.csv", csv.str());
  } else {
    const auto res = pseudo_ratio_sweep(exp, parse_list<double>(a.fractions, "--fractions"), !a.no_references);
    write_sweep_csv(res.rows, csv);
    write_text(dir / "pseudo_ratio.csv", csv.str());
  }
  return 0;
}

void add_shared(CLI::App* cmd, Shared& sh) {
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&sh](const std::uint64_t& s) {
        sh.seed = s;
        sh.seed_set = true;
      },
      "random seed");
  cmd->add_option("--threads", sh.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  cmd->add_option("--out", sh.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal knowledge graph transfer with mutually paced distillation"};
  app.require_subcommand(1);
  Shared sh;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic source/target pair");
  add_shared(c_synth, sh);
  c_synth->add_option("--entities", synth.entities, "entities per graph");
  c_synth->add_option("--relations", synth.cfg.relations);
  c_synth->add_option("--steps", synth.cfg.steps);
  c_synth->add_option("--train-steps", synth.cfg.train_steps, "target events are subsampled only before this step");
  c_synth->add_option("--events-per-step", synth.cfg.events_per_step);
  c_synth->add_option("--clusters", synth.cfg.clusters);
  c_synth->add_option("--shift-span", synth.cfg.shift_span);
  c_synth->add_option("--repeat-prob", synth.cfg.repeat_prob);
  c_synth->add_option("--copy-prob", synth.cfg.copy_prob);
  c_synth->add_option("--coverage", synth.cfg.coverage, "fraction of target entities with a disclosed alignment");
  c_synth->add_option("--target-ratio", synth.cfg.target_ratio);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "pretrain the teacher and train the student");
  add_shared(c_train, sh);
  c_train->add_option("--config", train.config, "key = value config file")->check(CLI::ExistingFile);
  c_train->add_option("--source", train.source)->required()->check(CLI::ExistingFile);
  c_train->add_option("--target", train.target)->required()->check(CLI::ExistingFile);
  c_train->add_option("--align", train.align)->required()->check(CLI::ExistingFile);
  c_train->add_option("--ablation", train.ablations, "uniform_strength, pure_training, no_pseudo, no_event_transfer");
  c_train->add_option("--set", train.sets, "config override key=value (after --config)");
  c_train->add_flag("--pseudo-log", train.pseudo_log, "also write pseudo.tsv");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "rank test events with a checkpoint");
  add_shared(c_eval, sh);
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--test", ev.test)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--history", ev.history, "earlier events (repeatable)");
  c_eval->add_flag("--per-step", ev.per_step, "also write per_step.csv");
  c_eval->add_flag("--object-only", ev.object_only, "rank object queries only");

  ExperimentArgs ex;
  auto* c_exp = app.add_subcommand("experiment", "run a sweep and write CSV");
  add_shared(c_exp, sh);
  c_exp->add_option("name", ex.name, kExperiments)->required();
  c_exp->add_option("--config", ex.config)->check(CLI::ExistingFile);
  c_exp->add_option("--ratios", ex.ratios);
  c_exp->add_option("--fractions", ex.fractions);
  c_exp->add_option("--N", ex.negatives, "negative counts for nce-decay");
  c_exp->add_option("--seeds", ex.seeds, "number of seeds, counting up from --seed (default 1)");
  c_exp->add_flag("--no-references", ex.no_references, "skip the single-model reference runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    set_num_threads(sh.threads);
    if (*c_synth) return run_synth(synth, sh);
    if (*c_train) return run_train(train, sh);
    if (*c_eval) return run_eval(ev, sh);
    if (*c_exp) return run_experiment(ex, sh);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
