#include "mpkd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <utility>

#include "mpkd/eval.hpp"

namespace mpkd {

// -- configuration ------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("config: " + msg); };
  if (dim == 0) fail("dim must be positive");
  if (!(margin_graph > 0.0) || !(margin_align > 0.0)) fail("margins must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (neighbors == 0) fail("neighbors must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (graph_negatives == 0 || align_negatives == 0) fail("negative factors must be positive");
  if (time_intervals == 0) fail("time_intervals must be positive");
  for (double f : {pseudo_fraction_start, pseudo_fraction_end})
    if (!(f >= 0.0 && f <= 1.0)) fail("pseudo fractions must be in [0, 1]");
  if (pseudo_fraction_fixed > 1.0) fail("pseudo_fraction_fixed must be at most 1");
  if (exact_solver_cap == 0) fail("exact_solver_cap must be positive");
  if (train_steps == 0) fail("train_steps must be positive");
  if (time_intervals > train_steps) fail("time_intervals exceeds train_steps");
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config: " + key + " expects a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("config: " + key + " expects a number, got '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    const auto x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error("config: " + key + " expects a nonnegative integer, got '" + v + "'");
  }
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  auto u = [&] { return parse_uint(key, v); };
  auto d = [&] { return parse_double(key, v); };
  auto b = [&] { return parse_bool(key, v); };
  if (key == "dim") dim = u();
  else if (key == "margin_graph") margin_graph = d();
  else if (key == "margin_align") margin_align = d();
  else if (key == "lr") lr = d();
  else if (key == "batch_size") batch_size = u();
  else if (key == "epochs") epochs = u();
  else if (key == "teacher_epochs") teacher_epochs = u();
  else if (key == "neighbors") neighbors = u();
  else if (key == "layers") layers = u();
  else if (key == "dropout") dropout = d();
  else if (key == "graph_negatives") graph_negatives = u();
  else if (key == "align_negatives") align_negatives = u();
  else if (key == "time_intervals") time_intervals = u();
  else if (key == "warmup_epochs") warmup_epochs = u();
  else if (key == "pseudo_fraction_start") pseudo_fraction_start = d();
  else if (key == "pseudo_fraction_end") pseudo_fraction_end = d();
  else if (key == "pseudo_fraction_fixed") pseudo_fraction_fixed = d();
  else if (key == "seed") seed = u();
  else if (key == "uniform_strength") uniform_strength = b();
  else if (key == "pure_training") pure_training = b();
  else if (key == "no_pseudo") no_pseudo = b();
  else if (key == "no_event_transfer") no_event_transfer = b();
  else if (key == "patience") patience = u();
  else if (key == "align_steps") align_steps = u();
  else if (key == "exact_solver_cap") exact_solver_cap = u();
  else if (key == "min_similarity") min_similarity = d();
  else if (key == "replace_existing") replace_existing = b();
  else if (key == "corrupt_mode") {
    if (v == "object_only") corrupt_mode = CorruptMode::object_only;
    else if (v == "both_sides") corrupt_mode = CorruptMode::both_sides;
    else throw Error("config: corrupt_mode must be object_only or both_sides");
  } else if (key == "transfer_min_score") {
    if (v == "off" || v.empty()) transfer_min_score.reset();
    else transfer_min_score = d();
  } else if (key == "transfer_before_student") transfer_before_student = b();
  else if (key == "train_steps") train_steps = static_cast<TimeStep>(u());
  else if (key == "val_steps") val_steps = static_cast<TimeStep>(u());
  else if (key == "test_steps") test_steps = static_cast<TimeStep>(u());
  else throw Error("config: unknown key '" + key + "'");
}

std::string TrainConfig::serialize() const {
  std::ostringstream o;
  auto line = [&o](const char* k, const std::string& v) { o << k << " = " << v << '\n'; };
  auto bs = [](bool x) { return std::string(x ? "true" : "false"); };
  line("dim", std::to_string(dim));
  line("margin_graph", fmt_double(margin_graph));
  line("margin_align", fmt_double(margin_align));
  line("lr", fmt_double(lr));
  line("batch_size", std::to_string(batch_size));
  line("epochs", std::to_string(epochs));
  line("teacher_epochs", std::to_string(teacher_epochs));
  line("neighbors", std::to_string(neighbors));
  line("layers", std::to_string(layers));
  line("dropout", fmt_double(dropout));
  line("graph_negatives", std::to_string(graph_negatives));
  line("align_negatives", std::to_string(align_negatives));
  line("time_intervals", std::to_string(time_intervals));
  line("warmup_epochs", std::to_string(warmup_epochs));
  line("pseudo_fraction_start", fmt_double(pseudo_fraction_start));
  line("pseudo_fraction_end", fmt_double(pseudo_fraction_end));
  line("pseudo_fraction_fixed", fmt_double(pseudo_fraction_fixed));
  line("seed", std::to_string(seed));
  line("uniform_strength", bs(uniform_strength));
  line("pure_training", bs(pure_training));
  line("no_pseudo", bs(no_pseudo));
  line("no_event_transfer", bs(no_event_transfer));
  line("patience", std::to_string(patience));
  line("align_steps", std::to_string(align_steps));
  line("exact_solver_cap", std::to_string(exact_solver_cap));
  line("min_similarity", fmt_double(min_similarity));
  line("replace_existing", bs(replace_existing));
  line("corrupt_mode", corrupt_mode == CorruptMode::both_sides ? "both_sides" : "object_only");
  line("transfer_min_score", transfer_min_score ? fmt_double(*transfer_min_score) : "off");
  line("transfer_before_student", bs(transfer_before_student));
  line("train_steps", std::to_string(train_steps));
  line("val_steps", std::to_string(val_steps));
  line("test_steps", std::to_string(test_steps));
  return o.str();
}

std::string TrainConfig::digest() const { return hex64(fnv1a64(serialize())); }

double TrainConfig::pseudo_fraction(std::size_t epoch) const {
  if (pseudo_fraction_fixed >= 0.0) return pseudo_fraction_fixed;
  if (epochs == 0 || epochs - 1 <= warmup_epochs || epoch <= warmup_epochs) return pseudo_fraction_start;
  const double span = static_cast<double>(epochs - 1 - warmup_epochs);
  const double pos = std::min(1.0, static_cast<double>(epoch - warmup_epochs) / span);
  return pseudo_fraction_start + (pseudo_fraction_end - pseudo_fraction_start) * pos;
}

TrainConfig parse_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      base.set(trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  return parse_config(in, std::move(base));
}

void write_epoch_log(const std::vector<EpochLog>& log, std::ostream& out) {
  out << "epoch\tphase\tloss\tval_mrr\tpseudo_count\ttransferred_count\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6f\t%.6f\t%zu\t%zu\n", e.epoch, e.phase.c_str(), e.loss, e.val_mrr,
                  e.pseudo_count, e.transferred_count);
    out << buf;
  }
}

// -- teacher ----------------------------------------------------------------------------

namespace {

EncodeOptions encode_options(const TrainConfig& cfg, bool training, std::uint64_t dropout_seed) {
  EncodeOptions o;
  o.neighbors = cfg.neighbors;
  o.layers = cfg.layers;
  o.training = training;
  o.dropout_seed = dropout_seed;
  return o;
}

void check_finite(double loss, const std::string& phase, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw Error(phase + " diverged: non-finite loss at epoch " + std::to_string(epoch));
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

PretrainResult pretrain_teacher(const TemporalKG& source, const TrainConfig& cfg, bool record_trace) {
  cfg.validate();
  if (source.empty()) throw Error("teacher pretraining: source graph is empty");
  PretrainResult result;
  result.params = NetworkParams::initialize(source.num_entities(), source.num_relations(), cfg.dim,
                                            derive_seed(cfg.seed, {0x7eac4e7ULL}), cfg.dropout);
  auto& params = result.params;
  const auto quads = source.quadruples();

  auto full_loss = [&] {
    EncodingTape tape(params, source, encode_options(cfg, false, 0));
    NegativeSamplerConfig neg{cfg.graph_negatives, cfg.corrupt_mode, derive_seed(cfg.seed, {0x7ace})};
    return reasoning_loss(tape, params, quads, neg, cfg.margin_graph, 0);
  };
  if (record_trace) result.loss_trace.push_back(full_loss());

  AdamState opt;
  NetworkGrads grads(params);
  for (std::size_t epoch = 0; epoch < cfg.teacher_epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, {0x7eac4e7ULL, epoch});
    const auto order = shuffled(quads.size(), rng);
    std::vector<Quadruple> batch;
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(quads[order[k]]);
      EncodingTape tape(params, source, encode_options(cfg, true, derive_seed(cfg.seed, {0xd0, epoch, b})));
      grads.zero();
      NegativeSamplerConfig neg{cfg.graph_negatives, cfg.corrupt_mode, derive_seed(cfg.seed, {0x7eac4e7ULL, epoch})};
      const double loss = reasoning_loss(tape, params, batch, neg, cfg.margin_graph, b, &grads);
      check_finite(loss, "teacher pretraining", epoch);
      tape.backward(grads);
      adam_step(params.trainable(), std::as_const(grads).view(), opt, cfg.lr);
      epoch_loss += loss;
      ++batches;
    }
    result.epoch_losses.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
    if (record_trace) {
      result.loss_trace.push_back(full_loss());
      check_finite(result.loss_trace.back(), "teacher pretraining", epoch);
    }
  }
  return result;
}

NetworkParams init_student_from_teacher(const NetworkParams& teacher, const Vocabulary& teacher_relations,
                                        const Vocabulary& target_entities, const Vocabulary& target_relations,
                                        std::uint64_t seed, std::span<const AlignmentPair> anchors) {
  if (teacher.base_relations() != teacher_relations.size())
    throw Error("teacher relation table does not match its vocabulary");
  NetworkParams s = NetworkParams::initialize(target_entities.size(), target_relations.size(), teacher.dim(), seed,
                                              teacher.dropout_rate);
  s.transform = teacher.transform;
  s.attn = teacher.attn;
  s.time_freq = teacher.time_freq;
  const std::size_t Rt = teacher.base_relations(), Rs = target_relations.size();
  for (RelationId r = 0; r < Rs; ++r) {
    const auto tr = teacher_relations.find(target_relations.name(r));
    if (!tr) throw Error("relation '" + target_relations.name(r) + "' is not in the teacher vocabulary");
    const auto fwd = teacher.relation_emb.row(*tr);
    const auto rev = teacher.relation_emb.row(*tr + Rt);
    std::copy(fwd.begin(), fwd.end(), s.relation_emb.row(r).begin());
    std::copy(rev.begin(), rev.end(), s.relation_emb.row(r + Rs).begin());
  }
  for (const auto& p : anchors) {
    if (p.source >= teacher.num_entities() || p.target >= s.num_entities())
      throw Error("anchor pair outside the vocabularies");
    const auto row = teacher.entity_emb.row(p.source);
    std::copy(row.begin(), row.end(), s.entity_emb.row(p.target).begin());
  }
  return s;
}

// -- combined objective ----------------------------------------------------------------------

LossWeights combined_weights(std::size_t graph, std::size_t graph_pseudo, std::size_t align,
                             std::size_t align_pseudo) {
  if (graph + graph_pseudo + align + align_pseudo == 0) throw Error("combined loss: all training sets are empty");
  LossWeights w{0.0, 0.0, 0.0, 0.0};
  if (graph + graph_pseudo > 0) {
    const double total = static_cast<double>(graph + graph_pseudo);
    w.graph = static_cast<double>(graph) / total;
    w.graph_pseudo = static_cast<double>(graph_pseudo) / total;
  }
  if (align + align_pseudo > 0) {
    const double total = static_cast<double>(align + align_pseudo);
    w.align = static_cast<double>(align) / total;
    w.align_pseudo = static_cast<double>(align_pseudo) / total;
  }
  return w;
}

double combined_loss(const CombinedContext& ctx, const CombinedBatch& batch, NetworkGrads* student_grads,
                     AlignGrads* align_grads) {
  if (!ctx.student || !ctx.student_graph) throw Error("combined loss: missing student");
  const auto& student = *ctx.student;
  EncodingTape tape(student, *ctx.student_graph, ctx.encode);
  // Student gradients must reach relation rows too, so a scratch buffer is used
  // even when the caller only wants alignment gradients.
  NetworkGrads scratch;
  NetworkGrads* sg = student_grads;
  if (!sg) {
    scratch = NetworkGrads(student);
    sg = &scratch;
  }
  double total = 0.0;
  const NegativeSamplerConfig neg{ctx.graph_negatives, ctx.corrupt_mode, ctx.seed};
  if (!batch.graph.empty() && ctx.weights.graph > 0.0) {
    total += ctx.weights.graph *
             reasoning_loss(tape, student, batch.graph, neg, ctx.margin_graph, 4 * ctx.batch_id, sg, ctx.weights.graph);
  }
  if (!batch.graph_pseudo.empty() && ctx.weights.graph_pseudo > 0.0) {
    total += ctx.weights.graph_pseudo * reasoning_loss(tape, student, batch.graph_pseudo, neg, ctx.margin_graph,
                                                       4 * ctx.batch_id + 1, sg, ctx.weights.graph_pseudo);
  }

  const bool any_align = (!batch.align.empty() && ctx.weights.align > 0.0) ||
                         (!batch.align_pseudo.empty() && ctx.weights.align_pseudo > 0.0);
  if (any_align) {
    if (!ctx.align || !ctx.teacher_traj) throw Error("combined loss: alignment terms need the alignment module");
    const auto& phi = *ctx.align;
    const TimeStep T = ctx.steps;
    std::map<EntityId, Integration> src_cache, tgt_cache;
    IntegrationLookup source = [&](EntityId e) -> const Integration& {
      auto it = src_cache.find(e);
      if (it == src_cache.end()) {
        if (e >= ctx.teacher_traj->size()) throw Error("alignment source outside the teacher vocabulary");
        it = src_cache.emplace(e, temporal_integrate(phi, (*ctx.teacher_traj)[e])).first;
      }
      return it->second;
    };
    IntegrationLookup target = [&](EntityId e) -> const Integration& {
      auto it = tgt_cache.find(e);
      if (it == tgt_cache.end()) {
        DenseMatrix traj(T, student.dim());
        for (TimeStep i = 0; i < T; ++i) {
          const auto h = tape.encode(e, i + 1);
          std::copy(h.begin(), h.end(), traj.row(i).begin());
        }
        it = tgt_cache.emplace(e, temporal_integrate(phi, traj)).first;
      }
      return it->second;
    };
    AlignLossGrads dH;
    AlignLossOptions opt;
    opt.negatives = ctx.align_negatives;
    opt.margin = ctx.margin_align;
    opt.seed = ctx.seed;
    opt.uniform_strength = ctx.uniform_strength;
    const bool want = student_grads || align_grads;
    if (!batch.align.empty() && ctx.weights.align > 0.0) {
      opt.batch_id = 4 * ctx.batch_id + 2;
      opt.weight = ctx.weights.align;
      total += ctx.weights.align * alignment_loss(phi, source, target, batch.align, student.num_entities(), opt,
                                                  want ? &dH : nullptr, ctx.context);
    }
    if (!batch.align_pseudo.empty() && ctx.weights.align_pseudo > 0.0) {
      opt.batch_id = 4 * ctx.batch_id + 3;
      opt.weight = ctx.weights.align_pseudo;
      total += ctx.weights.align_pseudo * alignment_loss(phi, source, target, batch.align_pseudo,
                                                         student.num_entities(), opt, want ? &dH : nullptr,
                                                         ctx.context);
    }
    if (align_grads) {
      for (const auto& [e, g] : dH.source) integrate_backward(phi, src_cache.at(e), g, align_grads, nullptr);
    }
    DenseMatrix g_traj;
    for (const auto& [e, g] : dH.target) {
      integrate_backward(phi, tgt_cache.at(e), g, align_grads, student_grads ? &g_traj : nullptr);
      if (!student_grads) continue;
      for (TimeStep i = 0; i < T; ++i) tape.accumulate(e, i + 1, g_traj.row(i));
      g_traj.fill(0.0);
    }
  }
  if (student_grads) tape.backward(*student_grads);
  return total;
}

// -- training loop ----------------------------------------------------------------------------

namespace {

struct Snapshot {
  NetworkParams student;
  AlignParams align;
  AlignmentSet alignments;
  AlignmentSet pseudo;
  std::size_t transferred = 0;
  std::size_t pseudo_log = 0;
};

std::vector<DenseMatrix> all_trajectories(const NetworkParams& params, const TemporalKG& kg, TimeStep T,
                                          const EncodeOptions& enc) {
  std::vector<DenseMatrix> out(params.num_entities());
  const std::size_t n = out.size();
  const std::size_t blocks = std::min<std::size_t>(std::max(1u, num_threads()), std::max<std::size_t>(n, 1));
  parallel_for(blocks, [&](std::size_t b) {
    EncodingTape tape(params, kg, enc);
    for (std::size_t e = b * n / blocks; e < (b + 1) * n / blocks; ++e) {
      DenseMatrix traj(T, params.dim());
      for (TimeStep i = 0; i < T; ++i) {
        const auto h = tape.encode(static_cast<EntityId>(e), i + 1);
        std::copy(h.begin(), h.end(), traj.row(i).begin());
      }
      out[e] = std::move(traj);
    }
  });
  return out;
}

std::vector<Quadruple> transferred_quads(const std::vector<TransferRecord>& records, std::size_t count) {
  std::vector<Quadruple> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(records[i].added);
  return out;
}

}  // namespace

TrainState train_mpkd(const TrainInputs& inputs, const NetworkParams& teacher, const TrainConfig& cfg,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  if (!inputs.source || !inputs.target) throw Error("train_mpkd: missing source or target graph");
  const TemporalKG& source = *inputs.source;
  const TemporalKG& target = *inputs.target;
  if (inputs.alignments.empty() && !cfg.pure_training)
    throw Error("train_mpkd: alignments may be empty only in pure_training mode");
  if (teacher.num_entities() != source.num_entities()) throw Error("teacher does not match the source vocabulary");
  const TimeStep T = cfg.train_steps;
  if (source.horizon() < T || target.horizon() < T) throw Error("graphs are shorter than train_steps");
  for (const auto& p : inputs.alignments) {
    if (p.source >= source.num_entities() || p.target >= target.num_entities())
      throw Error("alignment pair outside the vocabularies");
  }

  TrainState state;
  state.teacher = teacher;
  state.student = init_student_from_teacher(teacher, source.relations(), target.entities(), target.relations(),
                                            derive_seed(cfg.seed, {0x57d}), inputs.alignments);
  state.align = AlignParams::initialize(cfg.dim, derive_seed(cfg.seed, {0xa1}));
  state.alignments = inputs.alignments;
  const AlignmentSet& original = inputs.alignments;

  const auto teacher_traj = all_trajectories(state.teacher, source, T, encode_options(cfg, false, 0));
  const bool do_transfer = !cfg.pure_training && !cfg.no_event_transfer;
  const bool do_pseudo = !cfg.pure_training && !cfg.no_pseudo;
  const std::vector<Quadruple> target_quads(target.quadruples().begin(), target.quadruples().end());

  Snapshot best{state.student, state.align, state.alignments, state.pseudo, 0, 0};
  state.best_val_mrr = -1.0;
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    AlignmentSet in_force = state.alignments;
    in_force.insert(in_force.end(), state.pseudo.begin(), state.pseudo.end());

    auto student_graph = target.merged(transferred_quads(state.transferred, state.transferred.size()));

    // (a) alignment module, student frozen
    if (!in_force.empty() && cfg.align_steps > 0) {
      const auto w = combined_weights(0, 0, state.alignments.size(), state.pseudo.size());
      CombinedBatch ab{{}, {}, state.alignments, state.pseudo};
      for (std::size_t step = 0; step < cfg.align_steps; ++step) {
        CombinedContext ctx;
        ctx.student = &state.student;
        ctx.align = &state.align;
        ctx.student_graph = &student_graph;
        ctx.teacher_traj = &teacher_traj;
        ctx.context = &in_force;
        ctx.steps = T;
        ctx.weights = w;
        ctx.margin_align = cfg.margin_align;
        ctx.align_negatives = cfg.align_negatives;
        ctx.uniform_strength = cfg.uniform_strength;
        ctx.encode = encode_options(cfg, false, 0);
        ctx.seed = derive_seed(cfg.seed, {0xa5, epoch});
        ctx.batch_id = step;
        AlignGrads g(state.align);
        const double loss = combined_loss(ctx, ab, nullptr, &g);
        check_finite(loss, "alignment phase", epoch);
        adam_step(state.align.trainable(), std::as_const(g).view(), state.align_opt, cfg.lr);
      }
    }

    // (b) event transfer
    auto run_transfer = [&] {
      if (!do_transfer || epoch < cfg.warmup_epochs || in_force.empty()) return;
      TransferOptions to;
      to.neighbors = cfg.neighbors;
      to.layers = cfg.layers;
      to.round = epoch;
      to.min_score = cfg.transfer_min_score;
      to.prior = state.transferred;
      auto recs = transfer_events(source, student_graph, in_force, state.student, T, to);
      state.transferred.insert(state.transferred.end(), recs.begin(), recs.end());
      student_graph = target.merged(transferred_quads(state.transferred, state.transferred.size()));
    };
    if (cfg.transfer_before_student) run_transfer();

    // (c) student, intervals from most recent to earliest
    const auto pseudo_quads = transferred_quads(state.transferred, state.transferred.size());
    const auto weights =
        combined_weights(target_quads.size(), pseudo_quads.size(), state.alignments.size(), state.pseudo.size());
    struct Tagged {
      Quadruple q;
      bool pseudo;
    };
    std::vector<std::vector<Tagged>> batches;
    for (std::size_t k = cfg.time_intervals; k-- > 0;) {
      const TimeStep lo = static_cast<TimeStep>(k * T / cfg.time_intervals);
      const TimeStep hi = static_cast<TimeStep>((k + 1) * T / cfg.time_intervals);
      std::vector<Tagged> pool;
      for (const auto& q : target_quads)
        if (q.time >= lo && q.time < hi) pool.push_back({q, false});
      for (const auto& q : pseudo_quads)
        if (q.time >= lo && q.time < hi) pool.push_back({q, true});
      Rng rng = make_rng(cfg.seed, {0xba, epoch, k});
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t s = 0; s < pool.size(); s += cfg.batch_size)
        batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(s),
                             pool.begin() + static_cast<std::ptrdiff_t>(std::min(pool.size(), s + cfg.batch_size)));
    }
    double epoch_loss = 0.0;
    NetworkGrads grads(state.student);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      CombinedBatch cb;
      for (const auto& t : batches[b]) (t.pseudo ? cb.graph_pseudo : cb.graph).push_back(t.q);
      // Alignment pairs are spread over the epoch's batches.
      for (std::size_t i = b; i < state.alignments.size(); i += batches.size()) cb.align.push_back(state.alignments[i]);
      for (std::size_t i = b; i < state.pseudo.size(); i += batches.size()) cb.align_pseudo.push_back(state.pseudo[i]);
      CombinedContext ctx;
      ctx.student = &state.student;
      ctx.align = &state.align;
      ctx.student_graph = &student_graph;
      ctx.teacher_traj = &teacher_traj;
      ctx.context = &in_force;
      ctx.steps = T;
      ctx.weights = weights;
      ctx.margin_graph = cfg.margin_graph;
      ctx.margin_align = cfg.margin_align;
      ctx.graph_negatives = cfg.graph_negatives;
      ctx.align_negatives = cfg.align_negatives;
      ctx.corrupt_mode = cfg.corrupt_mode;
      ctx.uniform_strength = cfg.uniform_strength;
      ctx.encode = encode_options(cfg, true, derive_seed(cfg.seed, {0xd1, epoch, b}));
      ctx.seed = derive_seed(cfg.seed, {0x5b, epoch});
      ctx.batch_id = b;
      grads.zero();
      const double loss = combined_loss(ctx, cb, &grads, nullptr);
      check_finite(loss, "student phase", epoch);
      adam_step(state.student.trainable(), std::as_const(grads).view(), state.student_opt, cfg.lr);
      epoch_loss += loss;
    }
    if (!batches.empty()) epoch_loss /= static_cast<double>(batches.size());

    if (!cfg.transfer_before_student) run_transfer();

    // (d) pseudo alignments
    if (do_pseudo && epoch >= cfg.warmup_epochs) {
      const auto budget = static_cast<std::size_t>(
          std::llround(cfg.pseudo_fraction(epoch) * static_cast<double>(target.num_entities())));
      if (budget == 0) {
        state.pseudo.clear();
        state.alignments = original;
      } else {
        const auto student_traj = all_trajectories(state.student, student_graph, T, encode_options(cfg, false, 0));
        std::vector<DenseMatrix> Hs(source.num_entities()), Ht(target.num_entities());
        parallel_for(Hs.size(), [&](std::size_t e) { Hs[e] = temporal_integrate(state.align, teacher_traj[e]).H; });
        parallel_for(Ht.size(), [&](std::size_t e) { Ht[e] = temporal_integrate(state.align, student_traj[e]).H; });
        AlignmentSet scope = original;
        scope.insert(scope.end(), state.pseudo.begin(), state.pseudo.end());
        SimilarityTable table;
        table.targets = candidate_targets(student_graph, scope);
        table.sources.resize(source.num_entities());
        std::iota(table.sources.begin(), table.sources.end(), 0);
        table.values = DenseMatrix(table.sources.size(), table.targets.size());
        parallel_for(table.sources.size(), [&](std::size_t i) {
          for (std::size_t j = 0; j < table.targets.size(); ++j)
            table.values(i, j) = mean_similarity(Hs[table.sources[i]], Ht[table.targets[j]], false);
        });
        PseudoGenConfig pg;
        pg.top_k_budget = budget;
        pg.min_similarity = cfg.min_similarity;
        pg.exact_solver_cap = cfg.exact_solver_cap;
        pg.replace_existing = cfg.replace_existing;
        auto existing_sim = [&](EntityId s, EntityId t) { return mean_similarity(Hs[s], Ht[t], false); };
        auto res = generate_pseudo_alignments(table, pg, original, epoch, existing_sim);
        state.pseudo = std::move(res.pseudo);
        state.alignments.clear();
        for (const auto& p : original) {
          if (std::find(res.replaced.begin(), res.replaced.end(), p) == res.replaced.end())
            state.alignments.push_back(p);
        }
        state.pseudo_log.insert(state.pseudo_log.end(), res.log.begin(), res.log.end());
      }
    }

    // validation and early stopping
    double val_mrr = 0.0;
    if (inputs.validation && !inputs.validation->empty()) {
      const auto history = target.merged(transferred_quads(state.transferred, state.transferred.size()))
                               .merged(inputs.validation->quadruples());
      EvalOptions eo;
      eo.neighbors = cfg.neighbors;
      eo.layers = cfg.layers;
      val_mrr = evaluate(state.student, history, inputs.validation->quadruples(), eo).mrr;
    }
    state.log.push_back({epoch, "mpkd", epoch_loss, val_mrr, state.pseudo.size(), state.transferred.size()});

    if (val_mrr > state.best_val_mrr || !inputs.validation || inputs.validation->empty()) {
      state.best_val_mrr = val_mrr;
      state.best_epoch = epoch;
      best = {state.student, state.align, state.alignments, state.pseudo, state.transferred.size(),
              state.pseudo_log.size()};
      stale = 0;
    } else if (epoch >= cfg.warmup_epochs) {
      ++stale;
    }
    if (on_epoch) on_epoch(state);
    if (cfg.patience > 0 && stale >= cfg.patience) break;
  }

  if (cfg.epochs > 0) {
    state.student = std::move(best.student);
    state.align = std::move(best.align);
    state.alignments = std::move(best.alignments);
    state.pseudo = std::move(best.pseudo);
    state.transferred.resize(best.transferred);
    state.pseudo_log.resize(best.pseudo_log);
  } else {
    state.best_val_mrr = 0.0;
  }
  return state;
}

TrainState train_mpkd(const TrainInputs& inputs, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (!inputs.source) throw Error("train_mpkd: missing source graph");
  auto pre = pretrain_teacher(*inputs.source, cfg);
  return train_mpkd(inputs, pre.params, cfg, on_epoch);
}

}  // namespace mpkd
