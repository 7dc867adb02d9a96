#include "mpkd/tkg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace mpkd {

// -- Vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> names) {
  for (auto& n : names) intern(n);
}

Vocabulary Vocabulary::numbered(std::size_t n, std::string_view prefix) {
  Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) v.intern(std::string(prefix) + std::to_string(i));
  return v;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Vocabulary::intern(std::string_view name) {
  auto [it, inserted] = index_.emplace(std::string(name), static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.emplace_back(name);
  return it->second;
}

// -- TemporalKG ---------------------------------------------------------------

bool adjacency_less(const Neighbor& a, const Neighbor& b) {
  if (a.time != b.time) return a.time < b.time;
  if (a.entity != b.entity) return a.entity < b.entity;
  return a.relation < b.relation;
}

TemporalKG::TemporalKG(Vocabulary entities, Vocabulary relations, std::vector<Quadruple> quadruples,
                       TimeStep horizon)
    : TemporalKG(std::make_shared<const Vocabulary>(std::move(entities)),
                 std::make_shared<const Vocabulary>(std::move(relations)), std::move(quadruples),
                 horizon) {}

TemporalKG::TemporalKG(std::shared_ptr<const Vocabulary> entities,
                       std::shared_ptr<const Vocabulary> relations, std::vector<Quadruple> quadruples,
                       TimeStep horizon)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      quadruples_(std::move(quadruples)),
      horizon_(horizon) {
  build();
}

void TemporalKG::build() {
  const std::size_t ne = entities_->size();
  for (const auto& q : quadruples_) {
    if (q.subject >= ne || q.object >= ne) throw Error("TemporalKG: entity id out of vocabulary");
    if (q.relation >= relations_->size()) throw Error("TemporalKG: relation id out of vocabulary");
    if (q.time >= horizon_) throw Error("TemporalKG: time " + std::to_string(q.time) + " not below horizon");
  }
  offsets_.assign(ne + 1, 0);
  for (const auto& q : quadruples_) {
    ++offsets_[q.subject + 1];
    ++offsets_[q.object + 1];
  }
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  adjacency_.assign(offsets_.back(), Neighbor{});
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& q : quadruples_) {
    adjacency_[cursor[q.subject]++] = Neighbor{q.object, q.relation, q.time};
    adjacency_[cursor[q.object]++] = Neighbor{q.subject, q.relation, q.time};
  }
  for (std::size_t e = 0; e < ne; ++e)
    std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[e]),
              adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[e + 1]), adjacency_less);
  sorted_ = quadruples_;
  std::sort(sorted_.begin(), sorted_.end());
}

std::span<const Neighbor> TemporalKG::adjacency(EntityId e) const {
  if (e >= entities_->size()) throw Error("unknown entity id " + std::to_string(e));
  return {adjacency_.data() + offsets_[e], offsets_[e + 1] - offsets_[e]};
}

bool TemporalKG::contains(const Quadruple& q) const {
  return std::binary_search(sorted_.begin(), sorted_.end(), q);
}

TemporalKG TemporalKG::with_quadruples(std::vector<Quadruple> quadruples) const {
  return TemporalKG(entities_, relations_, std::move(quadruples), horizon_);
}

TemporalKG TemporalKG::merged(std::span<const Quadruple> extra) const {
  std::vector<Quadruple> all = quadruples_;
  all.insert(all.end(), extra.begin(), extra.end());
  return with_quadruples(std::move(all));
}

TemporalKG TemporalKG::restricted(TimeStep begin, TimeStep end) const {
  std::vector<Quadruple> keep;
  for (const auto& q : quadruples_)
    if (q.time >= begin && q.time < end) keep.push_back(q);
  return with_quadruples(std::move(keep));
}

// -- parsing ------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string at_line(std::size_t n) { return "line " + std::to_string(n) + ": "; }

TimeStep parse_time(std::string_view s, std::size_t line_no) {
  TimeStep v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw Error(at_line(line_no) + "invalid time step '" + std::string(s) + "'");
  return v;
}

double parse_real(std::string_view s, std::size_t line_no) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v))
    throw Error(at_line(line_no) + "invalid number '" + tmp + "'");
  return v;
}

std::uint32_t resolve(Vocabulary& vocab, std::string_view name, VocabMode mode, std::size_t line_no,
                      const char* what) {
  if (name.empty()) throw Error(at_line(line_no) + "empty " + what);
  if (mode == VocabMode::strict) {
    auto id = vocab.find(name);
    if (!id) throw Error(at_line(line_no) + "unknown " + what + " '" + std::string(name) + "'");
    return *id;
  }
  return vocab.intern(name);
}

bool skip_line(std::string_view line) { return line.empty() || line.front() == '#'; }

std::string_view strip_cr(const std::string& line) {
  std::string_view v(line);
  if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
  return v;
}

}  // namespace

TemporalKG parse_quadruples(std::istream& in, Vocabulary entities, Vocabulary relations,
                            const LoadOptions& options) {
  std::vector<Quadruple> quads;
  std::string raw;
  std::size_t line_no = 0;
  TimeStep max_time = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (skip_line(line)) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4)
      throw Error(at_line(line_no) + "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    Quadruple q;
    q.subject = resolve(entities, fields[0], options.mode, line_no, "entity");
    q.relation = resolve(relations, fields[1], options.mode, line_no, "relation");
    q.object = resolve(entities, fields[2], options.mode, line_no, "entity");
    q.time = parse_time(fields[3], line_no);
    if (options.horizon && q.time >= *options.horizon)
      throw Error(at_line(line_no) + "time " + std::to_string(q.time) + " beyond horizon");
    max_time = std::max(max_time, q.time);
    quads.push_back(q);
  }
  if (options.deduplicate) {
    std::set<Quadruple> seen;
    std::vector<Quadruple> unique;
    for (const auto& q : quads)
      if (seen.insert(q).second) unique.push_back(q);
    quads = std::move(unique);
  }
  const TimeStep horizon = options.horizon ? *options.horizon : (quads.empty() ? 0 : max_time + 1);
  return TemporalKG(std::move(entities), std::move(relations), std::move(quads), horizon);
}

TemporalKG load_quadruples(const std::filesystem::path& path, Vocabulary entities, Vocabulary relations,
                           const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_quadruples(in, std::move(entities), std::move(relations), options);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void dump_quadruples(const TemporalKG& kg, std::ostream& out) {
  const auto& ev = kg.entities();
  const auto& rv = kg.relations();
  for (const auto& q : kg.quadruples())
    out << ev.name(q.subject) << '\t' << rv.name(q.relation) << '\t' << ev.name(q.object) << '\t' << q.time
        << '\n';
}

void save_quadruples(const TemporalKG& kg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  dump_quadruples(kg, out);
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<IntervalEvent> parse_intervals(std::istream& in, Vocabulary& entities, Vocabulary& relations) {
  std::vector<IntervalEvent> events;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (skip_line(line)) continue;
    const auto f = split_tabs(line);
    if (f.size() != 5) throw Error(at_line(line_no) + "expected 5 tab-separated fields");
    IntervalEvent ev;
    ev.subject = resolve(entities, f[0], VocabMode::extend, line_no, "entity");
    ev.relation = resolve(relations, f[1], VocabMode::extend, line_no, "relation");
    ev.object = resolve(entities, f[2], VocabMode::extend, line_no, "entity");
    ev.start = parse_time(f[3], line_no);
    ev.end = parse_time(f[4], line_no);
    events.push_back(ev);
  }
  return events;
}

std::vector<Quadruple> expand_intervals(std::span<const IntervalEvent> events) {
  std::vector<Quadruple> out;
  for (const auto& ev : events) {
    if (ev.start > ev.end)
      throw Error("interval start " + std::to_string(ev.start) + " after end " + std::to_string(ev.end));
    for (TimeStep t = ev.start;; ++t) {
      out.push_back(Quadruple{ev.subject, ev.relation, ev.object, t});
      if (t == ev.end) break;
    }
  }
  return out;
}

// -- splitting ----------------------------------------------------------------

void SplitSpec::validate() const {
  if (train_steps + val_steps + test_steps != total_steps)
    throw Error("split: train + val + test must equal total steps");
}

TimeSplit split_by_time(const TemporalKG& kg, const SplitSpec& spec) {
  spec.validate();
  if (kg.horizon() != spec.total_steps)
    throw Error("split: graph horizon " + std::to_string(kg.horizon()) + " does not match total steps " +
                std::to_string(spec.total_steps));
  std::vector<Quadruple> train, val, test;
  const TimeStep val_end = spec.train_steps + spec.val_steps;
  for (const auto& q : kg.quadruples()) {
    if (q.time < spec.train_steps)
      train.push_back(q);
    else if (q.time < val_end)
      val.push_back(q);
    else
      test.push_back(q);
  }
  return TimeSplit{kg.with_quadruples(std::move(train)), kg.with_quadruples(std::move(val)),
                   kg.with_quadruples(std::move(test))};
}

TemporalKG subsample_events(const TemporalKG& kg, double ratio, std::uint64_t seed,
                            std::optional<TimeStep> only_before) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error("subsample ratio must be in (0, 1]");
  const TimeStep limit = only_before.value_or(kg.horizon());
  Rng rng = make_rng(seed, {0x5ab5ULL});
  std::vector<Quadruple> keep;
  for (const auto& q : kg.quadruples()) {
    if (q.time >= limit) {
      keep.push_back(q);
      continue;
    }
    // One draw per eligible quadruple keeps the stream aligned across ratios.
    const double u = uniform01(rng);
    if (u < ratio) keep.push_back(q);
  }
  return kg.with_quadruples(std::move(keep));
}

// -- alignments ---------------------------------------------------------------

AlignmentSet parse_alignments(std::istream& in, const Vocabulary& source, const Vocabulary& target) {
  AlignmentSet pairs;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (skip_line(line)) continue;
    const auto f = split_tabs(line);
    if (f.size() != 2 && f.size() != 3) throw Error(at_line(line_no) + "expected 2 or 3 tab-separated fields");
    auto s = source.find(f[0]);
    auto t = target.find(f[1]);
    if (!s) throw Error(at_line(line_no) + "unknown source entity '" + std::string(f[0]) + "'");
    if (!t) throw Error(at_line(line_no) + "unknown target entity '" + std::string(f[1]) + "'");
    AlignmentPair p{*s, *t, Provenance::ground_truth, 1.0};
    if (f.size() == 3) p.confidence = parse_real(f[2], line_no);
    pairs.push_back(p);
  }
  return pairs;
}

AlignmentSet load_alignments(const std::filesystem::path& path, const Vocabulary& source,
                             const Vocabulary& target) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_alignments(in, source, target);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void dump_alignments(const AlignmentSet& pairs, const Vocabulary& source, const Vocabulary& target,
                     std::ostream& out) {
  for (const auto& p : pairs) {
    out << source.name(p.source) << '\t' << target.name(p.target);
    if (p.confidence != 1.0) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", p.confidence);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

AlignmentSet inject_alignment_noise(const AlignmentSet& pairs, double noise_ratio,
                                    std::size_t target_vocab_size, std::uint64_t seed) {
  if (!(noise_ratio >= 0.0 && noise_ratio <= 1.0)) throw Error("noise ratio must be in [0, 1]");
  if (target_vocab_size < 2) throw Error("noise injection needs at least 2 target entities");
  const auto count = static_cast<std::size_t>(std::llround(noise_ratio * static_cast<double>(pairs.size())));
  if (count == 0) return pairs;

  std::vector<bool> aligned(target_vocab_size, false);
  for (const auto& p : pairs) {
    if (p.target >= target_vocab_size) throw Error("alignment target outside vocabulary");
    aligned[p.target] = true;
  }
  std::vector<EntityId> pool;
  for (std::size_t e = 0; e < target_vocab_size; ++e)
    if (!aligned[e]) pool.push_back(static_cast<EntityId>(e));
  if (pool.size() < count)
    throw Error("not enough unaligned target entities to corrupt " + std::to_string(count) + " pairs");

  Rng rng = make_rng(seed, {0x901eULL});
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::shuffle(pool.begin(), pool.end(), rng);

  AlignmentSet out = pairs;
  for (std::size_t i = 0; i < count; ++i) out[order[i]].target = pool[i];
  return out;
}

// -- temporal neighbors -------------------------------------------------------

std::vector<Neighbor> temporal_neighbors(const TemporalKG& kg, EntityId e, TimeStep t, std::size_t b,
                                         CausalityAudit* audit) {
  const auto adj = kg.adjacency(e);
  const auto end = std::partition_point(adj.begin(), adj.end(), [t](const Neighbor& n) { return n.time < t; });
  const auto count = static_cast<std::size_t>(end - adj.begin());
  const auto take = std::min(b, count);
  std::vector<Neighbor> out(end - static_cast<std::ptrdiff_t>(take), end);
  if (audit) {
    audit->reads += out.size();
    for (const auto& n : out)
      if (n.time >= t) ++audit->violations;
  }
  return out;
}

// -- synthetic generator ------------------------------------------------------

void SyntheticConfig::validate() const {
  if (source_entities == 0 || target_entities == 0) throw Error("synthetic: entity counts must be positive");
  if (relations == 0) throw Error("synthetic: relation count must be positive");
  if (steps == 0) throw Error("synthetic: steps must be positive");
  if (train_steps > steps) throw Error("synthetic: train_steps exceeds steps");
  if (clusters == 0) throw Error("synthetic: clusters must be positive");
  if (shift_span == 0 || shift_span > clusters) throw Error("synthetic: shift_span must be in [1, clusters]");
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw Error("synthetic: coverage must be in [0, 1]");
  if (!(copy_prob >= 0.0 && copy_prob <= 1.0)) throw Error("synthetic: copy probability must be in [0, 1]");
  if (!(repeat_prob >= 0.0 && repeat_prob <= 1.0)) throw Error("synthetic: repeat probability must be in [0, 1]");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0)) throw Error("synthetic: target ratio must be in (0, 1]");
}

namespace {

/// Event process over one entity set: subjects and relations uniform, objects
/// either the subject's latest partner under that relation or uniform within
/// the relation's image cluster.
class EventProcess {
 public:
  EventProcess(const std::vector<std::size_t>& cluster_of, const std::vector<std::size_t>& shift,
               std::size_t clusters, double repeat_prob)
      : cluster_of_(cluster_of), shift_(shift), repeat_prob_(repeat_prob), members_(clusters) {
    for (std::size_t e = 0; e < cluster_of_.size(); ++e) members_[cluster_of_[e]].push_back(static_cast<EntityId>(e));
  }

  Quadruple draw(Rng& rng, TimeStep t) {
    const auto n = cluster_of_.size();
    const auto s = static_cast<EntityId>(uniform_below(rng, n));
    const auto r = static_cast<RelationId>(uniform_below(rng, shift_.size()));
    const double u = uniform01(rng);
    const auto key = std::make_pair(s, r);
    auto it = last_.find(key);
    EntityId o;
    if (it != last_.end() && u < repeat_prob_) {
      o = it->second;
    } else {
      const auto& pool = members_[(cluster_of_[s] + shift_[r]) % members_.size()];
      o = pool.empty() ? static_cast<EntityId>(uniform_below(rng, n)) : pool[uniform_below(rng, pool.size())];
    }
    return Quadruple{s, r, o, t};
  }

  void observe(const Quadruple& q) { last_[{q.subject, q.relation}] = q.object; }

 private:
  const std::vector<std::size_t>& cluster_of_;
  const std::vector<std::size_t>& shift_;
  double repeat_prob_;
  std::vector<std::vector<EntityId>> members_;
  std::map<std::pair<EntityId, RelationId>, EntityId> last_;
};

}  // namespace

SyntheticPair generate_synthetic_pair(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, {0x5e7ULL});
  const std::size_t ns = cfg.source_entities;
  const std::size_t nt = cfg.target_entities;
  const std::size_t k = cfg.clusters;

  std::vector<std::size_t> shift(cfg.relations);
  for (auto& s : shift) s = uniform_below(rng, cfg.shift_span);
  std::vector<std::size_t> source_cluster(ns);
  for (auto& c : source_cluster) c = uniform_below(rng, k);

  // Random injective counterpart map target -> source.
  std::vector<std::size_t> perm(ns);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::int64_t> counterpart(nt, -1);
  std::vector<std::int64_t> inverse(ns, -1);
  std::vector<std::size_t> target_cluster(nt);
  for (std::size_t j = 0; j < nt; ++j) {
    if (j < ns) {
      counterpart[j] = static_cast<std::int64_t>(perm[j]);
      inverse[perm[j]] = static_cast<std::int64_t>(j);
      target_cluster[j] = source_cluster[perm[j]];
    } else {
      target_cluster[j] = uniform_below(rng, k);
    }
  }

  EventProcess world(source_cluster, shift, k, cfg.repeat_prob);
  EventProcess local(target_cluster, shift, k, cfg.repeat_prob);
  Rng world_rng = make_rng(seed, {0x3017ULL});
  Rng target_rng = make_rng(seed, {0x7a76ULL});

  std::vector<Quadruple> source_quads, target_quads;
  source_quads.reserve(cfg.steps * cfg.events_per_step);
  target_quads.reserve(cfg.steps * cfg.events_per_step);
  for (TimeStep t = 0; t < cfg.steps; ++t) {
    for (std::size_t i = 0; i < cfg.events_per_step; ++i) {
      const Quadruple q = world.draw(world_rng, t);
      world.observe(q);
      source_quads.push_back(q);
      const double u = uniform01(target_rng);
      const auto ms = inverse[q.subject];
      const auto mo = inverse[q.object];
      Quadruple tq;
      if (u < cfg.copy_prob && ms >= 0 && mo >= 0) {
        tq = Quadruple{static_cast<EntityId>(ms), q.relation, static_cast<EntityId>(mo), t};
      } else {
        tq = local.draw(target_rng, t);
      }
      local.observe(tq);
      target_quads.push_back(tq);
    }
  }

  auto relations = std::make_shared<const Vocabulary>(Vocabulary::numbered(cfg.relations, "r"));
  auto source_vocab = std::make_shared<const Vocabulary>(Vocabulary::numbered(ns, "S"));
  auto target_vocab = std::make_shared<const Vocabulary>(Vocabulary::numbered(nt, "T"));

  SyntheticPair out;
  out.source = TemporalKG(source_vocab, relations, std::move(source_quads), cfg.steps);
  out.target_full = TemporalKG(target_vocab, relations, std::move(target_quads), cfg.steps);
  out.target = subsample_events(out.target_full, cfg.target_ratio, derive_seed(seed, {0x5b5ULL}), cfg.train_steps);
  out.counterpart = counterpart;
  out.source_group = source_cluster;
  out.target_group = target_cluster;

  std::vector<EntityId> with_counterpart;
  for (std::size_t j = 0; j < nt; ++j)
    if (counterpart[j] >= 0) with_counterpart.push_back(static_cast<EntityId>(j));
  const auto n_align = static_cast<std::size_t>(std::llround(cfg.coverage * static_cast<double>(nt)));
  if (n_align > with_counterpart.size()) throw Error("synthetic: coverage exceeds entities with counterparts");
  Rng align_rng = make_rng(seed, {0xa119ULL});
  std::shuffle(with_counterpart.begin(), with_counterpart.end(), align_rng);
  with_counterpart.resize(n_align);
  std::sort(with_counterpart.begin(), with_counterpart.end());
  for (EntityId t : with_counterpart)
    out.alignments.push_back(AlignmentPair{static_cast<EntityId>(counterpart[t]), t, Provenance::ground_truth, 1.0});
  return out;
}

}  // namespace mpkd
