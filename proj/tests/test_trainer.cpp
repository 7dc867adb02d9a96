#include <doctest.h>

#include <sstream>

#include "mpkd/experiments.hpp"
#include "mpkd/trainer.hpp"
#include "support.hpp"

using namespace mpkd;
using doctest::Approx;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig exp = desk_experiment();
  exp.data.source_entities = exp.data.target_entities = 50;
  exp.data.relations = 6;
  exp.data.events_per_step = 30;
  exp.data.clusters = 5;
  exp.data.coverage = 0.2;
  auto& c = exp.train;
  c.dim = 8;
  c.epochs = 4;
  c.teacher_epochs = 2;
  c.warmup_epochs = 1;
  c.align_negatives = 6;
  c.graph_negatives = 4;
  c.batch_size = 256;
  c.align_steps = 2;
  return exp;
}

TrainState train_tiny(const SyntheticSplit& split, const TrainConfig& cfg) {
  TrainInputs in{&split.source_train, &split.target.train, &split.target.val, split.pair.alignments};
  return train_mpkd(in, pretrain_teacher(split.source_train, cfg).params, cfg);
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config parsing and serialization") {
    std::istringstream in("# comment\n[section]\ndim = 16\nlr=0.002\npure_training = true\ntransfer_min_score = -3\n");
    const auto cfg = parse_config(in);
    CHECK(cfg.dim == 16);
    CHECK(cfg.lr == 0.002);
    CHECK(cfg.pure_training);
    CHECK(cfg.transfer_min_score == -3.0);
    std::istringstream again(cfg.serialize());
    const auto round = parse_config(again);
    CHECK(round.serialize() == cfg.serialize());
    CHECK(round.digest() == cfg.digest());
    CHECK(TrainConfig{}.digest() != cfg.digest());

    TrainConfig c;
    CHECK_THROWS_WITH_AS(c.set("nope", "1"), doctest::Contains("unknown key"), Error);
    CHECK_THROWS_AS(c.set("dim", "-3"), Error);
    CHECK_THROWS_AS(c.set("lr", "fast"), Error);
    CHECK_THROWS_AS(c.set("pure_training", "maybe"), Error);
    std::istringstream bad("dim 4\n");
    CHECK_THROWS_WITH_AS(parse_config(bad), doctest::Contains("line 1"), Error);
  }

  TEST_CASE("defaults") {
    const TrainConfig c;
    CHECK(c.dim == 128);
    CHECK(c.margin_graph == 0.5);
    CHECK(c.margin_align == 0.5);
    CHECK(c.lr == 0.001);
    CHECK(c.batch_size == 256);
    CHECK(c.neighbors == 8);
    CHECK(c.dropout == 0.5);
    CHECK(c.graph_negatives == 10);
    CHECK(c.align_negatives == 50);
    CHECK(c.time_intervals == 4);
  }

  TEST_CASE("pseudo fraction schedule") {
    TrainConfig c;
    c.epochs = 50;
    c.warmup_epochs = 10;
    CHECK(c.pseudo_fraction(10) == Approx(0.10));
    CHECK(c.pseudo_fraction(49) == Approx(0.40));
    CHECK(c.pseudo_fraction(30) > c.pseudo_fraction(20));
    c.pseudo_fraction_fixed = 0.25;
    CHECK(c.pseudo_fraction(49) == 0.25);
  }

  TEST_CASE("combined weights") {
    const auto a = combined_weights(100, 300, 10, 0);
    CHECK(a.graph == 0.25);
    CHECK(a.graph_pseudo == 0.75);
    CHECK(a.align == 1.0);
    CHECK(a.align_pseudo == 0.0);
    const auto b = combined_weights(7, 0, 3, 0);
    CHECK(b.graph == 1.0);
    CHECK(b.graph_pseudo == 0.0);
    CHECK(b.align == 1.0);
    CHECK(b.align_pseudo == 0.0);
    CHECK_THROWS_AS(combined_weights(0, 0, 0, 0), Error);
  }

  TEST_CASE("combined loss equals the weighted sum of its parts") {
    const std::size_t ns = 7, nt = 8, d = 6;
    const TimeStep T = 4;
    const auto source = testing::random_graph(ns, 3, T, 30, 1);
    const auto target = testing::random_graph(nt, 3, T, 20, 2);
    const auto extra = testing::random_graph(nt, 3, T, 8, 3);
    const auto teacher = NetworkParams::initialize(ns, 3, d, 4, 0.0);
    const auto student = NetworkParams::initialize(nt, 3, d, 5, 0.0);
    const auto phi = testing::random_align(d, 6);
    const EncodeOptions enc{3, 1, false, 0, nullptr};
    std::vector<DenseMatrix> teacher_traj;
    for (EntityId e = 0; e < ns; ++e) teacher_traj.push_back(encode_trajectory(teacher, source, e, T, enc));
    const std::vector<Quadruple> pq(extra.quadruples().begin(), extra.quadruples().end());
    const auto graph = target.merged(pq);

    CombinedBatch batch;
    batch.graph.assign(target.quadruples().begin(), target.quadruples().begin() + 6);
    batch.graph_pseudo.assign(pq.begin(), pq.begin() + 3);
    batch.align = {{0, 0}, {1, 2}, {4, 6}};
    batch.align_pseudo = {{3, 4, Provenance::pseudo, 0.4}, {5, 1, Provenance::pseudo, 0.3}};
    AlignmentSet context = batch.align;
    context.insert(context.end(), batch.align_pseudo.begin(), batch.align_pseudo.end());

    CombinedContext ctx;
    ctx.student = &student;
    ctx.align = &phi;
    ctx.student_graph = &graph;
    ctx.teacher_traj = &teacher_traj;
    ctx.context = &context;
    ctx.steps = T;
    ctx.weights = combined_weights(target.size(), pq.size(), 3, 2);
    ctx.graph_negatives = 4;
    ctx.align_negatives = 5;
    ctx.encode = enc;
    ctx.seed = 77;
    ctx.batch_id = 2;
    const double combined = combined_loss(ctx, batch, nullptr, nullptr);

    // Each part on its own.
    const NegativeSamplerConfig neg{4, CorruptMode::both_sides, 77};
    EncodingTape t1(student, graph, enc), t2(student, graph, enc);
    const double lg = reasoning_loss(t1, student, batch.graph, neg, 0.5, 8);
    const double lgp = reasoning_loss(t2, student, batch.graph_pseudo, neg, 0.5, 9);
    std::map<EntityId, Integration> si, ti;
    for (EntityId e = 0; e < ns; ++e) si[e] = temporal_integrate(phi, teacher_traj[e]);
    for (EntityId e = 0; e < nt; ++e) ti[e] = temporal_integrate(phi, encode_trajectory(student, graph, e, T, enc));
    IntegrationLookup s = [&](EntityId e) -> const Integration& { return si.at(e); };
    IntegrationLookup t = [&](EntityId e) -> const Integration& { return ti.at(e); };
    AlignLossOptions ao;
    ao.negatives = 5;
    ao.seed = 77;
    ao.batch_id = 10;
    const double la = alignment_loss(phi, s, t, batch.align, nt, ao, nullptr, &context);
    ao.batch_id = 11;
    const double lap = alignment_loss(phi, s, t, batch.align_pseudo, nt, ao, nullptr, &context);
    const auto& w = ctx.weights;
    CHECK(combined == Approx(w.graph * lg + w.graph_pseudo * lgp + w.align * la + w.align_pseudo * lap).epsilon(1e-12));
    CHECK(lg > 0.0);
    CHECK(la > 0.0);

    // Empty pseudo sets reduce to the plain ground-truth objective.
    CombinedBatch plain{batch.graph, {}, batch.align, {}};
    ctx.weights = combined_weights(batch.graph.size(), 0, batch.align.size(), 0);
    ao.batch_id = 10;
    CHECK(combined_loss(ctx, plain, nullptr, nullptr) == Approx(lg + la).epsilon(1e-12));
  }

  TEST_CASE("combined loss gradient") {
    for (std::uint64_t seed = 300; seed < 303; ++seed) CHECK(testing::check_combined_grad(seed).passed);
  }

  TEST_CASE("teacher pretraining") {
    std::vector<double> drops;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto kg = testing::random_graph(6, 2, 5, 10, seed);
      TrainConfig c;
      c.dim = 8;
      c.lr = 0.01;
      c.teacher_epochs = 1;
      c.train_steps = 4;
      c.seed = seed;
      const auto r = pretrain_teacher(kg, c, true);
      REQUIRE(r.loss_trace.size() == 2);
      drops.push_back(r.loss_trace[0] - r.loss_trace[1]);
    }
    CHECK(median(drops) > 0.0);

    const auto kg = testing::random_graph(6, 2, 5, 10, 9);
    TrainConfig c;
    c.dim = 8;
    c.train_steps = 4;
    c.teacher_epochs = 0;
    c.seed = 3;
    const auto zero = pretrain_teacher(kg, c);
    CHECK(zero.params == NetworkParams::initialize(6, 2, 8, derive_seed(3, {0x7eac4e7ULL}), c.dropout));
    c.teacher_epochs = 2;
    CHECK(pretrain_teacher(kg, c).params == pretrain_teacher(kg, c).params);
  }

  TEST_CASE("student initialization from the teacher") {
    const auto teacher = NetworkParams::initialize(4, 3, 6, 1);
    const Vocabulary trel({"a", "b", "c"});
    const Vocabulary srel({"c", "a"});
    const auto ents = Vocabulary::numbered(5);
    const AlignmentSet anchors{{2, 4}};
    const auto s1 = init_student_from_teacher(teacher, trel, ents, srel, 10, anchors);
    const auto s2 = init_student_from_teacher(teacher, trel, ents, srel, 11, anchors);
    CHECK(s1.relation_emb.rows() == 4);
    CHECK(std::equal(s1.relation_emb.row(0).begin(), s1.relation_emb.row(0).end(), teacher.relation_emb.row(2).begin()));
    CHECK(std::equal(s1.relation_emb.row(1).begin(), s1.relation_emb.row(1).end(), teacher.relation_emb.row(0).begin()));
    CHECK(std::equal(s1.relation_emb.row(2).begin(), s1.relation_emb.row(2).end(), teacher.relation_emb.row(5).begin()));
    CHECK(s1.transform == teacher.transform);
    CHECK(s1.attn == teacher.attn);
    CHECK(std::equal(s1.entity_emb.row(4).begin(), s1.entity_emb.row(4).end(), teacher.entity_emb.row(2).begin()));
    CHECK(s1.entity_emb != s2.entity_emb);
    CHECK(s1.relation_emb == s2.relation_emb);
    CHECK_THROWS_AS(init_student_from_teacher(teacher, trel, ents, Vocabulary({"z"}), 1), Error);
    CHECK_THROWS_AS(init_student_from_teacher(teacher, trel, ents, srel, 1, AlignmentSet{{9, 0}}), Error);
  }

  TEST_CASE("ablation contracts") {
    const auto exp = tiny_experiment();
    const auto split = make_synthetic_split(exp, 2);
    auto cfg = exp.train;
    cfg.seed = 2;

    auto pure = cfg;
    pure.pure_training = true;
    const auto sp = train_tiny(split, pure);
    CHECK(sp.pseudo.empty());
    CHECK(sp.transferred.empty());
    for (const auto& e : sp.log) CHECK(e.pseudo_count == 0);
    CHECK(sp.alignments == split.pair.alignments);

    auto zero = cfg;
    zero.pseudo_fraction_fixed = 0.0;
    auto none = cfg;
    none.no_pseudo = true;
    const auto a = train_tiny(split, zero), b = train_tiny(split, none);
    CHECK(a.student == b.student);
    CHECK(a.align == b.align);
    CHECK(a.pseudo.empty());

    const auto full = train_tiny(split, cfg);
    CHECK(full.transferred.size() > 0);
    auto no_transfer = cfg;
    no_transfer.no_event_transfer = true;
    CHECK(train_tiny(split, no_transfer).transferred.empty());

    auto zero_epochs = cfg;
    zero_epochs.epochs = 0;
    const auto z = train_tiny(split, zero_epochs);
    CHECK(z.log.empty());
  }

  TEST_CASE("determinism across thread counts") {
    const auto exp = tiny_experiment();
    const auto split = make_synthetic_split(exp, 5);
    auto cfg = exp.train;
    cfg.seed = 5;
    set_num_threads(1);
    const auto a = train_tiny(split, cfg);
    set_num_threads(3);
    const auto b = train_tiny(split, cfg);
    set_num_threads(1);
    CHECK(a.student == b.student);
    CHECK(a.align == b.align);
    CHECK(a.pseudo == b.pseudo);
    CHECK(a.transferred.size() == b.transferred.size());
  }

  TEST_CASE("input validation") {
    const auto exp = tiny_experiment();
    const auto split = make_synthetic_split(exp, 1);
    auto cfg = exp.train;
    TrainInputs in{&split.source_train, &split.target.train, &split.target.val, {}};
    const auto teacher = NetworkParams::initialize(split.source_train.num_entities(), exp.data.relations, cfg.dim, 1);
    CHECK_THROWS_WITH_AS(train_mpkd(in, teacher, cfg), doctest::Contains("pure_training"), Error);
    in.alignments = {{0, 999}};
    CHECK_THROWS_AS(train_mpkd(in, teacher, cfg), Error);
    cfg.dim = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }
}
