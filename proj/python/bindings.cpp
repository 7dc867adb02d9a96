#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mpkd/checkpoint.hpp"
#include "mpkd/distill.hpp"
#include "mpkd/eval.hpp"
#include "mpkd/experiments.hpp"

namespace py = pybind11;
using namespace mpkd;

namespace {

std::vector<std::vector<double>> to_rows(const DenseMatrix& m) {
  std::vector<std::vector<double>> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

DenseMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  DenseMatrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw Error("ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

py::tuple quad_tuple(const Quadruple& q) { return py::make_tuple(q.subject, q.relation, q.object, q.time); }

std::vector<py::tuple> quads_of(const TemporalKG& kg) {
  std::vector<py::tuple> out;
  for (const auto& q : kg.quadruples()) out.push_back(quad_tuple(q));
  return out;
}

TrainConfig config_from(const std::map<std::string, std::string>& settings, TrainConfig base) {
  for (const auto& [k, v] : settings) base.set(k, v);
  base.validate();
  return base;
}

}  // namespace

PYBIND11_MODULE(_mpkd, m) {
  m.doc() = "Temporal knowledge graph transfer with mutually paced distillation";
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  m.def("rank_of", [](const std::vector<double>& scores, EntityId answer) { return rank_of(scores, answer); },
        py::arg("scores"), py::arg("answer"));
  m.def(
      "summarize_ranks",
      [](const std::vector<std::size_t>& ranks) {
        const auto s = summarize_ranks(ranks);
        return py::dict(py::arg("mrr") = s.mrr, py::arg("hits10") = s.hits10);
      },
      py::arg("ranks"));
  m.def("transfer_ratio", [](const std::vector<double>& scores, double baseline) { return transfer_ratio(scores, baseline); },
        py::arg("model_scores"), py::arg("baseline"));
  m.def("solve_assignment", [](const std::vector<std::vector<double>>& v) { return solve_assignment(from_rows(v)); },
        py::arg("values"), "Maximum-weight one-to-one matching on max(value, 0); (row, col) pairs.");
  m.def(
      "softmax_masked",
      [](const std::vector<double>& logits, const std::vector<bool>& live) { return softmax_masked(logits, live); },
      py::arg("logits"), py::arg("live"));
  m.def("cosine", [](const std::vector<double>& u, const std::vector<double>& v) { return cosine(u, v); });

  m.def(
      "temporal_integrate",
      [](const std::vector<std::vector<double>>& traj, std::size_t seed) {
        const auto t = from_rows(traj);
        return to_rows(temporal_integrate(AlignParams::initialize(t.cols(), seed), t).H);
      },
      py::arg("trajectory"), py::arg("seed") = 0,
      "Causal integration of a T x d trajectory with freshly initialized transforms.");

  m.def(
      "synthetic_pair",
      [](std::uint64_t seed, std::map<std::string, double> overrides) {
        SyntheticConfig c;
        for (const auto& [k, v] : overrides) {
          if (k == "entities") c.source_entities = c.target_entities = static_cast<std::size_t>(v);
          else if (k == "relations") c.relations = static_cast<std::size_t>(v);
          else if (k == "steps") c.steps = static_cast<TimeStep>(v);
          else if (k == "train_steps") c.train_steps = static_cast<TimeStep>(v);
          else if (k == "events_per_step") c.events_per_step = static_cast<std::size_t>(v);
          else if (k == "clusters") c.clusters = static_cast<std::size_t>(v);
          else if (k == "shift_span") c.shift_span = static_cast<std::size_t>(v);
          else if (k == "repeat_prob") c.repeat_prob = v;
          else if (k == "copy_prob") c.copy_prob = v;
          else if (k == "coverage") c.coverage = v;
          else if (k == "target_ratio") c.target_ratio = v;
          else throw Error("unknown synthetic setting '" + k + "'");
        }
        const auto p = generate_synthetic_pair(c, seed);
        std::vector<py::tuple> align;
        for (const auto& a : p.alignments) align.push_back(py::make_tuple(a.source, a.target));
        py::dict d;
        d["source"] = quads_of(p.source);
        d["target"] = quads_of(p.target);
        d["target_full"] = quads_of(p.target_full);
        d["alignments"] = align;
        d["counterpart"] = p.counterpart;
        return d;
      },
      py::arg("seed"), py::arg("overrides") = std::map<std::string, double>{});

  m.def(
      "run_experiment",
      [](std::uint64_t seed, std::map<std::string, std::string> train, std::map<std::string, double> data) {
        ExperimentConfig exp = desk_experiment();
        exp.train = config_from(train, exp.train);
        for (const auto& [k, v] : data) {
          if (k == "entities") exp.data.source_entities = exp.data.target_entities = static_cast<std::size_t>(v);
          else if (k == "events_per_step") exp.data.events_per_step = static_cast<std::size_t>(v);
          else if (k == "coverage") exp.data.coverage = v;
          else throw Error("unknown data setting '" + k + "'");
        }
        const auto split = make_synthetic_split(exp, seed);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_mpkd(split, exp.train, seed);
        }
        py::dict d;
        d["mrr"] = r.test.mrr;
        d["hits10"] = r.test.hits10;
        d["best_val_mrr"] = r.best_val_mrr;
        d["pseudo_count"] = r.pseudo_count;
        d["transferred_count"] = r.transferred_count;
        d["epochs_run"] = r.epochs_run;
        return d;
      },
      py::arg("seed"), py::arg("train") = std::map<std::string, std::string>{},
      py::arg("data") = std::map<std::string, double>{},
      "Trains on one synthetic pair and returns test metrics.");

  m.def(
      "nce_decay",
      [](std::vector<std::size_t> negatives, std::size_t seeds) {
        DiagnosticConfig cfg;
        cfg.negative_counts = std::move(negatives);
        for (std::uint64_t s = 1; s <= seeds; ++s) cfg.seeds.push_back(s);
        const auto res = nce_deviation_sweep(cfg, make_nce_toy(NceToyConfig{}));
        std::vector<double> dev;
        for (const auto& r : res.rows) dev.push_back(r.median_deviation);
        py::dict d;
        d["deviation"] = dev;
        d["slope"] = res.slope;
        return d;
      },
      py::arg("negatives") = std::vector<std::size_t>{8, 32, 128, 512}, py::arg("seeds") = 5);

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const auto c = load_checkpoint(path);
        py::dict d;
        d["dim"] = c.meta.dim;
        d["entities"] = c.meta.entities;
        d["relations"] = c.meta.relations;
        d["config_digest"] = c.meta.config_digest;
        d["seed"] = c.meta.seed;
        d["entity_emb"] = to_rows(c.student.entity_emb);
        return d;
      },
      py::arg("path"));

  m.def("set_num_threads", &set_num_threads);
}
