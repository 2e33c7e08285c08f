// Python surface: graph loading, query parsing, the symbolic oracle, dataset
// sampling, training, ranking, and the gradient sweep. Thin wrappers around
// the C++ types; heavyweight state (graphs, models, instance lists) stays
// opaque and is passed back by handle.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "q2p/checkpoint.hpp"
#include "q2p/evaluator.hpp"
#include "q2p/gradsuite.hpp"
#include "q2p/kg.hpp"
#include "q2p/model.hpp"
#include "q2p/oracle.hpp"
#include "q2p/query.hpp"
#include "q2p/rng.hpp"
#include "q2p/sampler.hpp"
#include "q2p/toykg.hpp"
#include "q2p/trainer.hpp"

namespace py = pybind11;
using namespace q2p;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

struct Dataset {
  std::vector<QueryInstance> instances;
};

struct Model {
  ModelParams params;
};

Model make_model(const GraphSplits& splits, std::size_t d, std::size_t K, double dropout,
                 double label_smoothing, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.K = K;
  cfg.dropout = dropout;
  cfg.label_smoothing = label_smoothing;
  return Model{ModelParams::init(cfg, splits.vocabs.entities.size(),
                                 splits.vocabs.relations.size(), Rng(seed))};
}

py::dict train_model(Model& m, const Dataset& data, std::size_t steps, double lr,
                     std::size_t batch_size, std::uint64_t seed, const std::string& checkpoint_dir) {
  TrainConfig cfg;
  cfg.lr = lr;
  cfg.batch_size = batch_size;
  cfg.total_steps = steps;
  cfg.seed = seed;
  cfg.log_timing = false;
  auto opt = OptimizerState::for_params(m.params);
  std::ostringstream csv;
  TrainSinks sinks;
  sinks.loss_csv = &csv;
  sinks.checkpoint_dir = checkpoint_dir;
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
  const auto result = train_loop(m.params, opt, data.instances, cfg, sinks);
  py::dict out;
  out["steps_run"] = result.steps_run;
  out["final_loss"] = static_cast<double>(result.final_loss);
  out["loss_csv"] = csv.str();
  return out;
}

std::vector<std::pair<EntityId, double>> rank_entities(Model& m, const Query& q,
                                                       std::size_t top_k) {
  TapeT<float> tape(false);
  auto bp = BoundParamsT<float>::bind(tape, m.params);
  Rng unused(0);
  const auto particles = embed_query(bp, q, Mode::eval, unused);
  const auto scores = score_all(bp, particles);
  std::vector<EntityId> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<EntityId>(i);
  std::stable_sort(order.begin(), order.end(), [&](EntityId a, EntityId b) {
    return scores.data[a] > scores.data[b];
  });
  std::vector<std::pair<EntityId, double>> out;
  const std::size_t n = std::min(top_k, order.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.emplace_back(order[i], static_cast<double>(scores.data[order[i]]));
  return out;
}

}  // namespace

PYBIND11_MODULE(_q2p, m) {
  m.doc() = "Particle-based first-order query answering over knowledge graphs";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<SamplingExhausted>(m, "SamplingExhausted", PyExc_RuntimeError);

  py::class_<GraphSplits>(m, "Splits", "Nested train/valid/test graphs over one vocabulary")
      .def_property_readonly(
          "num_entities", [](const GraphSplits& s) { return s.vocabs.entities.size(); })
      .def_property_readonly(
          "num_relations", [](const GraphSplits& s) { return s.vocabs.relations.size(); })
      .def("entity_label",
           [](const GraphSplits& s, EntityId id) { return s.vocabs.entities.label(id); })
      .def("relation_label",
           [](const GraphSplits& s, RelationId id) { return s.vocabs.relations.label(id); })
      .def("entity_id",
           [](const GraphSplits& s, const std::string& label) {
             auto id = s.vocabs.entities.find(label);
             if (!id) throw py::key_error("unknown entity label: " + label);
             return *id;
           })
      .def("relation_id",
           [](const GraphSplits& s, const std::string& label) {
             auto id = s.vocabs.relations.find(label);
             if (!id) throw py::key_error("unknown relation label: " + label);
             return *id;
           })
      .def("edge_count",
           [](const GraphSplits& s, const std::string& graph) {
             return s.by_name(graph).edge_count();
           },
           py::arg("graph") = "test");

  py::class_<Query>(m, "Query", "Parsed query DAG; build with parse_query")
      .def_property_readonly("type",
                             [](const Query& q) { return std::string(to_string(classify_query(q))); })
      .def_property_readonly("num_nodes", [](const Query& q) { return q.size(); });

  py::class_<Dataset>(m, "Dataset", "Sampled query instances with answer sets")
      .def("__len__", [](const Dataset& d) { return d.instances.size(); })
      .def("counts", [](const Dataset& d) {
        std::map<std::string, std::size_t> by_type;
        for (const auto& inst : d.instances) ++by_type[std::string(to_string(inst.type))];
        return by_type;
      });

  py::class_<Model>(m, "Model", "Trainable particle embedding model")
      .def_property_readonly("d", [](const Model& m_) { return m_.params.cfg.d; })
      .def_property_readonly("K", [](const Model& m_) { return m_.params.cfg.K; })
      .def_property_readonly("num_entities", [](const Model& m_) { return m_.params.num_entities; })
      .def("save",
           [](const Model& m_, const std::string& path) {
             save_checkpoint(m_.params, nullptr, path);
           },
           py::arg("path"))
      .def("train", &train_model, py::arg("dataset"), py::arg("steps"), py::arg("lr") = 1e-3,
           py::arg("batch_size") = 128, py::arg("seed") = 0, py::arg("checkpoint_dir") = "",
           "Run optimizer steps in place; optimizer state is fresh per call")
      .def("answers", &rank_entities, py::arg("query"), py::arg("top_k") = 10,
           "Entities ranked by model score, best first, as (entity_id, score)")
      .def("evaluate", [](Model& m_, const Dataset& data) {
        return json_to_py(evaluate(data.instances, m_.params).to_json());
      });

  m.def("toy_graph", [](const std::string& out_dir, std::size_t clusters,
                        std::size_t cluster_size, std::size_t num_relations, double edge_prob,
                        double train_cut, double valid_cut, std::uint64_t seed) {
          ToyKgConfig cfg;
          cfg.clusters = clusters;
          cfg.cluster_size = cluster_size;
          cfg.num_relations = num_relations;
          cfg.edge_prob = edge_prob;
          cfg.train_cut = train_cut;
          cfg.valid_cut = valid_cut;
          cfg.seed = seed;
          write_toy_triples(cfg, out_dir);
        },
        py::arg("out_dir"), py::arg("clusters") = 10, py::arg("cluster_size") = 10,
        py::arg("num_relations") = 6, py::arg("edge_prob") = 0.3, py::arg("train_cut") = 0.81,
        py::arg("valid_cut") = 0.90, py::arg("seed") = 0,
        "Write deterministic clustered train/valid/test triples to a directory");

  m.def("load_splits", &build_splits, py::arg("train_path"), py::arg("valid_path"),
        py::arg("test_path"), "Load three incremental triple files into nested graphs");

  m.def("parse_query",
        [](const std::string& text, const GraphSplits& splits) {
          return parse_query(text, splits.vocabs);
        },
        py::arg("text"), py::arg("splits"));

  m.def("serialize_query",
        [](const Query& q, const GraphSplits& splits) { return serialize_query(q, splits.vocabs); },
        py::arg("query"), py::arg("splits"));

  m.def("oracle_answers",
        [](const Query& q, const GraphSplits& splits, const std::string& graph) {
          return answer(q, splits.by_name(graph));
        },
        py::arg("query"), py::arg("splits"), py::arg("graph") = "test",
        "Exact answer set on one of the split graphs");

  m.def("sample_dataset",
        [](const GraphSplits& splits, const std::string& out_dir, std::size_t train_per_type,
           std::size_t eval_per_type, std::uint64_t seed, std::size_t max_attempts) {
          SampleConfig cfg;
          cfg.train_per_type = train_per_type;
          cfg.eval_per_type = eval_per_type;
          cfg.seed = seed;
          cfg.max_attempts = max_attempts;
          const auto stats = generate_dataset(splits, cfg, out_dir);
          py::list out;
          for (const auto& s : stats) {
            py::dict row;
            row["split"] = s.split;
            row["type"] = std::string(to_string(s.type));
            row["requested"] = s.requested;
            row["produced"] = s.produced;
            row["attempts"] = s.attempts;
            out.append(std::move(row));
          }
          return out;
        },
        py::arg("splits"), py::arg("out_dir"), py::arg("train_per_type") = 1000,
        py::arg("eval_per_type") = 200, py::arg("seed") = 0, py::arg("max_attempts") = 200,
        "Sample per-type instance files train/valid/test.jsonl into a directory");

  m.def("read_instances",
        [](const std::string& path, const GraphSplits& splits) {
          return Dataset{read_instances(path, splits.vocabs)};
        },
        py::arg("path"), py::arg("splits"));

  m.def("create_model", &make_model, py::arg("splits"), py::arg("d") = 400, py::arg("K") = 3,
        py::arg("dropout") = 0.1, py::arg("label_smoothing") = 0.5, py::arg("seed") = 0);

  m.def("load_model",
        [](const std::string& path) { return Model{load_checkpoint(path).params}; },
        py::arg("path"));

  m.def("gradient_suite",
        [](std::uint64_t seed, std::size_t K) {
          py::list out;
          for (const auto& c : gradient_suite(seed, K)) {
            py::dict row;
            row["name"] = c.name;
            row["epsilon"] = c.epsilon;
            row["max_rel_error"] = c.report.max_rel_error;
            row["coords_checked"] = c.report.coords_checked;
            row["kinks_skipped"] = c.report.kinks_skipped;
            out.append(std::move(row));
          }
          return out;
        },
        py::arg("seed") = 106, py::arg("K") = 3,
        "Finite-difference sweep over every operation at 64-bit precision");
}
