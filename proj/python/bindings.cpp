#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <tuple>

#include "navgen/cas.hpp"
#include "navgen/error.hpp"
#include "navgen/metrics.hpp"
#include "navgen/pipeline.hpp"
#include "navgen/planner.hpp"

namespace py = pybind11;
using namespace navgen;
using nlohmann::json;

namespace {

using PoseTuple = std::tuple<int, int, std::string>;

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

pipeline::PipelineConfig config_of(const py::object& o) {
  if (o.is_none()) return {};
  return pipeline::config_from_json(from_py(o));
}

world::Pose pose_of(const PoseTuple& t) {
  return {{std::get<0>(t), std::get<1>(t)}, world::parse_heading(std::get<2>(t))};
}

PoseTuple tuple_of(const world::Pose& p) { return {p.node.x, p.node.y, std::string(1, world::heading_char(p.heading))}; }

world::WorldMap map_of(const std::string& text) {
  std::istringstream in(text);
  return world::load_map(in);
}

json train_json(const nn::TrainReport& r) {
  json history = json::array();
  for (const auto& h : r.history) history.push_back({{"epoch", h.epoch}, {"train", h.train_loss}, {"val", h.val_loss}});
  return {{"epochs", r.epochs_run}, {"train_loss", r.final_train_loss}, {"best_val_loss", r.best_val_loss},
          {"history", history}};
}

bool aligner_of(const std::string& ablation) {
  if (ablation == "none") return true;
  if (ablation == "no_aligner") return false;
  throw Error("ablation must be 'none' or 'no_aligner'");
}

}  // namespace

PYBIND11_MODULE(_navgen, m) {
  m.doc() = "Navigational instruction generation";
  m.attr("__version__") = "0.1.0";

  auto& base = py::register_exception<Error>(m, "NavgenError", PyExc_RuntimeError);
  py::register_exception<CasError>(m, "CasError", base);
  py::register_exception<PathError>(m, "PathError", base);
  py::register_exception<CheckpointError>(m, "CheckpointError", base);

  // ---- CAS ----
  m.def("parse_cas", [](const std::string& text) { return cas::serialize(cas::parse(text)); },
        "Canonical form of a CAS command.", py::arg("text"));
  m.def("structure_of", [](const std::string& text) { return cas::serialize(cas::structure_of(cas::parse(text))); },
        "The command with every attribute value unset.", py::arg("text"));
  m.def("tokenize_cas", [](const std::string& text) { return cas::tokenize(cas::parse(text)); },
        "Realizer source tokens for a command.", py::arg("text"));

  // ---- metrics ----
  m.def("bleu_sentence", &metrics::bleu_sentence, "Smoothed sentence BLEU in percent.", py::arg("hypothesis"),
        py::arg("reference"));
  m.def("bleu_corpus", &metrics::bleu_corpus, "Corpus BLEU in percent over (hypothesis, reference) pairs.",
        py::arg("pairs"));
  m.def("tokenize_text", [](const std::string& text) { return corpus::tokenize_text(text); }, py::arg("text"));

  // ---- maps and planning ----
  m.def("shortest_path",
        [](const std::string& map_text, const PoseTuple& start, const PoseTuple& goal) {
          auto path = world::shortest_path(map_of(map_text), pose_of(start), pose_of(goal));
          std::vector<PoseTuple> out;
          for (const auto& p : path.poses()) out.push_back(tuple_of(p));
          return out;
        },
        "Poses along a shortest route; the map is a map document.", py::arg("map"), py::arg("start"),
        py::arg("goal"));
  m.def("command_likelihood",
        [](const std::string& command, const std::string& map_text, const PoseTuple& start, const PoseTuple& goal) {
          auto map = map_of(map_text);
          auto path = world::shortest_path(map, pose_of(start), pose_of(goal));
          auto l = plan::command_likelihood(cas::parse(command), path, map);
          return to_py({{"value", l.value},
                        {"satisfying", l.satisfying},
                        {"alternatives", l.alternatives},
                        {"approximate", l.approximate}});
        },
        "Likelihood that a command picks out the shortest route.", py::arg("command"), py::arg("map"),
        py::arg("start"), py::arg("goal"));

  // ---- pipeline ----
  m.def("default_config", [] { return to_py(pipeline::to_json(pipeline::PipelineConfig{})); });
  m.def("prepare",
        [](const py::object& config) {
          auto cfg = config_of(config);
          auto data = pipeline::prepare(cfg);
          return to_py({{"dataset_dir", cfg.dataset_dir.string()},
                        {"maps", data.maps.size()},
                        {"demonstrations", data.demos.size()}});
        },
        "Generate maps and a synthetic corpus.", py::arg("config") = py::none());
  m.def("train_irl",
        [](const py::object& config) {
          auto cfg = config_of(config);
          auto r = pipeline::run_train_irl(corpus::load_dataset(cfg.dataset_dir), cfg);
          return to_py({{"converged", r.converged}, {"iterations", r.iterations}, {"feature_gap", r.feature_gap}});
        },
        py::arg("config") = py::none());
  m.def("train_seq2seq",
        [](const py::object& config, const std::string& ablation) {
          auto cfg = config_of(config);
          return to_py(train_json(
              pipeline::run_train_seq2seq(corpus::load_dataset(cfg.dataset_dir), cfg, aligner_of(ablation))));
        },
        py::arg("config") = py::none(), py::arg("ablation") = "none");
  m.def("train_lm",
        [](const py::object& config) {
          auto cfg = config_of(config);
          return to_py(train_json(pipeline::run_train_lm(corpus::load_dataset(cfg.dataset_dir), cfg)));
        },
        py::arg("config") = py::none());
  m.def("evaluate",
        [](const py::object& config, const std::string& ablation) {
          auto cfg = config_of(config);
          auto s = pipeline::run_evaluate(corpus::load_dataset(cfg.dataset_dir), cfg, aligner_of(ablation));
          return to_py({{"test", pipeline::to_json(s.test.report)},
                        {"heldout_recombinations", pipeline::to_json(s.heldout.report)}});
        },
        py::arg("config") = py::none(), py::arg("ablation") = "none");
  m.def("generate",
        [](const py::object& config, const std::string& map_id, const PoseTuple& start, const PoseTuple& goal) {
          auto cfg = config_of(config);
          auto data = corpus::load_dataset(cfg.dataset_dir);
          auto it = data.maps.find(map_id);
          if (it == data.maps.end()) throw Error("unknown map '" + map_id + "'");
          auto models = pipeline::load_models(cfg);
          return to_py(pipeline::to_json(pipeline::generate(it->second, pose_of(start), pose_of(goal), models, cfg)));
        },
        "Instruction and per-segment trace for a route.", py::arg("config"), py::arg("map_id"), py::arg("start"),
        py::arg("goal"));
}
