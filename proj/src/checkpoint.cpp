#include "navgen/checkpoint.hpp"

#include <fstream>

#include "navgen/error.hpp"

namespace navgen::nn {

using nlohmann::json;

json tensors_to_json(const ParameterStore& store) {
  json out = json::array();
  for (const Parameter* p : store.all()) {
    json values = json::array();
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) values.push_back(p->value(r, c));
    }
    out.push_back({{"name", p->name}, {"dims", {p->value.rows(), p->value.cols()}}, {"values", std::move(values)}});
  }
  return out;
}

void tensors_from_json(const json& tensors, ParameterStore& store) {
  if (!tensors.is_array()) throw CheckpointError("tensors: expected an array");
  std::size_t seen = 0;
  for (const auto& t : tensors) {
    std::string name = t.at("name").get<std::string>();
    if (!store.contains(name)) throw CheckpointError("tensor '" + name + "' is not a model parameter");
    Parameter& p = store.get(name);
    auto dims = t.at("dims").get<std::vector<Eigen::Index>>();
    if (dims.size() != 2 || dims[0] != p.value.rows() || dims[1] != p.value.cols()) {
      throw CheckpointError("tensor '" + name + "': shape mismatch");
    }
    const auto& values = t.at("values");
    if (static_cast<Eigen::Index>(values.size()) != p.value.size()) {
      throw CheckpointError("tensor '" + name + "': value count mismatch");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = values[k++].get<double>();
    }
    ++seen;
  }
  if (seen != store.all().size()) throw CheckpointError("checkpoint is missing parameters");
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const ParameterStore& store,
                     const json& metadata) {
  json doc = {{"format", "navgen-checkpoint"},
              {"version", kCheckpointVersion},
              {"kind", kind},
              {"metadata", metadata},
              {"tensors", tensors_to_json(store)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << doc.dump();
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format") != "navgen-checkpoint") throw CheckpointError(path.string() + ": not a checkpoint");
    int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(path.string() + ": version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    Checkpoint cp;
    cp.kind = doc.at("kind").get<std::string>();
    if (cp.kind != expected_kind) {
      throw CheckpointError(path.string() + ": holds a '" + cp.kind + "' model, expected '" + expected_kind + "'");
    }
    cp.metadata = doc.at("metadata");
    cp.tensors = doc.value("tensors", json::array());
    return cp;
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace navgen::nn
