#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "navgen/cas.hpp"
#include "navgen/worldmodel.hpp"

namespace navgen::select {

inline constexpr std::size_t kContextSize = 14;
inline constexpr std::size_t kPropertySize = 9;
inline constexpr std::size_t kJointSize = kContextSize * kPropertySize;

// Path-segment situation, one binary indicator per entry of context_names().
using ContextVector = std::array<int, kContextSize>;
// Integer description of a CAS structure, ordered as property_names().
using PropertyVector = std::array<int, kPropertySize>;

const std::array<std::string_view, kContextSize>& context_names();
const std::array<std::string_view, kPropertySize>& property_names();

enum ContextBit : std::size_t {
  kT, kW, kTW, kWT, kWObjAt, kWPastObj, kWDeadEnd, kWGoal, kTStart, kTNewCarp, kTObjSide, kTObjAt, kTNewPict, kTAtT
};
enum Property : std::size_t { kNsl, kCmd, kDep, kEta, kPcp, kPpc, kHtw, kNln, kTrf };

// Codes used by the cmd property (first action of the structure).
int action_code(cas::ActionKind kind);

ContextVector extract_context(const world::WorldMap& map, const world::Path& path, std::size_t segment_index);

// With a command the counts describe its bound values; a bare structure has
// nothing bound, so only dep, cmd and trf are non-zero.
PropertyVector extract_properties(const cas::Structure& structure, const cas::Command* command = nullptr);

// Outer product context x properties, flattened context-major.
Eigen::VectorXd joint_features(const ContextVector& context, const PropertyVector& properties);

struct IrlDemo {
  ContextVector context{};
  PropertyVector properties{};
  std::optional<cas::Structure> structure;
};

struct IrlHyper {
  double lr = 0.1;
  int iters = 500;
  double l2 = 1e-3;
  double tol = 1e-10;  // stop once the gradient norm falls below this
};

struct IrlConfig {
  int k_c = 100;
  double gamma = 0.9;  // recorded only
  int clusters = 5;
};

struct DbEntry {
  cas::Structure structure;
  PropertyVector properties{};
  bool operator==(const DbEntry&) const = default;
};

struct IrlModel {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(kJointSize);
  std::vector<PropertyVector> actions;  // distinct property vectors, first-seen order
  std::vector<DbEntry> action_db;
  std::array<double, kPropertySize> mi_weights{};
  IrlConfig config;

  // pi(a|s) over `actions`, proportional to exp(-theta . psi(s, a)).
  std::vector<double> policy(const ContextVector& context) const;
};

struct IrlReport {
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  double feature_gap = 0.0;  // |empirical - expected joint features|_inf
  double objective = 0.0;
};

// Mean log-likelihood of `demos` minus l2/(2N) |theta|^2, with its gradient.
// Demonstrations whose property vector is not in `actions` are rejected.
double irl_objective(const Eigen::VectorXd& theta, const std::vector<IrlDemo>& demos,
                     const std::vector<PropertyVector>& actions, double l2, Eigen::VectorXd* gradient);

// Empirical and model-expected mean joint features.
std::pair<Eigen::VectorXd, Eigen::VectorXd> feature_expectations(const IrlModel& model,
                                                                 const std::vector<IrlDemo>& demos);

IrlModel train_irl(const std::vector<IrlDemo>& demos, const IrlHyper& hyper = {}, IrlReport* report = nullptr,
                   const IrlConfig& config = {});

PropertyVector map_property_vector(const IrlModel& model, const ContextVector& context);

// Per property: sum over context bits of the mutual information between the
// bit and the property value, from add-one smoothed counts over the observed
// supports.
std::array<double, kPropertySize> mi_weights(const std::vector<IrlDemo>& demos);

double weighted_distance(const std::array<double, kPropertySize>& weights, const PropertyVector& a,
                         const PropertyVector& b);

// The k_c database structures nearest to `target`, ties kept in database order.
std::vector<cas::Structure> knn_retrieve(const IrlModel& model, const PropertyVector& target);

// Normalized edit distance over slot tokens (attribute names included), so
// that bare structures with different slots are told apart.
double structure_distance(const cas::Structure& a, const cas::Structure& b);

// Spectral clustering with affinity 1 - structure_distance; one medoid per
// cluster, ordered by the medoid's first occurrence.
std::vector<cas::Structure> cluster_structures(const std::vector<cas::Structure>& candidates, int k);

void save_irl(const std::filesystem::path& path, const IrlModel& model);
IrlModel load_irl(const std::filesystem::path& path);

}  // namespace navgen::select
