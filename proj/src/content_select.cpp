#include "navgen/content_select.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "navgen/error.hpp"

namespace navgen::select {

using cas::ActionKind;
using cas::Command;
using cas::Structure;
using world::EntityClass;

const std::array<std::string_view, kContextSize>& context_names() {
  static const std::array<std::string_view, kContextSize> names = {
      "t", "w", "tw", "wt", "w_obj_at", "w_past_obj", "w_dead_end", "w_goal",
      "t_start", "t_new_carp", "t_obj_side", "t_obj_at", "t_new_pict", "t_at_T"};
  return names;
}

const std::array<std::string_view, kPropertySize>& property_names() {
  static const std::array<std::string_view, kPropertySize> names = {"nsl", "cmd", "dep", "eta", "pcp",
                                                                    "ppc", "htw", "nln", "trf"};
  return names;
}

int action_code(ActionKind kind) {
  switch (kind) {
    case ActionKind::Turn: return 0;
    case ActionKind::Travel: return 1;
    case ActionKind::Face: return 2;
    case ActionKind::Verify: return 3;
    case ActionKind::Find: return 4;
  }
  return 0;
}

// ---- features -------------------------------------------------------------

namespace {

std::set<std::string> pictures(const std::optional<world::EdgeAttrs>& e) {
  std::set<std::string> out;
  if (!e) return out;
  if (e->wall_left) out.insert(*e->wall_left);
  if (e->wall_right) out.insert(*e->wall_right);
  return out;
}

std::optional<world::EdgeAttrs> edge_ahead(const world::WorldMap& map, const world::Pose& pose) {
  return map.edge(pose.node, world::step(pose.node, pose.heading));
}

}  // namespace

ContextVector extract_context(const world::WorldMap& map, const world::Path& path, std::size_t segment_index) {
  auto segments = world::segment_path(path);
  if (segment_index >= segments.size()) {
    throw PathError("segment " + std::to_string(segment_index) + " of " + std::to_string(segments.size()));
  }
  const auto& seg = segments[segment_index];
  const world::Pose& first = seg.poses.front();
  const world::Pose& last = seg.poses.back();
  bool turn = seg.kind == world::SegmentKind::Turn;
  bool has_next = segment_index + 1 < segments.size();
  auto next_kind = has_next ? segments[segment_index + 1].kind : seg.kind;

  ContextVector c{};
  c[kT] = turn;
  c[kW] = !turn;
  c[kTW] = turn && has_next && next_kind == world::SegmentKind::Travel;
  c[kWT] = !turn && has_next && next_kind == world::SegmentKind::Turn;
  c[kWObjAt] = map.object_at(last.node).has_value();
  if (!turn) {
    for (std::size_t i = 1; i + 1 < seg.poses.size(); ++i) {
      if (map.object_at(seg.poses[i].node)) c[kWPastObj] = 1;
    }
  }
  c[kWDeadEnd] = map.degree(last.node) == 1;
  c[kWGoal] = last == path.back();
  c[kTStart] = segment_index == 0;

  auto before = edge_ahead(map, first);
  auto after = edge_ahead(map, last);
  c[kTNewCarp] = after.has_value() && (!before || before->floor_color != after->floor_color);
  auto pict_after = pictures(after);
  c[kTNewPict] = !pict_after.empty() && pict_after != pictures(before);
  for (const auto& s : world::visible_entities(map, last)) {
    if (world::classify_entity(s.entity) == EntityClass::Object) c[kTObjSide] = 1;
  }
  c[kTObjAt] = turn && map.object_at(first.node).has_value();
  c[kTAtT] = turn && map.degree(first.node) == 1;
  return c;
}

PropertyVector extract_properties(const Structure& structure, const Command* command) {
  const Command& shape = command ? *command : structure.shape();
  PropertyVector p{};
  if (!shape.actions.empty()) p[kCmd] = action_code(shape.actions.front().kind);
  p[kDep] = static_cast<int>(shape.actions.size());
  p[kEta] = cas::eta(shape);
  std::set<std::string> distinct;
  for (const auto& action : shape.actions) {
    if (action.kind == ActionKind::Face) p[kTrf] = 1;
    for (const auto& attr : action.attributes) {
      if (!attr.value) continue;
      distinct.insert(*attr.value);
      const cas::AttributeSpec* spec = cas::find_spec(action.kind, attr.name);
      if (!spec || spec->type != cas::ValueType::Entity) continue;
      switch (world::classify_entity(*attr.value)) {
        case EntityClass::Floor: ++p[kPcp]; break;
        case EntityClass::WallFeature: ++p[kPpc]; break;
        case EntityClass::Object:
          ++p[kNln];
          if ((action.kind == ActionKind::Face && attr.name == "target") ||
              (action.kind == ActionKind::Travel && attr.name == "until")) {
            p[kHtw] = 1;
          }
          break;
        case EntityClass::Wall: ++p[kNln]; break;
        case EntityClass::Unknown: break;
      }
    }
  }
  p[kNsl] = static_cast<int>(distinct.size());
  return p;
}

Eigen::VectorXd joint_features(const ContextVector& context, const PropertyVector& properties) {
  Eigen::VectorXd out(kJointSize);
  for (std::size_t i = 0; i < kContextSize; ++i) {
    for (std::size_t d = 0; d < kPropertySize; ++d) {
      out(static_cast<Eigen::Index>(i * kPropertySize + d)) = context[i] * properties[d];
    }
  }
  return out;
}

// ---- IRL ------------------------------------------------------------------

namespace {

Eigen::MatrixXd action_matrix(const std::vector<PropertyVector>& actions) {
  Eigen::MatrixXd m(kPropertySize, static_cast<Eigen::Index>(actions.size()));
  for (std::size_t a = 0; a < actions.size(); ++a) {
    for (std::size_t d = 0; d < kPropertySize; ++d) m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(a)) = actions[a][d];
  }
  return m;
}

Eigen::VectorXd context_vector(const ContextVector& c) {
  Eigen::VectorXd v(kContextSize);
  for (std::size_t i = 0; i < kContextSize; ++i) v(static_cast<Eigen::Index>(i)) = c[i];
  return v;
}

// Row-major 14x9 view of theta.
Eigen::MatrixXd theta_matrix(const Eigen::VectorXd& theta) {
  Eigen::MatrixXd m(kContextSize, kPropertySize);
  for (std::size_t i = 0; i < kContextSize; ++i) {
    for (std::size_t d = 0; d < kPropertySize; ++d) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = theta(static_cast<Eigen::Index>(i * kPropertySize + d));
    }
  }
  return m;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(kJointSize);
  for (std::size_t i = 0; i < kContextSize; ++i) {
    for (std::size_t d = 0; d < kPropertySize; ++d) {
      v(static_cast<Eigen::Index>(i * kPropertySize + d)) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
    }
  }
  return v;
}

Eigen::VectorXd softmax_neg(const Eigen::VectorXd& energies) {
  Eigen::VectorXd s = -energies;
  double mx = s.maxCoeff();
  Eigen::VectorXd e = (s.array() - mx).exp().matrix();
  return e / e.sum();
}

std::size_t action_index(const std::vector<PropertyVector>& actions, const PropertyVector& p) {
  auto it = std::find(actions.begin(), actions.end(), p);
  if (it == actions.end()) throw TrainingError("demonstrated property vector is not in the action set");
  return static_cast<std::size_t>(it - actions.begin());
}

// Demonstrations grouped by (context, action) with multiplicities.
struct Grouped {
  std::vector<ContextVector> contexts;
  std::vector<std::vector<std::pair<std::size_t, double>>> chosen;  // per context
  double total = 0.0;
};

Grouped group(const std::vector<IrlDemo>& demos, const std::vector<PropertyVector>& actions) {
  Grouped g;
  std::map<ContextVector, std::size_t> index;
  std::vector<std::map<std::size_t, double>> counts;
  for (const auto& d : demos) {
    auto [it, fresh] = index.try_emplace(d.context, g.contexts.size());
    if (fresh) {
      g.contexts.push_back(d.context);
      counts.emplace_back();
    }
    counts[it->second][action_index(actions, d.properties)] += 1.0;
    g.total += 1.0;
  }
  for (auto& m : counts) g.chosen.emplace_back(m.begin(), m.end());
  return g;
}

double objective_grouped(const Eigen::VectorXd& theta, const Grouped& g, const Eigen::MatrixXd& xi, double l2,
                         Eigen::VectorXd* gradient) {
  Eigen::MatrixXd th = theta_matrix(theta);
  double ll = 0.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(kContextSize, kPropertySize);
  for (std::size_t k = 0; k < g.contexts.size(); ++k) {
    Eigen::VectorXd s = context_vector(g.contexts[k]);
    Eigen::VectorXd energy = (s.transpose() * th * xi).transpose();
    double mx = (-energy).maxCoeff();
    double log_z = mx + std::log((-energy.array() - mx).exp().sum());
    Eigen::VectorXd pi = (-energy.array() - log_z).exp().matrix();
    double n_ctx = 0.0;
    Eigen::VectorXd chosen_xi = Eigen::VectorXd::Zero(kPropertySize);
    for (auto [a, n] : g.chosen[k]) {
      ll += n * (-energy(static_cast<Eigen::Index>(a)) - log_z);
      chosen_xi += n * xi.col(static_cast<Eigen::Index>(a));
      n_ctx += n;
    }
    if (gradient) {
      // d/dtheta of -theta.psi(s,a) - log Z(s) is -psi(s,a) + E_pi[psi(s,.)].
      Eigen::VectorXd expected_xi = xi * pi;
      grad += s * (n_ctx * expected_xi - chosen_xi).transpose();
    }
  }
  double n = std::max(g.total, 1.0);
  if (gradient) *gradient = flatten(grad) / n - (l2 / n) * theta;
  return ll / n - 0.5 * (l2 / n) * theta.squaredNorm();
}

}  // namespace

std::vector<double> IrlModel::policy(const ContextVector& context) const {
  if (actions.empty()) return {};
  Eigen::VectorXd s = context_vector(context);
  Eigen::VectorXd energy = (s.transpose() * theta_matrix(theta) * action_matrix(actions)).transpose();
  Eigen::VectorXd p = softmax_neg(energy);
  return {p.data(), p.data() + p.size()};
}

double irl_objective(const Eigen::VectorXd& theta, const std::vector<IrlDemo>& demos,
                     const std::vector<PropertyVector>& actions, double l2, Eigen::VectorXd* gradient) {
  return objective_grouped(theta, group(demos, actions), action_matrix(actions), l2, gradient);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> feature_expectations(const IrlModel& model,
                                                                 const std::vector<IrlDemo>& demos) {
  Eigen::VectorXd empirical = Eigen::VectorXd::Zero(kJointSize);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(kJointSize);
  for (const auto& d : demos) {
    empirical += joint_features(d.context, d.properties);
    auto pi = model.policy(d.context);
    for (std::size_t a = 0; a < model.actions.size(); ++a) expected += pi[a] * joint_features(d.context, model.actions[a]);
  }
  double n = std::max<double>(1.0, static_cast<double>(demos.size()));
  return {empirical / n, expected / n};
}

IrlModel train_irl(const std::vector<IrlDemo>& demos, const IrlHyper& hyper, IrlReport* report,
                   const IrlConfig& config) {
  if (demos.empty()) throw TrainingError("train_irl: no demonstrations");
  IrlModel model;
  model.config = config;
  for (const auto& d : demos) {
    if (std::find(model.actions.begin(), model.actions.end(), d.properties) == model.actions.end()) {
      model.actions.push_back(d.properties);
    }
    if (d.structure) {
      DbEntry entry{*d.structure, d.properties};
      if (std::find(model.action_db.begin(), model.action_db.end(), entry) == model.action_db.end()) {
        model.action_db.push_back(std::move(entry));
      }
    }
  }
  model.mi_weights = mi_weights(demos);

  Grouped g = group(demos, model.actions);
  Eigen::MatrixXd xi = action_matrix(model.actions);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(kJointSize);
  Eigen::VectorXd grad;
  double f = objective_grouped(theta, g, xi, hyper.l2, &grad);
  double step = hyper.lr;
  IrlReport rep;
  for (int it = 0; it < hyper.iters; ++it) {
    double gsq = grad.squaredNorm();
    if (std::sqrt(gsq) < hyper.tol) {
      rep.converged = true;
      break;
    }
    // Backtracking line search along the ascent direction.
    bool accepted = false;
    while (step > 1e-14) {
      Eigen::VectorXd candidate = theta + step * grad;
      Eigen::VectorXd cand_grad;
      double fc = objective_grouped(candidate, g, xi, hyper.l2, &cand_grad);
      if (std::isfinite(fc) && fc >= f + 1e-4 * step * gsq) {
        theta = std::move(candidate);
        grad = std::move(cand_grad);
        f = fc;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    rep.iterations = it + 1;
    if (!accepted) break;
    step *= 2.0;
  }
  if (!rep.converged && grad.norm() < hyper.tol) rep.converged = true;
  model.theta = theta;
  rep.grad_norm = grad.norm();
  rep.objective = f;
  auto [emp, exp] = feature_expectations(model, demos);
  rep.feature_gap = (emp - exp).cwiseAbs().maxCoeff();
  if (report) *report = rep;
  return model;
}

PropertyVector map_property_vector(const IrlModel& model, const ContextVector& context) {
  if (model.action_db.empty()) throw TrainingError("map_property_vector: empty action database");
  auto pi = model.policy(context);
  std::size_t best = 0;
  double best_p = -1.0;
  for (std::size_t i = 0; i < model.action_db.size(); ++i) {
    double p = pi[action_index(model.actions, model.action_db[i].properties)];
    if (p > best_p) {
      best_p = p;
      best = i;
    }
  }
  return model.action_db[best].properties;
}

// ---- retrieval ------------------------------------------------------------

std::array<double, kPropertySize> mi_weights(const std::vector<IrlDemo>& demos) {
  std::array<double, kPropertySize> out{};
  if (demos.empty()) return out;
  for (std::size_t d = 0; d < kPropertySize; ++d) {
    std::set<int> values;
    for (const auto& demo : demos) values.insert(demo.properties[d]);
    std::vector<int> vs(values.begin(), values.end());
    for (std::size_t i = 0; i < kContextSize; ++i) {
      std::set<int> bits;
      for (const auto& demo : demos) bits.insert(demo.context[i]);
      std::vector<int> bs(bits.begin(), bits.end());
      if (bs.size() < 2 || vs.size() < 2) continue;  // a constant variable carries no information
      std::vector<std::vector<double>> table(bs.size(), std::vector<double>(vs.size(), 1.0));
      for (const auto& demo : demos) {
        auto bi = static_cast<std::size_t>(std::lower_bound(bs.begin(), bs.end(), demo.context[i]) - bs.begin());
        auto vi = static_cast<std::size_t>(std::lower_bound(vs.begin(), vs.end(), demo.properties[d]) - vs.begin());
        table[bi][vi] += 1.0;
      }
      double total = 0.0;
      std::vector<double> row(bs.size(), 0.0), col(vs.size(), 0.0);
      for (std::size_t a = 0; a < bs.size(); ++a) {
        for (std::size_t b = 0; b < vs.size(); ++b) {
          row[a] += table[a][b];
          col[b] += table[a][b];
          total += table[a][b];
        }
      }
      double mi = 0.0;
      for (std::size_t a = 0; a < bs.size(); ++a) {
        for (std::size_t b = 0; b < vs.size(); ++b) {
          double p = table[a][b] / total;
          mi += p * std::log(p * total * total / (row[a] * col[b]));
        }
      }
      out[d] += std::max(0.0, mi);
    }
  }
  return out;
}

double weighted_distance(const std::array<double, kPropertySize>& weights, const PropertyVector& a,
                         const PropertyVector& b) {
  double s = 0.0;
  for (std::size_t d = 0; d < kPropertySize; ++d) s += weights[d] * std::abs(a[d] - b[d]);
  return s;
}

std::vector<Structure> knn_retrieve(const IrlModel& model, const PropertyVector& target) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < model.action_db.size(); ++i) {
    order.emplace_back(weighted_distance(model.mi_weights, model.action_db[i].properties, target), i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t k = std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(model.config.k_c, 0)));
  std::vector<Structure> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(model.action_db[order[i].second].structure);
  return out;
}

double structure_distance(const Structure& a, const Structure& b) {
  auto ta = cas::slot_tokens(a.shape());
  auto tb = cas::slot_tokens(b.shape());
  std::size_t longest = std::max(ta.size(), tb.size());
  if (longest == 0) return 0.0;
  return static_cast<double>(cas::edit_distance(ta, tb)) / static_cast<double>(longest);
}

std::vector<Structure> cluster_structures(const std::vector<Structure>& candidates, int k) {
  std::vector<Structure> distinct;
  for (const auto& c : candidates) {
    if (std::find(distinct.begin(), distinct.end(), c) == distinct.end()) distinct.push_back(c);
  }
  const auto n = static_cast<Eigen::Index>(distinct.size());
  if (n == 0) return {};
  Eigen::Index clusters = std::clamp<Eigen::Index>(k, 1, n);
  if (clusters == n) return distinct;

  Eigen::MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      dist(i, j) = structure_distance(distinct[static_cast<std::size_t>(i)], distinct[static_cast<std::size_t>(j)]);
    }
  }
  Eigen::MatrixXd affinity = Eigen::MatrixXd::Ones(n, n) - dist;
  Eigen::VectorXd inv_sqrt = affinity.rowwise().sum().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n) - inv_sqrt.asDiagonal() * affinity * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  Eigen::MatrixXd embed = solver.eigenvectors().leftCols(clusters);
  for (Eigen::Index i = 0; i < n; ++i) {
    double norm = embed.row(i).norm();
    if (norm > 0.0) embed.row(i) /= norm;
  }

  // k-means with farthest-point initialization from row 0.
  std::vector<Eigen::Index> seeds{0};
  while (static_cast<Eigen::Index>(seeds.size()) < clusters) {
    Eigen::Index best = 0;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (auto s : seeds) dmin = std::min(dmin, (embed.row(i) - embed.row(s)).squaredNorm());
      if (dmin > best_d) {
        best_d = dmin;
        best = i;
      }
    }
    seeds.push_back(best);
  }
  Eigen::MatrixXd centers(clusters, clusters);
  for (Eigen::Index c = 0; c < clusters; ++c) centers.row(c) = embed.row(seeds[static_cast<std::size_t>(c)]);
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < clusters; ++c) {
        double d = (embed.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d - 1e-12) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (Eigen::Index c = 0; c < clusters; ++c) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(clusters);
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (assign[static_cast<std::size_t>(i)] == c) {
          sum += embed.row(i);
          ++count;
        }
      }
      if (count > 0) centers.row(c) = sum / count;
    }
  }

  std::vector<Eigen::Index> medoids;
  for (Eigen::Index c = 0; c < clusters; ++c) {
    Eigen::Index best = -1;
    double best_sum = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (assign[static_cast<std::size_t>(i)] != c) continue;
      double s = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (assign[static_cast<std::size_t>(j)] == c) s += dist(i, j);
      }
      if (s < best_sum - 1e-12) {
        best_sum = s;
        best = i;
      }
    }
    if (best >= 0) medoids.push_back(best);
  }
  std::sort(medoids.begin(), medoids.end());
  std::vector<Structure> out;
  for (auto m : medoids) out.push_back(distinct[static_cast<std::size_t>(m)]);
  return out;
}

// ---- persistence ----------------------------------------------------------

namespace {
constexpr int kIrlVersion = 1;
}

void save_irl(const std::filesystem::path& path, const IrlModel& model) {
  using nlohmann::json;
  json db = json::array();
  for (const auto& e : model.action_db) {
    db.push_back({{"structure", cas::serialize(e.structure)}, {"properties", e.properties}});
  }
  json doc = {{"format", "navgen-irl"},
              {"version", kIrlVersion},
              {"theta", std::vector<double>(model.theta.data(), model.theta.data() + model.theta.size())},
              {"mi_weights", model.mi_weights},
              {"actions", model.actions},
              {"action_db", db},
              {"config", {{"k_c", model.config.k_c}, {"gamma", model.config.gamma}, {"clusters", model.config.clusters}}}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << doc.dump(1);
}

IrlModel load_irl(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  try {
    json doc = json::parse(in);
    if (doc.at("format") != "navgen-irl") throw CheckpointError(path.string() + ": not an IRL model");
    int version = doc.at("version").get<int>();
    if (version != kIrlVersion) {
      throw CheckpointError(path.string() + ": version " + std::to_string(version) + ", expected " +
                            std::to_string(kIrlVersion));
    }
    IrlModel m;
    auto theta = doc.at("theta").get<std::vector<double>>();
    if (theta.size() != kJointSize) throw CheckpointError(path.string() + ": theta has wrong length");
    m.theta = Eigen::Map<Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    m.mi_weights = doc.at("mi_weights").get<std::array<double, kPropertySize>>();
    m.actions = doc.at("actions").get<std::vector<PropertyVector>>();
    for (const auto& e : doc.at("action_db")) {
      m.action_db.push_back({cas::parse_structure(e.at("structure").get<std::string>()),
                             e.at("properties").get<PropertyVector>()});
    }
    const auto& cfg = doc.at("config");
    m.config.k_c = cfg.at("k_c").get<int>();
    m.config.gamma = cfg.at("gamma").get<double>();
    m.config.clusters = cfg.at("clusters").get<int>();
    return m;
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const CasError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace navgen::select
