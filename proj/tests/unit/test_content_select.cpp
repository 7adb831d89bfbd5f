#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "navgen/cas.hpp"
#include "navgen/content_select.hpp"
#include "navgen/error.hpp"
#include "unit/fixtures.hpp"

using namespace navgen;
using namespace navgen::select;
using world::Heading;
using world::Move;
using world::Pose;

namespace {

ContextVector bits(std::initializer_list<std::size_t> on) {
  ContextVector c{};
  for (auto i : on) c[i] = 1;
  return c;
}

// Draws from pi(a|s) proportional to exp(-theta . psi(s, a)), computed here
// directly from the definition.
std::size_t sample_planted(std::mt19937_64& rng, const Eigen::VectorXd& theta, const ContextVector& s,
                           const std::vector<PropertyVector>& actions) {
  std::vector<double> w;
  for (const auto& a : actions) w.push_back(std::exp(-theta.dot(joint_features(s, a))));
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  return pick(rng);
}

double entropy(double p) { return -(p * std::log(p) + (1 - p) * std::log(1 - p)); }

}  // namespace

TEST_CASE("extract_context on fixtures") {
  auto m = navgen::testing::corridor(4);
  m.set_object({3, 0}, "sofa");
  // Turn from north to east, then walk three edges to the sofa at the end.
  auto path = world::path_from_moves({{0, 0}, Heading::N}, {Move::Right, Move::Forward, Move::Forward, Move::Forward});
  auto first = extract_context(m, path, 0);
  CHECK(first[kTStart] == 1);
  CHECK(first[kT] == 1);
  CHECK(first[kW] == 0);
  CHECK(first[kTW] == 1);
  CHECK(first[kTAtT] == 1);  // (0,0) is a dead end
  CHECK(first[kTNewCarp] == 1);  // north faced no corridor, east faces blue floor

  auto second = extract_context(m, path, 1);
  CHECK(second[kW] == 1);
  CHECK(second[kT] == 0);
  CHECK(second[kWGoal] == 1);
  CHECK(second[kTStart] == 0);
  CHECK(second[kWObjAt] == 1);
  CHECK(second[kWDeadEnd] == 1);
  CHECK(second[kWT] == 0);
  CHECK(second[kTObjSide] == 1);  // the sofa is at the final node

  CHECK_THROWS_AS(extract_context(m, path, 2), PathError);
}

TEST_CASE("extract_context passes objects and pictures") {
  auto m = navgen::testing::corridor(4);
  m.set_object({1, 0}, "lamp");
  auto attrs = navgen::testing::floor_attrs("red");
  attrs.wall_left = "fish";
  world::WorldMap m2;
  for (int x = 0; x < 3; ++x) m2.add_node({x, 0});
  m2.add_edge({0, 0}, {1, 0}, navgen::testing::floor_attrs("blue"));
  m2.add_edge({1, 0}, {2, 0}, attrs);

  auto walk = world::path_from_moves({{0, 0}, Heading::E}, {Move::Forward, Move::Forward, Move::Left});
  auto c = extract_context(m, walk, 0);
  CHECK(c[kWPastObj] == 1);
  CHECK(c[kWT] == 1);
  CHECK(c[kWGoal] == 0);

  auto one = world::path_from_moves({{0, 0}, Heading::E}, {Move::Forward});
  auto c2 = extract_context(m2, one, 0);
  CHECK(c2[kTNewCarp] == 1);
  CHECK(c2[kTNewPict] == 1);
  CHECK(c2[kWPastObj] == 0);
}

TEST_CASE("extract_properties") {
  auto turn = cas::parse("Turn(direction=Left)");
  auto p = extract_properties(cas::structure_of(turn), &turn);
  CHECK(p[kEta] == 1);
  CHECK(p[kNln] == 0);
  CHECK(p[kCmd] == 0);
  CHECK(p[kTrf] == 0);

  auto compound = cas::parse("Face(target=easel); Travel(until=blue_floor)");
  auto q = extract_properties(cas::structure_of(compound), &compound);
  CHECK(q[kNln] == 1);
  CHECK(q[kPcp] == 1);
  CHECK(q[kEta] == 2);
  CHECK(q[kDep] == 2);
  CHECK(q[kHtw] == 1);
  CHECK(q[kTrf] == 1);
  CHECK(q[kNsl] == 2);
  CHECK(q[kCmd] == 2);

  auto bare = cas::parse_structure("Travel(); Verify()");
  PropertyVector expected{};
  expected[kDep] = 2;
  expected[kCmd] = 1;
  CHECK(extract_properties(bare) == expected);

  auto walls = cas::parse("Travel(distance=2, past=fish_wall); Verify(see=wall, side=ahead)");
  auto r = extract_properties(cas::structure_of(walls), &walls);
  CHECK(r[kPpc] == 1);
  CHECK(r[kNln] == 1);
  CHECK(r[kHtw] == 0);
  CHECK(r[kNsl] == 4);
}

TEST_CASE("irl objective gradient matches finite differences") {
  std::mt19937_64 rng(4);
  std::vector<PropertyVector> actions = {{1, 0, 1, 1, 0, 0, 0, 0, 0}, {2, 1, 1, 2, 1, 0, 0, 1, 0},
                                         {3, 2, 2, 3, 0, 1, 1, 1, 1}};
  std::vector<IrlDemo> demos;
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> pick(0, 2);
  for (int i = 0; i < 40; ++i) {
    IrlDemo d;
    for (auto& b : d.context) b = coin(rng);
    d.properties = actions[pick(rng)];
    demos.push_back(d);
  }
  std::normal_distribution<double> n(0.0, 0.3);
  Eigen::VectorXd theta(kJointSize);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = n(rng);
  Eigen::VectorXd grad;
  irl_objective(theta, demos, actions, 1e-3, &grad);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, down = theta;
    up(i) += h;
    down(i) -= h;
    double numeric = (irl_objective(up, demos, actions, 1e-3, nullptr) -
                      irl_objective(down, demos, actions, 1e-3, nullptr)) / (2 * h);
    double denom = std::max({std::abs(numeric), std::abs(grad(i)), 1e-8});
    if (std::abs(numeric) + std::abs(grad(i)) > 1e-7) worst = std::max(worst, std::abs(numeric - grad(i)) / denom);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("train_irl on two actions") {
  PropertyVector a{1, 0, 1, 1, 0, 0, 0, 0, 0};
  PropertyVector b{1, 0, 1, 1, 0, 0, 0, 1, 0};  // differs in nln only
  ContextVector s = bits({kT, kTStart});

  SUBCASE("always chosen action dominates") {
    std::vector<IrlDemo> demos;
    for (int i = 0; i < 20; ++i) demos.push_back({s, a, std::nullopt});
    demos.push_back({bits({kW}), b, std::nullopt});
    auto model = train_irl(demos);
    auto pi = model.policy(s);
    CHECK(pi[0] >= 0.9);
  }
  SUBCASE("uniform demonstrations leave theta at zero") {
    std::vector<IrlDemo> demos;
    for (int i = 0; i < 10; ++i) {
      demos.push_back({s, a, std::nullopt});
      demos.push_back({s, b, std::nullopt});
    }
    IrlReport report;
    auto model = train_irl(demos, {}, &report);
    CHECK(model.theta.cwiseAbs().maxCoeff() < 1e-9);
    CHECK(report.converged);
    auto pi = model.policy(s);
    CHECK(pi[0] == doctest::Approx(0.5));
  }
  SUBCASE("empty input is an error") { CHECK_THROWS_AS(train_irl({}), TrainingError); }
}

TEST_CASE("policy is normalized") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 2.0);
  std::bernoulli_distribution coin(0.5);
  IrlModel model;
  model.actions = {{0, 1, 2, 3, 0, 1, 0, 2, 1}, {5, 0, 1, 0, 2, 0, 1, 0, 0}, {1, 1, 1, 1, 1, 1, 1, 1, 1}};
  for (int trial = 0; trial < 100; ++trial) {
    for (Eigen::Index i = 0; i < model.theta.size(); ++i) model.theta(i) = n(rng);
    ContextVector c{};
    for (auto& b : c) b = coin(rng);
    auto pi = model.policy(c);
    double sum = 0.0;
    for (double p : pi) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("map_property_vector") {
  PropertyVector a{1, 0, 1, 1, 0, 0, 0, 0, 0};
  PropertyVector b{1, 0, 1, 1, 0, 0, 0, 1, 0};
  IrlModel model;
  model.actions = {a, b};
  model.action_db = {{cas::parse_structure("Turn(direction=None)"), a},
                     {cas::parse_structure("Travel(until=None)"), b}};
  ContextVector s = bits({kW});
  CHECK(map_property_vector(model, s) == a);  // theta = 0: first by database order

  // Positive weight on (w, nln) penalizes b: logistic pi(a) = 1/(1+e^{-0.7}).
  model.theta(static_cast<Eigen::Index>(kW * kPropertySize + kNln)) = 0.7;
  CHECK(model.policy(s)[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.7))).epsilon(1e-12));
  CHECK(map_property_vector(model, s) == a);
  model.theta *= -1.0;
  CHECK(map_property_vector(model, s) == b);
  for (double scale : {0.01, 3.0, 250.0}) {
    IrlModel scaled = model;
    scaled.theta *= scale;
    CHECK(map_property_vector(scaled, s) == b);
  }

  IrlModel single;
  single.actions = {a};
  single.action_db = {{cas::parse_structure("Turn()"), a}};
  CHECK(map_property_vector(single, s) == a);
  IrlModel empty;
  CHECK_THROWS_AS(map_property_vector(empty, s), TrainingError);
}

TEST_CASE("IRL recovers a planted policy") {
  std::mt19937_64 rng(31);
  std::vector<PropertyVector> actions = {{1, 0, 1, 1, 0, 0, 0, 0, 0}, {2, 1, 1, 2, 1, 0, 0, 0, 0},
                                         {2, 2, 2, 2, 0, 0, 1, 1, 1}, {3, 1, 2, 3, 1, 1, 0, 1, 0}};
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  Eigen::VectorXd planted(kJointSize);
  for (Eigen::Index i = 0; i < planted.size(); ++i) planted(i) = u(rng);
  std::vector<ContextVector> pool;
  std::bernoulli_distribution coin(0.4);
  for (int i = 0; i < 12; ++i) {
    ContextVector c{};
    for (auto& b : c) b = coin(rng);
    pool.push_back(c);
  }
  std::vector<IrlDemo> demos;
  std::uniform_int_distribution<std::size_t> ctx(0, pool.size() - 1);
  for (int i = 0; i < 4000; ++i) {
    const auto& s = pool[ctx(rng)];
    demos.push_back({s, actions[sample_planted(rng, planted, s, actions)], std::nullopt});
  }
  IrlReport report;
  auto model = train_irl(demos, {0.1, 2000, 1e-3, 1e-10}, &report);
  auto [emp, exp] = feature_expectations(model, demos);
  CHECK((emp - exp).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(report.feature_gap < 1e-3);
}

TEST_CASE("mi_weights") {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.3);
  std::uniform_int_distribution<int> noise(0, 3);
  std::vector<IrlDemo> demos;
  const int n = 10000;
  int ones = 0;
  for (int i = 0; i < n; ++i) {
    IrlDemo d;
    d.context[kW] = coin(rng);
    ones += d.context[kW];
    d.properties[kDep] = 2;                   // constant
    d.properties[kEta] = d.context[kW];       // copy of one bit
    d.properties[kNln] = noise(rng);          // independent
    demos.push_back(d);
  }
  auto w = mi_weights(demos);
  CHECK(w[kDep] == 0.0);
  // Smoothed oracle: counts (0,0)=n0+1, (0,1)=1, (1,0)=1, (1,1)=n1+1.
  double n0 = n - ones + 1, n1 = ones + 1, total = n + 4.0;
  double r0 = n0 + 1, r1 = n1 + 1;  // row and column marginals coincide
  double oracle = (n0 / total) * std::log(n0 * total / (r0 * r0)) + (1 / total) * std::log(total / (r0 * r1)) * 2 +
                  (n1 / total) * std::log(n1 * total / (r1 * r1));
  CHECK(w[kEta] == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(std::abs(w[kEta] - entropy(static_cast<double>(ones) / n)) < 2e-3);
  CHECK(w[kNln] < 0.05);
  for (double x : w) CHECK(x >= 0.0);
}

TEST_CASE("knn_retrieve equals brute-force ordering") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> v(0, 3);
  std::uniform_real_distribution<double> wt(0.0, 1.0);
  const std::vector<std::string> shapes = {"Turn(direction=None)", "Travel(distance=None)", "Face(target=None)",
                                           "Travel(until=None)", "Verify(see=None)"};
  for (int trial = 0; trial < 30; ++trial) {
    IrlModel model;
    std::size_t size = 1 + static_cast<std::size_t>(trial) * 33;
    for (std::size_t i = 0; i < size; ++i) {
      PropertyVector p;
      for (auto& x : p) x = v(rng);
      model.action_db.push_back({cas::parse_structure(shapes[i % shapes.size()]), p});
    }
    for (auto& x : model.mi_weights) x = wt(rng);
    model.config.k_c = 1 + trial * 7;
    PropertyVector target;
    for (auto& x : target) x = v(rng);
    // Oracle: selection of the minimum remaining distance, earliest index first.
    std::vector<bool> used(size, false);
    std::vector<cas::Structure> expected;
    for (int k = 0; k < model.config.k_c && expected.size() < size; ++k) {
      std::size_t best = size;
      double best_d = 0;
      for (std::size_t i = 0; i < size; ++i) {
        if (used[i]) continue;
        double d = 0;
        for (std::size_t j = 0; j < kPropertySize; ++j) {
          d += model.mi_weights[j] * std::abs(model.action_db[i].properties[j] - target[j]);
        }
        if (best == size || d < best_d) {
          best = i;
          best_d = d;
        }
      }
      used[best] = true;
      expected.push_back(model.action_db[best].structure);
    }
    CHECK(knn_retrieve(model, target) == expected);
  }

  IrlModel model;
  model.mi_weights.fill(1.0);
  PropertyVector near{1, 1, 1, 1, 1, 1, 1, 1, 1};
  model.action_db = {{cas::parse_structure("Turn()"), {}}, {cas::parse_structure("Travel()"), near}};
  auto got = knn_retrieve(model, near);
  REQUIRE(got.size() == 2);
  CHECK(got[0] == cas::parse_structure("Travel()"));
}

TEST_CASE("cluster_structures") {
  auto s = [](const char* text) { return cas::parse_structure(text); };
  SUBCASE("identical candidates collapse") {
    std::vector<cas::Structure> same(4, s("Turn(direction=None)"));
    auto out = cluster_structures(same, 3);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == same[0]);
  }
  SUBCASE("k equal to the candidate count returns them verbatim") {
    std::vector<cas::Structure> c = {s("Turn()"), s("Travel()"), s("Face()")};
    CHECK(cluster_structures(c, 3) == c);
    CHECK(cluster_structures(c, 10) == c);
  }
  SUBCASE("two separated families") {
    std::vector<cas::Structure> c = {
        s("Turn(direction=None)"),       s("Travel(distance=None)"),
        s("Turn()"),                     s("Travel(until=None)"),
        s("Turn(direction=None); Turn(direction=None)"), s("Travel(distance=None, until=None)")};
    // Brute force over all 2-partitions: minimum total within-cluster distance.
    double best = 1e9;
    unsigned best_mask = 0;
    for (unsigned mask = 1; mask < (1u << 6) - 1; ++mask) {
      double cost = 0;
      for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = i + 1; j < 6; ++j) {
          if (((mask >> i) & 1) == ((mask >> j) & 1)) cost += structure_distance(c[i], c[j]);
        }
      }
      if (cost < best) {
        best = cost;
        best_mask = mask;
      }
    }
    bool turns_together = ((best_mask >> 0) & 1) == ((best_mask >> 2) & 1) && ((best_mask >> 0) & 1) == ((best_mask >> 4) & 1);
    CHECK(turns_together);
    auto out = cluster_structures(c, 2);
    REQUIRE(out.size() == 2);
    CHECK(out[0].shape().actions[0].kind == cas::ActionKind::Turn);
    CHECK(out[1].shape().actions[0].kind == cas::ActionKind::Travel);
  }
  SUBCASE("empty input") { CHECK(cluster_structures({}, 5).empty()); }
}

TEST_CASE("IRL model persistence") {
  std::vector<IrlDemo> demos = {
      {bits({kT}), {1, 0, 1, 1, 0, 0, 0, 0, 0}, cas::parse_structure("Turn(direction=None)")},
      {bits({kW}), {1, 1, 1, 1, 0, 0, 0, 0, 0}, cas::parse_structure("Travel(distance=None)")},
      {bits({kW, kWGoal}), {1, 1, 1, 1, 0, 0, 0, 1, 0}, cas::parse_structure("Travel(until=None)")}};
  auto model = train_irl(demos, {0.1, 50, 1e-3, 1e-10});
  auto path = std::filesystem::temp_directory_path() / "navgen_irl_test.json";
  save_irl(path, model);
  auto back = load_irl(path);
  CHECK(back.theta == model.theta);
  CHECK(back.action_db == model.action_db);
  CHECK(back.actions == model.actions);
  CHECK(back.mi_weights == model.mi_weights);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_irl(path), CheckpointError);
}
