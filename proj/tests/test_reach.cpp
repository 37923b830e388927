#include <doctest.h>

#include <random>

#include "flreach/reach.hpp"
#include "support/oracles.hpp"

using namespace flreach;

namespace {

AffineLayer dense(std::initializer_list<std::initializer_list<double>> w, std::initializer_list<double> b) {
  AffineLayer a{Eigen::MatrixXd(static_cast<Eigen::Index>(w.size()), static_cast<Eigen::Index>(w.begin()->size())),
                Eigen::VectorXd(static_cast<Eigen::Index>(b.size()))};
  Eigen::Index r = 0;
  for (const auto& row : w) {
    Eigen::Index c = 0;
    for (double v : row) a.W(r, c++) = v;
    ++r;
  }
  Eigen::Index i = 0;
  for (double v : b) a.b(i++) = v;
  return a;
}

InputSpec box_spec(const Eigen::VectorXd& centre, double eps) {
  InputSpec s;
  s.baseline = centre;
  for (Eigen::Index i = 0; i < centre.size(); ++i) s.perturbed.push_back(i);
  s.epsilon = eps;
  return s;
}

/// y = relu(x) - 2 relu(x - 1) on [-1, 3]: rises to 1 at x = 1, falls after.
Network tent() {
  return Network(1, {dense({{1}, {1}}, {0, -1}), ReluLayer{2}, dense({{1, -2}}, {0})});
}

}  // namespace

TEST_CASE("relaxation rounding") {
  CHECK(selected_count(0.67, 3) == 2);
  CHECK(selected_count(1.0, 7) == 7);
  CHECK(selected_count(0.0, 7) == 0);
  CHECK(selected_count(0.01, 5) == 1);
  CHECK(selected_count(0.2, 10) == 2);
  CHECK_THROWS_AS(selected_count(1.5, 3), std::invalid_argument);
}

TEST_CASE("neuron selection by gradient magnitude") {
  // Hidden gradients for class 0 are (3, -3, 1).
  const Network net(1, {dense({{1}, {1}, {2}}, {0, 0, 0}), ReluLayer{3}, dense({{3, -3, 1}, {0, 0, 0}}, {0, 0})});
  const InputSpec spec = box_spec(Eigen::VectorXd::Ones(1), 0.1);
  CHECK(select_neurons(net, spec, 1.0)[0].selected == std::vector<bool>{true, true, true});
  CHECK(select_neurons(net, spec, 0.67)[0].selected == std::vector<bool>{true, true, false});
  CHECK(select_neurons(net, spec, 0.34)[0].selected == std::vector<bool>{true, false, false});
  CHECK(select_neurons(net, spec, 0.0)[0].count() == 0);
}

TEST_CASE("box partitioning") {
  const auto parts = partition_box(Eigen::Vector2d(0, 0), Eigen::Vector2d(4, 1), 4);
  REQUIRE(parts.size() == 4);
  double volume = 0.0;
  for (const auto& [lo, hi] : parts) {
    CHECK((hi - lo)(0) == doctest::Approx(1.0));
    volume += (hi - lo).prod();
  }
  CHECK(volume == doctest::Approx(4.0));
  CHECK(partition_box(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), 3).size() == 3);
  CHECK(partition_box(Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0), 3).size() == 1);
  CHECK_THROWS_AS(partition_box(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), 0), std::invalid_argument);
}

TEST_CASE("affine networks give one set per partition") {
  const Network net(2, {dense({{1, 2}, {-1, 0.5}, {0, 1}}, {1, 0, -1})});
  ReachConfig cfg;
  cfg.partitions = 4;
  const ReachResult r = reach(net, box_spec(Eigen::Vector2d(0.5, 0.5), 0.5), cfg);
  CHECK(r.set_count == 4);
  CHECK(r.partitions_done == 4);
  CHECK_FALSE(r.truncated);
  for (const auto& s : r.sets)
    for (Eigen::Index v = 0; v < s.vertex_count(); ++v)
      CHECK((forward(net, s.region_vertices().row(v).transpose()) - s.vertices().row(v).transpose()).norm() < 1e-12);
}

TEST_CASE("two-neuron ReLU network on a box around the origin") {
  const Network net(2, {dense({{1, 0}, {0, 1}}, {0, 0}), ReluLayer{2}});
  const ReachResult r = reach(net, box_spec(Eigen::Vector2d(0, 0), 1.0), {});
  CHECK(r.set_count == 4);
  CHECK(r.splits >= 2);
}

TEST_CASE("exact reach is sound and every vertex is realized") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 4; ++trial) {
    const Network net = oracle::random_net(rng, {3, {4, 3}, trial % 2 == 1, 2});
    const InputSpec spec = box_spec(Eigen::Vector3d(0.1, -0.2, 0.3), 0.8);
    ReachConfig cfg;
    cfg.partitions = 1 + trial % 3;
    const ReachResult r = reach(net, spec, cfg);
    for (const auto& s : r.sets)
      for (Eigen::Index v = 0; v < s.vertex_count(); ++v)
        CHECK((forward(net, s.region_vertices().row(v).transpose()) - s.vertices().row(v).transpose())
                  .cwiseAbs()
                  .maxCoeff() < 1e-6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 300; ++i) {
      Eigen::VectorXd x = spec.baseline;
      for (auto& c : x) c += 0.8 * u(rng);
      CHECK(oracle::covered(r.sets, x, forward(net, x)));
    }
  }
}

TEST_CASE("fast mode") {
  std::mt19937_64 rng(23);
  const Network net = oracle::random_net(rng, {3, {5, 5}, false, 3});
  const InputSpec spec = box_spec(Eigen::Vector3d(0, 0, 0), 1.0);
  const ReachResult exact = reach(net, spec, {});
  ReachConfig fast;
  fast.mode = ReachMode::fast;
  fast.relaxation = 1.0;
  CHECK(oracle::same_vertex_multiset(reach(net, spec, fast).sets, exact.sets));
  fast.relaxation = 0.2;
  const ReachResult partial = reach(net, spec, fast);
  CHECK(partial.set_count <= exact.set_count);
  CHECK(partial.set_count >= 1);
  for (const auto& s : partial.sets)
    for (Eigen::Index v = 0; v < s.vertex_count(); ++v) {
      const Eigen::VectorXd x = s.region_vertices().row(v).transpose();
      CHECK(oracle::covered(exact.sets, x, s.vertices().row(v).transpose()));
    }
}

TEST_CASE("threads do not change the result") {
  std::mt19937_64 rng(29);
  const Network net = oracle::random_net(rng, {3, {6, 4}, true, 2});
  const InputSpec spec = box_spec(Eigen::Vector3d(0, 0, 0), 1.0);
  ReachConfig one, many;
  one.partitions = many.partitions = 3;
  many.threads = 3;
  const auto a = reach(net, spec, one), b = reach(net, spec, many);
  REQUIRE(a.set_count == b.set_count);
  for (std::size_t i = 0; i < a.sets.size(); ++i) CHECK(a.sets[i].vertices() == b.sets[i].vertices());
}

TEST_CASE("caps and timeouts truncate") {
  std::mt19937_64 rng(31);
  const Network net = oracle::random_net(rng, {3, {6, 6}, false, 2});
  const InputSpec spec = box_spec(Eigen::Vector3d(0, 0, 0), 1.0);
  ReachConfig cfg;
  cfg.max_sets = 2;
  const ReachResult capped = reach(net, spec, cfg);
  CHECK(capped.truncated);
  CHECK(capped.set_count == capped.sets.size());
  cfg.max_sets = 5'000'000;
  cfg.timeout_s = 1e-9;
  CHECK(reach(net, spec, cfg).truncated);
  cfg.relaxation = 2.0;
  CHECK_THROWS_AS(reach(net, spec, cfg), std::invalid_argument);
}

TEST_CASE("constraint parsing") {
  const std::vector<std::string> labels{"cat", "dog", "bird"};
  Constraint c = parse_constraint("1-0>=0", labels);
  CHECK(c.normal == Eigen::Vector3d(-1, 1, 0));
  CHECK(c.offset == 0.0);
  c = parse_constraint(" 2*cat - bird <= 1.5 ", labels);
  CHECK(c.normal == Eigen::Vector3d(-2, 0, 1));
  CHECK(c.offset == 1.5);
  c = parse_constraint("y2>=-0.25", labels);
  CHECK(c.normal == Eigen::Vector3d(0, 0, 1));
  CHECK(c.offset == 0.25);
  CHECK_THROWS_AS(parse_constraint("3>=0", labels), std::invalid_argument);
  CHECK_THROWS_AS(parse_constraint("0-1", labels), std::invalid_argument);
  CHECK_THROWS_AS(parse_constraint("0>=x", labels), std::invalid_argument);
  CHECK_THROWS_AS(parse_constraint("0-0>=1", labels), std::invalid_argument);
}

TEST_CASE("backtracking") {
  const Network net = tent();
  const ReachResult r = reach(net, box_spec(Eigen::VectorXd::Constant(1, 1.0), 2.0), {});
  REQUIRE(r.set_count == 3);  // x < 0, 0 <= x <= 1, x > 1

  const std::vector<Constraint> none;
  const auto full = backtrack(r.sets[0], none);
  REQUIRE(full);
  CHECK(full->vertices() == r.sets[0].region_vertices());

  const std::vector<Constraint> impossible{parse_constraint("0>=5", net.labels())};
  for (const auto& s : r.sets) CHECK_FALSE(backtrack(s, impossible));

  const std::vector<Constraint> high{parse_constraint("0>=0.5", net.labels())};
  std::vector<double> endpoints;
  for (const auto& s : r.sets) {
    const auto region = backtrack(s, high);
    if (!region) continue;
    for (Eigen::Index v = 0; v < region->vertex_count(); ++v) {
      const double x = region->vertices()(v, 0);
      CHECK(forward(net, Eigen::VectorXd::Constant(1, x))(0) >= 0.5 - 1e-9);
      endpoints.push_back(x);
    }
  }
  // y >= 0.5 exactly on [0.5, 1.5].
  CHECK(*std::min_element(endpoints.begin(), endpoints.end()) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(*std::max_element(endpoints.begin(), endpoints.end()) == doctest::Approx(1.5).epsilon(1e-12));
}
