#include "oracles.hpp"

#include "wgfe/core_model.hpp"
#include "wgfe/errors.hpp"
#include "wgfe/solvers.hpp"

#include <doctest.h>

#include <cmath>

using namespace wgfe;

namespace {

// Stacked least squares with observation weights w_g (by unit's group).
Vector weighted_dummy_ols(const PanelDataset& d, const std::vector<int>& labels, int groups, const Vector& w) {
  const int n = d.n_units();
  const int t = d.n_periods();
  const int p = d.n_covariates();
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n * t, p + groups * t);
  Eigen::VectorXd y(n * t);
  for (int i = 0; i < n; ++i) {
    const int g = labels[static_cast<std::size_t>(i)];
    const double s = std::sqrt(w(g));
    for (int c = 0; c < t; ++c) {
      const int row = i * t + c;
      y(row) = s * d.outcomes()(i, c);
      for (int k = 0; k < p; ++k) z(row, k) = s * d.covariate(k)(i, c);
      z(row, p + g * t + c) = s;
    }
  }
  return z.colPivHouseholderQr().solve(y).head(p);
}

// Two well separated groups with unequal noise and one covariate.
PanelDataset clustered(int n, int t, double noise, std::uint64_t seed, std::vector<int>* truth = nullptr,
                       double theta = 0.7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix y(n, t), x(n, t);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int g = i % 2;
    labels[static_cast<std::size_t>(i)] = g;
    for (int s = 0; s < t; ++s) {
      x(i, s) = z(rng);
      const double a = g == 0 ? 1.0 + 0.2 * s : -1.0 - 0.1 * s;
      y(i, s) = theta * x(i, s) + a + noise * (g == 0 ? 1.0 : 0.4) * z(rng);
    }
  }
  if (truth) *truth = labels;
  return PanelDataset(y, {x});
}

}  // namespace

TEST_CASE("config validation") {
  std::mt19937_64 rng(1);
  const PanelDataset d = oracle::random_panel(6, 3, 1, rng);
  SolverConfig c;
  c.n_groups = 7;
  CHECK_THROWS_AS(c.validate(d), Error);
  c.n_groups = 0;
  CHECK_THROWS_AS(c.validate(d), Error);
  c = SolverConfig{};
  c.n_restarts = 0;
  CHECK_THROWS_AS(c.validate(d), Error);
  c = SolverConfig{};
  c.mode = Mode::GGFE;
  CHECK_THROWS_AS(lloyd(d, c, GroupParameters{}), Error);
}

TEST_CASE("theta fixed point solves the weighted normal equations") {
  std::mt19937_64 rng(23);
  SolverConfig c;
  for (int rep = 0; rep < 20; ++rep) {
    const int groups = 2 + rep % 3;
    const PanelDataset d = oracle::random_panel(12, 4, 2, rng);
    std::vector<int> labels = oracle::random_labels(12, groups, rng);
    for (int k = 0; k < 2 * groups; ++k) labels[static_cast<std::size_t>(k)] = k % groups;
    const GroupAssignment gamma(labels, groups);
    const FixedPointResult fp = solve_theta_fixed_point(d, gamma, Vector::Zero(2), c);
    CHECK(fp.converged);
    const Vector q = oracle::group_q(d, fp.theta, fp.alpha, labels, groups);
    for (int g = 0; g < groups; ++g) CHECK(fp.sigma(g) == doctest::Approx(std::sqrt(q(g))).epsilon(1e-12));
    const Vector w = q.cwiseSqrt().cwiseInverse();
    const Vector ref = weighted_dummy_ols(d, labels, groups, w);
    CHECK((fp.theta - ref).lpNorm<Eigen::Infinity>() <= 1e-7 * (1.0 + ref.lpNorm<Eigen::Infinity>()));
    CHECK(fp.alpha.isApprox(oracle::profiled_alpha(d, fp.theta, labels, groups), 1e-12));
  }
}

TEST_CASE("fixed point minimizes the profiled criterion") {
  std::mt19937_64 rng(41);
  SolverConfig c;
  for (int rep = 0; rep < 10; ++rep) {
    const PanelDataset d = oracle::random_panel(10, 3, 1, rng);
    std::vector<int> labels = oracle::random_labels(10, 2, rng);
    labels[0] = 0;
    labels[1] = 1;
    double theta_ref = 0.0;
    const double best = oracle::partition_minimum(d, labels, 2, true, &theta_ref);
    const EstimationResult r = score_partition(d, GroupAssignment(labels, 2), c);
    CHECK(r.objective == doctest::Approx(best).epsilon(1e-10));
    CHECK(r.objective >= best - 1e-12 * best);
    CHECK(r.params.theta(0) == doctest::Approx(theta_ref).epsilon(1e-5));
  }
}

TEST_CASE("equal group noise levels reduce the weighted update to GFE") {
  // Both groups have identical residual profiles up to the group effects, so
  // the weights are equal at every iterate.
  Matrix y(4, 3), x(4, 3);
  x << 1, 2, 0, 0, 1, 3, 1, 2, 0, 0, 1, 3;
  const Matrix e = (Matrix(4, 3) << 0.3, -0.2, 0.1, -0.3, 0.2, -0.1, 0.3, -0.2, 0.1, -0.3, 0.2, -0.1).finished();
  for (int i = 0; i < 4; ++i) {
    for (int s = 0; s < 3; ++s) y(i, s) = 0.5 * x(i, s) + (i < 2 ? 1.0 : 5.0) + e(i, s);
  }
  const PanelDataset d(y, {x});
  const GroupAssignment gamma({0, 0, 1, 1}, 2);
  SolverConfig c;
  const EstimationResult w = score_partition(d, gamma, c);
  c.mode = Mode::GFE;
  const EstimationResult g = score_partition(d, gamma, c);
  CHECK(w.params.sigma(0) == doctest::Approx(w.params.sigma(1)).epsilon(1e-12));
  CHECK(w.params.theta(0) == doctest::Approx(g.params.theta(0)).epsilon(1e-10));
}

TEST_CASE("zero-noise data recover theta exactly") {
  std::vector<int> truth;
  const PanelDataset d = clustered(20, 5, 0.0, 3, &truth);
  SolverConfig c;
  c.n_restarts = 5;
  for (Mode m : {Mode::WGFE, Mode::GFE}) {
    c.mode = m;
    const EstimationResult r = multi_start(d, c);
    CHECK(r.params.theta(0) == doctest::Approx(0.7).epsilon(1e-8));
    CHECK(r.objective <= 1e-7);
    for (int i = 1; i < 20; ++i) CHECK((r.assignment[i] == r.assignment[0]) == (truth[i] == truth[0]));
  }
}

TEST_CASE("Lloyd trace is monotone under the majorizing rule and for GFE") {
  SolverConfig c;
  c.assignment_rule = AssignmentRule::ScaledPenalty;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PanelDataset d = clustered(30, 4, 1.5, 100 + seed);
    for (Mode m : {Mode::WGFE, Mode::GFE}) {
      c.mode = m;
      c.init_strategy = InitStrategy::RandomDraw;
      Rng rng = substream(seed, 0);
      const EstimationResult r = lloyd(d, c, initialize(d, c, rng));
      for (std::size_t k = 1; k < r.trace.size(); ++k) CHECK(r.trace[k] <= r.trace[k - 1] + 1e-12);
    }
  }
}

TEST_CASE("Lloyd never returns a higher objective than its first update") {
  SolverConfig c;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PanelDataset d = clustered(30, 4, 1.5, 200 + seed);
    Rng rng = substream(seed, 0);
    const EstimationResult r = lloyd(d, c, initialize(d, c, rng));
    REQUIRE(!r.trace.empty());
    CHECK(r.objective <= r.trace.front() + 1e-10);
    CHECK(r.objective == doctest::Approx(r.trace.back()));
  }
}

TEST_CASE("separated noisy groups are recovered") {
  std::vector<int> truth;
  const PanelDataset d = clustered(40, 6, 0.1, 9, &truth);
  SolverConfig c;
  c.n_restarts = 4;
  c.algorithm = SearchAlgorithm::Lloyd;
  const EstimationResult r = multi_start(d, c);
  CHECK(r.converged);
  for (int i = 1; i < 40; ++i) CHECK((r.assignment[i] == r.assignment[0]) == (truth[i] == truth[0]));
  CHECK(r.params.theta(0) == doctest::Approx(0.7).epsilon(0.05));
}

TEST_CASE("one group gives the within estimator with period effects") {
  std::mt19937_64 rng(5);
  const PanelDataset d = oracle::random_panel(15, 4, 2, rng);
  SolverConfig c;
  c.n_groups = 1;
  c.n_restarts = 2;
  c.mode = Mode::GFE;
  const EstimationResult g = multi_start(d, c);
  const Vector ref = oracle::dummy_ols(d, std::vector<int>(15, 0), 1);
  CHECK((g.params.theta - ref).norm() <= 1e-10 * (1.0 + ref.norm()));
  c.mode = Mode::WGFE;
  const EstimationResult w = multi_start(d, c);
  CHECK((w.params.theta - ref).norm() <= 1e-8 * (1.0 + ref.norm()));
  CHECK(w.objective == doctest::Approx(std::sqrt(g.objective)).epsilon(1e-12));
}

TEST_CASE("VNS without neighborhoods is a single Lloyd run") {
  const PanelDataset d = clustered(24, 4, 1.0, 77);
  SolverConfig c;
  c.vns_neigh_max = 0;
  c.vns_iter_max = 1;
  c.seed = 13;
  const EstimationResult v = vns(d, c);
  Rng rng = substream(13, 0);
  const EstimationResult l = lloyd(d, c, initialize(d, c, rng));
  CHECK(v.assignment == l.assignment);
  CHECK(v.objective == l.objective);
}

TEST_CASE("multi_start with one restart equals vns on substream 0") {
  const PanelDataset d = clustered(24, 4, 1.0, 78);
  SolverConfig c;
  c.n_restarts = 1;
  c.seed = 99;
  const EstimationResult m = multi_start(d, c);
  const EstimationResult v = vns(d, c);
  CHECK(m.assignment == v.assignment);
  CHECK(m.objective == v.objective);
  CHECK(m.params.theta == v.params.theta);
}

TEST_CASE("multi_start is deterministic across thread counts") {
  const PanelDataset d = clustered(30, 5, 1.2, 79);
  SolverConfig c;
  c.n_restarts = 8;
  c.algorithm = SearchAlgorithm::Lloyd;
  c.init_strategy = InitStrategy::RandomDraw;
  c.seed = 4;
  c.threads = 1;
  const EstimationResult a = multi_start(d, c);
  c.threads = 4;
  const EstimationResult b = multi_start(d, c);
  CHECK(a.assignment == b.assignment);
  CHECK(a.objective == b.objective);
  CHECK(a.params.theta == b.params.theta);
  CHECK(b.n_restarts_used == 8);
}

TEST_CASE("multi_start never does worse than any single restart") {
  const PanelDataset d = clustered(30, 4, 1.5, 80);
  SolverConfig c;
  c.n_restarts = 6;
  c.algorithm = SearchAlgorithm::Lloyd;
  c.seed = 21;
  const EstimationResult best = multi_start(d, c);
  for (int k = 0; k < 6; ++k) {
    Rng rng = substream(21, static_cast<std::uint64_t>(k));
    CHECK(best.objective <= lloyd(d, c, initialize(d, c, rng)).objective);
  }
}

TEST_CASE("initialization") {
  std::mt19937_64 g(6);
  const PanelDataset d = oracle::random_panel(10, 3, 1, g);
  SolverConfig c;
  c.n_groups = 3;
  Rng a = substream(5, 2), b = substream(5, 2);
  const GroupParameters p1 = initialize(d, c, a);
  const GroupParameters p2 = initialize(d, c, b);
  CHECK(p1.alpha == p2.alpha);
  CHECK(p1.theta.isApprox(pooled_ols(d)));
  CHECK(p1.alpha.rows() == 3);
  CHECK(p1.sigma.minCoeff() >= d.sigma_floor());
  CHECK(p1.weights.sum() == doctest::Approx(1.0));

  c.init_strategy = InitStrategy::RandomDraw;
  Rng r1 = substream(5, 1), r2 = substream(5, 1), r3 = substream(5, 3);
  CHECK(initialize(d, c, r1).theta == initialize(d, c, r2).theta);
  CHECK(initialize(d, c, r1).theta != initialize(d, c, r3).theta);

  c.init_strategy = InitStrategy::Provided;
  c.theta_init = Vector::Constant(1, 0.25);
  Rng r4 = substream(0, 0);
  CHECK(initialize(d, c, r4).theta(0) == 0.25);
}

TEST_CASE("substreams are distinct and reproducible") {
  Rng a = substream(1, 0), b = substream(1, 1), c = substream(2, 0), a2 = substream(1, 0);
  const auto va = a();
  CHECK(va == a2());
  CHECK(va != b());
  CHECK(va != c());
}

TEST_CASE("pooled OLS and two-way FE on exact data") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix y(6, 4), x(6, 4);
  for (int i = 0; i < 6; ++i) {
    for (int s = 0; s < 4; ++s) {
      x(i, s) = z(rng);
      y(i, s) = 2.0 + 1.5 * x(i, s);
    }
  }
  const PanelDataset d(y, {x});
  CHECK(pooled_ols(d)(0) == doctest::Approx(1.5).epsilon(1e-12));
  Matrix y2 = y;
  for (int i = 0; i < 6; ++i) {
    for (int s = 0; s < 4; ++s) y2(i, s) += 0.3 * i - 0.2 * s;
  }
  CHECK(two_way_fe(PanelDataset(y2, {x}))(0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("empty-group policy") {
  // Two identical units cannot populate three groups by nearest assignment.
  const PanelDataset d((Matrix(3, 2) << 0, 0, 0, 0, 5, 5).finished(), {});
  SolverConfig c;
  c.n_groups = 3;
  c.mode = Mode::GFE;
  GroupParameters init;
  init.theta = Vector(0);
  init.alpha = (Matrix(3, 2) << 0, 0, 5, 5, 9, 9).finished();
  init.sigma = Vector::Ones(3);
  const EstimationResult r = lloyd(d, c, init);
  CHECK_FALSE(r.assignment.has_empty_group());
  c.empty_group_policy = EmptyGroupPolicy::Fail;
  CHECK_THROWS_AS(lloyd(d, c, init), EmptyGroupError);
}
