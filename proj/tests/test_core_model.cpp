#include "oracles.hpp"

#include "wgfe/core_model.hpp"
#include "wgfe/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace wgfe;

namespace {

Matrix mat(int r, int c, std::initializer_list<double> v) {
  Matrix m(r, c);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

}  // namespace

TEST_CASE("panel validation") {
  CHECK_THROWS_AS(PanelDataset(Matrix(0, 2), {}), Error);
  Matrix y = mat(2, 2, {1, 2, 3, 4});
  y(1, 1) = std::nan("");
  CHECK_THROWS_AS(PanelDataset(y, {}), Error);
  CHECK_THROWS_AS(PanelDataset(mat(2, 2, {1, 2, 3, 4}), {Matrix::Zero(2, 3)}), Error);
  const PanelDataset d(mat(2, 2, {1, 2, 3, 4}), {});
  CHECK(d.unit_labels() == std::vector<std::string>{"1", "2"});
  CHECK(d.n_covariates() == 0);
  CHECK_THROWS_AS(GroupAssignment({0, 2}, 2), Error);
}

TEST_CASE("within-group means") {
  const PanelDataset d(mat(2, 2, {1, 3, 3, 5}), {});
  const GroupMeans one = within_group_means(d, GroupAssignment({0, 0}, 1));
  CHECK(one.outcomes == mat(1, 2, {2, 4}));
  const GroupMeans two = within_group_means(d, GroupAssignment({0, 1}, 2));
  CHECK(two.outcomes == mat(2, 2, {1, 3, 3, 5}));

  const GroupMeans gap = within_group_means(d, GroupAssignment({0, 0}, 2));
  CHECK(gap.empty_groups == std::vector<int>{1});
  CHECK(std::isnan(gap.outcomes(1, 0)));

  std::mt19937_64 rng(11);
  const PanelDataset r = oracle::random_panel(6, 2, 1, rng);
  const std::vector<int> labels{0, 2, 1, 2, 0, 1};
  const GroupMeans m = within_group_means(r, GroupAssignment(labels, 3));
  for (int g = 0; g < 3; ++g) {
    for (int t = 0; t < 2; ++t) {
      double sy = 0.0, sx = 0.0;
      int c = 0;
      for (int i = 0; i < 6; ++i) {
        if (labels[static_cast<std::size_t>(i)] != g) continue;
        sy += r.outcomes()(i, t);
        sx += r.covariate(0)(i, t);
        ++c;
      }
      CHECK(m.outcomes(g, t) == doctest::Approx(sy / c).epsilon(1e-15));
      CHECK(m.covariates[0](g, t) == doctest::Approx(sx / c).epsilon(1e-15));
    }
  }
}

TEST_CASE("group_ssr and objectives") {
  // Residuals {1,1,1,3} in one group of 2 units x 2 periods.
  const PanelDataset d(mat(2, 2, {1, 1, 1, 3}), {});
  const Vector q = group_ssr(d, Vector(), Matrix::Zero(1, 2), GroupAssignment({0, 0}, 1));
  CHECK(q(0) == doctest::Approx(3.0));

  const PanelDataset small(mat(2, 1, {1, -1}), {});
  const GroupAssignment g1({0, 0}, 1);
  CHECK(wgfe_objective(small, Vector(), Matrix::Zero(1, 1), g1).value == doctest::Approx(1.0));
  CHECK(gfe_objective(small, Vector(), Matrix::Zero(1, 1), g1).value == doctest::Approx(1.0));

  CHECK_THROWS_AS(group_ssr(small, Vector(), Matrix::Zero(2, 1), GroupAssignment({0, 0}, 2)), EmptyGroupError);
  CHECK_THROWS_AS(wgfe_objective(small, Vector(), Matrix::Zero(2, 1), GroupAssignment({0, 0}, 2)), EmptyGroupError);
  // Empty groups contribute nothing to the pooled criterion.
  CHECK(gfe_objective(small, Vector(), Matrix::Zero(2, 1), GroupAssignment({0, 0}, 2)).value == doctest::Approx(1.0));

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const PanelDataset r = oracle::random_panel(5, 3, 2, rng);
    std::vector<int> labels{0, 1, 0, 1, 1};
    std::shuffle(labels.begin(), labels.end(), rng);
    const Vector theta = vec({0.3, -1.2});
    Matrix alpha = Matrix::Random(2, 3);
    const GroupAssignment gamma(labels, 2);
    const Vector ours = group_ssr(r, theta, alpha, gamma);
    const Vector ref = oracle::group_q(r, theta, alpha, labels, 2);
    for (int g = 0; g < 2; ++g) CHECK(ours(g) == doctest::Approx(ref(g)).epsilon(1e-12));
    CHECK(wgfe_objective(r, theta, alpha, gamma).value ==
          doctest::Approx(oracle::wgfe_value(r, theta, alpha, labels, 2)).epsilon(1e-12));
    CHECK(gfe_objective(r, theta, alpha, gamma).value ==
          doctest::Approx(oracle::gfe_value(r, theta, alpha, labels)).epsilon(1e-12));
  }
}

TEST_CASE("perfect fit gives zero criteria") {
  const PanelDataset d(mat(2, 2, {1, 2, 5, 6}), {});
  const GroupAssignment gamma({0, 1}, 2);
  const Matrix alpha = mat(2, 2, {1, 2, 5, 6});
  CHECK(group_ssr(d, Vector(), alpha, gamma).isZero());
  CHECK(wgfe_objective(d, Vector(), alpha, gamma).value == 0.0);
  CHECK(gfe_objective(d, Vector(), alpha, gamma).value == 0.0);
}

TEST_CASE("Jensen bound and its equality case") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 3 + rep % 10;
    const int t = 1 + rep % 5;
    const int groups = 1 + rep % 3;
    const PanelDataset r = oracle::random_panel(n, t, 1, rng);
    const std::vector<int> labels = oracle::random_labels(n, groups, rng);
    const GroupAssignment gamma(labels, groups);
    if (gamma.has_empty_group()) continue;
    const Vector theta = vec({0.5});
    const Matrix alpha = Matrix::Random(groups, t);
    const double w = wgfe_objective(r, theta, alpha, gamma).value;
    const double g = gfe_objective(r, theta, alpha, gamma).value;
    CHECK(w * w <= g * (1.0 + 1e-12));
  }
  // Both groups have unit squared residuals: equal Q_g.
  const PanelDataset d(mat(4, 2, {1, -1, -1, 1, 1, 1, 1, -1}), {});
  const GroupAssignment gamma({0, 0, 1, 1}, 2);
  const Matrix alpha = Matrix::Zero(2, 2);
  const Vector q = group_ssr(d, Vector(), alpha, gamma);
  CHECK(q(0) == q(1));
  const double w = wgfe_objective(d, Vector(), alpha, gamma).value;
  CHECK(w * w == doctest::Approx(gfe_objective(d, Vector(), alpha, gamma).value).epsilon(1e-12));
}

TEST_CASE("assignment rules") {
  const PanelDataset d(mat(1, 2, {0, 0}), {});
  const Matrix alpha = mat(2, 2, {0, 0, 2, 2});
  CHECK(wgfe_assign(d, Vector(), alpha, vec({1, 1}))[0] == 0);

  const PanelDataset e(mat(1, 2, {0.9, 0}), {});
  const Matrix a2 = mat(2, 2, {0, 0, 2, 0});
  CHECK(wgfe_assign(e, Vector(), a2, vec({2, 0.9}))[0] == 1);
  CHECK(gfe_assign(e, Vector(), a2)[0] == 0);
  CHECK(wgfe_assign(e, Vector(), a2, vec({2, 0.9}), AssignmentRule::PerPeriod)[0] == 1);

  // Equidistant: lowest index.
  const PanelDataset mid(mat(1, 1, {1}), {});
  CHECK(gfe_assign(mid, Vector(), mat(2, 1, {0, 2}))[0] == 0);
  CHECK(gfe_assign(mid, Vector(), mat(2, 1, {1, 5}))[0] == 0);
  CHECK(gfe_assign(mid, Vector(), mat(2, 1, {5, 1}))[0] == 1);

  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    const PanelDataset r = oracle::random_panel(12, 4, 1, rng);
    const Vector theta = vec({0.2});
    const Matrix alpha = Matrix::Random(3, 4);
    const double s = 0.3 + 0.1 * rep;
    CHECK(wgfe_assign(r, theta, alpha, Vector::Constant(3, s)) == gfe_assign(r, theta, alpha));
    const Vector sigma = vec({0.5, 1.5, 1.0});
    const GroupAssignment w = wgfe_assign(r, theta, alpha, sigma);
    // The per-period form shares the argmin.
    CHECK(w == wgfe_assign(r, theta, alpha, sigma, AssignmentRule::PerPeriod));
    const GroupAssignment g = gfe_assign(r, theta, alpha);
    for (int i = 0; i < 12; ++i) {
      double best = 1e300, best_w = 1e300;
      int arg = -1, arg_w = -1;
      for (int h = 0; h < 3; ++h) {
        double dist = 0.0;
        for (int t = 0; t < 4; ++t) {
          const double v = r.outcomes()(i, t) - r.covariate(0)(i, t) * 0.2 - alpha(h, t);
          dist += v * v;
        }
        if (dist < best) { best = dist; arg = h; }
        const double sw = dist / sigma(h) + sigma(h);
        if (sw < best_w) { best_w = sw; arg_w = h; }
      }
      CHECK(g[i] == arg);
      CHECK(w[i] == arg_w);
    }
  }
}

TEST_CASE("scale covariance of assignments") {
  std::mt19937_64 rng(21);
  const PanelDataset r = oracle::random_panel(15, 3, 0, rng);
  const Matrix alpha = Matrix::Random(3, 3);
  const GroupAssignment gamma = gfe_assign(r, Vector(), alpha);
  if (gamma.has_empty_group()) return;
  const Vector sigma = group_ssr(r, Vector(), alpha, gamma).cwiseSqrt();
  const double c = 3.7;
  const PanelDataset scaled(r.outcomes() * c, {});
  const Vector sigma_c = group_ssr(scaled, Vector(), alpha * c, gamma).cwiseSqrt();
  for (int g = 0; g < 3; ++g) CHECK(sigma_c(g) == doctest::Approx(c * sigma(g)).epsilon(1e-12));
  CHECK(gfe_assign(scaled, Vector(), alpha * c) == gamma);
  CHECK(wgfe_assign(scaled, Vector(), alpha * c, sigma_c) == wgfe_assign(r, Vector(), alpha, sigma));
}

TEST_CASE("permutation equivariance of objectives") {
  std::mt19937_64 rng(4);
  const PanelDataset r = oracle::random_panel(9, 3, 1, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 2, 1, 0};
  const Vector theta = vec({-0.4});
  const Matrix alpha = Matrix::Random(3, 3);
  const std::vector<int> perm{2, 0, 1};
  std::vector<int> relabeled(labels.size());
  Matrix alpha_p(3, 3);
  for (std::size_t i = 0; i < labels.size(); ++i) relabeled[i] = perm[static_cast<std::size_t>(labels[i])];
  for (int g = 0; g < 3; ++g) alpha_p.row(perm[static_cast<std::size_t>(g)]) = alpha.row(g);
  const GroupAssignment a(labels, 3), b(relabeled, 3);
  CHECK(wgfe_objective(r, theta, alpha, a).value == doctest::Approx(wgfe_objective(r, theta, alpha_p, b).value).epsilon(1e-14));
  CHECK(gfe_objective(r, theta, alpha, a).value == doctest::Approx(gfe_objective(r, theta, alpha_p, b).value).epsilon(1e-14));
  const Vector qa = group_ssr(r, theta, alpha, a);
  const Vector qb = group_ssr(r, theta, alpha_p, b);
  for (int g = 0; g < 3; ++g) CHECK(qb(perm[static_cast<std::size_t>(g)]) == doctest::Approx(qa(g)));
}

TEST_CASE("update_alpha and gfe_update") {
  std::mt19937_64 rng(17);
  const PanelDataset r = oracle::random_panel(10, 4, 2, rng);
  const std::vector<int> labels{0, 1, 1, 0, 2, 2, 0, 1, 2, 0};
  const GroupAssignment gamma(labels, 3);
  const Vector theta = vec({0.7, -0.1});
  const Matrix alpha = update_alpha(r, theta, gamma);
  // First-order condition: mean residual per (g, t) is zero.
  for (int g = 0; g < 3; ++g) {
    for (int t = 0; t < 4; ++t) {
      double s = 0.0;
      for (int i = 0; i < 10; ++i) {
        if (labels[static_cast<std::size_t>(i)] == g) s += oracle::residual(r, theta, alpha, labels, i, t);
      }
      CHECK(std::abs(s) < 1e-12);
    }
  }
  const PanelDataset no_x(r.outcomes(), {});
  CHECK(update_alpha(no_x, Vector(), gamma).isApprox(within_group_means(no_x, gamma).outcomes));

  const SlopeUpdate u = gfe_update(r, gamma);
  const Vector ref = oracle::dummy_ols(r, labels, 3);
  CHECK((u.theta - ref).norm() < 1e-10 * (1.0 + ref.norm()));
  CHECK(u.alpha.isApprox(update_alpha(r, u.theta, gamma)));

  // Zero-noise recovery.
  Matrix y(10, 4);
  const Vector theta0 = vec({1.5, -0.5});
  const Matrix alpha0 = Matrix::Random(3, 4);
  for (int i = 0; i < 10; ++i) {
    for (int t = 0; t < 4; ++t) {
      y(i, t) = alpha0(labels[static_cast<std::size_t>(i)], t) + theta0(0) * r.covariate(0)(i, t) +
                theta0(1) * r.covariate(1)(i, t);
    }
  }
  const PanelDataset exact(y, r.covariates());
  const SlopeUpdate e = gfe_update(exact, gamma);
  CHECK((e.theta - theta0).norm() < 1e-10);
  CHECK((e.alpha - alpha0).norm() < 1e-10);

  // x constant within every group-period cell has no within variation.
  const PanelDataset flat(r.outcomes(), {Matrix::Ones(10, 4)});
  CHECK_THROWS_AS(gfe_update(flat, gamma), Error);
  try {
    gfe_update(flat, gamma);
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::SingularDesign);
  }
}

TEST_CASE("G = 1, T = 1 reduces to cross-sectional OLS") {
  std::mt19937_64 rng(8);
  const PanelDataset r = oracle::random_panel(20, 1, 1, rng);
  const SlopeUpdate u = gfe_update(r, GroupAssignment(std::vector<int>(20, 0), 1));
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(r.covariate(0).data(), 20);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(r.outcomes().data(), 20);
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  CHECK(u.theta(0) == doctest::Approx(xc.dot(yc) / xc.dot(xc)).epsilon(1e-12));
}
