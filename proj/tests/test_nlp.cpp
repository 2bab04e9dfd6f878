#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "qp_oracle.hpp"
#include "tfh/nlp.hpp"

using namespace tfh;
using namespace tfh::nlp;

TEST(Nlp, InteriorUnconstrainedOptimum) {
  Nlp p;
  const Expr v = p.add_variable("v", 0.0, 10.0);
  p.objective = pow(v - 3.0, 2);
  const auto s = solve(p, std::vector<double>{0.5});
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.v[0], 3.0, 1e-8);
  EXPECT_LE(s.stationarity, 1e-8);
}

TEST(Nlp, CircleEqualityFromLagrangeConditions) {
  Nlp p;
  const Expr a = p.add_variable("a");
  const Expr b = p.add_variable("b");
  p.objective = a + b;
  p.add_equality(a * a + b * b, 1.0);
  const auto s = solve(p, std::vector<double>{-0.5, -0.6});
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.v[0], -std::sqrt(0.5), 1e-8);
  EXPECT_NEAR(s.v[1], -std::sqrt(0.5), 1e-8);
  // 1 + 2 lambda a = 0 at a = -1/sqrt(2).
  EXPECT_NEAR(s.lambda[0], 1.0 / std::sqrt(2.0), 1e-8);
}

TEST(Nlp, ActiveBoundLp) {
  Nlp p;
  const Expr v = p.add_variable("v", 0.0, 2.0);
  p.objective = -v;
  const auto s = solve(p, std::vector<double>{1.0});
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.v[0], 2.0, 1e-8);
  EXPECT_NEAR(s.z_ub[0], 1.0, 1e-8);
  EXPECT_NEAR(s.z_lb[0], 0.0, 1e-8);
}

TEST(Nlp, ActiveInequalityConstraintMultiplier) {
  Nlp p;
  const Expr a = p.add_variable("a");
  const Expr b = p.add_variable("b");
  p.objective = pow(a - 2.0, 2) + pow(b - 2.0, 2);
  p.add_constraint(a + b, -kInf, 2.0);
  const auto s = solve(p, std::vector<double>{0.0, 0.0});
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.v[0], 1.0, 1e-8);
  EXPECT_NEAR(s.v[1], 1.0, 1e-8);
  EXPECT_NEAR(s.lambda[0], 2.0, 1e-7);
}

TEST(Nlp, FixedVariablesStayPut) {
  Nlp p;
  const Expr a = p.add_variable("a", 1.5, 1.5);
  const Expr b = p.add_variable("b", -kInf, kInf);
  p.objective = pow(b - a, 2) + a * b;
  const auto s = solve(p, std::vector<double>{0.0, 0.0});
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_EQ(s.v[0], 1.5);
  EXPECT_NEAR(s.v[1], 1.5 - 0.75, 1e-8);
}

TEST(Nlp, NonconvexObjectiveNeedsRegularization) {
  // Starting at the saddle of a double well; inertia correction must turn
  // the step into a descent direction.
  Nlp p;
  const Expr a = p.add_variable("a", -3.0, 3.0);
  p.objective = pow(a, 4) - 2.0 * pow(a, 2) + 0.1 * a;
  const auto s = solve(p, std::vector<double>{0.0});
  ASSERT_TRUE(s.ok()) << s.message;
  const double g = 4 * std::pow(s.v[0], 3) - 4 * s.v[0] + 0.1;
  EXPECT_NEAR(g, 0.0, 1e-8);
  EXPECT_GT(12 * s.v[0] * s.v[0] - 4, 0.0);
}

TEST(Nlp, InfeasibleProblemIsDetected) {
  Nlp p;
  const Expr a = p.add_variable("a");
  const Expr b = p.add_variable("b");
  p.objective = a + b;
  p.add_equality(a * a + b * b, -1.0);
  Options o;
  o.max_iter = 500;
  const auto s = solve(p, std::vector<double>{0.3, 0.2}, o);
  EXPECT_FALSE(s.ok());
  EXPECT_NE(s.status, Status::Solved);
  EXPECT_GT(s.feasibility, 0.5);
}

TEST(Nlp, IterationLimitIsReported) {
  Nlp p;
  const Expr a = p.add_variable("a");
  const Expr b = p.add_variable("b");
  p.objective = 100.0 * pow(b - a * a, 2) + pow(1.0 - a, 2);
  Options o;
  o.max_iter = 2;
  const auto s = solve(p, std::vector<double>{-1.2, 1.0}, o);
  EXPECT_EQ(s.status, Status::MaxIter);
  o.max_iter = 200;
  const auto t = solve(p, std::vector<double>{-1.2, 1.0}, o);
  ASSERT_TRUE(t.ok()) << t.message;
  EXPECT_NEAR(t.v[0], 1.0, 1e-7);
}

TEST(Nlp, ValidationRejectsBadInput) {
  Nlp p;
  p.add_variable("a", 1.0, 0.0);
  EXPECT_THROW(CompiledNlp{p}, std::invalid_argument);
  Nlp q;
  const Expr a = q.add_variable("a");
  q.objective = a + Expr::variable("ghost", 3);
  EXPECT_THROW(CompiledNlp{q}, std::invalid_argument);
  Nlp r;
  r.add_variable("a");
  EXPECT_THROW(solve(r, std::vector<double>{NAN}), std::invalid_argument);
  EXPECT_THROW(solve(r, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Nlp, SparsityFollowsTheExpressions) {
  Nlp p;
  const Expr a = p.add_variable("a");
  const Expr b = p.add_variable("b");
  const Expr c = p.add_variable("c");
  p.objective = a * b;
  p.add_equality(c * c + a);
  p.add_equality(b);
  const CompiledNlp cn(p);
  EXPECT_EQ(cn.jac_rows(), (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(cn.jac_cols(), (std::vector<std::size_t>{0, 2, 1}));
  // Lagrangian Hessian: (b, a) from the objective and (c, c) from row 0.
  ASSERT_EQ(cn.hess_rows().size(), 2u);
  std::vector<double> h(2);
  cn.hessian(std::vector<double>{1.0, 2.0, 3.0}, 2.0, std::vector<double>{5.0, 7.0}, h);
  for (std::size_t e = 0; e < 2; ++e) {
    if (cn.hess_rows()[e] == 2) EXPECT_DOUBLE_EQ(h[e], 10.0);
    else EXPECT_DOUBLE_EQ(h[e], 2.0);
  }
}

TEST(Nlp, StationarityMatchesIndependentRecomputation) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto qp = tfh::testing::random_qp(rng, 8, 2, 4);
    const Nlp p = tfh::testing::to_nlp(qp);
    const auto s = solve(p, std::vector<double>(8, 0.0));
    ASSERT_TRUE(s.ok()) << s.message;
    // grad phi + J^T lambda computed densely from the QP data.
    Eigen::Map<const Eigen::VectorXd> x(s.v.data(), 8);
    Eigen::VectorXd r = qp.H * x + qp.c;
    for (int j = 0; j < 2; ++j) r += s.lambda[j] * qp.E.row(j).transpose();
    for (int j = 0; j < 4; ++j) r += s.lambda[2 + j] * qp.A.row(j).transpose();
    for (int i = 0; i < 8; ++i) r[i] += -s.z_lb[i] + s.z_ub[i];
    EXPECT_LE(std::abs(r.lpNorm<Eigen::Infinity>() - s.stationarity), 1e-10);
  }
}

TEST(Nlp, RandomQpsMatchActiveSetEnumeration) {
  std::mt19937 rng(1234);
  std::uniform_int_distribution<int> dn(2, 30), dme(0, 3), dmi(1, 8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = dn(rng);
    const int me = std::min(dme(rng), n - 1);
    const int mi = dmi(rng);
    const auto qp = tfh::testing::random_qp(rng, n, me, mi);
    const auto ref = tfh::testing::enumerate_active_sets(qp);
    ASSERT_TRUE(ref.has_value());
    const auto s = solve(tfh::testing::to_nlp(qp), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    ASSERT_TRUE(s.ok()) << trial << ": " << s.message;
    for (int i = 0; i < n; ++i) EXPECT_NEAR(s.v[i], ref->x[i], 1e-6) << trial;
    EXPECT_LE(s.stationarity, 1e-8);
    EXPECT_LE(s.feasibility, 1e-8);
    EXPECT_LE(s.complementarity, 1e-8);
  }
}

TEST(Nlp, WarmStartConvergesFaster) {
  std::mt19937 rng(99);
  const auto qp = tfh::testing::random_qp(rng, 12, 1, 5);
  const CompiledNlp cn(tfh::testing::to_nlp(qp));
  const auto cold = solve(cn, std::vector<double>(12, 0.0));
  ASSERT_TRUE(cold.ok());
  Options o;
  o.mu0 = 1e-6;
  o.bound_push = 1e-8;
  o.bound_frac = 1e-8;
  const WarmStart ws{cold.lambda, cold.z_lb, cold.z_ub};
  const auto warm = solve(cn, cold.v, o, &ws);
  ASSERT_TRUE(warm.ok()) << warm.message;
  EXPECT_LT(warm.iterations, cold.iterations);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(warm.v[i], cold.v[i], 1e-7);
}

TEST(Nlp, IterationLogCsv) {
  const auto path = std::filesystem::temp_directory_path() / "tfh_nlp_log.csv";
  Nlp p;
  const Expr v = p.add_variable("v", 0.0, 10.0);
  p.objective = pow(v - 3.0, 2);
  Options o;
  o.log_csv = path.string();
  const auto s = solve(p, std::vector<double>{0.5}, o);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iter,mu,objective,inf_pr,inf_du,compl,alpha_pr,alpha_du,delta_w,ls");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, s.iterations + 1);
  std::filesystem::remove(path);
}
