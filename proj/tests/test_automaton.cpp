#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "tfh/automaton.hpp"

using namespace tfh;
using tfh::testing::thermostat;
using tfh::testing::turbo_car;

TEST(HybridRhs, Examples) {
  const auto th = thermostat();
  const std::vector<double> x{15.0};
  EXPECT_DOUBLE_EQ(hybrid_rhs(th, x, 0, {})[0], 2.0);
  EXPECT_DOUBLE_EQ(hybrid_rhs(th, x, 1, {})[0], -3.0);
  const auto car = turbo_car();
  const auto f = hybrid_rhs(car, std::vector<double>{0.0, 12.0}, 1, std::vector<double>{5.0});
  EXPECT_EQ(f, (std::vector<double>{12.0, 15.0}));
  EXPECT_THROW(hybrid_rhs(th, x, 2, {}), std::invalid_argument);
}

TEST(Validate, RejectsInconsistentBounds) {
  auto car = turbo_car();
  car.u_lb = {6.0};
  EXPECT_THROW(car.validate(), std::invalid_argument);
  car = turbo_car();
  car.x_lb = {0.0};
  EXPECT_THROW(car.validate(), std::invalid_argument);
}

TEST(Oracle, ShortHorizonHasNoJump) {
  const auto traj = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 1.25);
  EXPECT_TRUE(traj.jumps.empty());
  ASSERT_EQ(traj.segments.size(), 1u);
  EXPECT_NEAR(traj.state_at(1.25)[0], 25.0 - 10.0 * std::exp(-0.25), 1e-8);
}

TEST(Oracle, FirstJumpAtFiveLnTwo) {
  const auto traj = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 5.0);
  ASSERT_FALSE(traj.jumps.empty());
  EXPECT_NEAR(traj.jumps[0].t, 5.0 * std::log(2.0), 1e-6);
  EXPECT_EQ(traj.jumps[0].direction, JumpDirection::Rise);
  EXPECT_NEAR(traj.jumps[0].x[0], 20.0, 1e-9);
}

TEST(Oracle, LimitCycleBetweenEighteenAndTwenty) {
  OracleOptions opts;
  const auto traj = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 40.0, opts);
  ASSERT_GE(traj.jumps.size(), 10u);
  for (std::size_t k = 0; k < traj.jumps.size(); ++k) {
    const auto& ev = traj.jumps[k];
    const double psi = 0.5 * (ev.x[0] - 18.0);
    if (ev.direction == JumpDirection::Rise) {
      EXPECT_LE(std::abs(psi - 1.0), opts.tol_event);
    } else {
      EXPECT_LE(std::abs(psi), opts.tol_event);
    }
    EXPECT_EQ(ev.direction, k % 2 == 0 ? JumpDirection::Rise : JumpDirection::Fall);
  }
  // Closed-form period of the loop: 5 ln(7/5) heating plus 5 ln(10/9) cooling.
  const double period = 5.0 * std::log(7.0 / 5.0) + 5.0 * std::log(10.0 / 9.0);
  EXPECT_NEAR(traj.jumps[2].t - traj.jumps[0].t, period, 1e-7);
  for (std::size_t k = 1; k < traj.segments.size(); ++k)
    for (const auto& x : traj.segments[k].states) {
      EXPECT_GE(x[0], 18.0 - 1e-8);
      EXPECT_LE(x[0], 20.0 + 1e-8);
    }
}

TEST(Oracle, StateIsContinuousAcrossJumps) {
  const auto traj = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 20.0);
  for (std::size_t k = 1; k < traj.segments.size(); ++k) {
    const auto& prev = traj.segments[k - 1].states.back();
    const auto& next = traj.segments[k].states.front();
    EXPECT_LE(std::abs(prev[0] - next[0]), 1e-12);
    EXPECT_NE(traj.segments[k - 1].w, traj.segments[k].w);
  }
}

TEST(Oracle, HalfToleranceChangesLittle) {
  OracleOptions a;
  OracleOptions b;
  b.tol = {a.tol.rtol / 2, a.tol.atol / 2};
  const auto ta = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 20.0, a);
  const auto tb = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 20.0, b);
  EXPECT_LE(std::abs(ta.state_at(20.0)[0] - tb.state_at(20.0)[0]), 10 * a.tol.rtol * 20.0);
}

TEST(Oracle, InitializationChecks) {
  const auto th = thermostat();
  EXPECT_THROW(simulate_oracle(th, std::vector<double>{15.0}, 2, {}, 1.0), InitializationError);
  EXPECT_THROW(simulate_oracle(th, std::vector<double>{21.0}, 0, {}, 1.0), InitializationError);
  EXPECT_THROW(simulate_oracle(th, std::vector<double>{17.0}, 1, {}, 1.0), InitializationError);
  EXPECT_TRUE(simulate_oracle(th, std::vector<double>{15.0}, 0, {}, 0.0).empty());
  // Exactly on the guard: jump before integrating.
  const auto traj = simulate_oracle(th, std::vector<double>{20.0}, 0, {}, 0.5);
  ASSERT_FALSE(traj.jumps.empty());
  EXPECT_DOUBLE_EQ(traj.jumps[0].t, 0.0);
  EXPECT_EQ(traj.branch_at(0.1), 1);
}

TEST(Oracle, CarSwitchesAtThresholds) {
  const auto car = turbo_car();
  const ControlSchedule u({0.0, 4.0}, {{5.0}, {-5.0}});
  const auto traj = simulate_oracle(car, std::vector<double>{0.0, 0.0}, 0, u, 8.0);
  ASSERT_EQ(traj.jumps.size(), 2u);
  EXPECT_NEAR(traj.jumps[0].t, 3.0, 1e-8);
  EXPECT_NEAR(traj.jumps[0].x[1], 15.0, 1e-8);
  // v = 15 + 15 (t - 3) up to t = 4, then -15 per second down to 10.
  EXPECT_NEAR(traj.jumps[1].t, 4.0 + 20.0 / 15.0, 1e-8);
  EXPECT_NEAR(traj.state_at(8.0)[1], 10.0 - 5.0 * (8.0 - 4.0 - 20.0 / 15.0), 1e-7);
}

TEST(Oracle, EventCapRaisesZeno) {
  OracleOptions opts;
  opts.max_events = 5;
  EXPECT_THROW(simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 100.0, opts), ZenoError);
}

TEST(WriteCsv, ColumnsAndEventRows) {
  const auto traj = simulate_oracle(thermostat(), std::vector<double>{15.0}, 0, {}, 5.0);
  std::ostringstream os;
  const std::vector<std::string> names{"x"};
  write_csv(os, traj, names);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,x,w,event");
  int events = 0;
  while (std::getline(is, line))
    if (line.size() > 2 && line.substr(line.size() - 2) == ",1") ++events;
  EXPECT_EQ(events, static_cast<int>(traj.jumps.size()));
  std::ostringstream ev;
  write_events_csv(ev, traj, names);
  EXPECT_NE(ev.str().find("0->1"), std::string::npos);
}
