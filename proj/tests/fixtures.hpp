#pragma once

#include <string>
#include <vector>

#include "tfh/automaton.hpp"

namespace tfh::testing {

inline HysteresisAutomaton thermostat() {
  const std::vector<std::string> fa{"-0.2*x + 5"};
  const std::vector<std::string> fb{"-0.2*x"};
  return HysteresisAutomaton::from_strings({"x"}, {}, fa, fb, "0.5*(x - 18)");
}

inline HysteresisAutomaton turbo_car() {
  const std::vector<std::string> fa{"v", "u"};
  const std::vector<std::string> fb{"v", "3*u"};
  auto sys = HysteresisAutomaton::from_strings({"q", "v"}, {"u"}, fa, fb, "(v - 10)/5");
  sys.u_lb = {-5.0};
  sys.u_ub = {5.0};
  sys.x_lb = {-1e20, -25.0};
  sys.x_ub = {1e20, 25.0};
  return sys;
}

}  // namespace tfh::testing
