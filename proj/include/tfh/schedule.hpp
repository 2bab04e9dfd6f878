#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tfh {

/// Piecewise-constant, right-continuous control signal. Before the first
/// breakpoint the first value applies; after the last, the last value holds.
class ControlSchedule {
 public:
  ControlSchedule() = default;
  ControlSchedule(std::vector<double> times, std::vector<std::vector<double>> values);
  static ControlSchedule constant(std::vector<double> u);

  std::size_t dim() const noexcept { return values_.empty() ? 0 : values_.front().size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::span<const double> at(double t) const;
  /// First breakpoint strictly after t, or +inf.
  double next_breakpoint(double t) const;
  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<std::vector<double>>& values() const noexcept { return values_; }

 private:
  std::vector<double> times_;
  std::vector<std::vector<double>> values_;
};

}  // namespace tfh
