#include "tfh/schedule.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace tfh {

ControlSchedule::ControlSchedule(std::vector<double> times, std::vector<std::vector<double>> values)
    : times_(std::move(times)), values_(std::move(values)) {
  if (times_.size() != values_.size()) throw std::invalid_argument("control schedule: times/values size mismatch");
  if (values_.empty()) throw std::invalid_argument("control schedule: empty");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1])) throw std::invalid_argument("control schedule: times must increase");
  for (const auto& v : values_)
    if (v.size() != values_.front().size()) throw std::invalid_argument("control schedule: ragged values");
}

ControlSchedule ControlSchedule::constant(std::vector<double> u) { return ControlSchedule({0.0}, {std::move(u)}); }

std::span<const double> ControlSchedule::at(double t) const {
  if (values_.empty()) return {};
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const std::size_t k = it == times_.begin() ? 0 : static_cast<std::size_t>(it - times_.begin()) - 1;
  return values_[k];
}

double ControlSchedule::next_breakpoint(double t) const {
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return it == times_.end() ? std::numeric_limits<double>::infinity() : *it;
}

}  // namespace tfh
