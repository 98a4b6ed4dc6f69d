#include "sentinel/detect/stream.hpp"

#include <algorithm>
#include <numeric>

namespace sentinel::detect {

TimeMs align_down(TimeMs t, DurationMs window) { return t - ((t % window) + window) % window; }

WindowAssembler::WindowAssembler(DurationMs window, TimeMs open_start)
    : window_(window), open_start_(align_down(open_start, window)) {}

ClosedWindow WindowAssembler::close_open() {
  ClosedWindow w;
  w.start = open_start_;
  w.end = open_start_ + window_;
  std::vector<std::size_t> order(events_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return compare_events(events_[a], events_[b]) < 0; });
  w.events.reserve(order.size());
  w.truth.reserve(order.size());
  for (std::size_t i : order) {
    w.events.push_back(std::move(events_[i]));
    w.truth.push_back(truth_[i]);
  }
  events_.clear();
  truth_.clear();
  open_start_ = w.end;
  return w;
}

std::vector<ClosedWindow> WindowAssembler::advance_to(TimeMs t) {
  std::vector<ClosedWindow> out;
  if (t < open_end()) return out;
  if (!events_.empty()) out.push_back(close_open());
  const TimeMs target = align_down(t, window_);
  if (target > open_start_) {
    ClosedWindow gap;
    gap.start = open_start_;
    gap.end = target;
    open_start_ = target;
    out.push_back(std::move(gap));
  }
  return out;
}

std::vector<ClosedWindow> WindowAssembler::push(ingest::NormalizedEvent e, std::uint8_t truth) {
  if (e.timestamp < open_start_) {
    ++late_;
    return {};
  }
  std::vector<ClosedWindow> out = advance_to(e.timestamp);
  events_.push_back(std::move(e));
  truth_.push_back(truth);
  return out;
}

std::optional<ClosedWindow> WindowAssembler::flush() {
  if (events_.empty()) return std::nullopt;
  return close_open();
}

}  // namespace sentinel::detect
