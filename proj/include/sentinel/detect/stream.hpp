#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sentinel/common/time.hpp"
#include "sentinel/ingest/event.hpp"

namespace sentinel::detect {

struct ClosedWindow {
  TimeMs start = 0;
  TimeMs end = 0;
  std::vector<ingest::NormalizedEvent> events;  // sorted
  std::vector<std::uint8_t> truth;              // aligned with events
};

TimeMs align_down(TimeMs t, DurationMs window);

// Groups an event stream into aligned tumbling windows. A window closes once
// an event at or past its end arrives (or on advance/flush); events older than
// the open window are late and dropped. Runs of empty windows are emitted as a
// single empty span.
class WindowAssembler {
 public:
  WindowAssembler(DurationMs window, TimeMs open_start);

  std::vector<ClosedWindow> push(ingest::NormalizedEvent e, std::uint8_t truth = 0);
  // Closes every window that ends at or before `t`.
  std::vector<ClosedWindow> advance_to(TimeMs t);
  // Closes the open window if it holds events.
  std::optional<ClosedWindow> flush();

  TimeMs open_start() const { return open_start_; }
  TimeMs open_end() const { return open_start_ + window_; }
  std::size_t buffered() const { return events_.size(); }
  std::uint64_t late() const { return late_; }

 private:
  ClosedWindow close_open();

  DurationMs window_;
  TimeMs open_start_;
  std::vector<ingest::NormalizedEvent> events_;
  std::vector<std::uint8_t> truth_;
  std::uint64_t late_ = 0;
};

}  // namespace sentinel::detect
