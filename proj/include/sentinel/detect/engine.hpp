#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "sentinel/detect/detector.hpp"
#include "sentinel/detect/stream.hpp"

namespace sentinel::detect {

using SteadyClock = std::chrono::steady_clock;

// How the loop decides that a window is over.
enum class ClockMode {
  event_time,  // only when a later event arrives, or on shutdown
  wall,        // also when the wall clock, mapped onto event time, passes the window end
};

struct EngineOptions {
  ClockMode clock = ClockMode::event_time;
  DurationMs window = 15 * kMinuteMs;
  // Wall mode: event time of `wall_origin`.
  TimeMs time_origin = 0;
  SteadyClock::time_point wall_origin{};
  std::size_t max_queue = 1'000'000;  // events
  // Runs on the loop thread, with the detector lock held, after each window.
  std::function<void(Detector&, const ClosedWindow&, const WindowResult&)> on_window;
};

struct QueuedEvent {
  ingest::NormalizedEvent event;
  std::uint8_t truth = 0;
  SteadyClock::time_point receipt{};
};

enum class SubmitStatus { accepted, draining, queue_full };

struct EngineStats {
  std::size_t queue_depth = 0;
  std::size_t buffered = 0;  // in the open window
  TimeMs open_window_start = 0;
  std::uint64_t events_processed = 0;
  std::uint64_t windows = 0;
  std::uint64_t late_dropped = 0;
  std::uint64_t window_errors = 0;
  double latency_sum_ms = 0.0;  // receipt to scores emitted, processed events only
  double latency_max_ms = 0.0;
  std::optional<SteadyClock::time_point> last_emit;
  bool running = false;
  bool draining = false;
};

// The streaming loop: one thread drains an in-process queue into tumbling
// windows and runs the detector on each closed window. All detector access
// from other threads goes through with_detector, which serializes against the
// loop; mutations there happen between windows.
class Engine {
 public:
  Engine(Detector detector, EngineOptions options);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  void start();
  // Stops intake, processes everything queued, closes the open window and
  // joins the loop.
  void stop();

  SubmitStatus submit(std::vector<QueuedEvent> events);

  template <typename F>
  auto with_detector(F&& f) {
    std::lock_guard lock(detector_mutex_);
    return f(detector_);
  }

  EngineStats stats() const;

 private:
  void loop();
  void process(const ClosedWindow& w);
  TimeMs wall_now() const;

  EngineOptions options_;
  Detector detector_;
  WindowAssembler assembler_;
  std::mutex detector_mutex_;

  mutable std::mutex queue_mutex_;
  std::condition_variable wake_;
  std::deque<QueuedEvent> queue_;
  bool draining_ = false;
  bool running_ = false;
  std::thread thread_;

  // receipts of buffered events by window start
  std::map<TimeMs, std::vector<SteadyClock::time_point>> receipts_;
  EngineStats stats_;
};

}  // namespace sentinel::detect
