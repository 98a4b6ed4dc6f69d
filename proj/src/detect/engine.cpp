#include "sentinel/detect/engine.hpp"

#include <spdlog/spdlog.h>

#include <set>

namespace sentinel::detect {

Engine::Engine(Detector detector, EngineOptions options)
    : options_(std::move(options)),
      detector_(std::move(detector)),
      assembler_(options_.window, std::max(detector_.clock(), options_.clock == ClockMode::wall
                                                                      ? options_.time_origin
                                                                      : detector_.clock())) {
  if (options_.window <= 0) throw DetectError(DetectErrorKind::invalid_config, "engine window must be positive");
}

Engine::~Engine() { stop(); }

void Engine::start() {
  std::lock_guard lock(queue_mutex_);
  if (running_) return;
  running_ = true;
  draining_ = false;
  stats_.running = true;
  thread_ = std::thread([this] { loop(); });
}

void Engine::stop() {
  {
    std::lock_guard lock(queue_mutex_);
    if (!running_) return;
    draining_ = true;
    stats_.draining = true;
  }
  wake_.notify_all();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lock(queue_mutex_);
  running_ = false;
  stats_.running = false;
}

SubmitStatus Engine::submit(std::vector<QueuedEvent> events) {
  {
    std::lock_guard lock(queue_mutex_);
    if (draining_ || !running_) return SubmitStatus::draining;
    if (queue_.size() + events.size() > options_.max_queue) return SubmitStatus::queue_full;
    for (auto& e : events) queue_.push_back(std::move(e));
    stats_.queue_depth = queue_.size();
  }
  wake_.notify_one();
  return SubmitStatus::accepted;
}

EngineStats Engine::stats() const {
  std::lock_guard lock(queue_mutex_);
  return stats_;
}

TimeMs Engine::wall_now() const {
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(SteadyClock::now() - options_.wall_origin);
  return options_.time_origin + elapsed.count();
}

void Engine::process(const ClosedWindow& w) {
  std::uint64_t failed = 0;
  {
    std::lock_guard lock(detector_mutex_);
    try {
      if (!detector_.initialized() && !w.events.empty()) {
        std::set<std::string> roles;
        for (const auto& e : w.events) roles.insert(e.role);
        detector_.initialize({roles.begin(), roles.end()});
      }
      if (detector_.initialized()) {
        const WindowResult r = detector_.process_window(w.events, w.truth, w.start, w.end);
        if (options_.on_window) options_.on_window(detector_, w, r);
      }
    } catch (const std::exception& ex) {
      failed = 1;
      spdlog::error("window [{}, {}) failed: {}", w.start, w.end, ex.what());
    }
  }
  const auto done = SteadyClock::now();
  double sum = 0.0;
  double worst = 0.0;
  std::uint64_t n = 0;
  for (auto it = receipts_.lower_bound(w.start); it != receipts_.end() && it->first < w.end;) {
    for (const auto& t : it->second) {
      const double ms = std::chrono::duration<double, std::milli>(done - t).count();
      sum += ms;
      worst = std::max(worst, ms);
      ++n;
    }
    it = receipts_.erase(it);
  }
  std::lock_guard lock(queue_mutex_);
  stats_.events_processed += n;
  stats_.latency_sum_ms += sum;
  stats_.latency_max_ms = std::max(stats_.latency_max_ms, worst);
  stats_.windows += 1;
  stats_.window_errors += failed;
  stats_.last_emit = done;
}

void Engine::loop() {
  for (;;) {
    std::deque<QueuedEvent> batch;
    bool finish = false;
    {
      std::unique_lock lock(queue_mutex_);
      auto ready = [&] { return !queue_.empty() || draining_; };
      if (options_.clock == ClockMode::wall) {
        const auto deadline = options_.wall_origin + std::chrono::milliseconds(assembler_.open_end() - options_.time_origin);
        wake_.wait_until(lock, deadline, ready);
      } else {
        wake_.wait(lock, ready);
      }
      batch.swap(queue_);
      finish = draining_;
      stats_.queue_depth = 0;
    }
    std::vector<ClosedWindow> closed;
    for (auto& q : batch) {
      const TimeMs key = align_down(q.event.timestamp, options_.window);
      const auto late = assembler_.late();
      auto out = assembler_.push(std::move(q.event), q.truth);
      if (assembler_.late() == late) receipts_[key].push_back(q.receipt);
      for (auto& w : out) closed.push_back(std::move(w));
    }
    if (options_.clock == ClockMode::wall) {
      for (auto& w : assembler_.advance_to(wall_now())) closed.push_back(std::move(w));
    }
    if (finish) {
      if (auto last = assembler_.flush()) closed.push_back(std::move(*last));
    }
    for (const auto& w : closed) process(w);
    {
      std::lock_guard lock(queue_mutex_);
      stats_.buffered = assembler_.buffered();
      stats_.open_window_start = assembler_.open_start();
      stats_.late_dropped = assembler_.late();
    }
    if (finish) {
      std::lock_guard lock(queue_mutex_);
      if (queue_.empty()) return;
    }
  }
}

}  // namespace sentinel::detect
