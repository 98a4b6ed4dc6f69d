#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sentinel/detect/detector.hpp"
#include "sentinel/ingest/event.hpp"

namespace sentinel::service {

enum class ServiceErrorKind { invalid_config, bind_failure, corrupt_checkpoint, io_error };

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ServiceErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ServiceErrorKind kind() const { return kind_; }

 private:
  ServiceErrorKind kind_;
};

inline constexpr std::string_view kEnvPrefix = "SENTINEL_";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path checkpoint_dir = "sentinel-state";
  std::string webhook_url;  // http://host[:port]/path, empty disables
  std::size_t max_body_bytes = 8u << 20;
  std::size_t checkpoint_every = 16;  // windows; 0 = only on demand and at shutdown
  ingest::Provider provider = ingest::Provider::generic;
  // Pretraining data used when no checkpoint exists.
  std::filesystem::path bootstrap_events;
  // Ground-truth sidecar that enables /v1/metrics.
  std::filesystem::path labels;
  detect::DetectorConfig detector;

  // Service keys (listen, checkpoint_dir, ...) and every detector key.
  // Throws ServiceError(invalid_config).
  void set(std::string_view key, std::string_view value);
  // "key = value" lines; '#' starts a comment.
  void load_text(std::string_view text);
  void load_file(const std::filesystem::path& path);
  // SENTINEL_<KEY> overrides, e.g. SENTINEL_WINDOW=30m, SENTINEL_LISTEN=0.0.0.0:9000.
  void apply_env(char** envp);
  void validate() const;
  std::string to_json() const;
};

struct IngestResult {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t duplicates = 0;
};

// Files kept in the checkpoint directory.
inline constexpr const char* kServiceCheckpoint = "checkpoint.bin";
inline constexpr const char* kServiceAlerts = "alerts.jsonl";
inline constexpr const char* kServiceLabels = "alert_labels.jsonl";
inline constexpr const char* kServiceTau = "tau_trace.csv";

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Restores or initializes state, starts the loop and binds the listener.
  // Throws ServiceError(bind_failure / corrupt_checkpoint / ...).
  void start();
  // Stops intake, drains the open window, flushes logs and writes a final
  // checkpoint. Idempotent.
  void stop();
  int port() const;
  bool running() const;

  const ServiceConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Runs until SIGINT or SIGTERM.
int serve(ServiceConfig config);

}  // namespace sentinel::service
