#include "sentinel/service/service.hpp"

#include <fmt/format.h>
// Event batches arrive with whatever content type the client picks (curl
// defaults to form-urlencoded); max_body_bytes is the only size limit.
#define CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH (std::size_t{1} << 40)
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <csignal>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sentinel/common/fs.hpp"
#include "sentinel/common/hash.hpp"
#include "sentinel/common/time.hpp"
#include "sentinel/detect/stream.hpp"
#include "sentinel/detect/engine.hpp"
#include "sentinel/detect/replay.hpp"
#include "sentinel/eval/metrics.hpp"
#include "sentinel/ingest/parser.hpp"

namespace sentinel::service {

namespace fs = std::filesystem;
using detect::Alert;
using detect::AlertStatus;
using detect::Detector;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void bad_config(const std::string& what) { throw ServiceError(ServiceErrorKind::invalid_config, what); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  try {
    if (v.empty() || v.front() == '-' || v.front() == '+') throw std::invalid_argument("sign");
    std::size_t used = 0;
    const auto n = std::stoull(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    bad_config(std::string(key) + ": not a non-negative integer: " + std::string(v));
  }
}

struct Url {
  std::string host;
  int port = 80;
  std::string path = "/";
};

std::optional<Url> parse_http_url(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  if (url.substr(0, scheme.size()) != scheme) return std::nullopt;
  url.remove_prefix(scheme.size());
  Url u;
  const auto slash = url.find('/');
  std::string_view authority = url.substr(0, slash);
  if (slash != std::string_view::npos) u.path = std::string(url.substr(slash));
  const auto colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    try {
      u.port = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      return std::nullopt;
    }
    authority = authority.substr(0, colon);
  }
  if (authority.empty()) return std::nullopt;
  u.host = std::string(authority);
  return u;
}

// Delivers alert lines to an HTTP endpoint from its own thread, retrying each
// line with exponential backoff.
class Webhook {
 public:
  explicit Webhook(Url url) : url_(std::move(url)), thread_([this] { run(); }) {}
  ~Webhook() { stop(); }

  void post(std::string line) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(line));
    }
    wake_.notify_one();
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
    }
    wake_.notify_one();
    if (thread_.joinable()) thread_.join();
  }

 private:
  void run() {
    for (;;) {
      std::string line;
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        line = std::move(queue_.front());
        queue_.pop_front();
      }
      deliver(line);
    }
  }

  void deliver(const std::string& line) {
    for (int attempt = 0; attempt < 5; ++attempt) {
      httplib::Client client(url_.host, url_.port);
      client.set_connection_timeout(2);
      client.set_read_timeout(5);
      if (auto res = client.Post(url_.path, line, "application/json"); res && res->status / 100 == 2) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(100 << attempt));
    }
    spdlog::warn("webhook: giving up on one alert after 5 attempts");
  }

  Url url_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::thread thread_;
};

class Sink {
 public:
  void open(const fs::path& path) {
    path_ = path;
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw ServiceError(ServiceErrorKind::io_error, "cannot open " + path.string());
  }
  void write(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void flush() {
    out_.flush();
    if (!out_) throw ServiceError(ServiceErrorKind::io_error, "write failed on " + path_.string());
  }
  std::uint64_t size() { return static_cast<std::uint64_t>(out_.tellp()); }
  void close() {
    if (out_.is_open()) out_.close();
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string label_line(const Alert& a) {
  ordered_json j;
  j["id"] = a.id;
  j["label"] = std::string(to_string(a.status));
  j["labeled_at"] = a.labeled_at.value_or(0);
  return j.dump();
}

ordered_json alert_object(const Alert& a) {
  auto j = ordered_json::parse(detect::alert_json(a));
  j["labeled_at"] = a.labeled_at ? ordered_json(*a.labeled_at) : ordered_json(nullptr);
  if (a.scenario_tag) j["scenario_tag"] = *a.scenario_tag;
  return j;
}

std::string hex_encode(std::string_view s) {
  std::string out;
  for (unsigned char c : s) out += fmt::format("{:02x}", c);
  return out;
}

std::optional<std::string> hex_decode(std::string_view s) {
  if (s.size() % 2 != 0) return std::nullopt;
  std::string out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    unsigned v = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      const char c = s[i + k];
      v <<= 4;
      if (c >= '0' && c <= '9') v |= static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f') v |= static_cast<unsigned>(c - 'a' + 10);
      else return std::nullopt;
    }
    out += static_cast<char>(v);
  }
  return out;
}

// Position in the listing order (created_at desc, id asc).
struct Cursor {
  TimeMs created_at = 0;
  std::string id;
};

std::string encode_cursor(const Alert& a) { return hex_encode(std::to_string(a.created_at) + "|" + a.id); }

std::optional<Cursor> decode_cursor(std::string_view text) {
  const auto raw = hex_decode(text);
  if (!raw) return std::nullopt;
  const auto bar = raw->find('|');
  if (bar == std::string::npos || bar == 0 || bar + 1 >= raw->size()) return std::nullopt;
  Cursor c;
  try {
    std::size_t used = 0;
    c.created_at = std::stoll(raw->substr(0, bar), &used);
    if (used != bar) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  c.id = raw->substr(bar + 1);
  return c;
}

bool listed_before(const Alert& a, TimeMs created_at, const std::string& id) {
  if (a.created_at != created_at) return a.created_at > created_at;
  return a.id < id;
}

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  ordered_json j;
  j["error"] = std::string(code);
  j["message"] = message;
  reply(res, status, j);
}

std::optional<TimeMs> time_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string v = req.get_param_value(name);
  if (auto t = parse_rfc3339(v)) return t;
  try {
    std::size_t used = 0;
    const TimeMs t = std::stoll(v, &used);
    if (used == v.size()) return t;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(std::string("bad ") + name + ": " + v);
}

}  // namespace

void ServiceConfig::set(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (key == "listen") {
    const auto colon = v.rfind(':');
    if (colon == std::string::npos) bad_config("listen: expected host:port, got " + v);
    host = v.substr(0, colon);
    const auto p = to_size(key, std::string_view(v).substr(colon + 1));
    if (p > 65535) bad_config("listen: port out of range");
    port = static_cast<int>(p);
  } else if (key == "host") {
    host = v;
  } else if (key == "port") {
    const auto p = to_size(key, v);
    if (p > 65535) bad_config("port out of range");
    port = static_cast<int>(p);
  } else if (key == "checkpoint_dir") {
    checkpoint_dir = v;
  } else if (key == "webhook_url") {
    webhook_url = v;
  } else if (key == "max_body_bytes") {
    max_body_bytes = to_size(key, v);
  } else if (key == "checkpoint_every") {
    checkpoint_every = to_size(key, v);
  } else if (key == "provider") {
    const auto p = ingest::provider_from_string(v);
    if (!p) bad_config("unknown provider " + v);
    provider = *p;
  } else if (key == "bootstrap_events") {
    bootstrap_events = v;
  } else if (key == "labels") {
    labels = v;
  } else {
    try {
      detector.set(key, v);
    } catch (const detect::DetectError& e) {
      bad_config(e.what());
    }
  }
}

void ServiceConfig::load_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) bad_config(fmt::format("line {}: expected key = value", n));
    const std::string key = trim(std::string_view(t).substr(0, eq));
    try {
      set(key, std::string_view(t).substr(eq + 1));
    } catch (const ServiceError& e) {
      bad_config(fmt::format("line {}: {}", n, e.what()));
    }
  }
}

void ServiceConfig::load_file(const fs::path& path) {
  try {
    load_text(read_file(path));
  } catch (const FileError& e) {
    bad_config(e.what());
  }
}

void ServiceConfig::apply_env(char** envp) {
  if (envp == nullptr) return;
  for (char** e = envp; *e != nullptr; ++e) {
    const std::string_view entry(*e);
    if (entry.substr(0, kEnvPrefix.size()) != kEnvPrefix) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    std::string key(entry.substr(kEnvPrefix.size(), eq - kEnvPrefix.size()));
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    set(key, entry.substr(eq + 1));
  }
}

void ServiceConfig::validate() const {
  try {
    detector.validate();
  } catch (const detect::DetectError& e) {
    bad_config(e.what());
  }
  if (!(detector.quantile > 0.0 && detector.quantile < 1.0)) bad_config("quantile must lie in (0, 1)");
  if (port < 0 || port > 65535) bad_config("port out of range");
  if (checkpoint_dir.empty()) bad_config("checkpoint_dir is required");
  if (max_body_bytes == 0) bad_config("max_body_bytes must be positive");
  if (!webhook_url.empty() && !parse_http_url(webhook_url)) {
    bad_config("webhook_url must look like http://host[:port]/path");
  }
}

std::string ServiceConfig::to_json() const {
  ordered_json j;
  j["listen"] = host + ":" + std::to_string(port);
  j["checkpoint_dir"] = checkpoint_dir.string();
  j["webhook_url"] = webhook_url;
  j["max_body_bytes"] = max_body_bytes;
  j["checkpoint_every"] = checkpoint_every;
  j["provider"] = std::string(ingest::to_string(provider));
  j["bootstrap_events"] = bootstrap_events.string();
  j["labels"] = labels.string();
  j["detector"] = ordered_json::parse(detector.to_json());
  return j.dump(2);
}

struct WindowStats {
  TimeMs start = 0;
  TimeMs end = 0;
  std::size_t events = 0;
  std::size_t records = 0;
  std::size_t alerts = 0;
};

struct Service::Impl {
  ServiceConfig cfg;
  std::unique_ptr<detect::Engine> engine;
  httplib::Server http;
  std::thread http_thread;
  int bound_port = -1;
  bool running = false;
  detect::SteadyClock::time_point started{};

  Sink alerts_log, labels_log, tau_log;
  std::unique_ptr<Webhook> webhook;

  std::mutex ingest_mutex;
  std::map<TimeMs, std::set<std::string>> seen;  // window start -> event lines

  // guarded by the detector lock
  std::optional<std::vector<eval::TruthEvent>> truth;
  std::vector<eval::ScoreEntry> scores;
  TimeMs first_window = 0;
  WindowStats last_window;
  std::size_t windows_since_checkpoint = 0;
  std::string checkpoint_sha;

  explicit Impl(ServiceConfig c) : cfg(std::move(c)) {}

  fs::path file(const char* name) const { return cfg.checkpoint_dir / name; }

  std::string save_checkpoint(Detector& d) {
    alerts_log.flush();
    labels_log.flush();
    tau_log.flush();
    d.annotations()[std::string("service.bytes.") + kServiceAlerts] = std::to_string(alerts_log.size());
    d.annotations()[std::string("service.bytes.") + kServiceLabels] = std::to_string(labels_log.size());
    d.annotations()[std::string("service.bytes.") + kServiceTau] = std::to_string(tau_log.size());
    const std::string bytes = d.checkpoint();
    write_file_atomic(file(kServiceCheckpoint), bytes);
    checkpoint_sha = sha256_hex(bytes);
    windows_since_checkpoint = 0;
    return checkpoint_sha;
  }

  Detector load_state();
  void check_alert_log(const Detector& d);
  void on_window(Detector& d, const detect::ClosedWindow& w, const detect::WindowResult& r);
  void routes();
};

Detector Service::Impl::load_state() {
  std::error_code ec;
  fs::create_directories(cfg.checkpoint_dir, ec);
  const fs::path probe = cfg.checkpoint_dir / ".write-test";
  {
    std::ofstream out(probe);
    if (!out) {
      throw ServiceError(ServiceErrorKind::io_error,
                         "checkpoint directory " + cfg.checkpoint_dir.string() + " is not writable");
    }
  }
  fs::remove(probe, ec);

  const fs::path ckpt = file(kServiceCheckpoint);
  if (fs::exists(ckpt)) {
    std::optional<Detector> d;
    try {
      d.emplace(Detector::restore(read_file(ckpt)));
    } catch (const std::exception& e) {
      throw ServiceError(ServiceErrorKind::corrupt_checkpoint,
                         "corrupt checkpoint " + ckpt.string() + ": " + e.what());
    }
    if (d->config() != cfg.detector) {
      spdlog::warn("checkpoint carries its own detector configuration; configured detector keys are ignored");
    }
    for (const char* name : {kServiceAlerts, kServiceLabels, kServiceTau}) {
      const auto it = d->annotations().find(std::string("service.bytes.") + name);
      const std::uint64_t size = it == d->annotations().end() ? 0 : std::stoull(it->second);
      if (!fs::exists(file(name)) && size > 0) {
        throw ServiceError(ServiceErrorKind::corrupt_checkpoint, file(name).string() + " is missing");
      }
      if (fs::exists(file(name))) truncate_file(file(name), size);
    }
    check_alert_log(*d);
    return std::move(*d);
  }

  for (const char* name : {kServiceAlerts, kServiceLabels, kServiceTau}) {
    std::ofstream(file(name), std::ios::trunc);
  }
  {
    std::ofstream tau(file(kServiceTau), std::ios::app);
    tau << "window_end,tau,benign_window_size\n";
  }
  Detector d(cfg.detector);
  if (!cfg.bootstrap_events.empty()) {
    auto events = ingest::normalize_events(ingest::read_jsonl_file(cfg.bootstrap_events, cfg.provider)).events;
    if (!events.empty()) {
      const DurationMs w = cfg.detector.window;
      const auto report = d.pretrain(events, {}, detect::align_down(events.front().timestamp, w),
                                     detect::align_down(events.back().timestamp, w) + w);
      spdlog::info("bootstrapped on {} events ({} windows), tau {:.4f}", events.size(), report.snapshots, report.tau);
    }
  }
  return d;
}

void Service::Impl::check_alert_log(const Detector& d) {
  std::map<std::string, std::string> status;
  {
    std::ifstream in(file(kServiceAlerts));
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("id")) {
        throw ServiceError(ServiceErrorKind::corrupt_checkpoint, "unreadable line in " + file(kServiceAlerts).string());
      }
      status[j["id"].get<std::string>()] = "pending";
    }
  }
  {
    std::ifstream in(file(kServiceLabels));
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("id") || !j.contains("label")) {
        throw ServiceError(ServiceErrorKind::corrupt_checkpoint, "unreadable line in " + file(kServiceLabels).string());
      }
      status[j["id"].get<std::string>()] = j["label"].get<std::string>();
    }
  }
  std::map<std::string, std::string> expected;
  for (const Alert& a : d.alerts()) expected[a.id] = std::string(to_string(a.status));
  if (status != expected) {
    throw ServiceError(ServiceErrorKind::corrupt_checkpoint,
                       "alert log " + file(kServiceAlerts).string() + " disagrees with the checkpoint");
  }
}

void Service::Impl::on_window(Detector& d, const detect::ClosedWindow& w, const detect::WindowResult& r) {
  if (first_window == 0) first_window = w.start;
  for (const Alert& a : r.alerts) {
    const std::string line = detect::alert_json(a);
    alerts_log.write(line + "\n");
    if (webhook) webhook->post(line);
  }
  tau_log.write(fmt::format("{},{},{}\n", w.end, r.tau, r.benign_window_size));
  alerts_log.flush();
  tau_log.flush();
  if (truth) {
    std::set<std::string> flagged;
    for (const Alert& a : r.alerts) flagged.insert(a.id);
    for (const auto& rec : r.records) {
      eval::ScoreEntry s;
      s.window_end = rec.window_end;
      s.src = rec.src;
      s.dst = rec.dst;
      s.origin = std::string(to_string(rec.origin));
      s.score = rec.score;
      s.flagged = flagged.count(detect::alert_id(rec)) > 0;
      scores.push_back(std::move(s));
    }
  }
  if (!r.empty) last_window = {w.start, w.end, r.events, r.records.size(), r.alerts.size()};
  ++windows_since_checkpoint;
  if (cfg.checkpoint_every > 0 && windows_since_checkpoint >= cfg.checkpoint_every) save_checkpoint(d);
}

void Service::Impl::routes() {
  http.set_payload_max_length(cfg.max_body_bytes);
  // No SO_REUSEPORT: a second instance on the same port must fail to bind.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });

  http.Post("/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
    if (req.body.size() > cfg.max_body_bytes) {
      reply_error(res, 413, "payload_too_large", "body exceeds max_body_bytes");
      return;
    }
    std::vector<ingest::RawEvent> raws;
    std::istringstream in(req.body);
    for (std::string line; std::getline(in, line);) {
      if (trim(line).empty()) continue;
      raws.push_back({cfg.provider, line});
    }
    auto batch = ingest::normalize_batch(raws);
    IngestResult result;
    result.rejected = batch.rejected;
    result.duplicates = batch.duplicates;
    std::vector<detect::QueuedEvent> queued;
    const auto now = detect::SteadyClock::now();
    const DurationMs w = cfg.detector.window;
    {
      std::lock_guard lock(ingest_mutex);
      const TimeMs open = engine->stats().open_window_start;
      seen.erase(seen.begin(), seen.lower_bound(open));
      for (auto& e : batch.events) {
        if (!seen[detect::align_down(e.timestamp, w)].insert(ingest::to_generic_json(e)).second) {
          ++result.duplicates;
          continue;
        }
        queued.push_back({std::move(e), 0, now});
      }
      result.accepted = queued.size();
      if (!queued.empty()) {
        const auto status = engine->submit(std::move(queued));
        if (status == detect::SubmitStatus::draining) {
          reply_error(res, 503, "service_draining", "the service is shutting down");
          return;
        }
        if (status == detect::SubmitStatus::queue_full) {
          reply_error(res, 503, "queue_full", "ingestion queue is full");
          return;
        }
      }
    }
    ordered_json j;
    j["accepted"] = result.accepted;
    j["rejected"] = result.rejected;
    j["duplicates"] = result.duplicates;
    reply(res, 200, j);
  });

  http.Get("/v1/alerts", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<AlertStatus> status;
    if (req.has_param("status")) {
      status = detect::alert_status_from_string(req.get_param_value("status"));
      if (!status) {
        reply_error(res, 400, "bad_filter", "status must be pending, benign or malicious");
        return;
      }
    }
    std::optional<TimeMs> since, until;
    std::size_t limit = 100;
    try {
      since = time_param(req, "since");
      until = time_param(req, "until");
      if (req.has_param("limit")) limit = to_size("limit", req.get_param_value("limit"));
    } catch (const std::exception& e) {
      reply_error(res, 400, "bad_filter", e.what());
      return;
    }
    if (limit == 0 || limit > 1000) {
      reply_error(res, 400, "bad_filter", "limit must lie in 1..1000");
      return;
    }
    std::optional<Cursor> cursor;
    if (req.has_param("cursor")) {
      cursor = decode_cursor(req.get_param_value("cursor"));
      if (!cursor) {
        reply_error(res, 400, "bad_cursor", "unreadable cursor");
        return;
      }
    }
    std::vector<Alert> all = engine->with_detector([](Detector& d) { return d.alerts(); });
    std::sort(all.begin(), all.end(), [](const Alert& a, const Alert& b) { return listed_before(a, b.created_at, b.id); });
    ordered_json page = ordered_json::array();
    std::optional<std::string> next;
    const Alert* last = nullptr;
    std::size_t taken = 0;
    for (const Alert& a : all) {
      if (cursor && (listed_before(a, cursor->created_at, cursor->id) ||
                     (a.created_at == cursor->created_at && a.id == cursor->id))) {
        continue;
      }
      if (status && a.status != *status) continue;
      if (since && a.created_at < *since) continue;
      if (until && a.created_at >= *until) continue;
      if (taken == limit) {
        next = encode_cursor(*last);
        break;
      }
      page.push_back(alert_object(a));
      last = &a;
      ++taken;
    }
    ordered_json j;
    j["alerts"] = std::move(page);
    j["next_cursor"] = next ? ordered_json(*next) : ordered_json(nullptr);
    reply(res, 200, j);
  });

  http.Post("/v1/alerts/:id/label", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.path_params.at("id");
    const auto body = json::parse(req.body, nullptr, false);
    std::optional<detect::Label> label;
    if (!body.is_discarded() && body.is_object() && body.contains("label") && body["label"].is_string()) {
      label = detect::label_from_string(body["label"].get<std::string>());
    }
    if (!label) {
      reply_error(res, 400, "invalid_label", "body must be {\"label\": \"benign\" | \"malicious\"}");
      return;
    }
    engine->with_detector([&](Detector& d) {
      try {
        const Alert& a = d.label_alert(id, *label);
        labels_log.write(label_line(a) + "\n");
        labels_log.flush();
        reply(res, 200, alert_object(a));
      } catch (const detect::DetectError& e) {
        if (e.kind() == detect::DetectErrorKind::unknown_alert) {
          reply_error(res, 404, "not_found", e.what());
        } else if (e.kind() == detect::DetectErrorKind::already_labeled) {
          reply_error(res, 409, "already_labeled", e.what());
        } else {
          throw;
        }
      }
    });
  });

  http.Get("/v1/status", [this](const httplib::Request&, httplib::Response& res) {
    const auto st = engine->stats();
    ordered_json j = engine->with_detector([&](Detector& d) {
      ordered_json s;
      s["model_version"] = d.model_version();
      s["tau"] = d.threshold().tau;
      s["benign_window_size"] = d.threshold().window.size();
      s["buffer_size"] = d.buffer().size();
      s["retrains"] = d.retrain_count();
      s["last_retrain_at"] = d.last_retrain_at() ? ordered_json(*d.last_retrain_at()) : ordered_json(nullptr);
      s["alerts"] = d.alerts().size();
      s["pending_alerts"] = d.pending_count();
      s["clock"] = d.clock();
      s["windows_processed"] = d.windows_processed();
      s["window"] = {{"start", last_window.start},
                     {"end", last_window.end},
                     {"events", last_window.events},
                     {"records", last_window.records},
                     {"alerts", last_window.alerts}};
      s["checkpoint_sha256"] = checkpoint_sha;
      return s;
    });
    j["window_ms"] = cfg.detector.window;
    j["queue_depth"] = st.queue_depth;
    j["open_window_start"] = st.open_window_start;
    j["buffered_events"] = st.buffered;
    j["events_processed"] = st.events_processed;
    j["late_dropped"] = st.late_dropped;
    j["window_errors"] = st.window_errors;
    j["draining"] = st.draining;
    j["uptime_s"] = std::chrono::duration<double>(detect::SteadyClock::now() - started).count();
    reply(res, 200, j);
  });

  http.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
    if (!truth) {
      reply_error(res, 404, "no_labels", "start the service with labels = <sidecar> to enable metrics");
      return;
    }
    const auto report = engine->with_detector([&](Detector& d) {
      std::vector<eval::AlertEntry> alerts;
      for (const Alert& a : d.alerts()) alerts.push_back(eval::to_entry(a));
      std::vector<eval::TruthEvent> live;
      for (const auto& t : *truth) {
        if (t.ts >= first_window && first_window != 0 && t.ts < d.clock()) live.push_back(t);
      }
      return eval::compute_metrics(alerts, live, scores, cfg.detector.window);
    });
    reply(res, 200, ordered_json::parse(report.to_json()));
  });

  http.Get("/v1/graph/current", [this](const httplib::Request&, httplib::Response& res) {
    ordered_json j = engine->with_detector([&](Detector& d) {
      ordered_json out;
      const auto snap = d.last_snapshot();
      if (!snap) {
        out["snapshot"] = nullptr;
        out["node_scores"] = ordered_json::array();
        return out;
      }
      out["snapshot"] = ordered_json::parse(graph::snapshot_to_json(*snap));
      std::map<std::uint32_t, double> worst;
      for (const auto& r : d.last_records()) {
        for (std::uint32_t i : {r.src_index, r.dst_index}) {
          auto [it, fresh] = worst.emplace(i, r.score);
          if (!fresh) it->second = std::max(it->second, r.score);
        }
      }
      out["node_scores"] = ordered_json::array();
      for (const auto& [i, s] : worst) {
        out["node_scores"].push_back({{"node", detect::entity_text(snap->nodes[i])}, {"max_score", s}});
      }
      return out;
    });
    reply(res, 200, j);
  });

  http.Post("/v1/admin/checkpoint", [this](const httplib::Request&, httplib::Response& res) {
    ordered_json j = engine->with_detector([&](Detector& d) {
      ordered_json out;
      out["sha256"] = save_checkpoint(d);
      out["path"] = file(kServiceCheckpoint).string();
      out["model_version"] = d.model_version();
      out["clock"] = d.clock();
      return out;
    });
    reply(res, 200, j);
  });

  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 413) {
      reply_error(res, 413, "payload_too_large", "body exceeds max_body_bytes");
    } else if (res.status == 404) {
      reply_error(res, 404, "not_found", "no such route");
    }
  });

  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply_error(res, 500, "internal", what);
  });
}

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() {
  try {
    stop();
  } catch (const std::exception& e) {
    spdlog::error("shutdown: {}", e.what());
  }
}

const ServiceConfig& Service::config() const { return impl_->cfg; }
int Service::port() const { return impl_->bound_port; }
bool Service::running() const { return impl_->running; }

void Service::start() {
  Impl& m = *impl_;
  if (m.running) return;
  m.cfg.validate();
  Detector det = m.load_state();
  m.alerts_log.open(m.file(kServiceAlerts));
  m.labels_log.open(m.file(kServiceLabels));
  m.tau_log.open(m.file(kServiceTau));
  if (!m.cfg.labels.empty()) m.truth = eval::read_truth_sidecar(m.cfg.labels);
  if (!m.cfg.webhook_url.empty()) m.webhook = std::make_unique<Webhook>(*parse_http_url(m.cfg.webhook_url));

  detect::EngineOptions eo;
  eo.clock = detect::ClockMode::event_time;
  eo.window = det.config().window;
  eo.on_window = [&m](Detector& d, const detect::ClosedWindow& w, const detect::WindowResult& r) {
    m.on_window(d, w, r);
  };
  m.cfg.detector = det.config();
  m.engine = std::make_unique<detect::Engine>(std::move(det), eo);
  m.routes();

  m.bound_port = m.cfg.port == 0 ? m.http.bind_to_any_port(m.cfg.host) : m.cfg.port;
  if (m.cfg.port != 0 && !m.http.bind_to_port(m.cfg.host, m.cfg.port)) m.bound_port = -1;
  if (m.bound_port < 0) {
    throw ServiceError(ServiceErrorKind::bind_failure,
                       fmt::format("cannot bind {}:{}", m.cfg.host, m.cfg.port));
  }
  m.engine->start();
  m.started = detect::SteadyClock::now();
  m.http_thread = std::thread([&m] { m.http.listen_after_bind(); });
  m.http.wait_until_ready();
  m.running = true;
  spdlog::info("listening on {}:{}", m.cfg.host, m.bound_port);
}

void Service::stop() {
  Impl& m = *impl_;
  if (!m.running) return;
  m.http.stop();
  if (m.http_thread.joinable()) m.http_thread.join();
  m.engine->stop();
  m.engine->with_detector([&](Detector& d) {
    m.labels_log.flush();
    m.save_checkpoint(d);
  });
  if (m.webhook) m.webhook->stop();
  m.alerts_log.close();
  m.labels_log.close();
  m.tau_log.close();
  m.running = false;
  spdlog::info("stopped; checkpoint {}", m.checkpoint_sha);
}

int serve(ServiceConfig config) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  Service s(std::move(config));
  s.start();
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("signal {}: draining", sig);
  s.stop();
  return 0;
}

}  // namespace sentinel::service
