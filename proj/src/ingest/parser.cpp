#include "sentinel/ingest/parser.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sentinel/builtin_mappings.hpp"

namespace sentinel::ingest {

using nlohmann::json;

namespace {

std::vector<std::string> string_list(const json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
  return out;
}

Result result_value(const json& v) {
  auto r = result_from_string(v.get<std::string>());
  if (!r) throw std::invalid_argument("unknown result value " + v.dump());
  return *r;
}

ProviderMapping mapping_from_json(const json& j) {
  ProviderMapping m;
  m.timestamp = string_list(j, "timestamp");
  m.user = string_list(j, "user");
  m.role = string_list(j, "role");
  m.resource = string_list(j, "resource");
  m.action = string_list(j, "action");
  m.session = string_list(j, "session");
  m.privilege = string_list(j, "privilege");
  m.duration = string_list(j, "duration");
  const auto& r = j.at("result");
  m.result.paths = string_list(r, "paths");
  if (r.contains("absent")) m.result.when_absent = result_value(r.at("absent"));
  if (r.contains("default")) m.result.fallback = result_value(r.at("default"));
  if (r.contains("values")) {
    for (const auto& [k, v] : r.at("values").items()) m.result.values[k] = result_value(v);
  }
  return m;
}

// Resolves a dotted path; numeric segments index arrays.
const json* lookup(const json& root, const std::string& path) {
  const json* cur = &root;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const std::string seg = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (cur->is_object()) {
      auto it = cur->find(seg);
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else if (cur->is_array()) {
      std::size_t idx = 0;
      auto [p, ec] = std::from_chars(seg.data(), seg.data() + seg.size(), idx);
      if (ec != std::errc{} || p != seg.data() + seg.size() || idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else {
      return nullptr;
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return cur->is_null() ? nullptr : cur;
}

const json* first_present(const json& root, const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (const json* v = lookup(root, p)) return v;
  }
  return nullptr;
}

std::string required_string(const json& root, const std::vector<std::string>& paths,
                            const char* field) {
  const json* v = first_present(root, paths);
  if (v == nullptr) throw ParseError(ParseErrorKind::missing_field, field, std::string("missing field ") + field);
  if (!v->is_string()) {
    throw ParseError(ParseErrorKind::invalid_field, field, std::string("field ") + field + " is not a string");
  }
  auto s = v->get<std::string>();
  if (s.empty()) throw ParseError(ParseErrorKind::missing_field, field, std::string("empty field ") + field);
  return s;
}

TimeMs parse_timestamp(const json& root, const std::vector<std::string>& paths) {
  const json* v = first_present(root, paths);
  if (v == nullptr) throw ParseError(ParseErrorKind::missing_field, "timestamp", "missing field timestamp");
  std::optional<TimeMs> t;
  if (v->is_number_integer()) {
    t = v->get<std::int64_t>();
  } else if (v->is_number_unsigned()) {
    const auto u = v->get<std::uint64_t>();
    if (u <= static_cast<std::uint64_t>(INT64_MAX)) t = static_cast<TimeMs>(u);
  } else if (v->is_string()) {
    t = parse_rfc3339(v->get<std::string>());
  }
  if (!t || *t <= 0) {
    throw ParseError(ParseErrorKind::invalid_timestamp, "timestamp", "invalid timestamp " + v->dump());
  }
  return *t;
}

Result parse_result(const json& root, const ResultRule& rule) {
  const json* v = first_present(root, rule.paths);
  if (v == nullptr) {
    if (rule.when_absent) return *rule.when_absent;
    throw ParseError(ParseErrorKind::missing_field, "result", "missing field result");
  }
  std::string key;
  if (v->is_string()) {
    key = v->get<std::string>();
  } else if (v->is_number_integer() || v->is_number_unsigned()) {
    key = v->dump();
  } else if (v->is_boolean()) {
    key = v->get<bool>() ? "true" : "false";
  }
  if (auto it = rule.values.find(key); it != rule.values.end()) return it->second;
  if (rule.fallback) return *rule.fallback;
  throw ParseError(ParseErrorKind::invalid_field, "result", "unrecognized result " + v->dump());
}

}  // namespace

const MappingTable& MappingTable::builtin() {
  static const MappingTable table = from_json(detail::kBuiltinProviderMappings);
  return table;
}

MappingTable MappingTable::from_json(std::string_view text) {
  const json j = json::parse(text);
  if (j.value("format_version", 0) != 1) throw std::invalid_argument("unsupported mapping format_version");
  MappingTable t;
  t.status_ = j.value("status", "");
  for (const auto& [name, body] : j.at("providers").items()) {
    auto p = provider_from_string(name);
    if (!p) throw std::invalid_argument("unknown provider in mapping table: " + name);
    t.providers_[*p] = mapping_from_json(body);
  }
  for (auto p : {Provider::aws_cloudtrail, Provider::azure_ad, Provider::gcp_iam, Provider::generic}) {
    if (!t.providers_.contains(p)) {
      throw std::invalid_argument("mapping table lacks provider " + std::string(to_string(p)));
    }
  }
  return t;
}

MappingTable MappingTable::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read mapping table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

const ProviderMapping& MappingTable::get(Provider p) const { return providers_.at(p); }

NormalizedEvent parse_event(const RawEvent& raw, const MappingTable& table) {
  json root = json::parse(raw.payload, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded() || !root.is_object()) {
    throw ParseError(ParseErrorKind::malformed_json, "", "payload is not a JSON object");
  }
  const ProviderMapping& m = table.get(raw.provider);

  NormalizedEvent e;
  e.timestamp = parse_timestamp(root, m.timestamp);
  e.user_id = required_string(root, m.user, "user_id");
  e.role = required_string(root, m.role, "role");
  e.resource = required_string(root, m.resource, "resource");
  e.action = required_string(root, m.action, "action");
  e.result = parse_result(root, m.result);

  if (const json* s = first_present(root, m.session)) {
    if (!s->is_string()) throw ParseError(ParseErrorKind::invalid_field, "session_id", "session is not a string");
    if (!s->get<std::string>().empty()) e.session_id = s->get<std::string>();
  }
  if (const json* p = first_present(root, m.privilege)) {
    if (!p->is_number_integer() && !p->is_number_unsigned()) {
      throw ParseError(ParseErrorKind::invalid_field, "privilege_level", "priv is not an integer");
    }
    const auto level = p->get<std::int64_t>();
    if (level < 0 || level > 4) {
      throw ParseError(ParseErrorKind::invalid_field, "privilege_level", "priv outside [0,4]");
    }
    e.privilege_level = static_cast<int>(level);
  }
  if (const json* d = first_present(root, m.duration)) {
    if (!d->is_number()) throw ParseError(ParseErrorKind::invalid_field, "session_duration", "dur_s is not a number");
    const double dur = d->get<double>();
    if (!std::isfinite(dur) || dur < 0.0) {
      throw ParseError(ParseErrorKind::invalid_field, "session_duration", "dur_s must be finite and >= 0");
    }
    e.session_duration = dur;
  }
  return e;
}

BatchResult normalize_events(std::vector<NormalizedEvent> events) {
  BatchResult out;
  std::sort(events.begin(), events.end(), EventOrder{});
  const auto before = events.size();
  events.erase(std::unique(events.begin(), events.end()), events.end());
  out.duplicates = before - events.size();
  out.events = std::move(events);
  return out;
}

BatchResult normalize_batch(std::span<const RawEvent> raws, const MappingTable& table) {
  std::vector<NormalizedEvent> parsed;
  parsed.reserve(raws.size());
  std::size_t rejected = 0;
  for (const auto& raw : raws) {
    try {
      parsed.push_back(parse_event(raw, table));
    } catch (const ParseError&) {
      ++rejected;
    }
  }
  BatchResult out = normalize_events(std::move(parsed));
  out.rejected = rejected;
  return out;
}

JsonlReader::JsonlReader(std::istream& in, Provider provider, const MappingTable& table)
    : in_(&in), provider_(provider), table_(&table) {}

JsonlReader::JsonlReader(const std::filesystem::path& path, Provider provider,
                         const MappingTable& table)
    : provider_(provider), table_(&table) {
  auto file = std::make_unique<std::ifstream>(path);
  if (!*file) throw IoError("cannot open " + path.string());
  owned_ = std::move(file);
  in_ = owned_.get();
}

std::optional<NormalizedEvent> JsonlReader::next() {
  std::string line;
  while (std::getline(*in_, line)) {
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      return parse_event(RawEvent{provider_, std::move(line)}, *table_);
    } catch (const ParseError&) {
      ++rejected_;
    }
  }
  if (in_->bad()) throw IoError("read error at line " + std::to_string(line_));
  return std::nullopt;
}

std::vector<NormalizedEvent> read_jsonl_file(const std::filesystem::path& path, Provider provider,
                                             std::size_t* rejected) {
  JsonlReader reader(path, provider);
  std::vector<NormalizedEvent> out;
  while (auto e = reader.next()) out.push_back(std::move(*e));
  if (rejected != nullptr) *rejected = reader.rejected();
  return out;
}

}  // namespace sentinel::ingest
