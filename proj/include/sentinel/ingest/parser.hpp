#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentinel/ingest/event.hpp"

namespace sentinel::ingest {

enum class ParseErrorKind { malformed_json, missing_field, invalid_timestamp, invalid_field };

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::string field, const std::string& what)
      : std::runtime_error(what), kind_(kind), field_(std::move(field)) {}

  ParseErrorKind kind() const { return kind_; }
  // Name of the offending unified-schema field; empty for malformed_json.
  const std::string& field() const { return field_; }

 private:
  ParseErrorKind kind_;
  std::string field_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// How a provider's status field maps onto Result.
struct ResultRule {
  std::vector<std::string> paths;
  std::optional<Result> when_absent;        // unset: absence is MissingField
  std::map<std::string, Result> values;     // provider value -> Result
  std::optional<Result> fallback;           // unmatched present value
};

// Candidate source paths per unified field; the first path present wins.
struct ProviderMapping {
  std::vector<std::string> timestamp;
  std::vector<std::string> user;
  std::vector<std::string> role;
  std::vector<std::string> resource;
  std::vector<std::string> action;
  ResultRule result;
  std::vector<std::string> session;
  std::vector<std::string> privilege;
  std::vector<std::string> duration;
};

class MappingTable {
 public:
  // The table compiled from data/provider_mappings.json.
  static const MappingTable& builtin();
  static MappingTable from_json(std::string_view text);
  static MappingTable from_file(const std::filesystem::path& path);

  const ProviderMapping& get(Provider p) const;
  const std::string& status() const { return status_; }

 private:
  std::map<Provider, ProviderMapping> providers_;
  std::string status_;
};

// Throws ParseError.
NormalizedEvent parse_event(const RawEvent& raw,
                            const MappingTable& table = MappingTable::builtin());

struct BatchResult {
  std::vector<NormalizedEvent> events;  // sorted, duplicate-free
  std::size_t rejected = 0;             // parse failures
  std::size_t duplicates = 0;           // exact duplicates collapsed
};

// Parses, sorts and de-duplicates. Never throws on bad records.
BatchResult normalize_batch(std::span<const RawEvent> raws,
                            const MappingTable& table = MappingTable::builtin());

// Sort + exact de-duplication of already-parsed events.
BatchResult normalize_events(std::vector<NormalizedEvent> events);

// Pulls one normalized event per JSONL line from a stream. Blank lines are
// skipped; unparseable lines are dropped and counted. Single consumer.
class JsonlReader {
 public:
  JsonlReader(std::istream& in, Provider provider,
              const MappingTable& table = MappingTable::builtin());
  // Opens a file; throws IoError if it cannot be read.
  JsonlReader(const std::filesystem::path& path, Provider provider,
              const MappingTable& table = MappingTable::builtin());

  std::optional<NormalizedEvent> next();

  std::size_t rejected() const { return rejected_; }
  std::size_t line_number() const { return line_; }

 private:
  std::unique_ptr<std::istream> owned_;
  std::istream* in_;
  Provider provider_;
  const MappingTable* table_;
  std::size_t rejected_ = 0;
  std::size_t line_ = 0;
};

// Convenience: reads a whole file in source order.
std::vector<NormalizedEvent> read_jsonl_file(const std::filesystem::path& path,
                                             Provider provider = Provider::generic,
                                             std::size_t* rejected = nullptr);

}  // namespace sentinel::ingest
