#pragma once

#include <filesystem>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sentinel {

class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);

// Writes to "<path>.tmp", fsyncs, then renames over `path`. A reader never
// observes a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// Test hook: called with "written" (temp file complete, not yet renamed) and
// "renamed". Throwing from it simulates a crash at that point.
void set_atomic_write_hook(std::function<void(std::string_view stage)> hook);

// Truncates an append-only log back to `size` bytes (no-op when shorter).
void truncate_file(const std::filesystem::path& path, std::uintmax_t size);

}  // namespace sentinel
