#include "sentinel/common/fs.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sentinel {

namespace {

std::function<void(std::string_view)>& hook() {
  static std::function<void(std::string_view)> h;
  return h;
}

[[noreturn]] void fail(const std::string& what, const std::filesystem::path& p) {
  throw FileError(what + " " + p.string() + ": " + std::strerror(errno));
}

void sync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail("cannot create", tmp);
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      fail("cannot write", tmp);
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    fail("cannot sync", tmp);
  }
  ::close(fd);
  if (hook()) hook()("written");
  if (::rename(tmp.c_str(), path.c_str()) != 0) fail("cannot rename onto", path);
  sync_dir(path.parent_path());
  if (hook()) hook()("renamed");
}

void set_atomic_write_hook(std::function<void(std::string_view)> h) { hook() = std::move(h); }

void truncate_file(const std::filesystem::path& path, std::uintmax_t size) {
  std::error_code ec;
  const auto current = std::filesystem::file_size(path, ec);
  if (ec || current <= size) return;
  std::filesystem::resize_file(path, size);
}

}  // namespace sentinel
