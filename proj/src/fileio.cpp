#include "spamdet/fileio.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>

#include "spamdet/errors.hpp"

namespace spamdet {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path staging_path(const fs::path& path) {
  static std::atomic<unsigned> counter{0};
  fs::path p = path;
  if (!p.has_filename()) p = p.parent_path();
  return p.parent_path() / ("." + p.filename().string() + ".tmp-" + std::to_string(::getpid()) +
                            "-" + std::to_string(counter++));
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  const fs::path tmp = staging_path(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot move output into place at " + path.string() + ": " + ec.message());
  }
}

}  // namespace spamdet
