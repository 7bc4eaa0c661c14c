#include "dyn/runio.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>

#include "dyn/error.hpp"

namespace dyn {

void append_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest) {
  std::filesystem::create_directories(out_dir);
  Json j;
  j["command"] = manifest.command;
  j["config_hash"] = manifest.config_hash;
  j["seed"] = manifest.seed;
  j["inputs"] = manifest.inputs;
  j["outputs"] = manifest.outputs;
  j["tool_version"] = kToolVersion;
  j["wall_seconds"] = manifest.wall_seconds;
  std::ofstream f(out_dir / "manifests.jsonl", std::ios::app);
  require_data(f.good(), "cannot append manifest in " + out_dir.string());
  f << j.dump() << "\n";
}

OutputLock::OutputLock(const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  path_ = out_dir / ".lock";
  int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw DataError("output directory is locked by another run: " + out_dir.string() +
                    " (remove .lock if stale)");
  ::close(fd);
  held_ = true;
}

OutputLock::~OutputLock() {
  if (held_) {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
}

}  // namespace dyn
