#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dyn/json_util.hpp"

namespace dyn {

inline constexpr const char* kToolVersion = "dynd 0.1.0";

// Every CLI run appends exactly one line to <out>/manifests.jsonl.
struct RunManifest {
  std::string command;
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_seconds = 0;
};

void append_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

// Exclusive .lock file in the output directory; concurrent writers fail.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
  bool held_ = false;
};

}  // namespace dyn
