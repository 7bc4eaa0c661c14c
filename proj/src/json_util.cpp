#include "dyn/json_util.hpp"

#include <fstream>
#include <sstream>

namespace dyn {

Json load_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f.good()) throw UsageError("cannot open config/json file: " + path.string());
  try {
    Json j;
    f >> j;
    return j;
  } catch (const std::exception& e) {
    throw UsageError("json parse error in " + path.string() + ": " + e.what());
  }
}

void save_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream f(path);
  require_data(f.good(), "cannot open for write: " + path.string());
  f << j.dump(2) << "\n";
  require_data(f.good(), "write failed: " + path.string());
}

uint64_t canonical_hash(const Json& j) {
  // nlohmann objects are key-sorted, so dump() is canonical.
  std::string s = j.dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  for (int i = 15; i >= 0; --i) os << "0123456789abcdef"[(h >> (4 * i)) & 0xf];
  return os.str();
}

}  // namespace dyn
