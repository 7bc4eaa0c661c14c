#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "dyn/error.hpp"

namespace dyn {

using Json = nlohmann::json;

Json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const Json& j);

// FNV-1a 64 over the canonical (sorted-key, compact) dump. Changes iff any
// field changes.
uint64_t canonical_hash(const Json& j);
std::string hash_hex(uint64_t h);

// Field accessor that names the missing/ill-typed field in the error.
template <class T>
T json_get(const Json& j, const std::string& field) {
  if (!j.contains(field)) throw UsageError("config field missing: " + field);
  try {
    return j.at(field).get<T>();
  } catch (const std::exception&) {
    throw UsageError("config field has wrong type: " + field);
  }
}

template <class T>
T json_get_or(const Json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const std::exception&) {
    throw UsageError("config field has wrong type: " + field);
  }
}

}  // namespace dyn
