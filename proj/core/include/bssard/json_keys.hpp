#pragma once

// Strict readers for JSON config objects: unknown keys and wrongly typed values
// are kConfig errors naming the full key path.

#include <initializer_list>
#include <nlohmann/json.hpp>
#include <string>

#include "bssard/error.hpp"

namespace bssard::json_keys {

template <typename V>
void read(const nlohmann::json& j, const std::string& prefix, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kConfig, "'" + prefix + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& prefix,
                           std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw Error(ErrorCode::kConfig, "unknown key '" + prefix + it.key() + "'");
  }
}

inline void require_object(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "'" + what + "' must be an object");
}

}  // namespace bssard::json_keys
