#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"
#include "lofi/error.hpp"

namespace lofi::detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& section) {
  if (!j.is_object()) throw Error(ErrorCode::Config, section + " must be a JSON object");
  const std::set<std::string> names(known.begin(), known.end());
  for (const auto& [key, value] : j.items()) {
    if (!names.contains(key)) throw Error(ErrorCode::Config, "unknown key '" + key + "' in " + section);
  }
}

template <class V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::Config, std::string("bad value for '") + key + "'");
  }
}

template <class V>
V get_or(const nlohmann::json& j, const char* key, V fallback) {
  read_key(j, key, fallback);
  return fallback;
}

template <class V>
V get_required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) {
    throw Error(ErrorCode::Config, std::string("missing required key '") + key + "'");
  }
  V out{};
  read_key(j, key, out);
  return out;
}

}  // namespace lofi::detail
