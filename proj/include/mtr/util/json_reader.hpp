#pragma once

#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "mtr/errors.hpp"

namespace mtr {

using Json = nlohmann::json;

// Pulls fields out of a JSON object by name. Absent keys leave the default in
// place; finish() rejects any key that was never asked for, so a typo in a
// config file fails loudly instead of silently running the default.
class JsonReader {
 public:
  JsonReader(const Json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class V>
  JsonReader& get(const char* key, V& out) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end() || it->is_null()) return *this;
    try {
      out = it->template get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  template <class V>
  JsonReader& get(const char* key, std::optional<V>& out) {
    V value = out.value_or(V{});
    const bool present = object_.contains(key) && !object_.at(key).is_null();
    get(key, value);
    if (present) out = std::move(value);
    return *this;
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const Json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace mtr
