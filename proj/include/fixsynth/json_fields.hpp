#pragma once

// Typed reads from JSON config objects with errors that name the field path.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixsynth/error.hpp"

namespace fixsynth::json_fields {

inline void reject_unknown(const nlohmann::json& j, const std::string& path, const std::vector<std::string>& known) {
    if (!j.is_object()) throw ValidationError("config field '" + path + "': expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == it.key();
        if (!ok) throw ValidationError("config field '" + (path.empty() ? it.key() : path + "." + it.key()) + "': unknown key");
    }
}

/// Overwrites `out` with j[key] when present; type mismatches name the full path.
template <class T>
void read(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    const std::string where = path.empty() ? key : path + "." + key;
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError("config field '" + where + "': expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw ValidationError("config field '" + where + "': expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ValidationError("config field '" + where + "': expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ValidationError("config field '" + where + "': expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ValidationError("config field '" + where + "': expected a string");
    }
    try {
        out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config field '" + where + "': " + e.what());
    }
}

inline std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

inline void require(bool ok, const std::string& path, const std::string& message) {
    if (!ok) throw ValidationError("config field '" + path + "': " + message);
}

}  // namespace fixsynth::json_fields
