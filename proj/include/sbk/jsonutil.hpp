#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "sbk/errors.hpp"

namespace sbk {

// Config files are versioned and closed: unknown keys are hard errors so a
// typo cannot silently fall back to a default mid-ablation.
inline void check_config_keys(const nlohmann::ordered_json& j,
                              const std::set<std::string>& allowed,
                              const std::string& what) {
    if (!j.is_object()) throw ParameterError(what + ": expected a JSON object");
    std::string unknown;
    for (const auto& item : j.items())
        if (!allowed.count(item.key())) unknown += (unknown.empty() ? "" : ", ") + item.key();
    if (!unknown.empty())
        throw ParameterError(what + ": unknown keys: " + unknown);
    if (!j.contains("version") || !j["version"].is_number_integer() ||
        j["version"].get<int>() != 1)
        throw ParameterError(what + ": missing or unsupported \"version\" (expected 1)");
}

template <typename T>
T json_get(const nlohmann::ordered_json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParameterError("config field \"" + key + "\" has the wrong type");
    }
}

} // namespace sbk
