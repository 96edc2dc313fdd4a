#ifndef MTSSTRAT_CONFIG_HPP
#define MTSSTRAT_CONFIG_HPP

#include "common.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mtsstrat {

/// Typed, strict access to one JSON object: every key must be consumed,
/// otherwise finish() reports the first unknown one.
class ConfigSection {
public:
    ConfigSection(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(path_ + ": expected an object");
        }
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) {
            return fallback;
        }
        return convert<T>(key);
    }

    template <typename T>
    T require(const std::string& key) {
        if (!has(key)) {
            throw ConfigError(path_ + ": missing required key '" + key + "'");
        }
        return convert<T>(key);
    }

    ConfigSection section(const std::string& key) {
        seen_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return ConfigSection(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
    }

    const nlohmann::json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) {
                throw ConfigError(path_ + ": unknown key '" + k + "'");
            }
        }
    }

    const std::string& path() const { return path_; }

private:
    template <typename T>
    T convert(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }

    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json parse_config_text(const std::string& text, const std::string& origin) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

} // namespace mtsstrat

#endif
