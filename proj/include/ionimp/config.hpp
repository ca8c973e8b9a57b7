#pragma once

// Minimal key-value configuration:
//
//   # comment
//   sim.area = B
//   anneal.yield = 0.5      # trailing comments are allowed
//
// Keys are case-sensitive; later assignments override earlier ones. Typed
// getters raise ConfigError naming the offending key.

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ionimp/core.hpp"

namespace ionimp {

class ConfigError : public Error {
public:
    ConfigError(const std::string& key, const std::string& what)
        : Error("config key '" + key + "': " + what), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

class Config {
public:
    static std::string trim(std::string_view s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string_view::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return std::string(s.substr(b, e - b + 1));
    }

    static Config parse(std::istream& is, const std::string& source = "<config>") {
        Config cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(t, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
            }
            const std::string key = trim(std::string_view(t).substr(0, eq));
            if (key.empty()) throw ConfigError("", source + ":" + std::to_string(lineno) + ": empty key");
            cfg.set(key, trim(std::string_view(t).substr(eq + 1)));
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("<file>", "cannot open " + path);
        return parse(f, path);
    }

    /// Applies "key=value".
    void set_assignment(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError(kv, "override must look like key=value");
        set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.contains(key); }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        double v = 0.0;
        const auto& s = it->second;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError(key, "not a number: '" + s + "'");
        return v;
    }

    long get_long(const std::string& key, long fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        long v = 0;
        const auto& s = it->second;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw ConfigError(key, "not an integer: '" + s + "'");
        return v;
    }

    std::size_t get_count(const std::string& key, std::size_t fallback) const {
        const long v = get_long(key, static_cast<long>(fallback));
        if (v < 0) throw ConfigError(key, "must be >= 0");
        return static_cast<std::size_t>(v);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const auto& s = it->second;
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw ConfigError(key, "not a boolean: '" + s + "'");
    }

    /// Comma-separated integers; empty string gives an empty set.
    std::set<int> get_int_set(const std::string& key, const std::set<int>& fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::set<int> out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = trim(item);
            if (t.empty()) continue;
            int v = 0;
            const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
            if (r.ec != std::errc{} || r.ptr != t.data() + t.size()) throw ConfigError(key, "bad integer list: '" + it->second + "'");
            out.insert(v);
        }
        return out;
    }

    /// Throws on the first key not in `known`.
    void require_known(const std::set<std::string>& known) const {
        for (const auto& [k, v] : values_)
            if (!known.contains(k)) throw ConfigError(k, "unknown key");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    void write(std::ostream& os) const {
        for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace ionimp
