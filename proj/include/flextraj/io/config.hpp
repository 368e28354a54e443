// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flextraj/error.hpp"
#include "flextraj/io/atomic_file.hpp"
#include "flextraj/trajectory.hpp"

namespace flextraj {

inline constexpr int kConfigFormatVersion = 1;

/// Versioned key = value text. First non-comment line is
/// "flextraj-config <version>"; '#' starts a comment; later keys win.
/// Every read marks its key as used so callers can reject typos.
class KeyValueConfig {
   public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(const std::string& text) {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string line;
        bool header = false;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (!header) {
                auto words = detail::split_ws(trimmed);
                if (words.size() != 2 || words[0] != "flextraj-config") {
                    throw Error(ErrorKind::parse, "config must start with 'flextraj-config <version>'");
                }
                if (detail::parse_int(words[1], "config version") != kConfigFormatVersion) {
                    throw Error(ErrorKind::parse, "unsupported config version " + words[1]);
                }
                header = true;
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw Error(ErrorKind::parse, "config line " + std::to_string(lineno) + ": expected key = value");
            }
            const auto key = trim(trimmed.substr(0, eq));
            if (key.empty()) throw Error(ErrorKind::parse, "config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = trim(trimmed.substr(eq + 1));
        }
        if (!header) throw Error(ErrorKind::parse, "config is empty or missing its header");
        return cfg;
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        auto in = open_input(path, false);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    std::string dump() const {
        std::string out = "flextraj-config " + std::to_string(kConfigFormatVersion) + "\n";
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        used_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        return has(key) ? detail::parse_double(get_string(key, ""), key.c_str()) : (used_.insert(key), fallback);
    }

    long long get_int(const std::string& key, long long fallback) const {
        return has(key) ? detail::parse_int(get_string(key, ""), key.c_str()) : (used_.insert(key), fallback);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        const auto v = get_string(key, "");
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw Error(ErrorKind::parse, "config key " + key + ": expected true/false, got '" + v + "'");
    }

    /// Comma- or whitespace-separated numbers.
    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
        if (!has(key)) {
            used_.insert(key);
            return fallback;
        }
        auto v = get_string(key, "");
        for (auto& ch : v)
            if (ch == ',') ch = ' ';
        std::vector<double> out;
        for (const auto& w : detail::split_ws(v)) out.push_back(detail::parse_double(w, key.c_str()));
        return out;
    }

    /// Throws on any key no reader asked for.
    void reject_unused() const {
        for (const auto& [k, v] : values_) {
            if (!used_.count(k)) throw Error(ErrorKind::parse, "unknown config key '" + k + "'");
        }
    }

   private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

}  // namespace flextraj
