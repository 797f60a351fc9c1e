#pragma once

// Experiment configuration: UTF-8 key=value lines grouped under [section]
// headers. '#' starts a comment. Keys are addressed as "section.key".
// Validation is strict and exhaustive: every unknown key is collected and
// reported in one error.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "srdd/common.hpp"

namespace srdd {

class Config {
public:
    static Config parse_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("config line " + std::to_string(lineno) +
                                      ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty())
                    throw ConfigError("config line " + std::to_string(lineno) +
                                      ": empty section name");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": key outside any [section]");
            const std::string full = section + "." + key;
            if (cfg.values_.count(full))
                throw ConfigError("config: duplicate key " + full);
            cfg.values_[full] = value;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    int get_int(const std::string& key, int fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " is not an integer: " + it->second);
        }
    }

    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoll(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " is not an integer: " + it->second);
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " is not an unsigned integer: " + it->second);
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " is not a number: " + it->second);
        }
    }

    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::istringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (tok.empty()) continue;
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("config: " + key + " has a non-numeric entry: " + tok);
            }
        }
        return out;
    }

    std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<int> out;
        std::istringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (tok.empty()) continue;
            try {
                out.push_back(std::stoi(tok));
            } catch (const std::exception&) {
                throw ConfigError("config: " + key + " has a non-integer entry: " + tok);
            }
        }
        return out;
    }

    // Every key must be in `known`; all violations are reported together.
    void require_known_keys(const std::set<std::string>& known) const {
        std::vector<std::string> unknown;
        for (const auto& [k, v] : values_)
            if (!known.count(k)) unknown.push_back(k);
        if (!unknown.empty()) {
            std::string msg = "config: unknown keys:";
            for (const auto& k : unknown) msg += " " + k;
            throw ConfigError(msg);
        }
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace srdd
