#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "relnet/errors.hpp"

namespace relnet {

// Flat `key = value` config file with `#` comments. Values are kept as
// strings; typed access parses on demand. Unknown keys are rejected so typos
// fail loudly.
class KeyValueFile {
public:
    KeyValueFile() = default;

    static KeyValueFile load(const std::string& path, const std::set<std::string>& known_keys) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open config file '" + path + "'");
        KeyValueFile kv;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string stripped = strip(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw config_error("config file '" + path + "' line " + std::to_string(lineno) +
                                   ": expected 'key = value'");
            std::string key = strip(stripped.substr(0, eq));
            std::string value = strip(stripped.substr(eq + 1));
            if (key.empty())
                throw config_error("config file '" + path + "' line " + std::to_string(lineno) +
                                   ": empty key");
            if (!known_keys.count(key))
                throw config_error("config file '" + path + "' line " + std::to_string(lineno) +
                                   ": unknown key '" + key + "'");
            kv.values_[key] = value;
        }
        return kv;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const std::string& raw(const std::string& key) const { return values_.at(key); }

    template <class T>
    T get(const std::string& key) const {
        return parse_value<T>(values_.at(key), key);
    }

    template <class T>
    static T parse_value(const std::string& text, const std::string& key) {
        std::istringstream ss(text);
        T out{};
        ss >> out;
        if (ss.fail() || !(ss >> std::ws).eof())
            throw config_error("config key '" + key + "': cannot parse '" + text + "'");
        return out;
    }

private:
    static std::string strip(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

template <>
inline bool KeyValueFile::parse_value<bool>(const std::string& text, const std::string& key) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw config_error("config key '" + key + "': cannot parse '" + text + "' as bool");
}

template <>
inline std::string KeyValueFile::parse_value<std::string>(const std::string& text,
                                                          const std::string&) {
    return text;
}

// comma-separated integer lists, e.g. seeds = 0,1,2
template <class T>
inline std::vector<T> parse_int_list(const std::string& text, const std::string& key) {
    std::vector<T> out;
    std::string cur;
    std::istringstream ss(text);
    while (std::getline(ss, cur, ',')) {
        out.push_back(KeyValueFile::parse_value<T>(cur, key));
    }
    if (out.empty()) throw config_error("config key '" + key + "': empty list");
    return out;
}

} // namespace relnet
