#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mflab/errors.hpp"

namespace mflab {

/// Value of one key in a config file. Only the shapes the experiment config
/// actually uses: strings, numbers, booleans, and flat number arrays.
struct TomlValue {
    enum class Kind { string, number, boolean, number_array };
    Kind kind = Kind::number;
    std::string str;
    double num = 0.0;
    bool flag = false;
    std::vector<double> nums;
    int line = 0;  // source line, for error messages

    const std::string& as_string() const;
    double as_number() const;
    long as_integer() const;  // number with no fractional part
    bool as_bool() const;
    const std::vector<double>& as_number_array() const;
};

/// One section (or the top level): keys in file order, duplicates rejected
/// at parse time.
struct TomlTable {
    std::vector<std::pair<std::string, TomlValue>> entries;

    bool has(const std::string& key) const;
    const TomlValue* find(const std::string& key) const;
    const TomlValue& at(const std::string& key) const;  // ConfigError if absent
};

struct TomlDoc {
    TomlTable root;
    std::vector<std::pair<std::string, TomlTable>> sections;

    bool has_section(const std::string& name) const;
    const TomlTable* find_section(const std::string& name) const;
};

/// Line-oriented parser for the subset above: `[section]` headers, `key =
/// value` pairs, `#` comments, quoted strings with backslash escapes.
/// Malformed input raises ParseError carrying the line number; duplicate
/// keys and sections are errors.
TomlDoc parse_toml(const std::string& text);
TomlDoc load_toml(const std::string& path);

}  // namespace mflab
