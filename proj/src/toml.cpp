#include "mflab/toml.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mflab {

const std::string& TomlValue::as_string() const {
    if (kind != Kind::string) throw ConfigError("config value is not a string (line " +
                                                std::to_string(line) + ")");
    return str;
}

double TomlValue::as_number() const {
    if (kind != Kind::number) throw ConfigError("config value is not a number (line " +
                                                std::to_string(line) + ")");
    return num;
}

long TomlValue::as_integer() const {
    const double v = as_number();
    if (std::floor(v) != v)
        throw ConfigError("config value is not an integer (line " + std::to_string(line) + ")");
    return static_cast<long>(v);
}

bool TomlValue::as_bool() const {
    if (kind != Kind::boolean) throw ConfigError("config value is not a boolean (line " +
                                                 std::to_string(line) + ")");
    return flag;
}

const std::vector<double>& TomlValue::as_number_array() const {
    if (kind != Kind::number_array)
        throw ConfigError("config value is not a number array (line " + std::to_string(line) +
                          ")");
    return nums;
}

bool TomlTable::has(const std::string& key) const { return find(key) != nullptr; }

const TomlValue* TomlTable::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

const TomlValue& TomlTable::at(const std::string& key) const {
    const TomlValue* v = find(key);
    if (!v) throw ConfigError("missing config key: " + key);
    return *v;
}

bool TomlDoc::has_section(const std::string& name) const { return find_section(name) != nullptr; }

const TomlTable* TomlDoc::find_section(const std::string& name) const {
    for (const auto& [n, t] : sections)
        if (n == name) return &t;
    return nullptr;
}

namespace {

struct Cursor {
    const std::string& s;
    std::size_t pos = 0;
    int line;

    bool done() const { return pos >= s.size(); }
    char peek() const { return s[pos]; }
    void skip_spaces() {
        while (!done() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
    }
    [[noreturn]] void fail(const std::string& why) const { throw ParseError(why, line); }
};

bool is_bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
}

std::string parse_quoted(Cursor& c) {
    // opening quote already consumed
    std::string out;
    while (true) {
        if (c.done()) c.fail("unterminated string");
        const char ch = c.s[c.pos++];
        if (ch == '"') return out;
        if (ch == '\\') {
            if (c.done()) c.fail("unterminated escape");
            const char esc = c.s[c.pos++];
            switch (esc) {
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                default: c.fail("unsupported escape sequence");
            }
        } else {
            out.push_back(ch);
        }
    }
}

double parse_number(Cursor& c) {
    const std::size_t start = c.pos;
    while (!c.done()) {
        const char ch = c.peek();
        if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '+' || ch == '-' ||
            ch == '.' || ch == 'e' || ch == 'E') {
            ++c.pos;
        } else {
            break;
        }
    }
    double value = 0.0;
    const char* first = c.s.data() + start;
    const char* last = c.s.data() + c.pos;
    const auto [end, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || end != last || first == last) c.fail("malformed number");
    return value;
}

TomlValue parse_value(Cursor& c, int line) {
    TomlValue v;
    v.line = line;
    c.skip_spaces();
    if (c.done()) c.fail("missing value after '='");
    const char ch = c.peek();
    if (ch == '"') {
        ++c.pos;
        v.kind = TomlValue::Kind::string;
        v.str = parse_quoted(c);
    } else if (ch == '[') {
        ++c.pos;
        v.kind = TomlValue::Kind::number_array;
        c.skip_spaces();
        if (!c.done() && c.peek() == ']') {
            ++c.pos;
        } else {
            while (true) {
                c.skip_spaces();
                v.nums.push_back(parse_number(c));
                c.skip_spaces();
                if (c.done()) c.fail("unterminated array");
                const char sep = c.s[c.pos++];
                if (sep == ']') break;
                if (sep != ',') c.fail("expected ',' or ']' in array");
            }
        }
    } else if (c.s.compare(c.pos, 4, "true") == 0 &&
               (c.pos + 4 >= c.s.size() || !is_bare_key_char(c.s[c.pos + 4]))) {
        c.pos += 4;
        v.kind = TomlValue::Kind::boolean;
        v.flag = true;
    } else if (c.s.compare(c.pos, 5, "false") == 0 &&
               (c.pos + 5 >= c.s.size() || !is_bare_key_char(c.s[c.pos + 5]))) {
        c.pos += 5;
        v.kind = TomlValue::Kind::boolean;
        v.flag = false;
    } else {
        v.kind = TomlValue::Kind::number;
        v.num = parse_number(c);
    }
    c.skip_spaces();
    if (!c.done() && c.peek() != '#') c.fail("unexpected text after value");
    return v;
}

void insert_entry(TomlTable& table, const std::string& key, TomlValue value, int line) {
    if (table.has(key)) throw ParseError("duplicate key: " + key, line);
    table.entries.emplace_back(key, std::move(value));
}

}  // namespace

TomlDoc parse_toml(const std::string& text) {
    TomlDoc doc;
    TomlTable* current = &doc.root;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        Cursor c{raw, 0, line_no};
        c.skip_spaces();
        if (c.done() || c.peek() == '#') continue;

        if (c.peek() == '[') {
            ++c.pos;
            std::string name;
            while (!c.done() && c.peek() != ']') name.push_back(c.s[c.pos++]);
            if (c.done()) c.fail("unterminated section header");
            ++c.pos;  // ']'
            c.skip_spaces();
            if (!c.done() && c.peek() != '#') c.fail("unexpected text after section header");
            if (name.empty()) c.fail("empty section name");
            for (char ch : name)
                if (!is_bare_key_char(ch)) c.fail("invalid section name: " + name);
            if (doc.has_section(name)) c.fail("duplicate section: " + name);
            doc.sections.emplace_back(name, TomlTable{});
            current = &doc.sections.back().second;
            continue;
        }

        std::string key;
        while (!c.done() && is_bare_key_char(c.peek())) key.push_back(c.s[c.pos++]);
        if (key.empty()) c.fail("expected a key");
        c.skip_spaces();
        if (c.done() || c.peek() != '=') c.fail("expected '=' after key: " + key);
        ++c.pos;
        insert_entry(*current, key, parse_value(c, line_no), line_no);
    }
    return doc;
}

TomlDoc load_toml(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str());
}

}  // namespace mflab
