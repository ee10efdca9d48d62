#include "nfid/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nfid/csv.hpp"
#include "nfid/error.hpp"

namespace nfid::config {
namespace {

class Parser {
 public:
  Parser(std::string_view text, const std::string& source, int line)
      : text_(text), source_(source), line_(line) {}

  Value value() {
    skip_ws();
    if (pos_ >= text_.size()) error("missing value");
    const char c = text_[pos_];
    Value v;
    v.line = line_;
    if (c == '"') {
      v.kind = Value::Kind::String;
      v.string = quoted();
    } else if (c == '[') {
      v.kind = Value::Kind::Array;
      ++pos_;
      skip_ws();
      if (peek() == ']') {
        ++pos_;
        return v;
      }
      while (true) {
        v.array.push_back(value());
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          skip_ws();
          if (peek() == ']') {
            ++pos_;
            break;
          }
          continue;
        }
        if (peek() == ']') {
          ++pos_;
          break;
        }
        error("expected ',' or ']' in array");
      }
    } else if (text_.substr(pos_, 4) == "true") {
      v.kind = Value::Kind::Bool;
      v.boolean = true;
      pos_ += 4;
    } else if (text_.substr(pos_, 5) == "false") {
      v.kind = Value::Kind::Bool;
      pos_ += 5;
    } else {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
                                     text_[pos_] == '.' || text_[pos_] == '-' ||
                                     text_[pos_] == '+' || text_[pos_] == '_')) {
        ++pos_;
      }
      std::string tok(text_.substr(start, pos_ - start));
      std::erase(tok, '_');
      if (tok.empty()) error("unexpected character '" + std::string(1, c) + "'");
      v.kind = Value::Kind::Number;
      v.number = csv::parse_double(tok, source_ + ":" + std::to_string(line_));
      v.is_integer = tok.find_first_of(".eE") == std::string::npos;
    }
    return v;
  }

  void expect_end() {
    skip_ws();
    if (pos_ != text_.size()) error("trailing characters after value");
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
      } else if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string quoted() {
    ++pos_;
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      char c = text_[pos_++];
      if (c == '\n') error("unterminated string");
      if (c == '\\' && pos_ < text_.size()) {
        const char e = text_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: error("unsupported escape sequence");
        }
      }
      out.push_back(c);
    }
    if (pos_ >= text_.size()) error("unterminated string");
    ++pos_;
    return out;
  }

  [[noreturn]] void error(const std::string& what) const {
    throw InputError(source_ + ":" + std::to_string(line_) + ": " + what);
  }

  std::string_view text_;
  const std::string& source_;
  int line_;
  std::size_t pos_ = 0;
};

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.') return false;
  }
  return k.front() != '.' && k.back() != '.';
}

// Net bracket depth of a line, ignoring strings and comments.
int bracket_balance(std::string_view line) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (in_string) {
      if (c == '\\') ++k;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      break;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      --depth;
    }
  }
  return depth;
}

void canonical_value(std::ostream& os, const Value& v) {
  switch (v.kind) {
    case Value::Kind::Number: os << csv::format_double(v.number); break;
    case Value::Kind::Bool: os << (v.boolean ? "true" : "false"); break;
    case Value::Kind::String: {
      os << '"';
      for (char c : v.string) {
        if (c == '"' || c == '\\') os << '\\';
        if (c == '\n') {
          os << "\\n";
          continue;
        }
        os << c;
      }
      os << '"';
      break;
    }
    case Value::Kind::Array: {
      os << '[';
      for (std::size_t k = 0; k < v.array.size(); ++k) {
        if (k) os << ", ";
        canonical_value(os, v.array[k]);
      }
      os << ']';
      break;
    }
  }
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::string section;
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    lines.push_back(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }

  for (std::size_t k = 0; k < lines.size(); ++k) {
    const int lineno = static_cast<int>(k + 1);
    const std::string where = source + ":" + std::to_string(lineno);
    std::string line = trim(lines[k]);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[' && line.find('=') == std::string::npos) {
      auto close = line.find(']');
      if (close == std::string::npos) throw InputError(where + ": unterminated section header");
      const std::string rest = trim(std::string_view(line).substr(close + 1));
      if (!rest.empty() && rest.front() != '#') throw InputError(where + ": text after section header");
      section = trim(std::string_view(line).substr(1, close - 1));
      if (!valid_key(section)) throw InputError(where + ": invalid section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (!valid_key(key)) throw InputError(where + ": invalid key '" + key + "'");
    std::string rhs = std::string(std::string_view(line).substr(eq + 1));
    int depth = bracket_balance(rhs);
    while (depth > 0 && k + 1 < lines.size()) {
      ++k;
      rhs += "\n";
      rhs += std::string(lines[k]);
      depth += bracket_balance(lines[k]);
    }
    Parser p(rhs, source, lineno);
    Value v = p.value();
    p.expect_end();
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.values_.count(full)) throw InputError(where + ": duplicate key '" + full + "'");
    cfg.values_.emplace(full, std::move(v));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str(), path.string());
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

void Config::fail(const std::string& key, const std::string& what) const {
  const auto it = values_.find(key);
  const std::string where = it == values_.end() ? source_ : source_ + ":" + std::to_string(it->second.line);
  throw InputError(where + ": field '" + key + "': " + what);
}

const Value& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(key, "missing");
  used_.insert(key);
  return it->second;
}

double Config::number(const std::string& key) const {
  const auto& v = get(key);
  if (v.kind != Value::Kind::Number) fail(key, "expected a number");
  return v.number;
}

double Config::number(const std::string& key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

long long Config::integer(const std::string& key) const {
  const double x = number(key);
  if (x != std::floor(x) || std::abs(x) > 9.0e15) fail(key, "expected an integer");
  return static_cast<long long>(x);
}

long long Config::integer(const std::string& key, long long fallback) const {
  return has(key) ? integer(key) : fallback;
}

bool Config::boolean(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto& v = get(key);
  if (v.kind != Value::Kind::Bool) fail(key, "expected true or false");
  return v.boolean;
}

std::string Config::string(const std::string& key) const {
  const auto& v = get(key);
  if (v.kind != Value::Kind::String) fail(key, "expected a string");
  return v.string;
}

std::string Config::string(const std::string& key, const std::string& fallback) const {
  return has(key) ? string(key) : fallback;
}

std::vector<double> Config::numbers(const std::string& key) const {
  const auto& v = get(key);
  if (v.kind != Value::Kind::Array) fail(key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v.array) {
    if (e.kind != Value::Kind::Number) fail(key, "expected an array of numbers");
    out.push_back(e.number);
  }
  return out;
}

std::vector<double> Config::numbers(const std::string& key, const std::vector<double>& fallback) const {
  return has(key) ? numbers(key) : fallback;
}

std::vector<std::vector<double>> Config::matrix(const std::string& key) const {
  const auto& v = get(key);
  if (v.kind != Value::Kind::Array) fail(key, "expected an array of rows");
  std::vector<std::vector<double>> out;
  for (const auto& row : v.array) {
    if (row.kind != Value::Kind::Array) fail(key, "expected an array of rows");
    std::vector<double> r;
    for (const auto& e : row.array) {
      if (e.kind != Value::Kind::Number) fail(key, "matrix entries must be numbers");
      r.push_back(e.number);
    }
    if (!out.empty() && r.size() != out.front().size()) fail(key, "rows have different lengths");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> Config::strings(const std::string& key,
                                         const std::vector<std::string>& fallback) const {
  if (!has(key)) return fallback;
  const auto& v = get(key);
  if (v.kind != Value::Kind::Array) fail(key, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v.array) {
    if (e.kind != Value::Kind::String) fail(key, "expected an array of strings");
    out.push_back(e.string);
  }
  return out;
}

void Config::reject_unknown() const {
  for (const auto& [key, v] : values_) {
    if (!used_.count(key)) fail(key, "unknown field");
  }
}

std::string Config::canonical() const {
  std::ostringstream os;
  for (const auto& [key, v] : values_) {
    os << key << " = ";
    canonical_value(os, v);
    os << '\n';
  }
  return os.str();
}

}  // namespace nfid::config
