#pragma once

// Key-value configuration files in a TOML subset:
//
//   # comment
//   seed = 7
//   [plant]
//   kind = "droop"
//   harmonics = [150, 250]
//   A = [[-20, 0],
//        [10, -40]]
//
// Values are numbers, booleans, double-quoted strings and (nested) arrays.
// Keys are addressed as "section.key". Errors name the file, line and key.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace nfid::config {

struct Value {
  enum class Kind { Number, Bool, String, Array };
  Kind kind = Kind::Number;
  double number = 0.0;
  bool is_integer = false;
  bool boolean = false;
  std::string string;
  std::vector<Value> array;
  int line = 0;
};

class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  [[nodiscard]] bool has(const std::string& key) const;

  [[nodiscard]] double number(const std::string& key) const;
  [[nodiscard]] double number(const std::string& key, double fallback) const;
  [[nodiscard]] long long integer(const std::string& key) const;
  [[nodiscard]] long long integer(const std::string& key, long long fallback) const;
  [[nodiscard]] bool boolean(const std::string& key, bool fallback) const;
  [[nodiscard]] std::string string(const std::string& key) const;
  [[nodiscard]] std::string string(const std::string& key, const std::string& fallback) const;
  [[nodiscard]] std::vector<double> numbers(const std::string& key) const;
  [[nodiscard]] std::vector<double> numbers(const std::string& key,
                                            const std::vector<double>& fallback) const;
  [[nodiscard]] std::vector<std::vector<double>> matrix(const std::string& key) const;
  [[nodiscard]] std::vector<std::string> strings(const std::string& key,
                                                 const std::vector<std::string>& fallback) const;

  /// Throws InputError naming the first key never read by a getter.
  void reject_unknown() const;

  /// Canonical text (sorted keys, shortest round-trip numbers).
  [[nodiscard]] std::string canonical() const;
  [[nodiscard]] const std::string& source() const { return source_; }

 private:
  const Value& get(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::string source_;
  std::map<std::string, Value> values_;
  mutable std::set<std::string> used_;
};

}  // namespace nfid::config
