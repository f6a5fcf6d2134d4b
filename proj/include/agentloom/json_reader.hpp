#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agentloom/error.hpp"
#include "agentloom/util.hpp"

namespace agentloom::detail {

// Strict reader over one JSON object: typed accessors that report the field
// path on mismatch, and finish() which rejects keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path);

  std::string str(std::string_view key) const;
  std::string str_or(std::string_view key, std::string fallback) const;
  std::optional<std::string> opt_str(std::string_view key) const;
  std::int64_t integer(std::string_view key) const;
  std::int64_t int_or(std::string_view key, std::int64_t fallback) const;
  std::optional<std::int64_t> opt_int(std::string_view key) const;
  double number(std::string_view key) const;
  double number_or(std::string_view key, double fallback) const;
  bool boolean_or(std::string_view key, bool fallback) const;
  std::vector<std::string> strings(std::string_view key) const;
  const Json* get(std::string_view key) const;
  const Json& required(std::string_view key) const;
  const Json* array(std::string_view key) const;
  const Json* object(std::string_view key) const;

  template <typename Enum>
  Enum enumeration(std::string_view key, Enum fallback,
                   std::initializer_list<std::pair<std::string_view, Enum>> names) const {
    auto text = opt_str(key);
    if (!text) return fallback;
    for (const auto& [name, value] : names) {
      if (name == *text) return value;
    }
    std::string allowed;
    for (const auto& [name, value] : names) {
      if (!allowed.empty()) allowed += ", ";
      allowed += name;
    }
    throw Error(ErrorCode::schema_error,
                field(key) + ": unknown value \"" + *text + "\" (expected one of " + allowed + ")",
                field(key));
  }

  std::string field(std::string_view key) const;
  const std::string& path() const noexcept { return path_; }

  // Throws schema_error naming the first key that no accessor touched.
  void finish() const;

 private:
  [[noreturn]] void type_error(std::string_view key, std::string_view expected) const;

  const Json& j_;
  std::string path_;
  mutable std::vector<std::string> seen_;
};

std::string index_path(const std::string& path, std::size_t i);

}  // namespace agentloom::detail
