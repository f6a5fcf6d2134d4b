#include "agentloom/json_reader.hpp"

#include <algorithm>

namespace agentloom::detail {

ObjectReader::ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) {
    throw Error(ErrorCode::schema_error, path_ + ": expected an object", path_);
  }
}

std::string ObjectReader::field(std::string_view key) const {
  return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
}

void ObjectReader::type_error(std::string_view key, std::string_view expected) const {
  throw Error(ErrorCode::schema_error, field(key) + ": expected " + std::string(expected),
              field(key));
}

const Json* ObjectReader::get(std::string_view key) const {
  seen_.emplace_back(key);
  auto it = j_.find(std::string(key));
  if (it == j_.end() || it->is_null()) return nullptr;
  return &*it;
}

const Json& ObjectReader::required(std::string_view key) const {
  const Json* v = get(key);
  if (!v) {
    throw Error(ErrorCode::schema_error, field(key) + ": missing required field", field(key));
  }
  return *v;
}

std::string ObjectReader::str(std::string_view key) const {
  const Json& v = required(key);
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

std::optional<std::string> ObjectReader::opt_str(std::string_view key) const {
  const Json* v = get(key);
  if (!v) return std::nullopt;
  if (!v->is_string()) type_error(key, "a string");
  return v->get<std::string>();
}

std::string ObjectReader::str_or(std::string_view key, std::string fallback) const {
  auto v = opt_str(key);
  return v ? *v : std::move(fallback);
}

std::int64_t ObjectReader::integer(std::string_view key) const {
  const Json& v = required(key);
  if (!v.is_number_integer()) type_error(key, "an integer");
  return v.get<std::int64_t>();
}

std::optional<std::int64_t> ObjectReader::opt_int(std::string_view key) const {
  const Json* v = get(key);
  if (!v) return std::nullopt;
  if (!v->is_number_integer()) type_error(key, "an integer");
  return v->get<std::int64_t>();
}

std::int64_t ObjectReader::int_or(std::string_view key, std::int64_t fallback) const {
  return opt_int(key).value_or(fallback);
}

double ObjectReader::number(std::string_view key) const {
  const Json& v = required(key);
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

double ObjectReader::number_or(std::string_view key, double fallback) const {
  const Json* v = get(key);
  if (!v) return fallback;
  if (!v->is_number()) type_error(key, "a number");
  return v->get<double>();
}

bool ObjectReader::boolean_or(std::string_view key, bool fallback) const {
  const Json* v = get(key);
  if (!v) return fallback;
  if (!v->is_boolean()) type_error(key, "a boolean");
  return v->get<bool>();
}

std::vector<std::string> ObjectReader::strings(std::string_view key) const {
  std::vector<std::string> out;
  const Json* v = array(key);
  if (!v) return out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    if (!(*v)[i].is_string()) {
      auto p = index_path(field(key), i);
      throw Error(ErrorCode::schema_error, p + ": expected a string", p);
    }
    out.push_back((*v)[i].get<std::string>());
  }
  return out;
}

const Json* ObjectReader::array(std::string_view key) const {
  const Json* v = get(key);
  if (v && !v->is_array()) type_error(key, "an array");
  return v;
}

const Json* ObjectReader::object(std::string_view key) const {
  const Json* v = get(key);
  if (v && !v->is_object()) type_error(key, "an object");
  return v;
}

void ObjectReader::finish() const {
  for (const auto& [key, value] : j_.items()) {
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
      throw Error(ErrorCode::schema_error, field(key) + ": unknown field", field(key));
    }
  }
}

std::string index_path(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

}  // namespace agentloom::detail
