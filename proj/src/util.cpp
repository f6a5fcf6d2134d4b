#include "agentloom/util.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include <boost/uuid/uuid.hpp>
#include <boost/uuid/uuid_generators.hpp>
#include <boost/uuid/uuid_io.hpp>

#include "agentloom/error.hpp"

namespace agentloom {

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* value = std::getenv(name.c_str())) return std::string(value);
    return std::nullopt;
  };
}

std::string new_id() {
  static std::mutex mu;
  static boost::uuids::random_generator gen;
  std::lock_guard lock(mu);
  return boost::uuids::to_string(gen());
}

TimePoint now_ms() { return std::chrono::time_point_cast<std::chrono::milliseconds>(Clock::now()); }

std::string format_timestamp(TimePoint tp) {
  auto ms = tp.time_since_epoch().count();
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  auto millis = ms % 1000;
  if (millis < 0) {
    millis += 1000;
    secs -= 1;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0')
      << millis << 'Z';
  return out.str();
}

TimePoint parse_timestamp(std::string_view text) {
  std::tm tm{};
  std::istringstream in{std::string(text)};
  in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (in.fail()) {
    throw Error(ErrorCode::schema_error, "invalid timestamp \"" + std::string(text) + "\"");
  }
  long millis = 0;
  if (in.peek() == '.') {
    in.get();
    std::string digits;
    while (std::isdigit(in.peek())) digits.push_back(static_cast<char>(in.get()));
    digits.resize(3, '0');
    millis = std::stol(digits);
  }
  auto secs = timegm(&tm);
  return TimePoint(std::chrono::milliseconds(static_cast<std::int64_t>(secs) * 1000 + millis));
}

std::string canonical_dump(const Json& doc) { return doc.dump(2) + "\n"; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string(), path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string(), path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

}  // namespace agentloom
