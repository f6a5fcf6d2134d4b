#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace agentloom {

// Key order matters for canonical output, so every document uses the
// insertion-ordered flavour.
using Json = nlohmann::ordered_json;

using Clock = std::chrono::system_clock;
using TimePoint = std::chrono::time_point<Clock, std::chrono::milliseconds>;

// Looks up an environment variable; injectable so tests never touch the
// process environment.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

EnvLookup process_env();

std::string new_id();
TimePoint now_ms();
std::string format_timestamp(TimePoint tp);
TimePoint parse_timestamp(std::string_view text);

// Serializes with 2-space indentation and a trailing newline.
std::string canonical_dump(const Json& doc);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace agentloom
