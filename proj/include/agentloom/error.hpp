#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace agentloom {

enum class ErrorCode {
  syntax_error,
  schema_error,
  unsupported_version,
  validation_error,
  precondition_failed,
  instantiation_error,
  not_found,
  conflict,
  transport_error,
  malformed_response,
  script_exhausted,
  io_error,
  cancelled,
};

std::string_view to_string(ErrorCode code) noexcept;

// Error carried through every module. `path` holds the offending field path
// or entity id; `details` holds secondary items such as referrer ids or
// validation messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string path = {},
        std::vector<std::string> details = {}, int status = 0)
      : std::runtime_error(message),
        code_(code),
        path_(std::move(path)),
        details_(std::move(details)),
        status_(status) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& path() const noexcept { return path_; }
  const std::vector<std::string>& details() const noexcept { return details_; }
  // Provider HTTP status for transport errors, 0 otherwise.
  int status() const noexcept { return status_; }

 private:
  ErrorCode code_;
  std::string path_;
  std::vector<std::string> details_;
  int status_;
};

}  // namespace agentloom
