#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mrfibp {

enum class ErrorCode {
    invalid_argument,
    dimension_mismatch,
    index_out_of_range,
    parse_error,
    validation,
    vocabulary_mismatch,
    checkpoint_version,
    checkpoint_corrupt,
    io,
    unknown_factor,
    internal,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; the code is what the CLI prints.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

} // namespace mrfibp
