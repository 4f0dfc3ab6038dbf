#include "mrfibp/error.hpp"

namespace mrfibp {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::index_out_of_range: return "index_out_of_range";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::validation: return "validation";
    case ErrorCode::vocabulary_mismatch: return "vocabulary_mismatch";
    case ErrorCode::checkpoint_version: return "checkpoint_version";
    case ErrorCode::checkpoint_corrupt: return "checkpoint_corrupt";
    case ErrorCode::io: return "io";
    case ErrorCode::unknown_factor: return "unknown_factor";
    case ErrorCode::internal: return "internal";
    }
    return "unknown";
}

} // namespace mrfibp
