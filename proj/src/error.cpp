#include "stargnn/error.hpp"

namespace stargnn {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::config: return "config";
    case ErrorKind::input: return "input";
    case ErrorKind::empty_video: return "empty_video";
    case ErrorKind::format: return "format";
    case ErrorKind::config_mismatch: return "config_mismatch";
    case ErrorKind::contract: return "contract";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::mining: return "mining";
    case ErrorKind::pipeline_order: return "pipeline_order";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::degenerate_embedding: return "degenerate_embedding";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
      return 1;
    case ErrorKind::numeric:
    case ErrorKind::degenerate_embedding:
      return 3;
    default:
      return 2;
  }
}

}  // namespace stargnn
