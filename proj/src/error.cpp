#include "pilotkit/error.hpp"

namespace pilotkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationError: return "VALIDATION_ERROR";
    case ErrorCode::UnknownBackend: return "UNKNOWN_BACKEND";
    case ErrorCode::CapacityUnsatisfiable: return "CAPACITY_UNSATISFIABLE";
    case ErrorCode::IllegalTransition: return "ILLEGAL_TRANSITION";
    case ErrorCode::DuplicateId: return "DUPLICATE_ID";
    case ErrorCode::UnknownPilot: return "UNKNOWN_PILOT";
    case ErrorCode::UnknownUnit: return "UNKNOWN_UNIT";
    case ErrorCode::UnknownDataUnit: return "UNKNOWN_DATA_UNIT";
    case ErrorCode::AllocationTimeout: return "ALLOCATION_TIMEOUT";
    case ErrorCode::AgentSpawnFailed: return "AGENT_SPAWN_FAILED";
    case ErrorCode::PreemptOnAm: return "PREEMPT_ON_AM";
    case ErrorCode::UnknownContainer: return "UNKNOWN_CONTAINER";
    case ErrorCode::BootstrapFailed: return "BOOTSTRAP_FAILED";
    case ErrorCode::InsufficientSpace: return "INSUFFICIENT_SPACE";
    case ErrorCode::SpaceExhausted: return "SPACE_EXHAUSTED";
    case ErrorCode::SourceNotFound: return "SOURCE_NOT_FOUND";
    case ErrorCode::ChecksumMismatch: return "CHECKSUM_MISMATCH";
    case ErrorCode::DestNotWritable: return "DEST_NOT_WRITABLE";
    case ErrorCode::UnknownSpace: return "UNKNOWN_SPACE";
    case ErrorCode::ItemNotFound: return "ITEM_NOT_FOUND";
    case ErrorCode::DuNotAvailable: return "DU_NOT_AVAILABLE";
    case ErrorCode::AllocFailed: return "ALLOC_FAILED";
    case ErrorCode::Deallocated: return "DEALLOCATED";
    case ErrorCode::TaskFailed: return "TASK_FAILED";
    case ErrorCode::PartitionLost: return "PARTITION_LOST";
    case ErrorCode::BroadcastTooLarge: return "BROADCAST_TOO_LARGE";
    case ErrorCode::UnknownBroadcast: return "UNKNOWN_BROADCAST";
    case ErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::NoPilots: return "NO_PILOTS";
    case ErrorCode::Io: return "IO_ERROR";
  }
  return "UNKNOWN";
}

namespace {

std::string compose(ErrorCode code, const std::string& message,
                    const std::vector<std::string>& details) {
  std::string out(to_string(code));
  if (!message.empty()) out += ": " + message;
  for (const auto& d : details) out += "; " + d;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::vector<std::string> details)
    : std::runtime_error(compose(code, message, details)),
      code_(code),
      details_(std::move(details)) {}

}  // namespace pilotkit
