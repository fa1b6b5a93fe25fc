#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pilotkit {

enum class ErrorCode {
  ValidationError,
  UnknownBackend,
  CapacityUnsatisfiable,
  IllegalTransition,
  DuplicateId,
  UnknownPilot,
  UnknownUnit,
  UnknownDataUnit,
  AllocationTimeout,
  AgentSpawnFailed,
  PreemptOnAm,
  UnknownContainer,
  BootstrapFailed,
  InsufficientSpace,
  SpaceExhausted,
  SourceNotFound,
  ChecksumMismatch,
  DestNotWritable,
  UnknownSpace,
  ItemNotFound,
  DuNotAvailable,
  AllocFailed,
  Deallocated,
  TaskFailed,
  PartitionLost,
  BroadcastTooLarge,
  UnknownBroadcast,
  DimensionMismatch,
  NoPilots,
  Io,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library. `details` carries per-field
// messages for validation failures.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::vector<std::string> details = {});

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::vector<std::string> details_;
};

}  // namespace pilotkit
