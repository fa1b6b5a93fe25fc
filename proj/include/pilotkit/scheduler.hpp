#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "pilotkit/core.hpp"

namespace pilotkit {

enum class AffinityMode { Hard, Soft };

std::string_view to_string(AffinityMode mode);
AffinityMode parse_affinity_mode(std::string_view text);

// What the scheduler sees of one pilot.
struct PilotSnapshot {
  std::string id;
  PilotState state = PilotState::New;
  std::int64_t capacity = 0;
  std::int64_t in_use = 0;
  AffinityLabels labels;

  double utilization() const {
    return capacity > 0 ? static_cast<double>(in_use) /
                              static_cast<double>(capacity)
                        : 1.0;
  }
};

enum class PlacementReason { AffinityMatch, LeastUtilized, OnlyCandidate };

std::string_view to_string(PlacementReason reason);

struct PlacementDecision {
  std::string unit_id;
  std::string pilot_id;
  int locality_score = 0;
  double utilization_at_decision = 0.0;
  PlacementReason reason = PlacementReason::OnlyCandidate;
};

// Ranks RUNNING pilots with room for the unit by
// (locality desc, utilization asc, id asc). In Hard mode a unit carrying a
// machine label only considers pilots with the same machine label.
// Returns nullopt when nothing qualifies.
std::optional<PlacementDecision> schedule(std::string_view unit_id,
                                          std::int64_t unit_cores,
                                          const AffinityLabels& unit_labels,
                                          std::span<const PilotSnapshot> pilots,
                                          AffinityMode mode);

}  // namespace pilotkit
