#include "pilotkit/scheduler.hpp"

namespace pilotkit {

std::string_view to_string(AffinityMode mode) {
  return mode == AffinityMode::Hard ? "hard" : "soft";
}

AffinityMode parse_affinity_mode(std::string_view text) {
  if (text == "hard" || text == "HARD_AFFINITY") return AffinityMode::Hard;
  if (text == "soft" || text == "SOFT_AFFINITY") return AffinityMode::Soft;
  throw Error(ErrorCode::ValidationError,
              "scheduling mode must be 'hard' or 'soft', got '" +
                  std::string(text) + "'");
}

std::string_view to_string(PlacementReason reason) {
  switch (reason) {
    case PlacementReason::AffinityMatch: return "AFFINITY_MATCH";
    case PlacementReason::LeastUtilized: return "LEAST_UTILIZED";
    case PlacementReason::OnlyCandidate: return "ONLY_CANDIDATE";
  }
  return "?";
}

std::optional<PlacementDecision> schedule(std::string_view unit_id,
                                          std::int64_t unit_cores,
                                          const AffinityLabels& unit_labels,
                                          std::span<const PilotSnapshot> pilots,
                                          AffinityMode mode) {
  const PilotSnapshot* best = nullptr;
  int best_score = -1;
  std::size_t candidates = 0;

  for (const auto& p : pilots) {
    if (p.state != PilotState::Running) continue;
    if (p.in_use + unit_cores > p.capacity) continue;
    const int score = locality_score(unit_labels, p.labels);
    if (mode == AffinityMode::Hard && unit_labels.machine && score < 2) {
      continue;
    }
    ++candidates;
    if (!best) {
      best = &p;
      best_score = score;
      continue;
    }
    const double u = p.utilization();
    const double bu = best->utilization();
    const bool better = score != best_score ? score > best_score
                        : u != bu           ? u < bu
                                            : p.id < best->id;
    if (better) {
      best = &p;
      best_score = score;
    }
  }
  if (!best) return std::nullopt;

  PlacementDecision d;
  d.unit_id = std::string(unit_id);
  d.pilot_id = best->id;
  d.locality_score = best_score;
  d.utilization_at_decision = best->utilization();
  if (best_score > 0) {
    d.reason = PlacementReason::AffinityMatch;
  } else if (candidates == 1) {
    d.reason = PlacementReason::OnlyCandidate;
  } else {
    d.reason = PlacementReason::LeastUtilized;
  }
  return d;
}

}  // namespace pilotkit
