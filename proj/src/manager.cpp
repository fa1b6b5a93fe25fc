#include "pilotkit/manager.hpp"

#include <algorithm>
#include <cstdio>

namespace pilotkit {

namespace {

bool holds_cores(UnitState s) {
  return s == UnitState::Scheduled || s == UnitState::StagingIn ||
         s == UnitState::Running || s == UnitState::StagingOut;
}

bool in_flight(UnitState s) {
  return s == UnitState::StagingIn || s == UnitState::Running ||
         s == UnitState::StagingOut;
}

std::string unit_name(std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cu-%06llu", static_cast<unsigned long long>(n));
  return buf;
}

}  // namespace

PilotManager::PilotManager(AffinityMode mode, std::shared_ptr<EventLog> log)
    : mode_(mode), log_(log ? std::move(log) : std::make_shared<EventLog>()) {}

PilotManager::PilotEntry& PilotManager::pilot_locked(const std::string& id) {
  auto it = pilots_.find(id);
  if (it == pilots_.end()) {
    throw Error(ErrorCode::UnknownPilot, "no pilot '" + id + "'");
  }
  return it->second;
}

const PilotManager::PilotEntry& PilotManager::pilot_locked(
    const std::string& id) const {
  return const_cast<PilotManager*>(this)->pilot_locked(id);
}

PilotManager::UnitEntry& PilotManager::unit_locked(const std::string& id) {
  auto it = units_.find(id);
  if (it == units_.end()) {
    throw Error(ErrorCode::UnknownUnit, "no unit '" + id + "'");
  }
  return it->second;
}

const PilotManager::UnitEntry& PilotManager::unit_locked(
    const std::string& id) const {
  return const_cast<PilotManager*>(this)->unit_locked(id);
}

void PilotManager::register_pilot(const std::string& pilot_id,
                                  const PilotComputeDescription& description,
                                  PilotState state,
                                  std::int64_t capacity_cores) {
  if (state != PilotState::Pending && state != PilotState::Running) {
    throw Error(ErrorCode::ValidationError,
                "pilot must be PENDING or RUNNING to register");
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (pilots_.count(pilot_id)) {
      throw Error(ErrorCode::DuplicateId, "pilot '" + pilot_id + "' exists");
    }
    PilotEntry entry;
    entry.description = description;
    entry.state = state;
    entry.capacity = capacity_cores;
    pilots_.emplace(pilot_id, std::move(entry));
    log_->record(pilot_id, "NONE", to_string(state), "registered");
    schedule_pending_locked();
  }
  cv_.notify_all();
}

void PilotManager::deregister_pilot(const std::string& pilot_id) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& pilot = pilot_locked(pilot_id);
    // Queued units were never attempted: plain reset, no retry charged.
    const std::deque<std::string> queued = std::move(pilot.queue);
    pilot.queue.clear();
    for (const auto& uid : queued) {
      auto& unit = units_.at(uid);
      release_cores(unit);
      reset_to_new(uid, unit, "pilot " + pilot_id + " deregistered");
    }
    requeue_all_of(pilot_id, "pilot " + pilot_id + " deregistered");
    log_->record(pilot_id, to_string(pilot.state), "NONE", "deregistered");
    pilots_.erase(pilot_id);
    schedule_pending_locked();
  }
  cv_.notify_all();
}

void PilotManager::set_pilot_state(const std::string& pilot_id,
                                   PilotState state,
                                   const std::string& reason) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& pilot = pilot_locked(pilot_id);
    if (pilot.state == state) return;
    log_->record(pilot_id, to_string(pilot.state), to_string(state), reason);
    pilot.state = state;
    if (is_terminal(state)) {
      requeue_all_of(pilot_id, "pilot " + pilot_id + " " +
                                   std::string(to_string(state)));
    }
    schedule_pending_locked();
  }
  cv_.notify_all();
}

void PilotManager::set_pilot_capacity(const std::string& pilot_id,
                                      std::int64_t capacity) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& pilot = pilot_locked(pilot_id);
    const auto old = pilot.capacity;
    pilot.capacity = capacity;
    log_->record(pilot_id + "/capacity", std::to_string(old),
                 std::to_string(capacity), "capacity change");
    while (pilot.in_use > pilot.capacity && !pilot.queue.empty()) {
      const auto uid = pilot.queue.back();
      pilot.queue.pop_back();
      auto& unit = units_.at(uid);
      release_cores(unit);
      reset_to_new(uid, unit, "capacity shrink on " + pilot_id);
    }
    schedule_pending_locked();
  }
  cv_.notify_all();
}

void PilotManager::pilot_failed(const std::string& pilot_id,
                                const std::string& reason) {
  set_pilot_state(pilot_id, PilotState::Failed, reason);
}

void PilotManager::register_data_unit(const std::string& du_id) {
  std::lock_guard<std::mutex> lock(mu_);
  data_units_.insert(du_id);
}

bool PilotManager::has_data_unit(const std::string& du_id) const {
  std::function<bool(const std::string&)> lookup;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (data_units_.count(du_id)) return true;
    lookup = du_lookup_;
  }
  // Called unlocked: the lookup may take the data service's lock, which is
  // ordered before ours.
  return lookup && lookup(du_id);
}

void PilotManager::set_data_unit_lookup(
    std::function<bool(const std::string&)> lookup) {
  std::lock_guard<std::mutex> lock(mu_);
  du_lookup_ = std::move(lookup);
}

std::string PilotManager::submit_compute_unit(const ComputeUnitDescription& cud) {
  auto validated = validate(cud);
  std::string id;
  for (const auto& du : validated.input_du_ids) {
    if (!has_data_unit(du)) {
      throw Error(ErrorCode::UnknownDataUnit, "no data unit '" + du + "'");
    }
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    id = unit_name(next_unit_++);
    UnitEntry entry;
    entry.description = std::move(validated);
    units_.emplace(id, std::move(entry));
    global_queue_.push_back(id);
    log_->record(id, "NONE", "NEW", "submitted");
    schedule_pending_locked();
  }
  cv_.notify_all();
  return id;
}

std::vector<PilotSnapshot> PilotManager::snapshots_locked() const {
  std::vector<PilotSnapshot> out;
  out.reserve(pilots_.size());
  for (const auto& [id, p] : pilots_) {
    out.push_back(PilotSnapshot{id, p.state, p.capacity, p.in_use,
                                p.description.affinity});
  }
  return out;
}

std::optional<PlacementDecision> PilotManager::preview_schedule(
    const std::string& unit_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto& unit = unit_locked(unit_id);
  const auto snaps = snapshots_locked();
  return schedule(unit_id, unit.description.cores, unit.description.affinity,
                  snaps, mode_);
}

std::vector<PlacementDecision> PilotManager::schedule_pending() {
  std::vector<PlacementDecision> made;
  {
    std::lock_guard<std::mutex> lock(mu_);
    made = schedule_pending_locked();
  }
  cv_.notify_all();
  return made;
}

std::vector<PlacementDecision> PilotManager::schedule_pending_locked() {
  std::vector<PlacementDecision> made;
  if (global_queue_.empty()) return made;
  auto snaps = snapshots_locked();
  std::deque<std::string> remaining;
  for (const auto& uid : global_queue_) {
    auto& unit = units_.at(uid);
    auto decision = schedule(uid, unit.description.cores,
                             unit.description.affinity, snaps, mode_);
    if (!decision) {
      remaining.push_back(uid);
      continue;
    }
    auto& pilot = pilots_.at(decision->pilot_id);
    pilot.in_use += unit.description.cores;
    for (auto& s : snaps) {
      if (s.id == decision->pilot_id) s.in_use = pilot.in_use;
    }
    unit.pilot_id = decision->pilot_id;
    pilot.queue.push_back(uid);
    advance_unit(uid, unit, Event::Allocated,
                 "pilot=" + decision->pilot_id + " score=" +
                     std::to_string(decision->locality_score) + " " +
                     std::string(to_string(decision->reason)));
    decisions_.push_back(*decision);
    made.push_back(std::move(*decision));
  }
  global_queue_ = std::move(remaining);
  return made;
}

std::optional<ComputeUnit> PilotManager::pull_next(const std::string& pilot_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = pilots_.find(pilot_id);
  if (it == pilots_.end() || it->second.state != PilotState::Running) {
    throw Error(ErrorCode::UnknownPilot,
                "no RUNNING pilot '" + pilot_id + "'");
  }
  return pull_locked(pilot_id, it->second);
}

std::optional<ComputeUnit> PilotManager::pull_locked(const std::string& pilot_id,
                                                     PilotEntry& pilot) {
  if (pilot.queue.empty()) return std::nullopt;
  const auto uid = pilot.queue.front();
  pilot.queue.pop_front();
  auto& unit = units_.at(uid);
  ++unit.attempt;
  unit.pilots_tried.push_back(pilot_id);
  advance_unit(uid, unit, Event::AgentUp, "pulled by " + pilot_id);
  return ComputeUnit{uid, unit.description, pilot_id, unit.attempt};
}

std::optional<ComputeUnit> PilotManager::pull_next_wait(
    const std::string& pilot_id, std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait_for(lock, timeout, [&] {
    auto it = pilots_.find(pilot_id);
    return it == pilots_.end() || it->second.state != PilotState::Running ||
           !it->second.queue.empty();
  });
  auto it = pilots_.find(pilot_id);
  if (it == pilots_.end() || it->second.state != PilotState::Running) {
    return std::nullopt;
  }
  return pull_locked(pilot_id, it->second);
}

bool PilotManager::lease_ok(const UnitEntry& unit, int attempt) const {
  return unit.attempt == attempt && in_flight(unit.state);
}

bool PilotManager::mark_running(const std::string& unit_id, int attempt) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& unit = unit_locked(unit_id);
  if (!lease_ok(unit, attempt) || unit.state != UnitState::StagingIn) {
    return false;
  }
  advance_unit(unit_id, unit, Event::StageDone,
               "pilot=" + unit.pilot_id.value_or(""));
  return true;
}

bool PilotManager::mark_staging_out(const std::string& unit_id, int attempt) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& unit = unit_locked(unit_id);
  if (!lease_ok(unit, attempt) || unit.state != UnitState::Running) {
    return false;
  }
  advance_unit(unit_id, unit, Event::ExecDone, {});
  return true;
}

void PilotManager::complete_locked(const std::string& unit_id,
                                   UnitEntry& unit,
                                   const UnitOutcome& outcome) {
  release_cores(unit);
  unit.outcome = outcome;
  if (outcome.ok) {
    if (unit.state == UnitState::Running) {
      advance_unit(unit_id, unit, Event::ExecDone, {});
    }
    advance_unit(unit_id, unit, Event::OutDone,
                 "exit=" + std::to_string(outcome.exit_code));
  } else {
    advance_unit(unit_id, unit, Event::Error, outcome.reason);
  }
  schedule_pending_locked();
}

void PilotManager::complete_unit(const std::string& unit_id,
                                 const UnitOutcome& outcome) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& unit = unit_locked(unit_id);
    if (unit.state != UnitState::Running &&
        unit.state != UnitState::StagingOut) {
      throw Error(ErrorCode::IllegalTransition,
                  "complete_unit on " + unit_id + " in state " +
                      std::string(to_string(unit.state)));
    }
    complete_locked(unit_id, unit, outcome);
  }
  cv_.notify_all();
}

bool PilotManager::complete_unit(const std::string& unit_id,
                                 const UnitOutcome& outcome, int attempt) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& unit = unit_locked(unit_id);
    if (unit.attempt != attempt || (unit.state != UnitState::Running &&
                                    unit.state != UnitState::StagingOut)) {
      return false;
    }
    complete_locked(unit_id, unit, outcome);
  }
  cv_.notify_all();
  return true;
}

bool PilotManager::fail_unit(const std::string& unit_id,
                             const std::string& reason, int attempt) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& unit = unit_locked(unit_id);
    if (!lease_ok(unit, attempt)) return false;
    release_cores(unit);
    unit.outcome = UnitOutcome::failure(reason);
    advance_unit(unit_id, unit, Event::Error, reason);
    schedule_pending_locked();
  }
  cv_.notify_all();
  return true;
}

void PilotManager::requeue_unit(const std::string& unit_id,
                                const std::string& reason) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& unit = unit_locked(unit_id);
    if (is_terminal(unit.state) || unit.state == UnitState::New) return;
    if (unit.state == UnitState::Scheduled && unit.pilot_id) {
      auto pit = pilots_.find(*unit.pilot_id);
      if (pit != pilots_.end()) {
        auto& q = pit->second.queue;
        q.erase(std::remove(q.begin(), q.end(), unit_id), q.end());
      }
    }
    requeue_locked(unit_id, unit, reason);
    schedule_pending_locked();
  }
  cv_.notify_all();
}

bool PilotManager::requeue_unit(const std::string& unit_id,
                                const std::string& reason, int attempt) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& unit = unit_locked(unit_id);
    if (!lease_ok(unit, attempt)) return false;
    requeue_locked(unit_id, unit, reason);
    schedule_pending_locked();
  }
  cv_.notify_all();
  return true;
}

void PilotManager::cancel_unit(const std::string& unit_id) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& unit = unit_locked(unit_id);
    if (is_terminal(unit.state)) return;
    if (unit.state == UnitState::New) {
      global_queue_.erase(
          std::remove(global_queue_.begin(), global_queue_.end(), unit_id),
          global_queue_.end());
    } else if (unit.state == UnitState::Scheduled && unit.pilot_id) {
      auto& q = pilots_.at(*unit.pilot_id).queue;
      q.erase(std::remove(q.begin(), q.end(), unit_id), q.end());
    }
    release_cores(unit);
    advance_unit(unit_id, unit, Event::Cancel, "canceled");
    schedule_pending_locked();
  }
  cv_.notify_all();
}

void PilotManager::move_unit(const std::string& unit_id, UnitEntry& unit,
                             UnitState to, const std::string& reason) {
  log_->record(unit_id, to_string(unit.state), to_string(to), reason);
  unit.state = to;
}

void PilotManager::advance_unit(const std::string& unit_id, UnitEntry& unit,
                                Event event, const std::string& reason) {
  move_unit(unit_id, unit, transition(unit.state, event), reason);
}

void PilotManager::release_cores(UnitEntry& unit) {
  if (!holds_cores(unit.state) || !unit.pilot_id) return;
  auto it = pilots_.find(*unit.pilot_id);
  if (it != pilots_.end()) it->second.in_use -= unit.description.cores;
}

// Requeue is a manager-level reset, not a lifecycle event: the unit returns
// to NEW and is logged with the reason.
void PilotManager::reset_to_new(const std::string& unit_id, UnitEntry& unit,
                                const std::string& reason) {
  move_unit(unit_id, unit, UnitState::New, "requeue: " + reason);
  unit.pilot_id.reset();
  global_queue_.push_back(unit_id);
}

void PilotManager::requeue_locked(const std::string& unit_id, UnitEntry& unit,
                                  const std::string& reason) {
  release_cores(unit);
  if (unit.state == UnitState::Scheduled) {
    reset_to_new(unit_id, unit, reason);
    return;
  }
  if (unit.retries >= kMaxRequeues) {
    unit.outcome = UnitOutcome::failure("retries exhausted: " + reason);
    advance_unit(unit_id, unit, Event::Error,
                 "retries exhausted: " + reason);
    return;
  }
  ++unit.retries;
  reset_to_new(unit_id, unit, reason);
}

void PilotManager::requeue_all_of(const std::string& pilot_id,
                                  const std::string& reason) {
  auto& pilot = pilots_.at(pilot_id);
  // Queue order first so FIFO order survives the move.
  const std::deque<std::string> queued = std::move(pilot.queue);
  pilot.queue.clear();
  for (const auto& uid : queued) {
    auto& unit = units_.at(uid);
    release_cores(unit);
    reset_to_new(uid, unit, reason);
  }
  for (auto& [uid, unit] : units_) {
    if (unit.pilot_id == pilot_id && in_flight(unit.state)) {
      requeue_locked(uid, unit, reason);
    }
  }
}

UnitInfo PilotManager::unit_info(const std::string& unit_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto& u = unit_locked(unit_id);
  return UnitInfo{unit_id,    u.state,   u.pilot_id,      u.description.cores,
                  u.retries,  u.attempt, u.outcome,       u.pilots_tried};
}

PilotInfo PilotManager::pilot_info(const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto& p = pilot_locked(pilot_id);
  return PilotInfo{pilot_id,   p.description, p.state,
                   p.capacity, p.in_use,      p.queue.size()};
}

std::vector<PilotSnapshot> PilotManager::pilot_snapshots() const {
  std::lock_guard<std::mutex> lock(mu_);
  return snapshots_locked();
}

std::vector<std::string> PilotManager::pilot_ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, p] : pilots_) out.push_back(id);
  return out;
}

std::vector<std::string> PilotManager::unit_ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, u] : units_) out.push_back(id);
  return out;
}

std::size_t PilotManager::global_queue_size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return global_queue_.size();
}

std::vector<std::string> PilotManager::global_queue() const {
  std::lock_guard<std::mutex> lock(mu_);
  return {global_queue_.begin(), global_queue_.end()};
}

std::vector<std::string> PilotManager::pilot_queue(
    const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto& q = pilot_locked(pilot_id).queue;
  return {q.begin(), q.end()};
}

std::vector<PlacementDecision> PilotManager::decisions() const {
  std::lock_guard<std::mutex> lock(mu_);
  return decisions_;
}

bool PilotManager::wait_terminal(const std::vector<std::string>& unit_ids,
                                 std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  return cv_.wait_for(lock, timeout, [&] {
    for (const auto& id : unit_ids) {
      auto it = units_.find(id);
      if (it == units_.end() || !is_terminal(it->second.state)) return false;
    }
    return true;
  });
}

std::vector<std::string> PilotManager::check_invariants() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> problems;
  std::map<std::string, std::int64_t> held;
  for (const auto& [uid, u] : units_) {
    if (holds_cores(u.state)) {
      if (!u.pilot_id) {
        problems.push_back(uid + " holds cores without a pilot");
        continue;
      }
      held[*u.pilot_id] += u.description.cores;
    }
  }
  for (const auto& [pid, p] : pilots_) {
    if (p.in_use != held[pid]) {
      problems.push_back(pid + " in_use=" + std::to_string(p.in_use) +
                         " but units hold " + std::to_string(held[pid]));
    }
    if (p.in_use < 0 || p.in_use > p.capacity) {
      problems.push_back(pid + " in_use=" + std::to_string(p.in_use) +
                         " outside [0, " + std::to_string(p.capacity) + "]");
    }
  }
  std::map<std::string, int> seen;
  for (const auto& uid : global_queue_) ++seen[uid];
  for (const auto& [pid, p] : pilots_) {
    for (const auto& uid : p.queue) ++seen[uid];
  }
  for (const auto& [uid, n] : seen) {
    if (n > 1) problems.push_back(uid + " appears in " + std::to_string(n) + " queues");
  }
  return problems;
}

}  // namespace pilotkit
