#include <algorithm>
#include <random>
#include <thread>

#include "doctest.h"
#include "pilotkit/manager.hpp"

using namespace pilotkit;
using namespace std::chrono_literals;

namespace {

PilotComputeDescription local_pcd(std::int64_t cores, AffinityLabels labels = {}) {
  PilotComputeDescription d;
  d.resource_url = "local://localhost";
  d.cores = cores;
  d.affinity = std::move(labels);
  return d;
}

ComputeUnitDescription exe(std::int64_t cores = 1, AffinityLabels labels = {}) {
  ComputeUnitDescription d;
  d.executable = "/bin/true";
  d.cores = cores;
  d.affinity = std::move(labels);
  return d;
}

// Drives one pulled unit to DONE.
void finish(PilotManager& m, const ComputeUnit& cu) {
  REQUIRE(m.mark_running(cu.id, cu.attempt));
  m.complete_unit(cu.id, UnitOutcome::success());
}

}  // namespace

TEST_CASE("submitted unit runs through the full lifecycle") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(2), PilotState::Running, 2);
  const auto id = m.submit_compute_unit(exe());
  CHECK(m.unit_info(id).state == UnitState::Scheduled);
  CHECK(m.pilot_info("p1").in_use == 1);

  const auto cu = m.pull_next("p1");
  REQUIRE(cu);
  CHECK(cu->id == id);
  CHECK(m.unit_info(id).state == UnitState::StagingIn);
  CHECK(m.mark_running(id, cu->attempt));
  CHECK(m.mark_staging_out(id, cu->attempt));
  m.complete_unit(id, UnitOutcome::success(0));
  CHECK(m.unit_info(id).state == UnitState::Done);
  CHECK(m.pilot_info("p1").in_use == 0);

  std::vector<std::string> path;
  for (const auto& e : m.log().for_entity(id)) path.push_back(e.to);
  CHECK(path == std::vector<std::string>{"NEW", "SCHEDULED", "STAGING_IN", "RUNNING",
                                         "STAGING_OUT", "DONE"});
  CHECK(m.check_invariants().empty());
}

TEST_CASE("units wait in the global queue until a pilot has room") {
  PilotManager m;
  const auto a = m.submit_compute_unit(exe());
  CHECK(m.unit_info(a).state == UnitState::New);
  CHECK(m.global_queue_size() == 1);
  m.register_pilot("p1", local_pcd(1), PilotState::Pending, 1);
  CHECK(m.unit_info(a).state == UnitState::New);
  m.set_pilot_state("p1", PilotState::Running);
  CHECK(m.unit_info(a).state == UnitState::Scheduled);

  const auto b = m.submit_compute_unit(exe());
  CHECK(m.unit_info(b).state == UnitState::New);
  finish(m, *m.pull_next("p1"));
  CHECK(m.unit_info(b).state == UnitState::Scheduled);
  CHECK_THROWS_AS(m.pull_next("nope"), Error);
}

TEST_CASE("errors on bad input") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(1), PilotState::Running, 1);
  CHECK_THROWS_AS(m.register_pilot("p1", local_pcd(1), PilotState::Running, 1), Error);
  auto cud = exe();
  cud.input_du_ids = {"du-missing"};
  try {
    m.submit_compute_unit(cud);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownDataUnit);
  }
  m.register_data_unit("du-1");
  cud.input_du_ids = {"du-1"};
  CHECK_NOTHROW(m.submit_compute_unit(cud));
  m.set_data_unit_lookup([](const std::string& id) { return id == "du-ext"; });
  cud.input_du_ids = {"du-ext"};
  CHECK_NOTHROW(m.submit_compute_unit(cud));
  CHECK_THROWS_AS(m.unit_info("cu-999999"), Error);
}

TEST_CASE("failure requeue stops after the retry budget") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(1), PilotState::Running, 1);
  const auto id = m.submit_compute_unit(exe());
  for (int i = 0; i < kMaxRequeues; ++i) {
    const auto cu = m.pull_next("p1");
    REQUIRE(cu);
    CHECK(m.requeue_unit(id, "agent lost", cu->attempt));
    CHECK(m.unit_info(id).retries == i + 1);
    CHECK(m.unit_info(id).state == UnitState::Scheduled);
  }
  const auto cu = m.pull_next("p1");
  REQUIRE(cu);
  CHECK(m.requeue_unit(id, "agent lost", cu->attempt));
  const auto info = m.unit_info(id);
  CHECK(info.state == UnitState::Failed);
  CHECK(info.retries == kMaxRequeues);
  REQUIRE(info.outcome);
  CHECK(info.outcome->reason.find("retries exhausted") != std::string::npos);
  CHECK(m.pilot_info("p1").in_use == 0);
}

TEST_CASE("stale leases are ignored") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(1), PilotState::Running, 1);
  const auto id = m.submit_compute_unit(exe());
  const auto first = *m.pull_next("p1");
  CHECK(m.requeue_unit(id, "lost", first.attempt));
  const auto second = *m.pull_next("p1");
  CHECK_FALSE(m.mark_running(id, first.attempt));
  CHECK_FALSE(m.complete_unit(id, UnitOutcome::success(), first.attempt));
  CHECK(m.mark_running(id, second.attempt));
  CHECK(m.complete_unit(id, UnitOutcome::success(), second.attempt));
  CHECK(m.unit_info(id).pilots_tried == std::vector<std::string>{"p1", "p1"});
}

TEST_CASE("pilot failure requeues its units to another pilot") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(2, {"dc", "m1"}), PilotState::Running, 2);
  const auto a = m.submit_compute_unit(exe(1, {std::nullopt, "m1"}));
  const auto b = m.submit_compute_unit(exe(1, {std::nullopt, "m1"}));
  const auto running = *m.pull_next("p1");
  CHECK(running.id == a);
  m.register_pilot("p2", local_pcd(2), PilotState::Running, 2);
  m.pilot_failed("p1", "node crash");
  CHECK(m.pilot_info("p1").state == PilotState::Failed);
  // b was only queued: back without a retry; a was in flight: one retry
  CHECK(m.unit_info(b).retries == 0);
  CHECK(m.unit_info(a).retries == 1);
  CHECK(m.unit_info(a).pilot_id == std::optional<std::string>("p2"));
  CHECK(m.unit_info(b).pilot_id == std::optional<std::string>("p2"));
  CHECK(m.check_invariants().empty());
}

TEST_CASE("hard affinity keeps a labeled unit waiting") {
  PilotManager m(AffinityMode::Hard);
  m.register_pilot("p1", local_pcd(4, {"dc", "m1"}), PilotState::Running, 4);
  const auto id = m.submit_compute_unit(exe(1, {std::nullopt, "m2"}));
  CHECK(m.unit_info(id).state == UnitState::New);
  m.register_pilot("p2", local_pcd(4, {"dc", "m2"}), PilotState::Running, 4);
  m.schedule_pending();
  CHECK(m.unit_info(id).pilot_id == std::optional<std::string>("p2"));
  CHECK(m.decisions().back().reason == PlacementReason::AffinityMatch);
}

TEST_CASE("capacity shrink requeues queued units from the tail") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(4), PilotState::Running, 4);
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(m.submit_compute_unit(exe()));
  m.set_pilot_capacity("p1", 2);
  CHECK(m.pilot_queue("p1") == std::vector<std::string>{ids[0], ids[1]});
  CHECK(m.global_queue() == std::vector<std::string>{ids[3], ids[2]});
  CHECK(m.unit_info(ids[3]).retries == 0);
  m.set_pilot_capacity("p1", 4);
  CHECK(m.global_queue_size() == 0);
  CHECK(m.check_invariants().empty());
}

TEST_CASE("cancel releases cores from any non-terminal state") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(2), PilotState::Running, 2);
  const auto a = m.submit_compute_unit(exe());
  const auto b = m.submit_compute_unit(exe());
  const auto cu = *m.pull_next("p1");
  m.cancel_unit(a);
  m.cancel_unit(b);
  CHECK(m.unit_info(a).state == UnitState::Canceled);
  CHECK(m.unit_info(b).state == UnitState::Canceled);
  CHECK(m.pilot_info("p1").in_use == 0);
  CHECK_FALSE(m.mark_running(cu.id, cu.attempt));
  m.cancel_unit(a);
  CHECK(m.check_invariants().empty());
}

TEST_CASE("pull_next_wait wakes on submit and on pilot stop") {
  PilotManager m;
  m.register_pilot("p1", local_pcd(1), PilotState::Running, 1);
  std::thread submitter([&] {
    std::this_thread::sleep_for(20ms);
    m.submit_compute_unit(exe());
  });
  const auto cu = m.pull_next_wait("p1", 5s);
  submitter.join();
  CHECK(cu.has_value());
  std::thread stopper([&] {
    std::this_thread::sleep_for(20ms);
    m.set_pilot_state("p1", PilotState::Canceled);
  });
  CHECK_FALSE(m.pull_next_wait("p1", 5s).has_value());
  stopper.join();
}

// Random command streams against the bookkeeping invariants plus an
// independent model of which queue each unit sits in.
TEST_CASE("random command streams preserve invariants") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    std::mt19937_64 rng(seed);
    PilotManager m(seed % 2 ? AffinityMode::Soft : AffinityMode::Hard);
    std::vector<std::string> pilots;
    std::vector<std::string> units;
    std::vector<ComputeUnit> leases;
    auto pick = [&](auto& v) -> auto& { return v[rng() % v.size()]; };

    for (int step = 0; step < 400; ++step) {
      switch (rng() % 9) {
        case 0: {
          const auto id = "p" + std::to_string(pilots.size());
          const auto cap = static_cast<std::int64_t>(1 + rng() % 4);
          AffinityLabels labels;
          if (rng() % 2) labels.machine = "m" + std::to_string(rng() % 3);
          m.register_pilot(id, local_pcd(cap, labels), PilotState::Running, cap);
          pilots.push_back(id);
          break;
        }
        case 1:
        case 2: {
          AffinityLabels labels;
          if (rng() % 3 == 0) labels.machine = "m" + std::to_string(rng() % 3);
          units.push_back(m.submit_compute_unit(exe(1 + rng() % 2, labels)));
          break;
        }
        case 3:
          if (!pilots.empty()) {
            const auto& p = pick(pilots);
            if (m.pilot_info(p).state == PilotState::Running) {
              if (auto cu = m.pull_next(p)) leases.push_back(*cu);
            }
          }
          break;
        case 4:
        case 5:
          if (!leases.empty()) {
            const auto i = rng() % leases.size();
            const auto cu = leases[i];
            leases.erase(leases.begin() + static_cast<std::ptrdiff_t>(i));
            if (m.mark_running(cu.id, cu.attempt)) {
              const auto outcome = rng() % 4 ? UnitOutcome::success()
                                             : UnitOutcome::failure("exit 1", 1);
              CHECK(m.complete_unit(cu.id, outcome, cu.attempt));
            }
          }
          break;
        case 6:
          if (!leases.empty()) {
            const auto& cu = pick(leases);
            m.requeue_unit(cu.id, "agent lost", cu.attempt);
          }
          break;
        case 7:
          if (!units.empty()) m.cancel_unit(pick(units));
          break;
        case 8:
          if (!pilots.empty()) {
            const auto& p = pick(pilots);
            const auto info = m.pilot_info(p);
            if (info.state != PilotState::Running) break;
            if (rng() % 4 == 0) {
              m.pilot_failed(p, "random failure");
              break;
            }
            // preemption: in-flight victims are requeued before the shrink
            const auto target = std::max<std::int64_t>(0, info.capacity - 1);
            for (const auto& cu : leases) {
              const auto u = m.unit_info(cu.id);
              if (u.pilot_id != std::optional<std::string>(p) || u.attempt != cu.attempt) {
                continue;
              }
              std::int64_t in_flight = 0;
              for (const auto& uid : units) {
                const auto ui = m.unit_info(uid);
                if (ui.pilot_id == std::optional<std::string>(p) &&
                    (ui.state == UnitState::StagingIn || ui.state == UnitState::Running ||
                     ui.state == UnitState::StagingOut)) {
                  in_flight += ui.cores;
                }
              }
              if (in_flight <= target) break;
              m.requeue_unit(cu.id, "preempted", cu.attempt);
            }
            m.set_pilot_capacity(p, rng() % 2 ? target : info.capacity + 1);
          }
          break;
      }

      const auto problems = m.check_invariants();
      if (!problems.empty()) {
        FAIL("seed " << seed << " step " << step << ": " << problems.front());
      }
      const auto global = m.global_queue();
      for (const auto& uid : units) {
        const auto info = m.unit_info(uid);
        const bool in_global = std::count(global.begin(), global.end(), uid) == 1;
        CHECK(info.retries <= kMaxRequeues);
        if (info.state == UnitState::New) {
          CHECK(in_global);
          CHECK_FALSE(info.pilot_id.has_value());
        } else if (info.state == UnitState::Scheduled) {
          REQUIRE(info.pilot_id);
          const auto q = m.pilot_queue(*info.pilot_id);
          CHECK(std::count(q.begin(), q.end(), uid) == 1);
          CHECK_FALSE(in_global);
        } else {
          CHECK_FALSE(in_global);
        }
      }
    }
  }
}
