#include <atomic>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "pilotkit/cluster_runtime.hpp"
#include "pilotkit/session.hpp"
#include "pilotkit/task_context.hpp"
#include "support.hpp"

using namespace pilotkit;
using namespace std::chrono_literals;
using testing_support::TempDir;

namespace {

SessionConfig session_in(const TempDir& dir) {
  SessionConfig c;
  c.root = dir.path();
  c.local_cores = 4;
  return c;
}

ComputeUnitDescription shell(const std::string& script) {
  ComputeUnitDescription d;
  d.executable = "/bin/sh";
  d.arguments = {"-c", script};
  return d;
}

PilotComputeDescription pcd(const std::string& url, std::int64_t cores, std::int64_t mem) {
  PilotComputeDescription d;
  d.resource_url = url;
  d.cores = cores;
  d.memory_mb = mem;
  d.walltime_min = 60;
  return d;
}

std::optional<LogEvent> first_event(const EventLog& log, const std::string& entity,
                                    const std::string& to) {
  for (const auto& e : log.snapshot()) {
    if (e.entity == entity && e.to == to) return e;
  }
  return std::nullopt;
}

bool wait_until(const std::function<bool()>& pred, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(1ms);
  }
  return pred();
}

}  // namespace

TEST_CASE("local pilot runs executables in a per-unit sandbox") {
  TempDir dir;
  Session s(session_in(dir));
  const auto pilot = s.add_local_pilot(2);
  CHECK(s.manager().pilot_info(pilot).capacity == 2);

  const auto ok = s.manager().submit_compute_unit(shell("echo hello"));
  const auto bad = s.manager().submit_compute_unit(shell("exit 3"));
  REQUIRE(s.manager().wait_terminal({ok, bad}, 10s));

  CHECK(s.manager().unit_info(ok).state == UnitState::Done);
  CHECK(read_file(s.compute().pilot_dir(pilot) / "units" / ok / "stdout") == "hello\n");
  const auto info = s.manager().unit_info(bad);
  CHECK(info.state == UnitState::Failed);
  REQUIRE(info.outcome);
  CHECK(info.outcome->exit_code == 3);
  CHECK(info.retries == 0);
  CHECK(s.manager().check_invariants().empty());
}

TEST_CASE("inputs are staged into the sandbox and outputs become a Data-Unit") {
  TempDir dir;
  Session s(session_in(dir));
  s.add_local_pilot(1);
  const auto src = dir / "input.txt";
  write_file(src, "line one\nline two\n");

  PilotDataDescription pdd;
  pdd.storage_url = "file://store";
  pdd.space_mb = 4;
  const auto space = s.data().create_pilot_data(pdd);
  DataUnitDescription dud;
  dud.items = {{"file://" + src.string(), "input.txt", 18}};
  s.data().import_data_unit(dud, space, "du-in");

  auto cud = shell("mkdir -p outputs && wc -l < input.txt > outputs/count");
  cud.input_du_ids = {"du-in"};
  cud.output_du_ids = {"du-out"};
  const auto id = s.manager().submit_compute_unit(cud);
  REQUIRE(s.manager().wait_terminal({id}, 10s));
  CHECK(s.manager().unit_info(id).state == UnitState::Done);
  const auto out = s.data().read_item("du-out", "count");
  CHECK(std::stoi(*out) == 2);
}

TEST_CASE("container emulation: application master before any worker") {
  TempDir dir;
  Session s(session_in(dir));
  EmulatedClusterConfig cfg;
  cfg.n_nodes = 2;
  cfg.cores_per_node = 4;
  cfg.tick_ms = 2;
  cfg.seed = 3;
  cfg.preemption_enabled = true;
  s.compute().register_backend(std::make_shared<YarnEmuBackend>(cfg, s.log_ptr()));

  const auto pilot = s.compute().create_pilot(pcd("yarn-emu://c", 4, 4096));
  REQUIRE(s.compute().wait_running(pilot, 10s));
  auto alloc = s.compute().allocation(pilot);
  REQUIRE(wait_until([&] { return alloc->capacity_cores() == 4; }, 10s));
  REQUIRE(wait_until([&] { return s.compute().agent_count(pilot) == 4; }, 10s));

  std::string am;
  std::vector<std::string> workers;
  for (const auto& c : alloc->containers()) {
    if (c.role == ContainerRole::AppMaster) {
      am = c.container_id;
      CHECK(c.cores == 0);
      CHECK(c.memory_mb == kAppMasterMemoryMb);
    } else {
      workers.push_back(c.container_id);
      CHECK(c.memory_mb == 1024);
    }
  }
  REQUIRE(workers.size() == 4);
  const auto am_up = first_event(s.log(), alloc->log_entity() + "/" + am, "RUNNING");
  REQUIRE(am_up);
  for (const auto& w : workers) {
    const auto granted = first_event(s.log(), alloc->log_entity() + "/" + w, "GRANTED");
    REQUIRE(granted);
    CHECK(am_up->seq < granted->seq);
  }

  // preemption shrinks the pilot by one worker
  s.compute().preempt(pilot, workers.back());
  REQUIRE(wait_until([&] { return s.manager().pilot_info(pilot).capacity == 3; }, 5s));
  CHECK(s.compute().agent_count(pilot) == 3);
  s.compute().preempt(pilot, workers.back());
  try {
    s.compute().preempt(pilot, am);
    FAIL("preempted the master");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PreemptOnAm);
  }
  try {
    s.compute().preempt(pilot, "w-999999");
    FAIL("unknown container accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownContainer);
  }
}

TEST_CASE("units start before the last worker is granted") {
  TempDir dir;
  Session s(session_in(dir));
  EmulatedClusterConfig cfg;
  cfg.n_nodes = 1;
  cfg.cores_per_node = 4;
  cfg.tick_ms = 100;
  auto yarn = std::make_shared<YarnEmuBackend>(cfg, s.log_ptr());
  s.compute().register_backend(yarn);

  const auto pilot = s.compute().create_pilot(pcd("yarn-emu://c", 4, 1024));
  const auto unit = s.manager().submit_compute_unit(shell("true"));
  REQUIRE(s.manager().wait_terminal({unit}, 10s));
  CHECK(s.manager().unit_info(unit).state == UnitState::Done);
  const auto alloc = s.compute().allocation(pilot);
  CHECK(alloc->capacity_cores() < 4);
  CHECK(alloc->requested_cores() == 4);
}

TEST_CASE("a crashed agent fails its pilot and the unit retries elsewhere") {
  TempDir dir;
  Session s(session_in(dir));
  const auto first = s.add_local_pilot(1);
  const auto unit = s.manager().submit_compute_unit(shell("sleep 0.2"));
  REQUIRE(wait_until([&] { return s.manager().unit_info(unit).state == UnitState::Running; },
                     5s));
  s.compute().kill_agent(first);
  CHECK(s.manager().pilot_info(first).state == PilotState::Failed);
  CHECK(s.manager().unit_info(unit).retries == 1);
  CHECK(s.manager().unit_info(unit).state == UnitState::New);

  const auto second = s.add_local_pilot(1);
  REQUIRE(s.manager().wait_terminal({unit}, 10s));
  const auto info = s.manager().unit_info(unit);
  CHECK(info.state == UnitState::Done);
  CHECK(info.pilots_tried == std::vector<std::string>{first, second});
}

TEST_CASE("batch pilots bootstrap an in-allocation cluster") {
  TempDir dir;
  Session s(session_in(dir));
  EmulatedClusterConfig cfg;
  cfg.n_nodes = 3;
  cfg.cores_per_node = 2;
  cfg.tick_ms = 1;
  cfg.queue_wait_low_ms = 5;
  cfg.queue_wait_high_ms = 20;
  s.compute().register_backend(std::make_shared<BatchEmuBackend>(cfg, s.log_ptr()));

  const auto pilot = s.compute().create_pilot(pcd("batch-emu://c", 3, 100));
  REQUIRE(s.compute().wait_running(pilot, 10s));
  CHECK(s.manager().pilot_info(pilot).capacity == 4);
  CHECK(s.compute().allocation(pilot)->nodes().size() == 2);

  const auto endpoint = s.compute().bootstrap_cluster(pilot, "spark");
  CHECK(s.compute().bootstrap_cluster(pilot, "spark") == endpoint);
  const auto runtime = s.compute().cluster(pilot);
  REQUIRE(runtime);
  CHECK(runtime->worker_count() == 2);
  CHECK(std::filesystem::exists(runtime->spec().config_dir));
  CHECK(first_event(s.log(), "cluster:" + pilot, "UP").has_value());

  std::atomic<int> ran{0};
  ComputeUnitDescription cud;
  cud.kind = UnitKind::MapTask;
  cud.task_ref = "count";
  cud.task = std::make_shared<const TaskBody>([&](TaskContext&) { ++ran; });
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) ids.push_back(s.manager().submit_compute_unit(cud));
  REQUIRE(s.manager().wait_terminal(ids, 10s));
  CHECK(ran == 6);
  CHECK(runtime->tasks_executed() == 6);
}

TEST_CASE("bootstrap failures are reported per phase") {
  for (const std::string phase : {"config-gen", "coordinator", "worker"}) {
    TempDir dir;
    Session s(session_in(dir));
    const auto pilot = s.add_local_pilot(1);
    BootstrapOptions opts;
    opts.fail_phase = phase;
    try {
      s.compute().bootstrap_cluster(pilot, "yarn", opts);
      FAIL("bootstrap succeeded");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BootstrapFailed);
      CHECK(std::string(e.what()).find(phase) != std::string::npos);
    }
    CHECK(s.compute().cluster(pilot) == nullptr);
    CHECK(first_event(s.log(), "cluster:" + pilot, "FAILED").has_value());
    CHECK_FALSE(is_runtime_kind("hadoop"));
  }
}

TEST_CASE("allocations that never start time out") {
  TempDir dir;
  Session s(session_in(dir));
  EmulatedClusterConfig cfg;
  cfg.n_nodes = 1;
  cfg.cores_per_node = 2;
  cfg.tick_ms = 1;
  cfg.max_pending_ms = 50;
  s.compute().register_backend(std::make_shared<BatchEmuBackend>(cfg, s.log_ptr()));
  const auto holder = s.compute().create_pilot(pcd("batch-emu://c", 2, 10));
  REQUIRE(s.compute().wait_running(holder, 5s));
  const auto starved = s.compute().create_pilot(pcd("batch-emu://c", 2, 10));
  REQUIRE(wait_until(
      [&] { return s.manager().pilot_info(starved).state == PilotState::Failed; }, 5s));
  CHECK(s.compute().allocation(starved)->failure_reason() == "ALLOCATION_TIMEOUT");

  try {
    s.compute().create_pilot(pcd("batch-emu://c", 3, 10));
    FAIL("oversized request accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CapacityUnsatisfiable);
  }
  s.compute().cancel_pilot(holder);
  REQUIRE(wait_until(
      [&] { return s.manager().pilot_info(holder).state == PilotState::Canceled; }, 5s));
}
