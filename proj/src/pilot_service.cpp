#include "pilotkit/pilot_service.hpp"

#include <cstdio>
#include <cstdlib>
#include <thread>

#include "pilotkit/data_service.hpp"

namespace pilotkit {

namespace fs = std::filesystem;

fs::path default_sandbox_root() {
  if (const char* root = std::getenv("PILOTKIT_ROOT"); root && *root) {
    return fs::path(root);
  }
  return fs::temp_directory_path() / "pilotkit";
}

PilotComputeService::PilotComputeService(PilotManager& manager, DataService* data,
                                         ServiceConfig config)
    : manager_(manager),
      data_(data),
      config_(std::move(config)),
      guard_(std::make_shared<Guard>()) {}

PilotComputeService::~PilotComputeService() { shutdown(); }

void PilotComputeService::register_backend(std::shared_ptr<ComputeAdaptor> backend) {
  std::lock_guard<std::mutex> lock(mu_);
  backends_[backend->kind()] = std::move(backend);
}

std::shared_ptr<ComputeAdaptor> PilotComputeService::backend(BackendKind kind) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = backends_.find(kind);
  if (it == backends_.end()) {
    throw Error(ErrorCode::UnknownBackend,
                "no " + std::string(scheme_of(kind)) + " backend registered");
  }
  return it->second;
}

PilotComputeService::PilotRecord& PilotComputeService::record_locked(
    const std::string& pilot_id) {
  auto it = pilots_.find(pilot_id);
  if (it == pilots_.end()) throw Error(ErrorCode::UnknownPilot, "no pilot '" + pilot_id + "'");
  return it->second;
}

const PilotComputeService::PilotRecord& PilotComputeService::record_locked(
    const std::string& pilot_id) const {
  auto it = pilots_.find(pilot_id);
  if (it == pilots_.end()) throw Error(ErrorCode::UnknownPilot, "no pilot '" + pilot_id + "'");
  return it->second;
}

std::string PilotComputeService::create_pilot(const PilotComputeDescription& pcd,
                                              std::optional<std::string> pilot_id) {
  const auto desc = validate(pcd);
  const auto url = parse_resource_url(desc.resource_url);
  if (!is_compute_backend(url.kind)) {
    throw Error(ErrorCode::ValidationError, "invalid PilotComputeDescription",
                {"resource_url '" + desc.resource_url + "' is not a compute backend"});
  }
  auto be = backend(url.kind);
  const auto request = translate_description(desc, url.kind, be->capacity_info());

  std::string id;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (pilot_id) {
      id = *pilot_id;
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "pilot-%04llu",
                    static_cast<unsigned long long>(next_pilot_++));
      id = buf;
    }
    if (pilots_.count(id)) throw Error(ErrorCode::DuplicateId, "pilot '" + id + "' exists");
  }
  const auto dir = config_.sandbox_root / id;
  std::error_code ec;
  fs::create_directories(dir / "units", ec);
  if (ec) {
    throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  }

  manager_.register_pilot(id, desc, PilotState::Pending, 0);
  std::shared_ptr<Allocation> alloc;
  try {
    alloc = be->allocate(id, request);
  } catch (...) {
    manager_.deregister_pilot(id);
    throw;
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    PilotRecord rec;
    rec.description = desc;
    rec.backend = be;
    rec.allocation = alloc;
    rec.dir = dir;
    pilots_.emplace(id, std::move(rec));
  }
  std::weak_ptr<Guard> weak = guard_;
  alloc->subscribe([this, weak, id](const AllocationEvent&) {
    auto guard = weak.lock();
    if (!guard) return;
    std::lock_guard<std::mutex> g(guard->mu);
    if (guard->alive) sync(id);
  });
  {
    std::lock_guard<std::mutex> g(guard_->mu);
    if (guard_->alive) sync(id);
  }
  return id;
}

void PilotComputeService::launch_agent(const std::string& pilot_id, PilotRecord& rec,
                                       const std::string& key, int slots) {
  AgentConfig cfg;
  cfg.agent_id = key.empty() ? pilot_id : pilot_id + "/" + key;
  cfg.pilot_id = pilot_id;
  cfg.slots = slots;
  cfg.pilot_dir = rec.dir;
  cfg.labels = rec.description.affinity;
  cfg.poll_interval = config_.poll_interval;
  auto agent = std::make_unique<Agent>(cfg, manager_, data_);
  if (rec.runtime) agent->set_runtime(rec.runtime);
  agent->start();
  rec.agents[key] = std::move(agent);
}

void PilotComputeService::retire_agents(PilotRecord& rec) {
  for (auto& [key, agent] : rec.agents) {
    agent->request_stop();
    rec.retired.push_back(std::move(agent));
  }
  rec.agents.clear();
}

void PilotComputeService::sync(const std::string& pilot_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = pilots_.find(pilot_id);
  if (it == pilots_.end() || it->second.terminal) return;
  auto& rec = it->second;
  const auto& alloc = *rec.allocation;
  const auto containers = alloc.containers();

  // Revoked workers first so their units are requeued before the capacity
  // shrinks.
  for (const auto& c : containers) {
    if (c.state != ContainerState::Preempted && c.state != ContainerState::Released) {
      continue;
    }
    auto ait = rec.agents.find(c.container_id);
    if (ait == rec.agents.end()) continue;
    for (const auto& lease : ait->second->kill()) {
      manager_.requeue_unit(lease.unit_id, "container " + c.container_id + " revoked",
                            lease.attempt);
    }
    rec.retired.push_back(std::move(ait->second));
    rec.agents.erase(ait);
  }

  const auto state = alloc.state();
  if (is_terminal(state)) {
    rec.terminal = true;
    retire_agents(rec);
    try {
      if (state == PilotState::Failed) {
        manager_.pilot_failed(pilot_id, alloc.failure_reason());
      } else {
        manager_.set_pilot_state(pilot_id, state, "allocation ended");
      }
    } catch (const Error&) {
      manager_.pilot_failed(pilot_id, "allocation ended while pending");
    }
    if (rec.runtime) rec.runtime->stop();
    if (data_) data_->terminate_pilot(pilot_id);
    return;
  }

  const auto info = manager_.pilot_info(pilot_id);
  if (info.capacity != alloc.capacity_cores()) {
    manager_.set_pilot_capacity(pilot_id, alloc.capacity_cores());
  }
  if (state != PilotState::Running) return;
  if (info.state == PilotState::Pending) {
    manager_.set_pilot_state(pilot_id, PilotState::Running, "agent up");
  }
  if (alloc.kind() == BackendKind::YarnEmu) {
    for (const auto& c : containers) {
      if (c.role == ContainerRole::Worker && c.state == ContainerState::Running &&
          !rec.agents.count(c.container_id)) {
        launch_agent(pilot_id, rec, c.container_id, 1);
      }
    }
  } else if (rec.agents.empty()) {
    launch_agent(pilot_id, rec, "", static_cast<int>(alloc.capacity_cores()));
  }
}

std::shared_ptr<Allocation> PilotComputeService::allocation(
    const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return record_locked(pilot_id).allocation;
}

fs::path PilotComputeService::pilot_dir(const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return record_locked(pilot_id).dir;
}

std::vector<std::string> PilotComputeService::pilot_ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, rec] : pilots_) out.push_back(id);
  return out;
}

bool PilotComputeService::wait_running(const std::string& pilot_id,
                                       std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto state = manager_.pilot_info(pilot_id).state;
    if (state == PilotState::Running) return true;
    if (is_terminal(state) || std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

void PilotComputeService::cancel_pilot(const std::string& pilot_id) {
  std::shared_ptr<ComputeAdaptor> be;
  std::shared_ptr<Allocation> alloc;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& rec = record_locked(pilot_id);
    be = rec.backend;
    alloc = rec.allocation;
  }
  be->cancel(*alloc);
}

void PilotComputeService::kill_agent(const std::string& pilot_id) {
  std::shared_ptr<ComputeAdaptor> be;
  std::shared_ptr<Allocation> alloc;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& rec = record_locked(pilot_id);
    if (rec.terminal) return;
    rec.terminal = true;
    for (auto& [key, agent] : rec.agents) {
      agent->kill();
      rec.retired.push_back(std::move(agent));
    }
    rec.agents.clear();
    if (rec.runtime) rec.runtime->stop();
    be = rec.backend;
    alloc = rec.allocation;
  }
  manager_.pilot_failed(pilot_id, "agent crashed");
  if (data_) data_->terminate_pilot(pilot_id);
  be->cancel(*alloc);
}

void PilotComputeService::preempt(const std::string& pilot_id,
                                  const std::string& container_id) {
  std::shared_ptr<ComputeAdaptor> be;
  std::shared_ptr<Allocation> alloc;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& rec = record_locked(pilot_id);
    be = rec.backend;
    alloc = rec.allocation;
  }
  be->preempt(*alloc, container_id);
}

std::size_t PilotComputeService::agent_count(const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return record_locked(pilot_id).agents.size();
}

std::string PilotComputeService::bootstrap_cluster(const std::string& pilot_id,
                                                   const std::string& runtime_kind,
                                                   const BootstrapOptions& options) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& rec = record_locked(pilot_id);
  if (rec.runtime) return rec.runtime->endpoint();
  const auto& alloc = *rec.allocation;
  if (alloc.kind() != BackendKind::BatchEmu && alloc.kind() != BackendKind::Local) {
    throw Error(ErrorCode::ValidationError,
                "cluster bootstrap needs a batch-emu or local pilot");
  }
  if (alloc.state() != PilotState::Running) {
    throw Error(ErrorCode::ValidationError, pilot_id + " is not RUNNING");
  }
  ClusterSpec spec;
  spec.pilot_id = pilot_id;
  spec.runtime_kind = runtime_kind;
  spec.nodes = alloc.nodes();
  spec.cores_per_node = alloc.cores_per_node();
  spec.memory_per_node_mb = alloc.memory_per_node_mb();
  spec.config_dir = rec.dir / "cluster";
  spec.fail_phase = options.fail_phase;
  const std::string entity = "cluster:" + pilot_id;
  try {
    rec.runtime = std::make_shared<ClusterRuntime>(spec);
  } catch (const Error& e) {
    manager_.log().record(entity, "NONE", "FAILED", e.what());
    throw;
  }
  manager_.log().record(entity, "NONE", "UP", rec.runtime->endpoint());
  for (auto& [key, agent] : rec.agents) agent->set_runtime(rec.runtime);
  return rec.runtime->endpoint();
}

std::shared_ptr<ClusterRuntime> PilotComputeService::cluster(
    const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return record_locked(pilot_id).runtime;
}

void PilotComputeService::shutdown() {
  {
    std::lock_guard<std::mutex> g(guard_->mu);
    if (!guard_->alive) return;
    guard_->alive = false;
  }
  std::vector<std::pair<std::shared_ptr<ComputeAdaptor>, std::shared_ptr<Allocation>>>
      live;
  std::vector<std::unique_ptr<Agent>> agents;
  std::vector<std::shared_ptr<ClusterRuntime>> runtimes;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [id, rec] : pilots_) {
      if (!rec.terminal) {
        rec.terminal = true;
        live.emplace_back(rec.backend, rec.allocation);
        try {
          manager_.set_pilot_state(id, PilotState::Canceled, "shutdown");
        } catch (const Error&) {
        }
      }
      retire_agents(rec);
      for (auto& a : rec.retired) agents.push_back(std::move(a));
      rec.retired.clear();
      if (rec.runtime) runtimes.push_back(rec.runtime);
    }
  }
  for (auto& [be, alloc] : live) be->cancel(*alloc);
  for (auto& a : agents) a->stop();
  for (auto& r : runtimes) r->stop();
}

}  // namespace pilotkit
