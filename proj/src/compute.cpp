#include "pilotkit/compute.hpp"

#include <algorithm>
#include <cstdio>

namespace pilotkit {

std::string_view to_string(ContainerRole role) {
  return role == ContainerRole::AppMaster ? "APP_MASTER" : "WORKER";
}

std::string_view to_string(ContainerState state) {
  switch (state) {
    case ContainerState::Granted: return "GRANTED";
    case ContainerState::Running: return "RUNNING";
    case ContainerState::Preempted: return "PREEMPTED";
    case ContainerState::Released: return "RELEASED";
  }
  return "?";
}

// ---------------------------------------------------------------- Allocation

Allocation::Allocation(std::string id, BackendKind kind,
                       std::shared_ptr<EventLog> log)
    : id_(std::move(id)),
      kind_(kind),
      log_(log ? std::move(log) : std::make_shared<EventLog>()) {}

PilotState Allocation::state() const {
  std::lock_guard<std::mutex> lock(mu_);
  return state_;
}

std::string Allocation::failure_reason() const {
  std::lock_guard<std::mutex> lock(mu_);
  return failure_reason_;
}

std::int64_t Allocation::capacity_cores() const {
  std::lock_guard<std::mutex> lock(mu_);
  return capacity_;
}

std::int64_t Allocation::requested_cores() const {
  std::lock_guard<std::mutex> lock(mu_);
  return requested_;
}

std::vector<std::string> Allocation::nodes() const {
  std::lock_guard<std::mutex> lock(mu_);
  return nodes_;
}

std::int64_t Allocation::cores_per_node() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cores_per_node_;
}

std::int64_t Allocation::memory_per_node_mb() const {
  std::lock_guard<std::mutex> lock(mu_);
  return memory_per_node_mb_;
}

std::vector<Container> Allocation::containers() const {
  std::lock_guard<std::mutex> lock(mu_);
  return containers_;
}

std::optional<Container> Allocation::container(const std::string& cid) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& c : containers_) {
    if (c.container_id == cid) return c;
  }
  return std::nullopt;
}

void Allocation::subscribe(Listener listener) {
  std::lock_guard<std::mutex> lock(mu_);
  listeners_.push_back(std::move(listener));
}

bool Allocation::wait_for(PilotState target,
                          std::chrono::milliseconds timeout) const {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait_for(lock, timeout,
               [&] { return state_ == target || is_terminal(state_); });
  return state_ == target;
}

void Allocation::notify(const AllocationEvent& ev) {
  std::vector<Listener> listeners;
  {
    std::lock_guard<std::mutex> lock(mu_);
    listeners = listeners_;
  }
  for (const auto& l : listeners) l(ev);
}

void Allocation::set_state(PilotState to, const std::string& reason) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (state_ == to || is_terminal(state_)) return;
    log_->record(log_entity(), to_string(state_), to_string(to), reason);
    state_ = to;
    if (to == PilotState::Failed) failure_reason_ = reason;
  }
  cv_.notify_all();
  notify(AllocationEvent{AllocationEvent::Kind::StateChanged, to, {}, reason});
}

void Allocation::set_requested_cores(std::int64_t cores) {
  std::lock_guard<std::mutex> lock(mu_);
  requested_ = cores;
}

void Allocation::set_nodes(std::vector<std::string> nodes,
                           std::int64_t cores_per_node,
                           std::int64_t memory_per_node_mb) {
  std::lock_guard<std::mutex> lock(mu_);
  nodes_ = std::move(nodes);
  cores_per_node_ = cores_per_node;
  memory_per_node_mb_ = memory_per_node_mb;
}

void Allocation::add_container(const Container& c) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    containers_.push_back(c);
    log_->record(log_entity() + "/" + c.container_id, "NONE",
                 to_string(c.state),
                 std::string(to_string(c.role)) + " node=" + c.node_label +
                     " cores=" + std::to_string(c.cores) +
                     " memory_mb=" + std::to_string(c.memory_mb));
  }
}

void Allocation::set_container_state(const std::string& cid, ContainerState to,
                                     const std::string& reason) {
  ContainerRole role;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = std::find_if(containers_.begin(), containers_.end(),
                           [&](const Container& c) { return c.container_id == cid; });
    if (it == containers_.end() || it->state == to) return;
    log_->record(log_entity() + "/" + cid, to_string(it->state), to_string(to),
                 reason);
    it->state = to;
    role = it->role;
  }
  if (role != ContainerRole::Worker) return;
  if (to == ContainerState::Running) {
    notify(AllocationEvent{AllocationEvent::Kind::WorkerUp, state(), cid, reason});
  } else if (to == ContainerState::Preempted) {
    notify(AllocationEvent{AllocationEvent::Kind::WorkerRevoked, state(), cid,
                           reason});
  }
}

void Allocation::set_capacity(std::int64_t cores) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (capacity_ == cores) return;
    log_->record(log_entity() + "/capacity", std::to_string(capacity_),
                 std::to_string(cores));
    capacity_ = cores;
  }
  notify(AllocationEvent{AllocationEvent::Kind::CapacityChanged, state(), {}, {}});
}

// ----------------------------------------------------------- ComputeAdaptor

void ComputeAdaptor::preempt(Allocation& handle, const std::string& container_id) {
  throw Error(ErrorCode::UnknownContainer,
              handle.id() + " has no container '" + container_id + "'");
}

// ------------------------------------------------------------- LocalBackend

LocalBackend::LocalBackend(std::int64_t cores, std::int64_t memory_mb,
                           std::shared_ptr<EventLog> log)
    : cores_(cores), memory_mb_(memory_mb),
      log_(log ? std::move(log) : std::make_shared<EventLog>()) {}

BackendCapacity LocalBackend::capacity_info() const {
  return BackendCapacity{1, cores_, memory_mb_};
}

std::shared_ptr<Allocation> LocalBackend::allocate(const std::string& id,
                                                   const BackendRequest& request) {
  const auto* req = std::get_if<LocalRequest>(&request);
  if (!req) {
    throw Error(ErrorCode::ValidationError, "local backend needs a LocalRequest");
  }
  if (req->cores > cores_) {
    throw Error(ErrorCode::CapacityUnsatisfiable,
                std::to_string(req->cores) + " cores requested, " +
                    std::to_string(cores_) + " available");
  }
  auto alloc = std::make_shared<Allocation>(id, BackendKind::Local, log_);
  alloc->set_requested_cores(req->cores);
  alloc->set_nodes({"localhost"}, req->cores, memory_mb_);
  alloc->set_capacity(req->cores);
  alloc->set_state(PilotState::Pending, "submitted");
  alloc->set_state(PilotState::Running, "local");
  return alloc;
}

void LocalBackend::cancel(Allocation& handle) {
  handle.set_state(PilotState::Canceled, "canceled");
}

// ---------------------------------------------------------- EmulatedCluster

void EmulatedClusterConfig::validate() const {
  std::vector<std::string> errors;
  if (n_nodes < 1) errors.emplace_back("n_nodes must be >= 1");
  if (cores_per_node < 1) errors.emplace_back("cores_per_node must be >= 1");
  if (memory_per_node_mb < 1) errors.emplace_back("memory_per_node_mb must be >= 1");
  if (queue_wait_low_ms < 0) errors.emplace_back("queue_wait low must be >= 0");
  if (queue_wait_low_ms > queue_wait_high_ms) {
    errors.emplace_back("queue_wait low must be <= high");
  }
  if (tick_ms < 1) errors.emplace_back("tick_ms must be >= 1");
  if (max_pending_ms < 1) errors.emplace_back("max_pending_ms must be >= 1");
  if (!errors.empty()) {
    throw Error(ErrorCode::ValidationError, "invalid EmulatedClusterConfig", errors);
  }
}

EmulatedCluster::EmulatedCluster(BackendKind kind, EmulatedClusterConfig config,
                                 std::shared_ptr<EventLog> log)
    : kind_(kind),
      config_(config),
      log_(log ? std::move(log) : std::make_shared<EventLog>()),
      rng_(config.seed),
      tick_ms_(config.tick_ms) {
  config_.validate();
  for (std::int64_t i = 0; i < config_.n_nodes; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "node-%03lld", static_cast<long long>(i));
    nodes_.push_back(Node{buf, config_.cores_per_node, config_.memory_per_node_mb});
  }
  thread_ = std::thread([this] { run(); });
}

EmulatedCluster::~EmulatedCluster() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

void EmulatedCluster::set_tick_ms(std::int64_t tick_ms) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    tick_ms_ = std::max<std::int64_t>(1, tick_ms);
  }
  cv_.notify_all();
}

std::shared_ptr<Allocation> EmulatedCluster::allocate(const std::string& id,
                                                      const BackendRequest& request) {
  const auto cap = config_.capacity();
  std::int64_t requested = 0;
  std::int64_t walltime = 0;
  if (kind_ == BackendKind::BatchEmu) {
    const auto* req = std::get_if<BatchRequest>(&request);
    if (!req) throw Error(ErrorCode::ValidationError, "batch-emu needs a BatchRequest");
    if (req->nodes < 1 || req->nodes > cap.n_nodes) {
      throw Error(ErrorCode::CapacityUnsatisfiable,
                  std::to_string(req->nodes) + " nodes requested on a " +
                      std::to_string(cap.n_nodes) + "-node cluster");
    }
    requested = req->nodes * cap.cores_per_node;
    walltime = req->walltime_min;
  } else {
    const auto* req = std::get_if<ContainerRequest>(&request);
    if (!req) {
      throw Error(ErrorCode::ValidationError, "yarn-emu needs a ContainerRequest");
    }
    PilotComputeDescription probe;
    probe.cores = req->n_containers;
    probe.memory_mb = req->n_containers * req->memory_per_container_mb;
    translate_description(probe, BackendKind::YarnEmu, cap);
    requested = req->n_containers;
    walltime = req->walltime_min;
  }

  auto alloc = std::make_shared<Allocation>(id, kind_, log_);
  alloc->set_requested_cores(requested);
  alloc->set_state(PilotState::Pending, "queued");
  {
    std::lock_guard<std::mutex> lock(mu_);
    Job job;
    job.alloc = alloc;
    job.request = request;
    job.submitted = Clock::now();
    std::uniform_int_distribution<std::int64_t> wait(config_.queue_wait_low_ms,
                                                     config_.queue_wait_high_ms);
    job.ready_at = job.submitted + std::chrono::milliseconds(wait(rng_));
    job.walltime_min = walltime;
    jobs_.push_back(std::move(job));
  }
  cv_.notify_all();
  return alloc;
}

EmulatedCluster::Job* EmulatedCluster::find_job(const std::string& id) {
  for (auto& j : jobs_) {
    if (j.alloc->id() == id && j.phase != Job::Phase::Finished) return &j;
  }
  return nullptr;
}

std::optional<std::size_t> EmulatedCluster::node_with(std::int64_t cores,
                                                      std::int64_t memory_mb) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].free_cores >= cores && nodes_[i].free_memory_mb >= memory_mb) {
      return i;
    }
  }
  return std::nullopt;
}

void EmulatedCluster::release(Job& job) {
  for (const auto& [node, res] : job.held) {
    nodes_[node].free_cores += res.first;
    nodes_[node].free_memory_mb += res.second;
  }
  job.held.clear();
}

void EmulatedCluster::finish(Job& job, PilotState to, const std::string& reason,
                             std::vector<Notification>& out) {
  release(job);
  job.phase = Job::Phase::Finished;
  auto alloc = job.alloc;
  out.emplace_back([alloc, to, reason] {
    for (const auto& c : alloc->containers()) {
      if (c.state == ContainerState::Granted || c.state == ContainerState::Running) {
        alloc->set_container_state(c.container_id, ContainerState::Released, reason);
      }
    }
    alloc->set_capacity(0);
    alloc->set_state(to, reason);
  });
}

void EmulatedCluster::tick(std::vector<Notification>& out) {
  const auto now = Clock::now();
  for (auto& job : jobs_) {
    if (job.phase == Job::Phase::Finished) continue;
    auto alloc = job.alloc;

    const bool pending = job.phase == Job::Phase::Queued ||
                         job.phase == Job::Phase::AmGranted ||
                         (job.phase == Job::Phase::Workers && job.workers_granted == 0);
    if (pending && now - job.submitted >
                       std::chrono::milliseconds(config_.max_pending_ms)) {
      finish(job, PilotState::Failed, "ALLOCATION_TIMEOUT", out);
      continue;
    }
    if (!pending && job.walltime_min > 0 &&
        now - job.running_since > std::chrono::minutes(job.walltime_min)) {
      finish(job, PilotState::Done, "walltime reached", out);
      continue;
    }
    if (job.phase == Job::Phase::Queued && now < job.ready_at) continue;

    if (const auto* batch = std::get_if<BatchRequest>(&job.request)) {
      if (job.phase != Job::Phase::Queued) continue;
      std::vector<std::size_t> free_nodes;
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].free_cores == config_.cores_per_node &&
            nodes_[i].free_memory_mb == config_.memory_per_node_mb) {
          free_nodes.push_back(i);
        }
      }
      if (static_cast<std::int64_t>(free_nodes.size()) < batch->nodes) continue;
      std::vector<std::string> names;
      for (std::int64_t k = 0; k < batch->nodes; ++k) {
        auto& node = nodes_[free_nodes[k]];
        job.held.push_back({free_nodes[k], {node.free_cores, node.free_memory_mb}});
        node.free_cores = 0;
        node.free_memory_mb = 0;
        names.push_back(node.name);
      }
      job.phase = Job::Phase::Running;
      job.running_since = now;
      const auto cores = batch->nodes * config_.cores_per_node;
      const auto cpn = config_.cores_per_node;
      const auto mem = config_.memory_per_node_mb;
      out.emplace_back([alloc, names, cores, cpn, mem] {
        alloc->set_nodes(names, cpn, mem);
        alloc->set_capacity(cores);
        alloc->set_state(PilotState::Running, "nodes granted");
      });
      continue;
    }

    const auto& req = std::get<ContainerRequest>(job.request);
    auto container_name = [&](const char* prefix) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%s-%06llu", prefix,
                    static_cast<unsigned long long>(next_container_++));
      return std::string(buf);
    };
    switch (job.phase) {
      case Job::Phase::Queued: {
        const auto node = node_with(0, req.app_master_memory_mb);
        if (!node) break;
        nodes_[*node].free_memory_mb -= req.app_master_memory_mb;
        job.held.push_back({*node, {0, req.app_master_memory_mb}});
        Container am{container_name("am"), 0, req.app_master_memory_mb,
                     ContainerRole::AppMaster, nodes_[*node].name,
                     ContainerState::Granted};
        job.container_node[am.container_id] = *node;
        job.phase = Job::Phase::AmGranted;
        out.emplace_back([alloc, am] { alloc->add_container(am); });
        break;
      }
      case Job::Phase::AmGranted: {
        // The master comes up one tick after its grant; worker requests
        // start only after that.
        std::string am_id;
        for (const auto& [cid, node] : job.container_node) am_id = cid;
        job.phase = Job::Phase::Workers;
        out.emplace_back([alloc, am_id] {
          alloc->set_container_state(am_id, ContainerState::Running,
                                     "application master up");
        });
        break;
      }
      case Job::Phase::Workers: {
        const auto node = node_with(1, req.memory_per_container_mb);
        if (!node) break;
        nodes_[*node].free_cores -= 1;
        nodes_[*node].free_memory_mb -= req.memory_per_container_mb;
        job.held.push_back({*node, {1, req.memory_per_container_mb}});
        Container w{container_name("w"), 1, req.memory_per_container_mb,
                    ContainerRole::Worker, nodes_[*node].name,
                    ContainerState::Granted};
        job.container_node[w.container_id] = *node;
        const bool first = job.workers_granted == 0;
        if (first) job.running_since = now;
        ++job.workers_granted;
        if (job.workers_granted == req.n_containers) job.phase = Job::Phase::Running;
        out.emplace_back([alloc, w, first] {
          alloc->add_container(w);
          alloc->set_container_state(w.container_id, ContainerState::Running,
                                     "worker up");
          alloc->set_capacity(alloc->capacity_cores() + 1);
          if (first) alloc->set_state(PilotState::Running, "first worker up");
        });
        break;
      }
      default:
        break;
    }
  }
  while (!jobs_.empty() && jobs_.front().phase == Job::Phase::Finished) {
    jobs_.pop_front();
  }
}

void EmulatedCluster::run() {
  std::unique_lock<std::mutex> lock(mu_);
  while (!stop_) {
    cv_.wait_for(lock, std::chrono::milliseconds(tick_ms_), [&] { return stop_; });
    if (stop_) break;
    std::vector<Notification> out;
    tick(out);
    lock.unlock();
    for (auto& n : out) n();
    lock.lock();
  }
}

void EmulatedCluster::cancel(Allocation& handle) {
  std::vector<Notification> out;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto* job = find_job(handle.id())) {
      finish(*job, PilotState::Canceled, "canceled", out);
    }
  }
  for (auto& n : out) n();
}

void EmulatedCluster::preempt(Allocation& handle, const std::string& container_id) {
  const auto c = handle.container(container_id);
  if (!c) {
    throw Error(ErrorCode::UnknownContainer,
                handle.id() + " has no container '" + container_id + "'");
  }
  if (c->role == ContainerRole::AppMaster) {
    throw Error(ErrorCode::PreemptOnAm,
                "application master " + container_id + " cannot be preempted");
  }
  if (c->state != ContainerState::Running) return;
  if (!config_.preemption_enabled) {
    throw Error(ErrorCode::ValidationError, "preemption is disabled");
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto* job = find_job(handle.id());
    if (!job) return;
    auto it = job->container_node.find(container_id);
    if (it == job->container_node.end()) return;
    const auto node = it->second;
    job->container_node.erase(it);
    for (auto h = job->held.begin(); h != job->held.end(); ++h) {
      if (h->first == node && h->second.first == 1) {
        nodes_[node].free_cores += h->second.first;
        nodes_[node].free_memory_mb += h->second.second;
        job->held.erase(h);
        break;
      }
    }
  }
  handle.set_container_state(container_id, ContainerState::Preempted, "preempted");
  handle.set_capacity(std::max<std::int64_t>(0, handle.capacity_cores() - 1));
}

// ------------------------------------------------------------ Emu backends

BatchEmuBackend::BatchEmuBackend(EmulatedClusterConfig config,
                                 std::shared_ptr<EventLog> log)
    : cluster_(BackendKind::BatchEmu, config, std::move(log)) {}

BackendCapacity BatchEmuBackend::capacity_info() const {
  return cluster_.config().capacity();
}

std::shared_ptr<Allocation> BatchEmuBackend::allocate(const std::string& id,
                                                      const BackendRequest& request) {
  return cluster_.allocate(id, request);
}

void BatchEmuBackend::cancel(Allocation& handle) { cluster_.cancel(handle); }

YarnEmuBackend::YarnEmuBackend(EmulatedClusterConfig config,
                               std::shared_ptr<EventLog> log)
    : cluster_(BackendKind::YarnEmu, config, std::move(log)) {}

BackendCapacity YarnEmuBackend::capacity_info() const {
  return cluster_.config().capacity();
}

std::shared_ptr<Allocation> YarnEmuBackend::allocate(const std::string& id,
                                                     const BackendRequest& request) {
  return cluster_.allocate(id, request);
}

void YarnEmuBackend::cancel(Allocation& handle) { cluster_.cancel(handle); }

void YarnEmuBackend::preempt(Allocation& handle, const std::string& container_id) {
  cluster_.preempt(handle, container_id);
}

}  // namespace pilotkit
