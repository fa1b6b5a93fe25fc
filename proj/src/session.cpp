#include "pilotkit/session.hpp"

#include "pilotkit/compute.hpp"
#include "pilotkit/storage.hpp"

namespace pilotkit {

Session::Session(SessionConfig config) : config_(std::move(config)) {
  log_ = std::make_shared<EventLog>();
  manager_ = std::make_unique<PilotManager>(config_.mode, log_);
  data_ = std::make_unique<DataService>(log_);
  manager_->set_data_unit_lookup(
      [data = data_.get()](const std::string& id) { return data->has_data_unit(id); });
  data_->register_backend(std::make_shared<MemoryStorage>(config_.memory_capacity_mb));
  data_->register_backend(
      std::make_shared<FileStorage>(config_.root / "files", config_.file_capacity_mb));
  ServiceConfig sc;
  sc.sandbox_root = config_.root / "pilots";
  sc.poll_interval = config_.poll_interval;
  compute_ = std::make_unique<PilotComputeService>(*manager_, data_.get(), sc);
  compute_->register_backend(
      std::make_shared<LocalBackend>(config_.local_cores, std::int64_t{1} << 20, log_));
}

Session::~Session() { compute_->shutdown(); }

std::string Session::add_local_pilot(int cores, const AffinityLabels& labels) {
  PilotComputeDescription pcd;
  pcd.resource_url = "local://localhost";
  pcd.cores = cores;
  pcd.memory_mb = 1024;
  pcd.walltime_min = 24 * 60;
  pcd.affinity = labels;
  const auto id = compute_->create_pilot(pcd);
  if (!compute_->wait_running(id, std::chrono::seconds(10))) {
    throw Error(ErrorCode::AllocFailed, id + " did not reach RUNNING");
  }
  return id;
}

}  // namespace pilotkit
