#include "pilotkit/data_service.hpp"

#include <cstdio>
#include <system_error>

#include "pilotkit/hash.hpp"

namespace pilotkit {

namespace fs = std::filesystem;

std::string_view to_string(DataUnitState s) {
  switch (s) {
    case DataUnitState::New: return "NEW";
    case DataUnitState::Pending: return "PENDING";
    case DataUnitState::Available: return "AVAILABLE";
    case DataUnitState::Failed: return "FAILED";
  }
  return "?";
}

bool replica_matches(const AffinityLabels& space, const AffinityLabels& pilot) {
  if (pilot.machine) return space.machine == pilot.machine;
  if (pilot.datacenter) return space.datacenter == pilot.datacenter;
  return true;
}

fs::path local_path_of(const std::string& url) {
  constexpr std::string_view prefix = "file://";
  if (url.rfind(prefix, 0) == 0) return fs::path(url.substr(prefix.size()));
  return fs::path(url);
}

DataService::DataService(std::shared_ptr<EventLog> log)
    : log_(log ? std::move(log) : std::make_shared<EventLog>()) {}

void DataService::register_backend(std::shared_ptr<StorageAdaptor> adaptor) {
  std::lock_guard<std::mutex> lock(mu_);
  backends_[adaptor->kind()] = std::move(adaptor);
}

std::shared_ptr<StorageAdaptor> DataService::backend(BackendKind kind) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = backends_.find(kind);
  if (it == backends_.end()) {
    throw Error(ErrorCode::UnknownBackend,
                "no storage backend for " + std::string(scheme_of(kind)) + "://");
  }
  return it->second;
}

std::shared_ptr<StorageAdaptor> DataService::adaptor_of(
    const std::string& space_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return const_cast<DataService*>(this)->space_locked(space_id).adaptor;
}

DataService::SpaceEntry& DataService::space_locked(const std::string& space_id) {
  auto it = spaces_.find(space_id);
  if (it == spaces_.end()) {
    throw Error(ErrorCode::UnknownSpace, "no space '" + space_id + "'");
  }
  return it->second;
}

DataUnit& DataService::du_locked(const std::string& du_id) {
  auto it = units_.find(du_id);
  if (it == units_.end()) {
    throw Error(ErrorCode::UnknownDataUnit, "no data unit '" + du_id + "'");
  }
  return it->second;
}

std::string DataService::next_du_id() {
  char buf[32];
  do {
    std::snprintf(buf, sizeof(buf), "du-%06llu",
                  static_cast<unsigned long long>(next_du_++));
  } while (units_.count(buf));
  return buf;
}

void DataService::set_state(DataUnit& du, DataUnitState to,
                            const std::string& reason) {
  if (du.state == to) return;
  log_->record(du.id, to_string(du.state), to_string(to), reason);
  du.state = to;
}

void DataService::recompute_labels(DataUnit& du) {
  du.resident_labels.clear();
  for (const auto& sid : du.replicas) {
    auto it = spaces_.find(sid);
    if (it == spaces_.end()) continue;
    const auto labels = it->second.adaptor->space_info(sid).labels;
    if (labels.datacenter) du.resident_labels.insert(*labels.datacenter);
    if (labels.machine) du.resident_labels.insert(*labels.machine);
  }
}

void DataService::add_replica(DataUnit& du, const std::string& space_id) {
  if (!du.replicas.insert(space_id).second) return;
  recompute_labels(du);
  log_->record(du.id, to_string(du.state), to_string(du.state),
               "replica+ " + space_id);
}

void DataService::drop_replica(DataUnit& du, const std::string& space_id,
                               const std::string& why) {
  if (!du.replicas.erase(space_id)) return;
  recompute_labels(du);
  log_->record(du.id, to_string(du.state), to_string(du.state),
               "replica- " + space_id + " " + why);
}

void DataService::refresh_locked(DataUnit& du) {
  std::vector<std::string> gone;
  for (const auto& sid : du.replicas) {
    if (!spaces_.count(sid)) gone.push_back(sid);
  }
  for (const auto& sid : gone) drop_replica(du, sid, "space terminated");
  if (du.state == DataUnitState::Available && du.replicas.empty() &&
      !du.items.empty()) {
    set_state(du, DataUnitState::Failed, "no replica left");
  }
}

std::string DataService::create_pilot_data(const PilotDataDescription& pdd,
                                           const std::string& owner_pilot) {
  const auto desc = validate(pdd);
  const auto url = parse_resource_url(desc.storage_url);
  auto adaptor = backend(url.kind);
  const auto id = adaptor->create_space(desc);
  std::lock_guard<std::mutex> lock(mu_);
  spaces_[id] = SpaceEntry{adaptor, owner_pilot};
  log_->record(id, "NONE", "RESERVED",
               std::string(to_string(adaptor->tier())) + " " +
                   std::to_string(desc.space_mb) + "MB");
  return id;
}

SpaceInfo DataService::space_info(const std::string& space_id) const {
  return adaptor_of(space_id)->space_info(space_id);
}

std::vector<SpaceInfo> DataService::spaces() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<SpaceInfo> out;
  for (const auto& [id, entry] : spaces_) {
    out.push_back(entry.adaptor->space_info(id));
  }
  return out;
}

std::int64_t DataService::free_mb(const std::string& space_id) const {
  return adaptor_of(space_id)->free_mb(space_id);
}

void DataService::terminate_space(const std::string& space_id) {
  std::shared_ptr<StorageAdaptor> adaptor;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = spaces_.find(space_id);
    if (it == spaces_.end()) return;
    adaptor = it->second.adaptor;
    spaces_.erase(it);
    log_->record(space_id, "RESERVED", "RELEASED", "terminated");
  }
  adaptor->destroy_space(space_id);
}

void DataService::terminate_pilot(const std::string& pilot_id) {
  std::vector<std::string> doomed;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [id, entry] : spaces_) {
      if (entry.owner_pilot == pilot_id &&
          entry.adaptor->tier() == StorageTier::Memory) {
        doomed.push_back(id);
      }
    }
  }
  for (const auto& id : doomed) terminate_space(id);
}

DataUnit DataService::import_data_unit(const DataUnitDescription& dud,
                                       const std::string& target_space,
                                       std::optional<std::string> du_id) {
  const auto desc = validate(dud);
  std::lock_guard<std::mutex> lock(mu_);
  auto adaptor = space_locked(target_space).adaptor;
  const auto id = du_id ? *du_id : next_du_id();
  if (units_.count(id)) {
    throw Error(ErrorCode::DuplicateId, "data unit '" + id + "' exists");
  }
  DataUnit du;
  du.id = id;
  du.affinity = desc.affinity;
  log_->record(id, "NONE", "NEW", "import into " + target_space);
  auto& stored = units_.emplace(id, std::move(du)).first->second;
  set_state(stored, DataUnitState::Pending, "importing");

  std::vector<std::string> written;
  auto rollback = [&](ErrorCode code, const std::string& what) {
    for (const auto& name : written) adaptor->remove(target_space, name);
    stored.items.clear();
    set_state(stored, DataUnitState::Failed, what);
    std::vector<std::string> details;
    for (const auto& [name, status] : stored.item_status) {
      details.push_back(name + ": " + status);
    }
    details.push_back("du=" + id);
    throw Error(code, what, details);
  };

  // Check every source up front so a missing one fails before any copy.
  bool missing = false;
  for (const auto& item : desc.items) {
    std::error_code ec;
    if (!fs::is_regular_file(local_path_of(item.source_url), ec)) {
      stored.item_status[item.logical_name] = "SOURCE_NOT_FOUND";
      missing = true;
    } else {
      stored.item_status[item.logical_name] = "PENDING";
    }
  }
  if (missing) rollback(ErrorCode::SourceNotFound, "import of " + id);

  for (const auto& item : desc.items) {
    std::string data;
    try {
      data = read_file(local_path_of(item.source_url));
    } catch (const Error&) {
      stored.item_status[item.logical_name] = "SOURCE_NOT_FOUND";
      rollback(ErrorCode::SourceNotFound, "import of " + id);
    }
    ItemRecord rec{static_cast<std::int64_t>(data.size()),
                   content_checksum(data)};
    try {
      adaptor->put(target_space, item.logical_name, make_bytes(std::move(data)));
    } catch (const Error& e) {
      stored.item_status[item.logical_name] = std::string(to_string(e.code()));
      rollback(e.code(), "import of " + id + ": " + e.what());
    }
    written.push_back(item.logical_name);
    stored.items[item.logical_name] = rec;
    stored.item_status[item.logical_name] = "OK";
  }
  add_replica(stored, target_space);
  set_state(stored, DataUnitState::Available, "imported");
  return stored;
}

DataUnit DataService::adopt_data_unit(const std::string& space_id,
                                      const std::vector<std::string>& names,
                                      std::optional<std::string> du_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto adaptor = space_locked(space_id).adaptor;
  const auto id = du_id ? *du_id : next_du_id();
  if (units_.count(id)) {
    throw Error(ErrorCode::DuplicateId, "data unit '" + id + "' exists");
  }
  DataUnit du;
  du.id = id;
  du.affinity = adaptor->space_info(space_id).labels;
  for (const auto& name : names) {
    const auto bytes = adaptor->get(space_id, name);
    du.items[name] = ItemRecord{static_cast<std::int64_t>(bytes->size()),
                                content_checksum(*bytes)};
    du.item_status[name] = "OK";
  }
  log_->record(id, "NONE", "NEW", "adopt from " + space_id);
  auto& stored = units_.emplace(id, std::move(du)).first->second;
  set_state(stored, DataUnitState::Pending, "adopting");
  add_replica(stored, space_id);
  set_state(stored, DataUnitState::Available, "adopted");
  return stored;
}

namespace {

bool replica_intact(StorageAdaptor& adaptor, const std::string& space_id,
                    const DataUnit& du) {
  for (const auto& [name, rec] : du.items) {
    if (!adaptor.contains(space_id, name)) return false;
    const auto bytes = adaptor.get(space_id, name);
    if (static_cast<std::int64_t>(bytes->size()) != rec.size_bytes ||
        content_checksum(*bytes) != rec.checksum) {
      return false;
    }
  }
  return true;
}

}  // namespace

DataUnit DataService::stage(const std::string& du_id,
                            const std::string& to_space) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& du = du_locked(du_id);
  refresh_locked(du);
  if (du.state != DataUnitState::Available) {
    throw Error(ErrorCode::DuNotAvailable,
                du_id + " is " + std::string(to_string(du.state)));
  }
  auto target = space_locked(to_space).adaptor;

  if (du.replicas.count(to_space)) {
    if (replica_intact(*target, to_space, du)) return du;
    drop_replica(du, to_space, "checksum mismatch");
  }

  std::vector<std::string> written;
  auto undo = [&] {
    for (const auto& name : written) target->remove(to_space, name);
  };
  std::uint64_t copied = 0;
  for (const auto& [name, rec] : du.items) {
    Bytes data;
    // Walk replicas until one yields an intact copy of this item.
    std::vector<std::string> corrupt;
    for (const auto& sid : du.replicas) {
      auto& src = *spaces_.at(sid).adaptor;
      try {
        auto candidate = src.get(sid, name);
        if (content_checksum(*candidate) == rec.checksum &&
            static_cast<std::int64_t>(candidate->size()) == rec.size_bytes) {
          data = std::move(candidate);
          break;
        }
      } catch (const Error&) {
      }
      corrupt.push_back(sid);
    }
    for (const auto& sid : corrupt) drop_replica(du, sid, "checksum mismatch");
    if (!data) {
      undo();
      du.item_status[name] = "CHECKSUM_MISMATCH";
      if (du.replicas.empty()) {
        set_state(du, DataUnitState::Failed, "no intact replica of " + name);
      }
      throw Error(ErrorCode::ChecksumMismatch,
                  "no intact replica of '" + name + "' in " + du_id);
    }
    try {
      target->put(to_space, name, data);
    } catch (const Error&) {
      undo();
      throw;
    }
    written.push_back(name);
    copied += data->size();
  }
  bytes_copied_ += copied;
  add_replica(du, to_space);
  return du;
}

void DataService::export_data_unit(const std::string& du_id,
                                   const std::string& dest_url) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& du = du_locked(du_id);
  refresh_locked(du);
  if (du.state != DataUnitState::Available) {
    throw Error(ErrorCode::DuNotAvailable,
                du_id + " is " + std::string(to_string(du.state)));
  }
  const auto dest = local_path_of(dest_url);
  std::error_code ec;
  fs::create_directories(dest, ec);
  if (ec || !fs::is_directory(dest)) {
    throw Error(ErrorCode::DestNotWritable,
                dest.string() + (ec ? ": " + ec.message() : ""));
  }
  for (const auto& [name, rec] : du.items) {
    Bytes data;
    for (const auto& sid : du.replicas) {
      auto candidate = spaces_.at(sid).adaptor->get(sid, name);
      if (content_checksum(*candidate) == rec.checksum) {
        data = std::move(candidate);
        break;
      }
    }
    if (!data) {
      throw Error(ErrorCode::ChecksumMismatch,
                  "no intact replica of '" + name + "' in " + du_id);
    }
    try {
      write_file(dest / name, *data);
    } catch (const Error& e) {
      throw Error(ErrorCode::DestNotWritable, e.what());
    }
  }
}

bool DataService::has_data_unit(const std::string& du_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return units_.count(du_id) > 0;
}

DataUnit DataService::data_unit(const std::string& du_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& du = du_locked(du_id);
  refresh_locked(du);
  return du;
}

std::vector<std::string> DataService::data_unit_ids() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, du] : units_) out.push_back(id);
  return out;
}

Bytes DataService::read_item(const std::string& du_id,
                             const std::string& logical_name) {
  std::vector<std::pair<std::string, std::shared_ptr<StorageAdaptor>>> replicas;
  std::uint64_t checksum = 0;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& du = du_locked(du_id);
    refresh_locked(du);
    if (du.state != DataUnitState::Available) {
      throw Error(ErrorCode::DuNotAvailable,
                  du_id + " is " + std::string(to_string(du.state)));
    }
    auto rit = du.items.find(logical_name);
    if (rit == du.items.end()) {
      throw Error(ErrorCode::ItemNotFound,
                  "no item '" + logical_name + "' in " + du_id);
    }
    checksum = rit->second.checksum;
    for (const auto& sid : du.replicas) {
      replicas.emplace_back(sid, spaces_.at(sid).adaptor);
    }
  }
  for (const auto& [sid, adaptor] : replicas) {
    try {
      auto candidate = adaptor->get(sid, logical_name);
      if (content_checksum(*candidate) == checksum) return candidate;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnknownSpace && e.code() != ErrorCode::ItemNotFound) {
        throw;
      }
    }
  }
  throw Error(ErrorCode::ChecksumMismatch,
              "no intact replica of '" + logical_name + "' in " + du_id);
}

std::optional<std::string> DataService::space_for(
    const AffinityLabels& pilot_labels, const std::string& pilot_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::optional<std::string> fallback;
  for (const auto& [id, entry] : spaces_) {
    const auto labels = entry.adaptor->space_info(id).labels;
    if (!replica_matches(labels, pilot_labels)) continue;
    if (!pilot_id.empty() && entry.owner_pilot == pilot_id) return id;
    if (!fallback) fallback = id;
  }
  return fallback;
}

bool DataService::has_matching_replica(const std::string& du_id,
                                       const AffinityLabels& pilot_labels) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& du = du_locked(du_id);
  refresh_locked(du);
  if (du.state != DataUnitState::Available) return false;
  if (du.items.empty()) return true;
  for (const auto& sid : du.replicas) {
    const auto labels = spaces_.at(sid).adaptor->space_info(sid).labels;
    if (replica_matches(labels, pilot_labels)) return true;
  }
  return false;
}

bool DataService::run_if_resident(const std::vector<std::string>& du_ids,
                                  const AffinityLabels& pilot_labels,
                                  const std::function<bool()>& fn) {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& id : du_ids) {
    auto& du = du_locked(id);
    refresh_locked(du);
    if (du.state != DataUnitState::Available) return false;
    if (du.items.empty()) continue;
    bool ok = false;
    for (const auto& sid : du.replicas) {
      if (replica_matches(spaces_.at(sid).adaptor->space_info(sid).labels,
                          pilot_labels)) {
        ok = true;
        break;
      }
    }
    if (!ok) return false;
  }
  return fn();
}

std::uint64_t DataService::bytes_copied() const {
  std::lock_guard<std::mutex> lock(mu_);
  return bytes_copied_;
}

}  // namespace pilotkit
