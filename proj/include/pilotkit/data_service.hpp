#pragma once

// Pilot-Data: spaces on registered storage tiers, materialized Data-Units
// with per-item checksums, replica tracking and staging between spaces.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pilotkit/core.hpp"
#include "pilotkit/event_log.hpp"
#include "pilotkit/storage.hpp"

namespace pilotkit {

enum class DataUnitState { New, Pending, Available, Failed };

std::string_view to_string(DataUnitState s);

struct ItemRecord {
  std::int64_t size_bytes = 0;
  std::uint64_t checksum = 0;
};

struct DataUnit {
  std::string id;
  DataUnitState state = DataUnitState::New;
  std::map<std::string, ItemRecord> items;
  std::set<std::string> replicas;  // space ids holding a full replica
  std::set<std::string> resident_labels;
  AffinityLabels affinity;
  // Per-item failure notes from the last failed operation.
  std::map<std::string, std::string> item_status;
};

// True when a replica on a space labeled `space` satisfies a pilot labeled
// `pilot`: machine labels must agree when the pilot has one, else
// datacenter labels; an unlabeled pilot accepts any replica.
bool replica_matches(const AffinityLabels& space, const AffinityLabels& pilot);

class DataService {
 public:
  explicit DataService(std::shared_ptr<EventLog> log = nullptr);

  void register_backend(std::shared_ptr<StorageAdaptor> adaptor);
  std::shared_ptr<StorageAdaptor> backend(BackendKind kind) const;
  std::shared_ptr<StorageAdaptor> adaptor_of(const std::string& space_id) const;
  EventLog& log() { return *log_; }

  // Reserves space on the backend named by the description's storage_url.
  // `owner_pilot` ties a MEMORY-tier space's lifetime to a compute pilot.
  std::string create_pilot_data(const PilotDataDescription& pdd,
                                const std::string& owner_pilot = {});
  SpaceInfo space_info(const std::string& space_id) const;
  std::vector<SpaceInfo> spaces() const;
  std::int64_t free_mb(const std::string& space_id) const;
  // Releases the space. Replicas on it disappear; Data-Units left without
  // a replica fail on their next access.
  void terminate_space(const std::string& space_id);
  // Terminates every MEMORY-tier space owned by the pilot.
  void terminate_pilot(const std::string& pilot_id);

  // Copies every item into the space and computes checksums. On a missing
  // source or exhausted space the imported items are rolled back, the DU is
  // left FAILED and SourceNotFound / SpaceExhausted is thrown.
  DataUnit import_data_unit(const DataUnitDescription& dud,
                            const std::string& target_space,
                            std::optional<std::string> du_id = std::nullopt);
  // Registers items already present in a space as a new AVAILABLE DU.
  DataUnit adopt_data_unit(const std::string& space_id,
                           const std::vector<std::string>& logical_names,
                           std::optional<std::string> du_id = std::nullopt);

  // Ensures a full replica in `to_space`. No bytes move when an intact
  // replica is already there.
  DataUnit stage(const std::string& du_id, const std::string& to_space);
  void export_data_unit(const std::string& du_id, const std::string& dest_url);

  bool has_data_unit(const std::string& du_id) const;
  DataUnit data_unit(const std::string& du_id);
  std::vector<std::string> data_unit_ids() const;
  // Reads one item from an intact replica; checksum verified.
  Bytes read_item(const std::string& du_id, const std::string& logical_name);
  bool has_matching_replica(const std::string& du_id,
                            const AffinityLabels& pilot_labels);
  // Runs `fn` while every listed DU is pinned with a replica matching the
  // pilot; no space can be released meanwhile. False without running `fn`
  // when some DU lacks such a replica.
  bool run_if_resident(const std::vector<std::string>& du_ids,
                       const AffinityLabels& pilot_labels,
                       const std::function<bool()>& fn);
  // A space whose labels satisfy the pilot, preferring spaces the pilot owns.
  std::optional<std::string> space_for(const AffinityLabels& pilot_labels,
                                       const std::string& pilot_id = {}) const;

  std::uint64_t bytes_copied() const;

 private:
  struct SpaceEntry {
    std::shared_ptr<StorageAdaptor> adaptor;
    std::string owner_pilot;
  };

  SpaceEntry& space_locked(const std::string& space_id);
  DataUnit& du_locked(const std::string& du_id);
  void set_state(DataUnit& du, DataUnitState to, const std::string& reason);
  // Drops replicas whose space vanished; fails the DU when none remain.
  void refresh_locked(DataUnit& du);
  void add_replica(DataUnit& du, const std::string& space_id);
  void drop_replica(DataUnit& du, const std::string& space_id,
                    const std::string& why);
  void recompute_labels(DataUnit& du);
  std::string next_du_id();

  std::shared_ptr<EventLog> log_;
  mutable std::mutex mu_;
  std::map<BackendKind, std::shared_ptr<StorageAdaptor>> backends_;
  std::map<std::string, SpaceEntry> spaces_;
  std::map<std::string, DataUnit> units_;
  std::uint64_t next_du_ = 1;
  std::uint64_t bytes_copied_ = 0;
};

// Resolves "file:///abs/path" or a plain path to a filesystem path.
std::filesystem::path local_path_of(const std::string& url);

}  // namespace pilotkit
