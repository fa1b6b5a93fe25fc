#pragma once

// In-memory Data-Units and a map/reduce runtime on top of the pilot
// manager. Partitions live in per-pilot spaces of one storage tier; the
// file and memory backends share every code path and differ only in the
// tier those spaces sit on.
//
// Shuffle: key k goes to reducer shuffle_hash(k) mod R. Every tuple carries
// a global record index (partition p of a loaded unit holds records
// p, p+P, p+2P, ...), and a reducer sees its values ordered by
// (key, record index, emit order). Neither P nor R nor scheduling order
// changes that order.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pilotkit/core.hpp"
#include "pilotkit/data_service.hpp"
#include "pilotkit/manager.hpp"
#include "pilotkit/storage.hpp"
#include "pilotkit/tuple_codec.hpp"

namespace pilotkit {

enum class EngineBackend { File, Memory };

std::string_view to_string(EngineBackend backend);
// "file" or "memory"; ValidationError otherwise.
EngineBackend parse_engine_backend(std::string_view name);

struct Partition {
  std::size_t partition_id = 0;
  std::string space_id;
  std::string pilot_id;
  std::string item;
  std::uint64_t tuple_count = 0;
  std::uint64_t record_base = 0;
  std::uint64_t record_stride = 1;
  AffinityLabels label;
};

struct InMemoryDataUnit {
  std::string id;
  EngineBackend backend = EngineBackend::Memory;
  std::vector<Partition> partitions;
  std::optional<std::string> origin_du;

  std::uint64_t total_tuples() const;
};

class Emitter {
 public:
  virtual ~Emitter() = default;
  virtual void emit(std::string_view key, std::string_view value) = 0;
};

using MapFn = std::function<void(std::string_view key, std::string_view value,
                                 Emitter& out)>;
using ReduceFn = std::function<void(std::string_view key,
                                    const std::vector<std::string_view>& values,
                                    Emitter& out)>;
using RecordSink = std::function<void(std::string_view key, std::string_view value)>;
// Turns one item into records. `first_record` is the global index of the
// item's first record.
using RecordSplitter = std::function<void(std::string_view item,
                                          std::uint64_t first_record,
                                          const RecordSink& sink)>;

// One record per line (LF, a trailing newline adds no record). Key is the
// global line number as 8 big-endian bytes, value the line without LF.
RecordSplitter line_splitter();
// Items already in tuple encoding, e.g. persisted partitions.
RecordSplitter tuple_splitter();

struct MapReduceOptions {
  // Pre-reduce each map task's output with reduce_fn. Only valid when the
  // reduction is associative and insensitive to grouping.
  bool combine = false;
};

struct JobStats {
  double load_ms = 0;
  double map_ms = 0;
  double shuffle_ms = 0;
  double reduce_ms = 0;
  std::uint64_t bytes_loaded = 0;
  std::uint64_t map_input_tuples = 0;
  std::uint64_t map_output_tuples = 0;
  std::uint64_t reduce_input_tuples = 0;
  std::uint64_t shuffle_bytes = 0;
  std::vector<std::string> map_units;
  std::vector<std::string> reduce_units;
};

struct BroadcastRef {
  std::string id;
  std::uint64_t version = 0;
};

inline constexpr std::int64_t kDefaultBroadcastLimit = 64 * kMiB;

struct EngineConfig {
  EngineBackend backend = EngineBackend::Memory;
  std::int64_t space_mb_per_pilot = 1 << 16;
  // Root of the file tier when no file backend is registered yet.
  std::filesystem::path file_root;
  std::int64_t broadcast_limit_bytes = kDefaultBroadcastLimit;
  std::chrono::milliseconds task_timeout{std::chrono::minutes(10)};
};

class MemoryEngine {
 public:
  MemoryEngine(PilotManager& manager, DataService& data, EngineConfig config = {});
  ~MemoryEngine();

  MemoryEngine(const MemoryEngine&) = delete;
  MemoryEngine& operator=(const MemoryEngine&) = delete;

  EngineBackend backend() const { return config_.backend; }
  std::size_t running_pilot_count() const { return running_pilots().ids.size(); }

  // Reserves (once) the engine's space on a pilot and returns its id.
  std::string alloc(const std::string& pilot_id);
  // Drops every partition; later access throws Deallocated.
  void dealloc(const InMemoryDataUnit& imdu);

  // Throws DuNotAvailable, AllocFailed (no RUNNING pilot or space).
  InMemoryDataUnit load(const std::string& du_id, std::size_t partitions,
                        const RecordSplitter& splitter = line_splitter());
  // Generated records; record i goes to partition i mod P.
  InMemoryDataUnit parallelize(
      std::uint64_t n_records, std::size_t partitions,
      const std::function<void(std::uint64_t, std::string& key, std::string& value)>& gen);

  // Throws TaskFailed for a failed unit, PartitionLost when a partition's
  // memory space vanished and there is no origin to reload from.
  InMemoryDataUnit map_reduce(const InMemoryDataUnit& input, const MapFn& map_fn,
                              const ReduceFn& reduce_fn, std::size_t reducers,
                              const MapReduceOptions& options = {});
  // One task per partition; output partition p holds the outputs of input
  // partition p in emission order.
  InMemoryDataUnit map_only(const InMemoryDataUnit& input, const MapFn& map_fn);

  // Items partition-00000 ... in tuple encoding.
  DataUnit persist(const InMemoryDataUnit& imdu, const std::string& target_space);

  Bytes partition_bytes(const InMemoryDataUnit& imdu, std::size_t p) const;
  std::vector<Tuple> read_partition(const InMemoryDataUnit& imdu, std::size_t p) const;
  // Every tuple in global record order.
  std::vector<Tuple> collect(const InMemoryDataUnit& imdu) const;
  // Partitions whose storage is gone.
  std::vector<std::size_t> lost_partitions(const InMemoryDataUnit& imdu) const;

  // Throws BroadcastTooLarge.
  BroadcastRef broadcast(std::string value);
  // Throws UnknownBroadcast after release.
  Bytes read_broadcast(const BroadcastRef& ref) const;
  void release(const BroadcastRef& ref);

  const JobStats& last_stats() const { return stats_; }

 private:
  struct JobPilots {
    std::vector<std::string> ids;
    std::vector<AffinityLabels> labels;
  };

  JobPilots running_pilots() const;
  std::string space_for_pilot(const std::string& pilot_id);
  std::string next_id(const char* prefix);
  InMemoryDataUnit repair(const InMemoryDataUnit& imdu);
  std::vector<std::string> run_units(std::vector<ComputeUnitDescription> units);

  PilotManager& manager_;
  DataService& data_;
  EngineConfig config_;
  std::shared_ptr<StorageAdaptor> tier_;
  BackendKind tier_kind_;

  mutable std::mutex mu_;
  std::map<std::string, std::string> pilot_spaces_;
  std::set<std::string> deallocated_;
  std::map<std::string, std::pair<std::uint64_t, Bytes>> broadcasts_;
  std::uint64_t next_id_ = 1;
  std::uint64_t broadcast_version_ = 0;
  JobStats stats_;
};

}  // namespace pilotkit
