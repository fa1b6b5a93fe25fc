#include "pilotkit/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "pilotkit/hash.hpp"
#include "pilotkit/pilot_service.hpp"
#include "pilotkit/task_context.hpp"

namespace pilotkit {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string item_name(const std::string& owner, const char* tag, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), ".%s-%05zu", tag, i);
  return owner + buf;
}

// Shuffle entry: u64 record index, u32 emit sequence, then one tuple.
struct Entry {
  std::string_view key;
  std::string_view value;
  std::uint64_t record = 0;
  std::uint32_t seq = 0;
};

void append_entry(std::string& out, std::uint64_t record, std::uint32_t seq,
                  std::string_view key, std::string_view value) {
  put_u64_le(out, record);
  put_u32_le(out, seq);
  append_tuple(out, key, value);
}

void parse_entries(std::string_view bytes, std::vector<Entry>& out) {
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 12) {
      throw Error(ErrorCode::ValidationError, "truncated shuffle entry");
    }
    Entry e;
    e.record = get_u64_le(bytes.data() + pos);
    e.seq = get_u32_le(bytes.data() + pos + 8);
    pos += 12;
    TupleReader reader(bytes.substr(pos));
    if (!reader.next(e.key, e.value)) {
      throw Error(ErrorCode::ValidationError, "truncated shuffle entry");
    }
    pos += reader.offset();
    out.push_back(e);
  }
}

bool entry_before(const Entry& a, const Entry& b) {
  if (a.record != b.record) return a.record < b.record;
  return a.seq < b.seq;
}

// Orders by (key, record, seq). Keys are ranked and bucketed stably; each
// bucket is then a few ascending runs (one per map task) that get merged.
void sort_entries(std::vector<Entry>& entries) {
  std::unordered_map<std::string_view, std::uint32_t> ids;
  std::vector<std::string_view> keys;
  std::vector<std::uint32_t> id_of(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto [it, fresh] = ids.try_emplace(entries[i].key, static_cast<std::uint32_t>(keys.size()));
    if (fresh) keys.push_back(entries[i].key);
    id_of[i] = it->second;
  }
  std::vector<std::uint32_t> order(keys.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
  std::vector<std::uint32_t> rank(keys.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) rank[order[r]] = r;

  std::vector<std::size_t> start(keys.size() + 1, 0);
  for (auto id : id_of) ++start[rank[id] + 1];
  for (std::size_t r = 1; r < start.size(); ++r) start[r] += start[r - 1];
  std::vector<Entry> sorted(entries.size());
  auto fill = start;
  for (std::size_t i = 0; i < entries.size(); ++i) sorted[fill[rank[id_of[i]]]++] = entries[i];

  for (std::size_t r = 0; r + 1 < start.size(); ++r) {
    const auto first = sorted.begin() + static_cast<std::ptrdiff_t>(start[r]);
    const auto last = sorted.begin() + static_cast<std::ptrdiff_t>(start[r + 1]);
    std::vector<std::ptrdiff_t> runs{0};
    for (auto it = first + 1; it < last; ++it) {
      if (entry_before(*it, *(it - 1))) runs.push_back(it - first);
    }
    if (runs.size() > 64) {
      std::sort(first, last, entry_before);
      continue;
    }
    runs.push_back(last - first);
    // Pairwise merging until one run remains.
    while (runs.size() > 2) {
      std::vector<std::ptrdiff_t> merged{0};
      for (std::size_t i = 0; i + 1 < runs.size(); i += 2) {
        const auto hi = i + 2 < runs.size() ? runs[i + 2] : runs[i + 1];
        std::inplace_merge(first + runs[i], first + runs[i + 1], first + hi, entry_before);
        merged.push_back(hi);
      }
      runs.swap(merged);
    }
  }
  entries.swap(sorted);
}

// Calls fn(key, values, first_record) per key group of sorted entries.
template <typename Fn>
void for_each_group(const std::vector<Entry>& entries, Fn&& fn) {
  std::vector<std::string_view> values;
  std::size_t i = 0;
  while (i < entries.size()) {
    std::size_t j = i;
    values.clear();
    while (j < entries.size() && entries[j].key == entries[i].key) {
      values.push_back(entries[j].value);
      ++j;
    }
    fn(entries[i].key, values, entries[i].record);
    i = j;
  }
}

class ShuffleEmitter final : public Emitter {
 public:
  explicit ShuffleEmitter(std::vector<std::string>& buckets) : buckets_(buckets) {}
  void start_record(std::uint64_t record) {
    record_ = record;
    seq_ = 0;
  }
  void emit(std::string_view key, std::string_view value) override {
    auto& b = buckets_[shuffle_hash(key) % buckets_.size()];
    append_entry(b, record_, seq_++, key, value);
    ++count_;
  }
  std::uint64_t count() const { return count_; }

 private:
  std::vector<std::string>& buckets_;
  std::uint64_t record_ = 0;
  std::uint32_t seq_ = 0;
  std::uint64_t count_ = 0;
};

class EncodingEmitter final : public Emitter {
 public:
  void emit(std::string_view key, std::string_view value) override {
    append_tuple(out, key, value);
    ++count;
  }
  std::string out;
  std::uint64_t count = 0;
};

class CollectingEmitter final : public Emitter {
 public:
  void emit(std::string_view key, std::string_view value) override {
    tuples.push_back(Tuple{std::string(key), std::string(value)});
  }
  std::vector<Tuple> tuples;
};

Bytes fetch(DataService& data, const std::string& space, const std::string& item) {
  try {
    return data.adaptor_of(space)->get(space, item);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::UnknownSpace || e.code() == ErrorCode::ItemNotFound) {
      throw Error(ErrorCode::PartitionLost, item + " is gone from " + space);
    }
    throw;
  }
}

// Everything a task body touches; shared so a straggling task never sees a
// dead job.
struct JobState {
  DataService* data = nullptr;
  std::map<std::string, std::string> pilot_spaces;
  MapFn map_fn;
  ReduceFn reduce_fn;
  bool combine = false;
  std::size_t reducers = 1;

  std::mutex mu;
  std::uint64_t map_outputs = 0;
  std::uint64_t reduce_inputs = 0;
  // per map task: per reducer (space, item, size)
  std::vector<std::vector<std::tuple<std::string, std::string, std::size_t>>> shuffle;
  std::vector<std::pair<std::string, std::uint64_t>> outputs;  // (space, count)

  std::string space_for(const TaskContext& ctx, const std::string& fallback) const {
    auto it = pilot_spaces.find(ctx.pilot_id);
    return it == pilot_spaces.end() ? fallback : it->second;
  }
};

}  // namespace

std::string_view to_string(EngineBackend backend) {
  return backend == EngineBackend::File ? "file" : "memory";
}

EngineBackend parse_engine_backend(std::string_view name) {
  if (name == "file") return EngineBackend::File;
  if (name == "memory") return EngineBackend::Memory;
  throw Error(ErrorCode::ValidationError,
              "backend must be file or memory, got '" + std::string(name) + "'");
}

std::uint64_t InMemoryDataUnit::total_tuples() const {
  std::uint64_t n = 0;
  for (const auto& p : partitions) n += p.tuple_count;
  return n;
}

RecordSplitter line_splitter() {
  return [](std::string_view item, std::uint64_t first_record, const RecordSink& sink) {
    std::uint64_t line = first_record;
    std::size_t pos = 0;
    while (pos < item.size()) {
      auto nl = item.find('\n', pos);
      if (nl == std::string_view::npos) nl = item.size();
      sink(be_u64(line++), item.substr(pos, nl - pos));
      pos = nl + 1;
    }
  };
}

RecordSplitter tuple_splitter() {
  return [](std::string_view item, std::uint64_t, const RecordSink& sink) {
    TupleReader reader(item);
    std::string_view k, v;
    while (reader.next(k, v)) sink(k, v);
  };
}

MemoryEngine::MemoryEngine(PilotManager& manager, DataService& data, EngineConfig config)
    : manager_(manager), data_(data), config_(std::move(config)) {
  tier_kind_ = config_.backend == EngineBackend::Memory ? BackendKind::Mem : BackendKind::File;
  try {
    tier_ = data_.backend(tier_kind_);
  } catch (const Error&) {
    if (config_.backend == EngineBackend::Memory) {
      tier_ = std::make_shared<MemoryStorage>(std::int64_t{1} << 40);
    } else {
      auto root = config_.file_root.empty() ? default_sandbox_root() / "engine-files"
                                            : config_.file_root;
      tier_ = std::make_shared<FileStorage>(root, std::int64_t{1} << 40);
    }
    data_.register_backend(tier_);
  }
}

MemoryEngine::~MemoryEngine() {
  std::map<std::string, std::string> spaces;
  {
    std::lock_guard<std::mutex> lock(mu_);
    spaces.swap(pilot_spaces_);
  }
  for (const auto& [pilot, space] : spaces) data_.terminate_space(space);
}

std::string MemoryEngine::next_id(const char* prefix) {
  std::lock_guard<std::mutex> lock(mu_);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s-%06llu", prefix,
                static_cast<unsigned long long>(next_id_++));
  return buf;
}

std::string MemoryEngine::alloc(const std::string& pilot_id) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = pilot_spaces_.find(pilot_id);
    if (it != pilot_spaces_.end() && tier_->has_space(it->second)) return it->second;
  }
  const auto info = manager_.pilot_info(pilot_id);
  PilotDataDescription pdd;
  pdd.storage_url = std::string(scheme_of(tier_kind_)) + "://engine";
  pdd.space_mb = config_.space_mb_per_pilot;
  pdd.affinity = info.description.affinity;
  std::string space;
  try {
    space = data_.create_pilot_data(pdd, pilot_id);
  } catch (const Error& e) {
    throw Error(ErrorCode::AllocFailed, "no engine space on " + pilot_id, {e.what()});
  }
  std::lock_guard<std::mutex> lock(mu_);
  pilot_spaces_[pilot_id] = space;
  return space;
}

std::string MemoryEngine::space_for_pilot(const std::string& pilot_id) {
  return alloc(pilot_id);
}

MemoryEngine::JobPilots MemoryEngine::running_pilots() const {
  JobPilots out;
  for (const auto& s : manager_.pilot_snapshots()) {
    if (s.state != PilotState::Running) continue;
    out.ids.push_back(s.id);
    out.labels.push_back(s.labels);
  }
  return out;
}

void MemoryEngine::dealloc(const InMemoryDataUnit& imdu) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    deallocated_.insert(imdu.id);
  }
  for (const auto& p : imdu.partitions) {
    try {
      data_.adaptor_of(p.space_id)->remove(p.space_id, p.item);
    } catch (const Error&) {
    }
  }
}

Bytes MemoryEngine::partition_bytes(const InMemoryDataUnit& imdu, std::size_t p) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (deallocated_.count(imdu.id)) {
      throw Error(ErrorCode::Deallocated, imdu.id + " was deallocated");
    }
  }
  if (p >= imdu.partitions.size()) {
    throw Error(ErrorCode::ValidationError,
                "partition " + std::to_string(p) + " out of range for " + imdu.id);
  }
  const auto& part = imdu.partitions[p];
  return fetch(data_, part.space_id, part.item);
}

std::vector<Tuple> MemoryEngine::read_partition(const InMemoryDataUnit& imdu,
                                                std::size_t p) const {
  return decode_tuples(*partition_bytes(imdu, p));
}

std::vector<Tuple> MemoryEngine::collect(const InMemoryDataUnit& imdu) const {
  std::vector<std::pair<std::uint64_t, Tuple>> all;
  all.reserve(imdu.total_tuples());
  for (std::size_t p = 0; p < imdu.partitions.size(); ++p) {
    const auto& part = imdu.partitions[p];
    const auto bytes = partition_bytes(imdu, p);
    TupleReader reader(*bytes);
    std::string_view k, v;
    std::uint64_t rec = part.record_base;
    while (reader.next(k, v)) {
      all.emplace_back(rec, Tuple{std::string(k), std::string(v)});
      rec += part.record_stride;
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Tuple> out;
  out.reserve(all.size());
  for (auto& [rec, t] : all) out.push_back(std::move(t));
  return out;
}

std::vector<std::size_t> MemoryEngine::lost_partitions(const InMemoryDataUnit& imdu) const {
  std::vector<std::size_t> lost;
  for (std::size_t p = 0; p < imdu.partitions.size(); ++p) {
    const auto& part = imdu.partitions[p];
    bool ok = false;
    try {
      ok = data_.adaptor_of(part.space_id)->contains(part.space_id, part.item);
    } catch (const Error&) {
    }
    if (!ok) lost.push_back(p);
  }
  return lost;
}

InMemoryDataUnit MemoryEngine::load(const std::string& du_id, std::size_t partitions,
                                    const RecordSplitter& splitter) {
  if (partitions < 1) {
    throw Error(ErrorCode::ValidationError, "partition count must be >= 1");
  }
  const auto t0 = Clock::now();
  const auto du = data_.data_unit(du_id);
  if (du.state != DataUnitState::Available) {
    throw Error(ErrorCode::DuNotAvailable,
                du_id + " is " + std::string(to_string(du.state)));
  }
  const auto pilots = running_pilots();
  if (pilots.ids.empty()) throw Error(ErrorCode::AllocFailed, "no RUNNING pilot");

  std::vector<std::string> buffers(partitions);
  std::vector<std::uint64_t> counts(partitions, 0);
  std::uint64_t record = 0;
  std::uint64_t bytes_loaded = 0;
  const RecordSink sink = [&](std::string_view k, std::string_view v) {
    const auto p = record % partitions;
    append_tuple(buffers[p], k, v);
    ++counts[p];
    ++record;
  };
  for (const auto& [name, rec] : du.items) {
    const auto bytes = data_.read_item(du_id, name);
    bytes_loaded += bytes->size();
    splitter(*bytes, record, sink);
  }

  // Pilots with the best label match for the DU host the partitions.
  int best = 0;
  for (const auto& l : pilots.labels) best = std::max(best, locality_score(du.affinity, l));
  std::vector<std::size_t> hosts;
  for (std::size_t i = 0; i < pilots.ids.size(); ++i) {
    if (locality_score(du.affinity, pilots.labels[i]) == best) hosts.push_back(i);
  }

  InMemoryDataUnit imdu;
  imdu.id = next_id("imdu");
  imdu.backend = config_.backend;
  imdu.origin_du = du_id;
  for (std::size_t p = 0; p < partitions; ++p) {
    const auto host = hosts[p % hosts.size()];
    Partition part;
    part.partition_id = p;
    part.pilot_id = pilots.ids[host];
    part.label = pilots.labels[host];
    part.space_id = space_for_pilot(part.pilot_id);
    part.item = item_name(imdu.id, "part", p);
    part.tuple_count = counts[p];
    part.record_base = p;
    part.record_stride = partitions;
    try {
      tier_->put(part.space_id, part.item, make_bytes(std::move(buffers[p])));
    } catch (const Error& e) {
      dealloc(imdu);
      throw Error(ErrorCode::AllocFailed, "cannot place partition " + std::to_string(p),
                  {e.what()});
    }
    imdu.partitions.push_back(std::move(part));
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    stats_ = JobStats{};
    stats_.load_ms = ms_since(t0);
    stats_.bytes_loaded = bytes_loaded;
  }
  return imdu;
}

InMemoryDataUnit MemoryEngine::parallelize(
    std::uint64_t n_records, std::size_t partitions,
    const std::function<void(std::uint64_t, std::string&, std::string&)>& gen) {
  if (partitions < 1) {
    throw Error(ErrorCode::ValidationError, "partition count must be >= 1");
  }
  const auto t0 = Clock::now();
  const auto pilots = running_pilots();
  if (pilots.ids.empty()) throw Error(ErrorCode::AllocFailed, "no RUNNING pilot");
  std::vector<std::string> buffers(partitions);
  std::vector<std::uint64_t> counts(partitions, 0);
  std::string key, value;
  std::uint64_t bytes = 0;
  for (std::uint64_t i = 0; i < n_records; ++i) {
    key.clear();
    value.clear();
    gen(i, key, value);
    append_tuple(buffers[i % partitions], key, value);
    ++counts[i % partitions];
    bytes += key.size() + value.size();
  }
  InMemoryDataUnit imdu;
  imdu.id = next_id("imdu");
  imdu.backend = config_.backend;
  for (std::size_t p = 0; p < partitions; ++p) {
    const auto host = p % pilots.ids.size();
    Partition part;
    part.partition_id = p;
    part.pilot_id = pilots.ids[host];
    part.label = pilots.labels[host];
    part.space_id = space_for_pilot(part.pilot_id);
    part.item = item_name(imdu.id, "part", p);
    part.tuple_count = counts[p];
    part.record_base = p;
    part.record_stride = partitions;
    tier_->put(part.space_id, part.item, make_bytes(std::move(buffers[p])));
    imdu.partitions.push_back(std::move(part));
  }
  std::lock_guard<std::mutex> lock(mu_);
  stats_ = JobStats{};
  stats_.load_ms = ms_since(t0);
  stats_.bytes_loaded = bytes;
  return imdu;
}

InMemoryDataUnit MemoryEngine::repair(const InMemoryDataUnit& imdu) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (deallocated_.count(imdu.id)) {
      throw Error(ErrorCode::Deallocated, imdu.id + " was deallocated");
    }
  }
  const auto lost = lost_partitions(imdu);
  if (lost.empty()) return imdu;
  std::vector<std::string> details;
  for (auto p : lost) details.push_back("partition " + std::to_string(p));
  if (!imdu.origin_du || !data_.has_data_unit(*imdu.origin_du)) {
    throw Error(ErrorCode::PartitionLost, imdu.id + " lost partitions", details);
  }
  // Record layout is a pure function of (DU, P), so a full reload yields the
  // same partition contents.
  const auto fresh = load(*imdu.origin_du, imdu.partitions.size());
  auto repaired = imdu;
  std::vector<bool> used(fresh.partitions.size(), false);
  for (auto p : lost) {
    repaired.partitions[p] = fresh.partitions[p];
    used[p] = true;
    manager_.log().record("imdu:" + imdu.id, "LOST", "RELOADED",
                          "partition " + std::to_string(p) + " from " + *imdu.origin_du);
  }
  for (std::size_t p = 0; p < fresh.partitions.size(); ++p) {
    if (used[p]) continue;
    const auto& part = fresh.partitions[p];
    try {
      data_.adaptor_of(part.space_id)->remove(part.space_id, part.item);
    } catch (const Error&) {
    }
  }
  return repaired;
}

std::vector<std::string> MemoryEngine::run_units(std::vector<ComputeUnitDescription> units) {
  std::vector<std::string> ids;
  ids.reserve(units.size());
  for (auto& cud : units) ids.push_back(manager_.submit_compute_unit(cud));
  if (!manager_.wait_terminal(ids, config_.task_timeout)) {
    for (const auto& id : ids) {
      try {
        if (!is_terminal(manager_.unit_info(id).state)) manager_.cancel_unit(id);
      } catch (const Error&) {
      }
    }
    throw Error(ErrorCode::TaskFailed, "tasks did not finish in time");
  }
  for (const auto& id : ids) {
    const auto info = manager_.unit_info(id);
    if (info.state == UnitState::Done) continue;
    const std::string reason = info.outcome ? info.outcome->reason : "canceled";
    if (reason.rfind("PARTITION_LOST", 0) == 0) {
      throw Error(ErrorCode::PartitionLost, reason, {"unit " + id});
    }
    throw Error(ErrorCode::TaskFailed, id + " attempt " + std::to_string(info.attempt),
                {reason});
  }
  return ids;
}

InMemoryDataUnit MemoryEngine::map_reduce(const InMemoryDataUnit& input_ref,
                                          const MapFn& map_fn, const ReduceFn& reduce_fn,
                                          std::size_t reducers,
                                          const MapReduceOptions& options) {
  if (reducers < 1) throw Error(ErrorCode::ValidationError, "reducer count must be >= 1");
  const auto pilots = running_pilots();
  if (pilots.ids.empty()) throw Error(ErrorCode::NoPilots, "no RUNNING pilot");
  const auto input = repair(input_ref);

  JobStats stats;
  const auto job = next_id("job");
  auto state = std::make_shared<JobState>();
  state->data = &data_;
  for (const auto& id : pilots.ids) state->pilot_spaces[id] = space_for_pilot(id);
  state->map_fn = map_fn;
  state->reduce_fn = reduce_fn;
  state->combine = options.combine;
  state->reducers = reducers;
  state->shuffle.resize(input.partitions.size());
  state->outputs.resize(reducers);

  // Map phase.
  auto t0 = Clock::now();
  std::vector<ComputeUnitDescription> maps;
  for (std::size_t p = 0; p < input.partitions.size(); ++p) {
    const auto part = input.partitions[p];
    ComputeUnitDescription cud;
    cud.kind = UnitKind::MapTask;
    cud.task_ref = job + ".map-" + std::to_string(p);
    cud.affinity = part.label;
    cud.task = std::make_shared<const TaskBody>([state, part, job, p](TaskContext& ctx) {
      const auto bytes = fetch(*state->data, part.space_id, part.item);
      std::vector<std::string> buckets(state->reducers);
      ShuffleEmitter emitter(buckets);
      TupleReader reader(*bytes);
      std::string_view k, v;
      std::uint64_t rec = part.record_base;
      while (reader.next(k, v)) {
        emitter.start_record(rec);
        state->map_fn(k, v, emitter);
        rec += part.record_stride;
      }
      if (state->combine) {
        for (auto& bucket : buckets) {
          std::vector<Entry> entries;
          parse_entries(bucket, entries);
          sort_entries(entries);
          std::string combined;
          std::uint32_t seq = 0;
          for_each_group(entries, [&](std::string_view key,
                                      const std::vector<std::string_view>& values,
                                      std::uint64_t first) {
            CollectingEmitter partial;
            state->reduce_fn(key, values, partial);
            for (const auto& t : partial.tuples) {
              append_entry(combined, first, seq++, t.key, t.value);
            }
          });
          bucket.swap(combined);
        }
      }
      const auto space = state->space_for(ctx, part.space_id);
      auto adaptor = state->data->adaptor_of(space);
      std::vector<std::tuple<std::string, std::string, std::size_t>> refs;
      for (std::size_t r = 0; r < buckets.size(); ++r) {
        const auto name = item_name(job, ("m" + std::to_string(p) + ".r").c_str(), r);
        const auto size = buckets[r].size();
        adaptor->put(space, name, make_bytes(std::move(buckets[r])));
        refs.emplace_back(space, name, size);
      }
      std::lock_guard<std::mutex> lock(state->mu);
      state->map_outputs += emitter.count();
      state->shuffle[p] = std::move(refs);
    });
    maps.push_back(std::move(cud));
  }
  stats.map_units = run_units(std::move(maps));
  stats.map_ms = ms_since(t0);
  stats.map_input_tuples = input.total_tuples();
  stats.map_output_tuples = state->map_outputs;

  // Shuffle: gather each reducer's input into one item on the pilot that
  // will run it.
  t0 = Clock::now();
  std::vector<std::pair<std::string, std::string>> reduce_inputs(reducers);
  std::vector<std::size_t> reduce_hosts(reducers);
  for (std::size_t r = 0; r < reducers; ++r) {
    const auto host = r % pilots.ids.size();
    reduce_hosts[r] = host;
    std::string merged;
    for (const auto& refs : state->shuffle) {
      const auto& [space, name, size] = refs[r];
      const auto bytes = fetch(data_, space, name);
      merged.append(*bytes);
      data_.adaptor_of(space)->remove(space, name);
    }
    stats.shuffle_bytes += merged.size();
    const auto target = state->pilot_spaces.at(pilots.ids[host]);
    const auto name = item_name(job, "in", r);
    tier_->put(target, name, make_bytes(std::move(merged)));
    reduce_inputs[r] = {target, name};
  }
  stats.shuffle_ms = ms_since(t0);

  // Reduce phase.
  t0 = Clock::now();
  InMemoryDataUnit out;
  out.id = next_id("imdu");
  out.backend = config_.backend;
  std::vector<ComputeUnitDescription> reduces;
  for (std::size_t r = 0; r < reducers; ++r) {
    const auto [in_space, in_item] = reduce_inputs[r];
    const auto out_item = item_name(out.id, "part", r);
    ComputeUnitDescription cud;
    cud.kind = UnitKind::ReduceTask;
    cud.task_ref = job + ".reduce-" + std::to_string(r);
    cud.affinity = pilots.labels[reduce_hosts[r]];
    cud.task = std::make_shared<const TaskBody>(
        [state, in_space, in_item, out_item, r](TaskContext& ctx) {
          const auto bytes = fetch(*state->data, in_space, in_item);
          std::vector<Entry> entries;
          parse_entries(*bytes, entries);
          sort_entries(entries);
          CollectingEmitter emitter;
          for_each_group(entries, [&](std::string_view key,
                                      const std::vector<std::string_view>& values,
                                      std::uint64_t) {
            state->reduce_fn(key, values, emitter);
          });
          std::stable_sort(emitter.tuples.begin(), emitter.tuples.end(),
                           [](const Tuple& a, const Tuple& b) { return a.key < b.key; });
          const auto space = state->space_for(ctx, in_space);
          state->data->adaptor_of(space)->put(space, out_item,
                                              make_bytes(encode_tuples(emitter.tuples)));
          state->data->adaptor_of(in_space)->remove(in_space, in_item);
          std::lock_guard<std::mutex> lock(state->mu);
          state->reduce_inputs += entries.size();
          state->outputs[r] = {space, emitter.tuples.size()};
        });
    reduces.push_back(std::move(cud));
  }
  stats.reduce_units = run_units(std::move(reduces));
  stats.reduce_ms = ms_since(t0);
  stats.reduce_input_tuples = state->reduce_inputs;

  std::uint64_t base = 0;
  for (std::size_t r = 0; r < reducers; ++r) {
    Partition part;
    part.partition_id = r;
    part.space_id = state->outputs[r].first;
    for (const auto& [pilot, space] : state->pilot_spaces) {
      if (space == part.space_id) part.pilot_id = pilot;
    }
    for (std::size_t i = 0; i < pilots.ids.size(); ++i) {
      if (pilots.ids[i] == part.pilot_id) part.label = pilots.labels[i];
    }
    part.item = item_name(out.id, "part", r);
    part.tuple_count = state->outputs[r].second;
    part.record_base = base;
    part.record_stride = 1;
    base += part.tuple_count;
    out.partitions.push_back(std::move(part));
  }
  std::lock_guard<std::mutex> lock(mu_);
  stats_ = std::move(stats);
  return out;
}

InMemoryDataUnit MemoryEngine::map_only(const InMemoryDataUnit& input_ref,
                                        const MapFn& map_fn) {
  const auto pilots = running_pilots();
  if (pilots.ids.empty()) throw Error(ErrorCode::NoPilots, "no RUNNING pilot");
  const auto input = repair(input_ref);

  JobStats stats;
  const auto job = next_id("job");
  auto state = std::make_shared<JobState>();
  state->data = &data_;
  for (const auto& id : pilots.ids) state->pilot_spaces[id] = space_for_pilot(id);
  state->map_fn = map_fn;
  state->outputs.resize(input.partitions.size());

  InMemoryDataUnit out;
  out.id = next_id("imdu");
  out.backend = config_.backend;

  const auto t0 = Clock::now();
  std::vector<ComputeUnitDescription> maps;
  for (std::size_t p = 0; p < input.partitions.size(); ++p) {
    const auto part = input.partitions[p];
    const auto out_item = item_name(out.id, "part", p);
    ComputeUnitDescription cud;
    cud.kind = UnitKind::MapTask;
    cud.task_ref = job + ".map-" + std::to_string(p);
    cud.affinity = part.label;
    cud.task = std::make_shared<const TaskBody>([state, part, out_item, p](TaskContext& ctx) {
      const auto bytes = fetch(*state->data, part.space_id, part.item);
      EncodingEmitter emitter;
      TupleReader reader(*bytes);
      std::string_view k, v;
      while (reader.next(k, v)) state->map_fn(k, v, emitter);
      const auto space = state->space_for(ctx, part.space_id);
      const auto count = emitter.count;
      state->data->adaptor_of(space)->put(space, out_item, make_bytes(std::move(emitter.out)));
      std::lock_guard<std::mutex> lock(state->mu);
      state->map_outputs += count;
      state->outputs[p] = {space, count};
    });
    maps.push_back(std::move(cud));
  }
  stats.map_units = run_units(std::move(maps));
  stats.map_ms = ms_since(t0);
  stats.map_input_tuples = input.total_tuples();
  stats.map_output_tuples = state->map_outputs;

  std::uint64_t base = 0;
  for (std::size_t p = 0; p < input.partitions.size(); ++p) {
    Partition part;
    part.partition_id = p;
    part.space_id = state->outputs[p].first;
    for (const auto& [pilot, space] : state->pilot_spaces) {
      if (space == part.space_id) part.pilot_id = pilot;
    }
    for (std::size_t i = 0; i < pilots.ids.size(); ++i) {
      if (pilots.ids[i] == part.pilot_id) part.label = pilots.labels[i];
    }
    part.item = item_name(out.id, "part", p);
    part.tuple_count = state->outputs[p].second;
    part.record_base = base;
    part.record_stride = 1;
    base += part.tuple_count;
    out.partitions.push_back(std::move(part));
  }
  std::lock_guard<std::mutex> lock(mu_);
  stats_ = std::move(stats);
  return out;
}

DataUnit MemoryEngine::persist(const InMemoryDataUnit& imdu, const std::string& target_space) {
  auto adaptor = data_.adaptor_of(target_space);
  std::vector<std::string> names;
  try {
    for (std::size_t p = 0; p < imdu.partitions.size(); ++p) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "partition-%05zu", p);
      adaptor->put(target_space, buf, partition_bytes(imdu, p));
      names.emplace_back(buf);
    }
  } catch (...) {
    for (const auto& n : names) adaptor->remove(target_space, n);
    throw;
  }
  return data_.adopt_data_unit(target_space, names);
}

BroadcastRef MemoryEngine::broadcast(std::string value) {
  if (static_cast<std::int64_t>(value.size()) > config_.broadcast_limit_bytes) {
    throw Error(ErrorCode::BroadcastTooLarge,
                std::to_string(value.size()) + " bytes exceeds the " +
                    std::to_string(config_.broadcast_limit_bytes) + "-byte limit");
  }
  const auto id = next_id("bcast");
  std::lock_guard<std::mutex> lock(mu_);
  const auto version = ++broadcast_version_;
  broadcasts_[id] = {version, make_bytes(std::move(value))};
  return BroadcastRef{id, version};
}

Bytes MemoryEngine::read_broadcast(const BroadcastRef& ref) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = broadcasts_.find(ref.id);
  if (it == broadcasts_.end() || it->second.first != ref.version) {
    throw Error(ErrorCode::UnknownBroadcast, "no broadcast '" + ref.id + "'");
  }
  return it->second.second;
}

void MemoryEngine::release(const BroadcastRef& ref) {
  std::lock_guard<std::mutex> lock(mu_);
  broadcasts_.erase(ref.id);
}

}  // namespace pilotkit
