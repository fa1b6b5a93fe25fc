#include "pilotkit/workload.hpp"

#include <chrono>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pilotkit/session.hpp"

namespace pilotkit {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Collects every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  bool object(const json& j, const std::string& path,
              std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      errors.push_back(path + ": expected an object");
      return false;
    }
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (const char* a : allowed) known = known || key == a;
      if (!known) errors.push_back(path + ": unknown field '" + key + "'");
    }
    return true;
  }

  const json* field(const json& obj, const char* key, const std::string& path, bool required) {
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) errors.push_back(path + ": missing field '" + key + "'");
      return nullptr;
    }
    return &*it;
  }

  std::optional<std::string> str(const json& obj, const char* key, const std::string& path,
                                 bool required = false) {
    const auto* v = field(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      errors.push_back(path + "." + key + ": expected a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<std::int64_t> integer(const json& obj, const char* key, const std::string& path,
                                      bool required = false) {
    const auto* v = field(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) {
      errors.push_back(path + "." + key + ": expected an integer");
      return std::nullopt;
    }
    return v->get<std::int64_t>();
  }

  std::optional<std::uint64_t> count(const json& obj, const char* key, const std::string& path,
                                     bool required = false) {
    const auto* v = field(obj, key, path, required);
    if (!v) return std::nullopt;
    if (!v->is_number_unsigned()) {
      errors.push_back(path + "." + key + ": expected a non-negative integer");
      return std::nullopt;
    }
    return v->get<std::uint64_t>();
  }

  // A number, or the string "inf".
  std::optional<double> number(const json& obj, const char* key, const std::string& path) {
    const auto* v = field(obj, key, path, false);
    if (!v) return std::nullopt;
    if (v->is_string() && v->get<std::string>() == "inf") {
      return std::numeric_limits<double>::infinity();
    }
    if (!v->is_number()) {
      errors.push_back(path + "." + key + ": expected a number");
      return std::nullopt;
    }
    return v->get<double>();
  }

  std::optional<bool> boolean(const json& obj, const char* key, const std::string& path) {
    const auto* v = field(obj, key, path, false);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      errors.push_back(path + "." + key + ": expected true or false");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  std::vector<std::string> strings(const json& obj, const char* key, const std::string& path) {
    std::vector<std::string> out;
    const auto* v = field(obj, key, path, false);
    if (!v) return out;
    if (!v->is_array()) {
      errors.push_back(path + "." + key + ": expected an array of strings");
      return out;
    }
    for (const auto& e : *v) {
      if (!e.is_string()) {
        errors.push_back(path + "." + key + ": expected an array of strings");
        return {};
      }
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  const json* array(const json& obj, const char* key, const std::string& path) {
    const auto* v = field(obj, key, path, false);
    if (v && !v->is_array()) {
      errors.push_back(path + "." + key + ": expected an array");
      return nullptr;
    }
    return v;
  }

  AffinityLabels labels(const json& obj, const std::string& path) {
    AffinityLabels out;
    const auto* v = field(obj, "labels", path, false);
    if (!v) return out;
    const auto p = path + ".labels";
    if (!object(*v, p, {"datacenter", "machine"})) return out;
    out.datacenter = str(*v, "datacenter", p);
    out.machine = str(*v, "machine", p);
    return out;
  }

  EmulatedClusterConfig emulator(const json& j, const std::string& path, std::uint64_t seed) {
    EmulatedClusterConfig c;
    c.seed = seed;
    if (!object(j, path,
                {"nodes", "cores_per_node", "memory_per_node_mb", "queue_wait_low_ms",
                 "queue_wait_high_ms", "preemption", "tick_ms", "max_pending_ms", "seed"})) {
      return c;
    }
    if (auto v = integer(j, "nodes", path)) c.n_nodes = *v;
    if (auto v = integer(j, "cores_per_node", path)) c.cores_per_node = *v;
    if (auto v = integer(j, "memory_per_node_mb", path)) c.memory_per_node_mb = *v;
    if (auto v = integer(j, "queue_wait_low_ms", path)) c.queue_wait_low_ms = *v;
    if (auto v = integer(j, "queue_wait_high_ms", path)) c.queue_wait_high_ms = *v;
    if (auto v = boolean(j, "preemption", path)) c.preemption_enabled = *v;
    if (auto v = integer(j, "tick_ms", path)) c.tick_ms = *v;
    if (auto v = integer(j, "max_pending_ms", path)) c.max_pending_ms = *v;
    if (auto v = count(j, "seed", path)) c.seed = *v;
    if (c.n_nodes < 1 || c.cores_per_node < 1 || c.memory_per_node_mb < 1) {
      errors.push_back(path + ": nodes, cores_per_node and memory_per_node_mb must be >= 1");
    }
    if (c.queue_wait_low_ms < 0 || c.queue_wait_high_ms < c.queue_wait_low_ms) {
      errors.push_back(path + ": need 0 <= queue_wait_low_ms <= queue_wait_high_ms");
    }
    if (c.tick_ms < 1) errors.push_back(path + ".tick_ms: must be >= 1");
    return c;
  }

  // Runs a core validator and folds its messages in.
  template <typename T>
  void check(const T& description, const std::string& path) {
    try {
      validate(description);
    } catch (const Error& e) {
      if (e.details().empty()) {
        errors.push_back(path + ": " + e.what());
      }
      for (const auto& d : e.details()) errors.push_back(path + ": " + d);
    }
  }
};

void parse_job(Reader& r, const json& j, const std::string& path, std::uint64_t seed,
               WorkloadSpec& spec) {
  if (!j.is_object()) {
    r.errors.push_back(path + ": expected an object");
    return;
  }
  WorkloadJob job;
  job.id = r.str(j, "id", path, true).value_or("");
  const auto type = r.str(j, "type", path, true).value_or("");
  auto backend = [&]() {
    const auto b = r.str(j, "backend", path).value_or("memory");
    try {
      return parse_engine_backend(b);
    } catch (const Error& e) {
      r.errors.push_back(path + ".backend: " + e.what());
      return EngineBackend::Memory;
    }
  };
  if (type == "wordcount") {
    r.object(j, path,
             {"id", "type", "input", "partitions", "reducers", "backend", "output_space"});
    WordCountJob wc;
    wc.input = r.str(j, "input", path, true).value_or("");
    if (auto v = r.count(j, "partitions", path)) wc.partitions = *v;
    if (auto v = r.count(j, "reducers", path)) wc.reducers = *v;
    wc.backend = backend();
    wc.output_space = r.str(j, "output_space", path);
    if (wc.partitions < 1 || wc.reducers < 1) {
      r.errors.push_back(path + ": partitions and reducers must be >= 1");
    }
    job.job = wc;
  } else if (type == "kmeans") {
    r.object(j, path,
             {"id", "type", "points", "clusters", "dims", "partitions", "reducers", "backend",
              "epsilon", "max_iter", "seed"});
    KMeansConfig c;
    c.seed = seed;
    if (auto v = r.count(j, "points", path)) c.n_points = *v;
    if (auto v = r.count(j, "clusters", path)) c.n_clusters = *v;
    if (auto v = r.count(j, "dims", path)) c.n_dims = *v;
    if (auto v = r.count(j, "partitions", path)) c.partitions = *v;
    if (auto v = r.count(j, "reducers", path)) c.reducers = *v;
    if (auto v = r.number(j, "epsilon", path)) c.epsilon = *v;
    if (auto v = r.count(j, "max_iter", path)) c.max_iterations = *v;
    if (auto v = r.count(j, "seed", path)) c.seed = *v;
    c.backend = backend();
    try {
      validate(c);
    } catch (const Error& e) {
      for (const auto& d : e.details()) r.errors.push_back(path + ": " + d);
    }
    job.job = c;
  } else if (!type.empty()) {
    r.errors.push_back(path + ".type: expected wordcount or kmeans, got '" + type + "'");
  }
  spec.jobs.push_back(std::move(job));
}

void check_references(Reader& r, const WorkloadSpec& spec) {
  std::set<std::string> ids;
  auto claim = [&](const std::string& id, const std::string& what) {
    if (id.empty()) return;
    if (!ids.insert(id).second) r.errors.push_back(what + " id '" + id + "' is used twice");
  };
  std::set<std::string> pilots, spaces, dus;
  for (const auto& p : spec.pilots) {
    claim(p.id, "pilot");
    pilots.insert(p.id);
  }
  for (const auto& s : spec.data_pilots) {
    claim(s.id, "data pilot");
    spaces.insert(s.id);
    if (s.owner_pilot && !pilots.count(*s.owner_pilot)) {
      r.errors.push_back("data pilot '" + s.id + "': unknown owner_pilot '" + *s.owner_pilot +
                         "'");
    }
  }
  for (const auto& d : spec.data_units) {
    claim(d.id, "data unit");
    dus.insert(d.id);
    if (!spaces.count(d.space)) {
      r.errors.push_back("data unit '" + d.id + "': unknown space '" + d.space + "'");
    }
  }
  for (const auto& u : spec.units) {
    claim(u.id, "unit");
    for (const auto& in : u.description.input_du_ids) {
      if (!dus.count(in)) {
        r.errors.push_back("unit '" + u.id + "': unknown input data unit '" + in + "'");
      }
    }
    for (const auto& out : u.description.output_du_ids) claim(out, "output data unit");
  }
  for (const auto& j : spec.jobs) {
    claim(j.id, "job");
    if (const auto* wc = std::get_if<WordCountJob>(&j.job)) {
      if (!wc->input.empty() && !dus.count(wc->input)) {
        r.errors.push_back("job '" + j.id + "': unknown input data unit '" + wc->input + "'");
      }
      if (wc->output_space && !spaces.count(*wc->output_space)) {
        r.errors.push_back("job '" + j.id + "': unknown output_space '" + *wc->output_space +
                           "'");
      }
    }
  }
  // late binding would otherwise leave every unit NEW until the wait times out
  if (spec.pilots.empty() && (!spec.units.empty() || !spec.jobs.empty())) {
    r.errors.push_back("$.pilots: units or jobs declared but no pilot to run them");
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ValidationError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

WorkloadSpec parse_workload(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ValidationError, "workload is not valid JSON", {e.what()});
  }
  Reader r;
  WorkloadSpec spec;
  spec.base_dir = base_dir;
  if (!r.object(root, "$",
                {"spec_version", "scheduling_mode", "seed", "local", "batch_emu", "yarn_emu",
                 "pilots", "data_pilots", "data_units", "units", "jobs"})) {
    throw Error(ErrorCode::ValidationError, "invalid workload", r.errors);
  }
  if (auto v = r.integer(root, "spec_version", "$", true)) {
    spec.spec_version = static_cast<int>(*v);
    if (*v != kWorkloadSpecVersion) {
      r.errors.push_back("$.spec_version: unsupported version " + std::to_string(*v));
    }
  }
  if (auto v = r.str(root, "scheduling_mode", "$")) {
    try {
      spec.scheduling_mode = parse_affinity_mode(*v);
    } catch (const Error& e) {
      r.errors.push_back(std::string("$.scheduling_mode: ") + e.what());
    }
  }
  if (auto v = r.count(root, "seed", "$")) spec.seed = *v;
  if (const auto* local = r.field(root, "local", "$", false)) {
    if (r.object(*local, "$.local", {"cores"})) {
      if (auto v = r.integer(*local, "cores", "$.local")) spec.local_cores = *v;
      if (spec.local_cores < 1) r.errors.push_back("$.local.cores: must be >= 1");
    }
  }
  if (const auto* v = r.field(root, "batch_emu", "$", false)) {
    spec.batch_emu = r.emulator(*v, "$.batch_emu", spec.seed);
  }
  if (const auto* v = r.field(root, "yarn_emu", "$", false)) {
    spec.yarn_emu = r.emulator(*v, "$.yarn_emu", spec.seed);
  }

  if (const auto* arr = r.array(root, "pilots", "$")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto path = "$.pilots[" + std::to_string(i) + "]";
      const auto& j = (*arr)[i];
      if (!r.object(j, path,
                    {"id", "resource_url", "cores", "memory_mb", "walltime_min", "queue",
                     "labels"})) {
        continue;
      }
      WorkloadPilot p;
      p.id = r.str(j, "id", path, true).value_or("");
      p.description.resource_url = r.str(j, "resource_url", path, true).value_or("");
      if (auto v = r.integer(j, "cores", path)) p.description.cores = *v;
      if (auto v = r.integer(j, "memory_mb", path)) p.description.memory_mb = *v;
      p.description.walltime_min = r.integer(j, "walltime_min", path).value_or(60);
      p.description.queue_name = r.str(j, "queue", path);
      p.description.affinity = r.labels(j, path);
      if (!p.description.resource_url.empty()) r.check(p.description, path);
      spec.pilots.push_back(std::move(p));
    }
  }
  if (const auto* arr = r.array(root, "data_pilots", "$")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto path = "$.data_pilots[" + std::to_string(i) + "]";
      const auto& j = (*arr)[i];
      if (!r.object(j, path, {"id", "storage_url", "space_mb", "labels", "owner_pilot"})) {
        continue;
      }
      WorkloadDataPilot s;
      s.id = r.str(j, "id", path, true).value_or("");
      s.description.storage_url = r.str(j, "storage_url", path, true).value_or("");
      if (auto v = r.integer(j, "space_mb", path)) s.description.space_mb = *v;
      s.description.affinity = r.labels(j, path);
      s.owner_pilot = r.str(j, "owner_pilot", path);
      if (!s.description.storage_url.empty()) r.check(s.description, path);
      spec.data_pilots.push_back(std::move(s));
    }
  }
  if (const auto* arr = r.array(root, "data_units", "$")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto path = "$.data_units[" + std::to_string(i) + "]";
      const auto& j = (*arr)[i];
      if (!r.object(j, path, {"id", "space", "items", "labels"})) continue;
      WorkloadDataUnit d;
      d.id = r.str(j, "id", path, true).value_or("");
      d.space = r.str(j, "space", path, true).value_or("");
      d.description.affinity = r.labels(j, path);
      if (const auto* items = r.array(j, "items", path)) {
        for (std::size_t k = 0; k < items->size(); ++k) {
          const auto ipath = path + ".items[" + std::to_string(k) + "]";
          const auto& item = (*items)[k];
          if (!r.object(item, ipath, {"source", "name"})) continue;
          DataItemRef ref;
          ref.source_url = r.str(item, "source", ipath, true).value_or("");
          ref.logical_name = r.str(item, "name", ipath).value_or(
              std::filesystem::path(ref.source_url).filename().string());
          d.description.items.push_back(std::move(ref));
        }
      }
      r.check(d.description, path);
      spec.data_units.push_back(std::move(d));
    }
  }
  if (const auto* arr = r.array(root, "units", "$")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto path = "$.units[" + std::to_string(i) + "]";
      const auto& j = (*arr)[i];
      if (!r.object(j, path,
                    {"id", "executable", "arguments", "env", "cores", "inputs", "outputs",
                     "labels"})) {
        continue;
      }
      WorkloadUnit u;
      u.id = r.str(j, "id", path, true).value_or("");
      u.description.executable = r.str(j, "executable", path, true).value_or("");
      u.description.arguments = r.strings(j, "arguments", path);
      if (auto v = r.integer(j, "cores", path)) u.description.cores = *v;
      u.description.input_du_ids = r.strings(j, "inputs", path);
      u.description.output_du_ids = r.strings(j, "outputs", path);
      u.description.affinity = r.labels(j, path);
      if (const auto* env = r.field(j, "env", path, false)) {
        if (!env->is_object()) {
          r.errors.push_back(path + ".env: expected an object of strings");
        } else {
          for (const auto& [k, v] : env->items()) {
            if (!v.is_string()) {
              r.errors.push_back(path + ".env." + k + ": expected a string");
            } else {
              u.description.env[k] = v.get<std::string>();
            }
          }
        }
      }
      r.check(u.description, path);
      spec.units.push_back(std::move(u));
    }
  }
  if (const auto* arr = r.array(root, "jobs", "$")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      parse_job(r, (*arr)[i], "$.jobs[" + std::to_string(i) + "]", spec.seed, spec);
    }
  }
  check_references(r, spec);
  if (!r.errors.empty()) {
    throw Error(ErrorCode::ValidationError, "invalid workload", r.errors);
  }
  return spec;
}

WorkloadSpec load_workload(const std::filesystem::path& path) {
  return parse_workload(read_text(path), path.parent_path());
}

WorkloadReport run_workload(const WorkloadSpec& spec, const std::filesystem::path& root,
                            std::vector<std::string>* event_lines) {
  SessionConfig sc;
  sc.root = root;
  sc.mode = spec.scheduling_mode;
  sc.local_cores = spec.local_cores;
  Session session(sc);
  auto& compute = session.compute();
  auto& data = session.data();
  auto& manager = session.manager();
  if (spec.batch_emu) {
    compute.register_backend(std::make_shared<BatchEmuBackend>(*spec.batch_emu, session.log_ptr()));
  }
  if (spec.yarn_emu) {
    compute.register_backend(std::make_shared<YarnEmuBackend>(*spec.yarn_emu, session.log_ptr()));
  }

  WorkloadReport report;
  for (const auto& p : spec.pilots) compute.create_pilot(p.description, p.id);
  for (const auto& p : spec.pilots) {
    if (!compute.wait_running(p.id, std::chrono::minutes(2))) {
      throw Error(ErrorCode::AllocFailed, "pilot '" + p.id + "' never reached RUNNING",
                  {std::string(to_string(manager.pilot_info(p.id).state))});
    }
  }
  std::map<std::string, std::string> spaces;
  for (const auto& s : spec.data_pilots) {
    spaces[s.id] = data.create_pilot_data(s.description, s.owner_pilot.value_or(""));
  }
  for (const auto& d : spec.data_units) {
    auto desc = d.description;
    for (auto& item : desc.items) {
      std::filesystem::path src = item.source_url.rfind("file://", 0) == 0
                                      ? std::filesystem::path(item.source_url.substr(7))
                                      : std::filesystem::path(item.source_url);
      if (src.is_relative() && !spec.base_dir.empty()) src = spec.base_dir / src;
      item.source_url = src.string();
    }
    data.import_data_unit(desc, spaces.at(d.space), d.id);
  }

  std::vector<std::string> unit_ids;
  for (const auto& u : spec.units) unit_ids.push_back(manager.submit_compute_unit(u.description));
  if (!unit_ids.empty() && !manager.wait_terminal(unit_ids, std::chrono::minutes(30))) {
    report.ok = false;
  }
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    const auto info = manager.unit_info(unit_ids[i]);
    report.unit_states[spec.units[i].id] = std::string(to_string(info.state));
    if (info.state != UnitState::Done) {
      report.ok = false;
      if (info.outcome) report.unit_errors[spec.units[i].id] = info.outcome->reason;
    }
  }

  for (const auto& job : spec.jobs) {
    if (const auto* wc = std::get_if<WordCountJob>(&job.job)) {
      EngineConfig ec;
      ec.backend = wc->backend;
      MemoryEngine engine(manager, data, ec);
      const std::string backend(to_string(wc->backend));
      const auto P = wc->partitions;
      const auto R = wc->reducers;
      const auto t0 = Clock::now();
      const auto input = engine.load(wc->input, P);
      report.rows.push_back(BenchRow{"wordcount", backend, P, R, 0, "load", ms_since(t0),
                                     engine.last_stats().bytes_loaded});
      const auto t1 = Clock::now();
      const auto out = engine.map_reduce(
          input,
          [](std::string_view, std::string_view line, Emitter& e) {
            std::size_t pos = 0;
            while (pos < line.size()) {
              const auto start = line.find_first_not_of(" \t\r", pos);
              if (start == std::string_view::npos) break;
              auto end = line.find_first_of(" \t\r", start);
              if (end == std::string_view::npos) end = line.size();
              e.emit(line.substr(start, end - start), "1");
              pos = end;
            }
          },
          [](std::string_view word, const std::vector<std::string_view>& counts, Emitter& e) {
            std::uint64_t n = 0;
            for (const auto& c : counts) n += std::stoull(std::string(c));
            e.emit(word, std::to_string(n));
          },
          R);
      const auto& s = engine.last_stats();
      report.rows.push_back(BenchRow{"wordcount", backend, P, R, 1, "map", s.map_ms, 0});
      report.rows.push_back(
          BenchRow{"wordcount", backend, P, R, 1, "shuffle", s.shuffle_ms, s.shuffle_bytes});
      report.rows.push_back(BenchRow{"wordcount", backend, P, R, 1, "reduce", s.reduce_ms, 0});
      report.rows.push_back(
          BenchRow{"wordcount", backend, P, R, 1, "total", ms_since(t1), s.shuffle_bytes});
      if (wc->output_space) {
        report.job_outputs[job.id] = engine.persist(out, spaces.at(*wc->output_space)).id;
      } else {
        report.job_outputs[job.id] = std::to_string(out.total_tuples()) + " words";
      }
      engine.dealloc(out);
      engine.dealloc(input);
    } else {
      const auto& config = std::get<KMeansConfig>(job.job);
      EngineConfig ec;
      ec.backend = config.backend;
      MemoryEngine engine(manager, data, ec);
      const auto result = run_kmeans(engine, config);
      report.rows.insert(report.rows.end(), result.rows.begin(), result.rows.end());
      report.job_outputs[job.id] = std::to_string(result.iterations) + " iterations";
    }
  }
  if (event_lines) {
    for (const auto& e : session.log().snapshot()) event_lines->push_back(e.to_line());
  }
  return report;
}

}  // namespace pilotkit
