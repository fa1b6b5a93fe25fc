// pilotkit command-line tool.
//
//   pilotkit run <spec.json> [--out results.csv] [--events events.log]
//   pilotkit validate <spec.json>
//   pilotkit kmeans --points N --clusters K --backend {file,memory}
//                   --partitions P --reducers R --seed S --epsilon E
//                   --max-iter M [--dims D] [--workers W] --out results.csv
//   pilotkit bench-io --sizes 1,8,64 --backends file,memory --out results.csv
//
// Exit status: 0 success, 1 usage or validation error, 2 runtime failure.

#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pilotkit/bench.hpp"
#include "pilotkit/kmeans.hpp"
#include "pilotkit/session.hpp"
#include "pilotkit/workload.hpp"

namespace fs = std::filesystem;
using namespace pilotkit;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

// Private sandbox under the configured root, removed on exit unless kept.
class Scratch {
 public:
  explicit Scratch(bool keep) : keep_(keep) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = default_sandbox_root() /
            ("run-" + std::to_string(::getpid()) + "-" + std::to_string(stamp));
    fs::create_directories(path_);
  }
  ~Scratch() {
    if (keep_) return;
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  bool keep_;
};

void print_error(const Error& e) { std::cerr << "error: " << e.what() << '\n'; }

int emit_csv(const BenchResult& rows, const std::string& out) {
  if (out.empty() || out == "-") {
    write_csv(std::cout, rows);
    return kOk;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) {
    std::cerr << "error: cannot write " << out << '\n';
    return kRuntime;
  }
  write_csv(f, rows);
  return f ? kOk : kRuntime;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!part.empty()) out.push_back(part);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pilot-based resource management and in-memory map/reduce"};
  app.require_subcommand(1);
  bool keep = false;
  app.add_flag("--keep-sandbox", keep, "Keep the scratch directory under $PILOTKIT_ROOT");

  std::string spec_path, out_path, events_path;
  auto* run = app.add_subcommand("run", "Execute a workload spec");
  run->add_option("spec", spec_path, "Workload spec (JSON)")->required();
  run->add_option("--out", out_path, "CSV output file ('-' for stdout)");
  run->add_option("--events", events_path, "Write the event log to this file");

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "Check a workload spec without running it");
  val->add_option("spec", validate_path, "Workload spec (JSON)")->required();

  KMeansConfig km;
  std::string km_backend = "memory";
  std::string km_out;
  std::int64_t km_workers = 4;
  auto* kmeans = app.add_subcommand("kmeans", "Run KMeans on synthetic points");
  kmeans->add_option("--points", km.n_points, "Number of points")->required();
  kmeans->add_option("--clusters", km.n_clusters, "Number of clusters")->required();
  kmeans->add_option("--dims", km.n_dims, "Dimensions")->capture_default_str();
  kmeans->add_option("--backend", km_backend, "file or memory")->capture_default_str();
  kmeans->add_option("--partitions", km.partitions, "Input partitions")->capture_default_str();
  kmeans->add_option("--reducers", km.reducers, "Reducers")->capture_default_str();
  kmeans->add_option("--seed", km.seed, "Point generator seed")->capture_default_str();
  kmeans->add_option("--epsilon", km.epsilon, "Stop when no centroid moves further")
      ->capture_default_str();
  kmeans->add_option("--max-iter", km.max_iterations, "Iteration cap")->capture_default_str();
  kmeans->add_option("--workers", km_workers, "Task slots of the local pilot")
      ->capture_default_str();
  kmeans->add_option("--out", km_out, "CSV output file ('-' for stdout)");

  std::string sizes = "1,8,64";
  std::string backends = "file,memory";
  IoBenchConfig io;
  std::string io_out;
  std::int64_t io_workers = 4;
  auto* bench = app.add_subcommand("bench-io", "Storage tier read/write benchmark");
  bench->add_option("--sizes", sizes, "Sizes in MB, comma separated")->capture_default_str();
  bench->add_option("--backends", backends, "file,memory")->capture_default_str();
  bench->add_option("--partitions", io.partitions, "Parallel readers")->capture_default_str();
  bench->add_option("--reps", io.repetitions, "Repetitions (best is kept)")
      ->capture_default_str();
  bench->add_option("--workers", io_workers, "Task slots of the local pilot")
      ->capture_default_str();
  bench->add_option("--out", io_out, "CSV output file ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kInvalid;
  }

  try {
    if (*val) {
      load_workload(validate_path);
      return kOk;
    }

    if (*run) {
      WorkloadSpec spec;
      try {
        spec = load_workload(spec_path);
      } catch (const Error& e) {
        print_error(e);
        return kInvalid;
      }
      Scratch scratch(keep);
      std::vector<std::string> events;
      const auto report = run_workload(spec, scratch.path(), &events);
      for (const auto& [id, state] : report.unit_states) {
        std::cerr << id << ' ' << state;
        if (auto it = report.unit_errors.find(id); it != report.unit_errors.end()) {
          std::cerr << " (" << it->second << ')';
        }
        std::cerr << '\n';
      }
      for (const auto& [id, output] : report.job_outputs) std::cerr << id << ' ' << output << '\n';
      if (!events_path.empty()) {
        std::ofstream f(events_path, std::ios::binary | std::ios::trunc);
        for (const auto& line : events) f << line << '\n';
      }
      if (!report.rows.empty() || !out_path.empty()) {
        if (emit_csv(report.rows, out_path) != kOk) return kRuntime;
      }
      return report.ok ? kOk : kRuntime;
    }

    if (*kmeans) {
      try {
        km.backend = parse_engine_backend(km_backend);
        validate(km);
        if (km_workers < 1) throw Error(ErrorCode::ValidationError, "workers must be >= 1");
      } catch (const Error& e) {
        print_error(e);
        return kInvalid;
      }
      Scratch scratch(keep);
      SessionConfig sc;
      sc.root = scratch.path();
      sc.local_cores = km_workers;
      Session session(sc);
      session.add_local_pilot(static_cast<int>(km_workers));
      EngineConfig ec;
      ec.backend = km.backend;
      MemoryEngine engine(session.manager(), session.data(), ec);
      const auto result = run_kmeans(engine, km);
      std::cerr << "iterations " << result.iterations << (result.converged ? " converged" : "")
                << " wcss " << (result.wcss.empty() ? 0.0 : result.wcss.back()) << " total_ms "
                << result.total_ms << '\n';
      return emit_csv(result.rows, km_out);
    }

    if (*bench) {
      try {
        io.sizes_mb.clear();
        for (const auto& s : split_list(sizes)) {
          std::size_t used = 0;
          const auto v = std::stoll(s, &used);
          if (used != s.size() || v < 0) throw std::invalid_argument(s);
          io.sizes_mb.push_back(v);
        }
        io.backends.clear();
        for (const auto& b : split_list(backends)) io.backends.push_back(parse_engine_backend(b));
        if (io.sizes_mb.empty() || io.backends.empty()) {
          throw Error(ErrorCode::ValidationError, "need at least one size and one backend");
        }
        if (io.partitions < 1 || io.repetitions < 1 || io_workers < 1) {
          throw Error(ErrorCode::ValidationError, "partitions, reps and workers must be >= 1");
        }
      } catch (const Error& e) {
        print_error(e);
        return kInvalid;
      } catch (const std::exception&) {
        std::cerr << "error: --sizes must be non-negative integers, got '" << sizes << "'\n";
        return kInvalid;
      }
      Scratch scratch(keep);
      SessionConfig sc;
      sc.root = scratch.path();
      sc.local_cores = io_workers;
      Session session(sc);
      session.add_local_pilot(static_cast<int>(io_workers));
      const auto report = bench_io(session, io);
      for (const auto& m : report.measurements) {
        std::cerr << m.scenario << ' ' << to_string(m.backend) << ' ' << m.size_mb << "MB "
                  << m.wall_ms << "ms " << m.throughput_mb_s << "MB/s"
                  << (m.bytes_match ? "" : " MISMATCH") << '\n';
        if (!m.bytes_match) return kRuntime;
      }
      return emit_csv(report.rows, io_out);
    }
  } catch (const Error& e) {
    print_error(e);
    return e.code() == ErrorCode::ValidationError ? kInvalid : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
