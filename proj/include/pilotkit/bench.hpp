#pragma once

// Benchmark rows, their CSV form, and the storage-tier I/O benchmark.
//
// CSV: header
//   scenario,backend,partitions,reducers,iteration,phase,wall_ms,bytes_moved
// then one row per measurement, LF line endings, plain ASCII decimals.
// wall_ms is printed with three decimals.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pilotkit/engine.hpp"
#include "pilotkit/session.hpp"

namespace pilotkit {

inline constexpr const char* kCsvHeader =
    "scenario,backend,partitions,reducers,iteration,phase,wall_ms,bytes_moved";

struct BenchRow {
  std::string scenario;
  std::string backend;
  std::uint64_t partitions = 0;
  std::uint64_t reducers = 0;
  std::uint64_t iteration = 0;
  std::string phase;  // load, map, shuffle, reduce or total
  double wall_ms = 0;
  std::uint64_t bytes_moved = 0;

  bool operator==(const BenchRow&) const = default;
};

using BenchResult = std::vector<BenchRow>;

bool is_phase(const std::string& phase);
std::string to_csv(const BenchResult& rows);
void write_csv(std::ostream& out, const BenchResult& rows);
// Throws ValidationError on a wrong header or malformed row.
BenchResult parse_csv(const std::string& text);

struct IoBenchConfig {
  std::vector<std::int64_t> sizes_mb{1, 8, 64};
  std::vector<EngineBackend> backends{EngineBackend::File, EngineBackend::Memory};
  std::size_t partitions = 4;
  int repetitions = 3;
  std::uint64_t seed = 7;
};

struct IoMeasurement {
  std::string scenario;  // io-write, io-read-single, io-read-parallel
  EngineBackend backend = EngineBackend::Memory;
  std::int64_t size_mb = 0;
  double wall_ms = 0;
  double throughput_mb_s = 0;  // 0 for a zero-byte run
  bool bytes_match = false;
};

struct IoBenchReport {
  std::vector<IoMeasurement> measurements;
  BenchResult rows;
};

// Needs at least one RUNNING pilot in the session. Throws
// InsufficientSpace when a tier cannot hold the largest size.
IoBenchReport bench_io(Session& session, const IoBenchConfig& config);

}  // namespace pilotkit
