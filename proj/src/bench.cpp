#include "pilotkit/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "pilotkit/hash.hpp"

namespace pilotkit {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

std::uint64_t parse_u64(const std::string& field, std::size_t line_no) {
  std::uint64_t v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::ValidationError,
                "line " + std::to_string(line_no) + ": bad integer '" + field + "'");
  }
  return v;
}

double parse_ms(const std::string& field, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size() || !(v >= 0)) {
    throw Error(ErrorCode::ValidationError,
                "line " + std::to_string(line_no) + ": bad wall_ms '" + field + "'");
  }
  return v;
}

std::string random_payload(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::string out(n, '\0');
  std::size_t i = 0;
  while (i < n) {
    auto word = rng();
    for (int b = 0; b < 8 && i < n; ++b, ++i) {
      out[i] = static_cast<char>(word & 0xff);
      word >>= 8;
    }
  }
  return out;
}

double throughput(std::int64_t size_mb, double wall_ms) {
  if (size_mb == 0) return 0;
  return static_cast<double>(size_mb) / (std::max(wall_ms, 1e-6) / 1000.0);
}

}  // namespace

bool is_phase(const std::string& phase) {
  return phase == "load" || phase == "map" || phase == "shuffle" || phase == "reduce" ||
         phase == "total";
}

void write_csv(std::ostream& out, const BenchResult& rows) {
  out << kCsvHeader << '\n';
  char ms[64];
  for (const auto& r : rows) {
    std::snprintf(ms, sizeof(ms), "%.3f", r.wall_ms);
    out << r.scenario << ',' << r.backend << ',' << r.partitions << ',' << r.reducers << ','
        << r.iteration << ',' << r.phase << ',' << ms << ',' << r.bytes_moved << '\n';
  }
}

std::string to_csv(const BenchResult& rows) {
  std::ostringstream out;
  write_csv(out, rows);
  return out.str();
}

BenchResult parse_csv(const std::string& text) {
  const auto lines = split(text, '\n');
  if (lines.empty() || lines[0] != kCsvHeader) {
    throw Error(ErrorCode::ValidationError, "missing or wrong CSV header");
  }
  BenchResult rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty() && i + 1 == lines.size()) break;
    const auto f = split(lines[i], ',');
    if (f.size() != 8) {
      throw Error(ErrorCode::ValidationError,
                  "line " + std::to_string(i + 1) + ": expected 8 fields");
    }
    BenchRow r;
    r.scenario = f[0];
    r.backend = f[1];
    r.partitions = parse_u64(f[2], i + 1);
    r.reducers = parse_u64(f[3], i + 1);
    r.iteration = parse_u64(f[4], i + 1);
    r.phase = f[5];
    if (!is_phase(r.phase)) {
      throw Error(ErrorCode::ValidationError,
                  "line " + std::to_string(i + 1) + ": unknown phase '" + r.phase + "'");
    }
    r.wall_ms = parse_ms(f[6], i + 1);
    r.bytes_moved = parse_u64(f[7], i + 1);
    rows.push_back(std::move(r));
  }
  return rows;
}

IoBenchReport bench_io(Session& session, const IoBenchConfig& config) {
  if (config.partitions < 1 || config.repetitions < 1) {
    throw Error(ErrorCode::ValidationError, "partitions and repetitions must be >= 1");
  }
  std::int64_t largest = 0;
  for (auto s : config.sizes_mb) {
    if (s < 0) throw Error(ErrorCode::ValidationError, "sizes must be >= 0");
    largest = std::max(largest, s);
  }
  IoBenchReport report;
  auto& data = session.data();
  for (const auto backend : config.backends) {
    PilotDataDescription pdd;
    pdd.storage_url = backend == EngineBackend::Memory ? "mem://bench" : "file://bench";
    pdd.space_mb = 2 * largest + 1;
    const auto space = data.create_pilot_data(pdd);
    auto adaptor = data.adaptor_of(space);
    EngineConfig ec;
    ec.backend = backend;
    MemoryEngine engine(session.manager(), data, ec);
    const std::string name(to_string(backend));

    for (const auto size_mb : config.sizes_mb) {
      const auto size = static_cast<std::size_t>(size_mb) * static_cast<std::size_t>(kMiB);
      const auto payload = random_payload(size, config.seed + static_cast<std::uint64_t>(size_mb));
      const auto expected = content_checksum(payload);
      auto record = [&](const std::string& scenario, double ms, bool ok, std::size_t parts) {
        report.measurements.push_back(
            IoMeasurement{scenario, backend, size_mb, ms, throughput(size_mb, ms), ok});
        report.rows.push_back(BenchRow{scenario, name, parts, 0, 0, "total", ms, size});
      };

      double best = std::numeric_limits<double>::infinity();
      for (int rep = 0; rep < config.repetitions; ++rep) {
        adaptor->remove(space, "blob");
        const auto t0 = Clock::now();
        adaptor->put(space, "blob", make_bytes(std::string(payload)));
        best = std::min(best, ms_since(t0));
      }
      record("io-write", best, true, 1);

      best = std::numeric_limits<double>::infinity();
      bool ok = true;
      for (int rep = 0; rep < config.repetitions; ++rep) {
        const auto t0 = Clock::now();
        const auto bytes = adaptor->get(space, "blob");
        const auto sum = content_checksum(*bytes);
        best = std::min(best, ms_since(t0));
        ok = ok && sum == expected && *bytes == payload;
      }
      record("io-read-single", best, ok, 1);
      adaptor->remove(space, "blob");

      // Chunk i of P is one tuple in partition i; every map task reads and
      // checksums its chunk.
      const auto parts = config.partitions;
      std::vector<std::uint64_t> chunk_sums(parts);
      const auto chunk = [&](std::uint64_t i) {
        const auto lo = size * i / parts;
        const auto hi = size * (i + 1) / parts;
        return std::string_view(payload).substr(lo, hi - lo);
      };
      for (std::size_t i = 0; i < parts; ++i) chunk_sums[i] = content_checksum(chunk(i));
      auto imdu = engine.parallelize(parts, parts, [&](std::uint64_t i, std::string& k,
                                                       std::string& v) {
        k = be_u64(i);
        v.assign(chunk(i));
      });
      best = std::numeric_limits<double>::infinity();
      ok = true;
      for (int rep = 0; rep < config.repetitions; ++rep) {
        const auto t0 = Clock::now();
        auto out = engine.map_only(imdu, [](std::string_view k, std::string_view v,
                                            Emitter& e) {
          e.emit(k, be_u64(content_checksum(v)));
        });
        best = std::min(best, ms_since(t0));
        const auto sums = engine.collect(out);
        ok = ok && sums.size() == parts;
        for (std::size_t i = 0; ok && i < parts; ++i) {
          ok = from_be_u64(sums[i].key) == i && from_be_u64(sums[i].value) == chunk_sums[i];
        }
        engine.dealloc(out);
      }
      engine.dealloc(imdu);
      record("io-read-parallel", best, ok, parts);
    }
    data.terminate_space(space);
  }
  return report;
}

}  // namespace pilotkit
