#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "lloyd_oracle.hpp"
#include "pilotkit/bench.hpp"
#include "pilotkit/kmeans.hpp"
#include "pilotkit/session.hpp"
#include "pilotkit/workload.hpp"
#include "support.hpp"

using namespace pilotkit;
using testing_support::TempDir;

namespace {

struct Rig {
  TempDir dir;
  std::unique_ptr<Session> session;
  std::unique_ptr<MemoryEngine> engine;

  explicit Rig(EngineBackend backend = EngineBackend::Memory, int cores = 4) {
    SessionConfig c;
    c.root = dir.path();
    c.local_cores = cores;
    session = std::make_unique<Session>(c);
    session->add_local_pilot(cores);
    EngineConfig ec;
    ec.backend = backend;
    engine = std::make_unique<MemoryEngine>(session->manager(), session->data(), ec);
  }
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("kmeans equals the serial Lloyd iteration") {
  Rig rig;
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 6; ++round) {
    KMeansConfig cfg;
    cfg.n_points = 50 + rng() % 400;
    cfg.n_clusters = 1 + rng() % 12;
    cfg.n_dims = 2 + rng() % 2;
    cfg.partitions = 1 + rng() % 4;
    cfg.reducers = 1 + rng() % 3;
    cfg.max_iterations = 8;
    cfg.seed = rng();
    const auto got = run_kmeans(*rig.engine, cfg, true);
    const auto pts = generate_points(cfg.n_points, cfg.n_dims, cfg.seed);
    const auto want = testing_support::lloyd(pts, cfg.n_clusters, cfg.n_dims,
                                             cfg.max_iterations, cfg.epsilon);
    CHECK(got.iterations == want.iterations);
    CHECK(got.assignments == want.assignments);
    CHECK(got.centroids == want.centroids);
    CHECK(got.wcss == want.wcss);
  }
}

TEST_CASE("one cluster converges to the mean") {
  Rig rig;
  KMeansConfig cfg;
  cfg.n_points = 200;
  cfg.n_clusters = 1;
  cfg.n_dims = 3;
  cfg.max_iterations = 5;
  const auto r = run_kmeans(*rig.engine, cfg);
  const auto pts = generate_points(200, 3, cfg.seed);
  for (int t = 0; t < 3; ++t) {
    long double s = 0;
    for (int i = 0; i < 200; ++i) s += pts[i * 3 + t];
    CHECK(r.centroids[t] == doctest::Approx(static_cast<double>(s / 200)).epsilon(1e-12));
  }
  CHECK(r.converged);
  CHECK(r.iterations == 2);
  CHECK(r.final_counts == std::vector<std::uint64_t>{200});
}

TEST_CASE("k equal to n is a fixed point with zero error") {
  Rig rig;
  KMeansConfig cfg;
  cfg.n_points = 30;
  cfg.n_clusters = 30;
  const auto r = run_kmeans(*rig.engine, cfg, true);
  CHECK(r.iterations == 1);
  CHECK(r.converged);
  CHECK(r.wcss == std::vector<double>{0.0});
  for (std::uint32_t i = 0; i < 30; ++i) CHECK(r.assignments[i] == i);
}

TEST_CASE("infinite epsilon stops after one iteration; wcss never rises") {
  Rig rig;
  KMeansConfig cfg;
  cfg.n_points = 500;
  cfg.n_clusters = 7;
  cfg.epsilon = std::numeric_limits<double>::infinity();
  CHECK(run_kmeans(*rig.engine, cfg).iterations == 1);
  cfg.epsilon = 0;
  cfg.max_iterations = 15;
  const auto r = run_kmeans(*rig.engine, cfg);
  for (std::size_t i = 1; i < r.wcss.size(); ++i) {
    CHECK(r.wcss[i] <= r.wcss[i - 1] * (1 + 1e-9));
  }
}

TEST_CASE("kmeans results do not depend on P, R or backend") {
  KMeansConfig cfg;
  cfg.n_points = 400;
  cfg.n_clusters = 5;
  cfg.max_iterations = 6;
  std::optional<KMeansResult> reference;
  for (auto backend : {EngineBackend::Memory, EngineBackend::File}) {
    Rig rig(backend, 3);
    cfg.backend = backend;
    for (std::uint64_t P : {1, 3}) {
      for (std::uint64_t R : {1, 2}) {
        cfg.partitions = P;
        cfg.reducers = R;
        const auto r = run_kmeans(*rig.engine, cfg, true);
        if (!reference) reference = r;
        CHECK(r.centroids == reference->centroids);
        CHECK(r.assignments == reference->assignments);
        CHECK(r.wcss == reference->wcss);
      }
    }
  }
}

TEST_CASE("kmeans configuration and runtime errors") {
  KMeansConfig cfg;
  cfg.n_clusters = 0;
  try {
    validate(cfg);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ValidationError);
    REQUIRE(e.details().size() == 1);
    CHECK(e.details()[0].find("clusters") != std::string::npos);
  }
  cfg = {};
  cfg.n_clusters = cfg.n_points + 1;
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::ValidationError);

  Rig rig;
  CHECK_THROWS_AS(decode_centroids(encode_centroids({1, 2, 3, 4}, 2), 2, 3), Error);
  CHECK(code_of([&] { decode_centroids(encode_centroids({1, 2, 3, 4}, 2), 3, 2); }) ==
        ErrorCode::DimensionMismatch);
  // 3-d points against 2-d centroids
  const auto pts = generate_points(10, 3, 1);
  const auto imdu = load_points(*rig.engine, pts, 3, 2);
  const auto ref = rig.engine->broadcast(encode_centroids({0, 0, 1, 1}, 2));
  CHECK(code_of([&] { kmeans_iteration(*rig.engine, imdu, ref, 2, 2, 1); }) ==
        ErrorCode::DimensionMismatch);

  KMeansConfig file_cfg;
  file_cfg.backend = EngineBackend::File;
  CHECK(code_of([&] { run_kmeans(*rig.engine, file_cfg); }) == ErrorCode::ValidationError);

  TempDir dir;
  SessionConfig sc;
  sc.root = dir.path();
  Session bare(sc);
  MemoryEngine idle(bare.manager(), bare.data());
  CHECK(code_of([&] { run_kmeans(idle, KMeansConfig{}); }) == ErrorCode::NoPilots);
}

TEST_CASE("kmeans rows cover every phase") {
  Rig rig;
  KMeansConfig cfg;
  cfg.n_points = 100;
  cfg.n_clusters = 3;
  cfg.max_iterations = 2;
  cfg.epsilon = 0;
  const auto r = run_kmeans(*rig.engine, cfg);
  REQUIRE(r.rows.size() == 1 + 4 * r.iterations);
  CHECK(r.rows[0].phase == "load");
  CHECK(r.rows[1].phase == "map");
  CHECK(r.rows[4].phase == "total");
  CHECK(r.rows[4].iteration == 1);
  for (const auto& row : r.rows) {
    CHECK(row.scenario == "kmeans");
    CHECK(row.backend == "memory");
    CHECK(is_phase(row.phase));
  }
}

TEST_CASE("csv round trip and rejection of malformed input") {
  std::mt19937_64 rng(4);
  BenchResult rows;
  for (int i = 0; i < 50; ++i) {
    BenchRow r;
    r.scenario = i % 2 ? "kmeans" : "io-write";
    r.backend = i % 3 ? "file" : "memory";
    r.partitions = rng() % 10;
    r.reducers = rng() % 10;
    r.iteration = rng() % 100;
    r.phase = "total";
    r.wall_ms = static_cast<double>(rng() % 1000000) / 1000.0;
    r.bytes_moved = rng();
    rows.push_back(r);
  }
  const auto csv = to_csv(rows);
  CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
  CHECK(parse_csv(csv) == rows);
  CHECK(parse_csv(std::string(kCsvHeader) + "\n").empty());
  CHECK(code_of([] { parse_csv("a,b\n"); }) == ErrorCode::ValidationError);
  CHECK(code_of([] {
          parse_csv(std::string(kCsvHeader) + "\nkmeans,memory,1,1,1,warmup,1.000,0\n");
        }) == ErrorCode::ValidationError);
  CHECK(code_of([] {
          parse_csv(std::string(kCsvHeader) + "\nkmeans,memory,1,1,1,map,abc,0\n");
        }) == ErrorCode::ValidationError);
  CHECK(code_of([] { parse_csv(std::string(kCsvHeader) + "\nkmeans,memory,1\n"); }) ==
        ErrorCode::ValidationError);
}

TEST_CASE("io benchmark preserves bytes on both tiers") {
  TempDir dir;
  SessionConfig sc;
  sc.root = dir.path();
  Session session(sc);
  session.add_local_pilot(2);
  IoBenchConfig cfg;
  cfg.sizes_mb = {0, 1};
  cfg.repetitions = 1;
  cfg.partitions = 2;
  const auto report = bench_io(session, cfg);
  CHECK(report.measurements.size() == 2 * 2 * 3);
  for (const auto& m : report.measurements) {
    CHECK(m.bytes_match);
    if (m.size_mb == 0) CHECK(m.throughput_mb_s == 0);
  }
  CHECK(report.rows.size() == report.measurements.size());
}

TEST_CASE("workload parsing reports every problem") {
  const std::string bad = R"({
    "spec_version": 1,
    "pilots": [{"id": "p", "resource_url": "local://x", "cores": 0, "colour": "red"}],
    "data_units": [{"id": "d", "space": "nowhere", "items": []}],
    "units": [{"id": "u", "executable": "/bin/true", "inputs": ["missing"]}],
    "jobs": [{"id": "j", "type": "kmeans", "points": 10, "clusters": 0}]
  })";
  try {
    parse_workload(bad);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ValidationError);
    std::string all;
    for (const auto& d : e.details()) all += d + "\n";
    CHECK(all.find("colour") != std::string::npos);
    CHECK(all.find("cores") != std::string::npos);
    CHECK(all.find("nowhere") != std::string::npos);
    CHECK(all.find("missing") != std::string::npos);
    CHECK(all.find("clusters") != std::string::npos);
  }
  CHECK(code_of([] { parse_workload("{not json"); }) == ErrorCode::ValidationError);
  CHECK(code_of([] { parse_workload(R"({"spec_version": 2})"); }) ==
        ErrorCode::ValidationError);
  CHECK(code_of([] { parse_workload(R"({"spec_version": 1, "jobs": [{"id": "a", "type": "sort"}]})"); }) ==
        ErrorCode::ValidationError);
  CHECK(code_of([] {
          parse_workload(R"({"spec_version": 1, "units": [{"id": "u", "executable": "/bin/true"}]})");
        }) == ErrorCode::ValidationError);

  const auto ok = parse_workload(R"({
    "spec_version": 1,
    "scheduling_mode": "hard",
    "pilots": [{"id": "p", "resource_url": "local://localhost", "cores": 1}],
    "jobs": [{"id": "k", "type": "kmeans", "points": 50, "clusters": 2, "epsilon": "inf"}]
  })");
  CHECK(ok.scheduling_mode == AffinityMode::Hard);
  const auto& km = std::get<KMeansConfig>(ok.jobs.at(0).job);
  CHECK(std::isinf(km.epsilon));
}

TEST_CASE("a small workload runs end to end") {
  TempDir dir;
  write_file(dir / "text.txt", "to be or not to be\n");
  const std::string spec_text = R"({
    "spec_version": 1,
    "local": {"cores": 2},
    "pilots": [{"id": "p1", "resource_url": "local://localhost", "cores": 2,
                "labels": {"machine": "m1"}}],
    "data_pilots": [{"id": "store", "storage_url": "file://store", "space_mb": 8,
                     "labels": {"machine": "m1"}}],
    "data_units": [{"id": "text", "space": "store",
                    "items": [{"source": "text.txt", "name": "text.txt"}]}],
    "units": [
      {"id": "ok", "executable": "/bin/sh", "arguments": ["-c", "test -s text.txt"],
       "inputs": ["text"]},
      {"id": "bad", "executable": "/bin/sh", "arguments": ["-c", "exit 4"]}
    ],
    "jobs": [
      {"id": "wc", "type": "wordcount", "input": "text", "partitions": 2, "reducers": 2},
      {"id": "km", "type": "kmeans", "points": 60, "clusters": 3, "max_iter": 3}
    ]
  })";
  write_file(dir / "spec.json", spec_text);
  const auto spec = load_workload(dir / "spec.json");
  std::vector<std::string> events;
  const auto report = run_workload(spec, dir / "run", &events);
  CHECK_FALSE(report.ok);
  CHECK(report.unit_states.at("ok") == "DONE");
  CHECK(report.unit_states.at("bad") == "FAILED");
  CHECK(report.job_outputs.at("wc") == "4 words");
  CHECK(report.job_outputs.at("km").find("iterations") != std::string::npos);
  CHECK_FALSE(report.rows.empty());
  CHECK_FALSE(events.empty());
  for (const auto& line : events) CHECK(LogEvent::parse_line(line).has_value());
}
