#pragma once

// Lloyd's KMeans on the map/reduce engine.
//
// Points: record i has key be_u64(i) and value = d raw doubles. Centroids
// travel as a broadcast in tuple encoding, key be_u32(j), value d doubles.
// Map emits (nearest j, point, 1, squared distance); ties go to the lower
// index. Reduce sums in record order, so the new centroids and the WCSS
// depend only on the data, never on P, R or the worker count.

#include <cstdint>
#include <string>
#include <vector>

#include "pilotkit/bench.hpp"
#include "pilotkit/engine.hpp"

namespace pilotkit {

struct KMeansConfig {
  std::uint64_t n_points = 1000;
  std::uint64_t n_clusters = 10;
  std::uint64_t n_dims = 2;
  std::uint64_t max_iterations = 10;
  double epsilon = 1e-4;
  std::uint64_t seed = 42;
  EngineBackend backend = EngineBackend::Memory;
  std::uint64_t partitions = 4;
  std::uint64_t reducers = 2;
};

// ValidationError naming each violated bound.
void validate(const KMeansConfig& config);

// Row-major n x d, uniform in [0,1)^d.
std::vector<double> generate_points(std::uint64_t n, std::uint64_t d, std::uint64_t seed);

std::string encode_centroids(const std::vector<double>& centroids, std::uint64_t d);
// Throws DimensionMismatch unless there are exactly k entries of d doubles.
std::vector<double> decode_centroids(std::string_view bytes, std::uint64_t k,
                                     std::uint64_t d);

InMemoryDataUnit load_points(MemoryEngine& engine, const std::vector<double>& points,
                             std::uint64_t d, std::size_t partitions);

struct KMeansIteration {
  std::vector<double> centroids;
  std::vector<std::uint64_t> counts;
  double wcss = 0;  // of the input centroids and this iteration's assignment
  double max_shift = 0;
  JobStats stats;
};

KMeansIteration kmeans_iteration(MemoryEngine& engine, const InMemoryDataUnit& points,
                                 const BroadcastRef& centroids, std::uint64_t k,
                                 std::uint64_t d, std::size_t reducers);

// Per point: key be_u64(i), value be_u32(nearest centroid).
InMemoryDataUnit kmeans_assign(MemoryEngine& engine, const InMemoryDataUnit& points,
                               const BroadcastRef& centroids, std::uint64_t k,
                               std::uint64_t d);

struct KMeansResult {
  std::vector<double> centroids;
  // Nearest final centroid per point; empty unless requested.
  std::vector<std::uint32_t> assignments;
  std::vector<double> wcss;  // one per iteration
  std::vector<std::uint64_t> final_counts;
  std::uint64_t iterations = 0;
  bool converged = false;
  double total_ms = 0;
  BenchResult rows;
};

// The engine must use config.backend. Errors carry the iteration index.
KMeansResult run_kmeans(MemoryEngine& engine, const KMeansConfig& config,
                        bool want_assignments = false);

}  // namespace pilotkit
