#include "pilotkit/kmeans.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <random>

namespace pilotkit {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Centroids decoded once per job and shared by every map call.
struct CentroidView {
  MemoryEngine* engine = nullptr;
  BroadcastRef ref;
  std::uint64_t k = 0;
  std::uint64_t d = 0;
  std::once_flag once;
  std::vector<double> c;

  const std::vector<double>& get() {
    std::call_once(once, [this] { c = decode_centroids(*engine->read_broadcast(ref), k, d); });
    return c;
  }
};

// Index of the nearest centroid (lowest index on ties) and its squared
// distance.
std::pair<std::uint32_t, double> nearest(const char* point, const std::vector<double>& c,
                                         std::uint64_t k, std::uint64_t d) {
  std::uint32_t best = 0;
  double best_dist = 0;
  for (std::uint64_t j = 0; j < k; ++j) {
    double dist = 0;
    for (std::uint64_t t = 0; t < d; ++t) {
      const double diff = get_f64(point + 8 * t) - c[j * d + t];
      dist += diff * diff;
    }
    if (j == 0 || dist < best_dist) {
      best = static_cast<std::uint32_t>(j);
      best_dist = dist;
    }
  }
  return {best, best_dist};
}

void check_point(std::string_view value, std::uint64_t d) {
  if (value.size() != 8 * d) {
    throw Error(ErrorCode::DimensionMismatch,
                "point has " + std::to_string(value.size() / 8) + " coordinates, centroids " +
                    std::to_string(d));
  }
}

bool mentions_dimension_mismatch(const Error& e) {
  for (const auto& d : e.details()) {
    if (d.find("DIMENSION_MISMATCH") != std::string::npos) return true;
  }
  return false;
}

}  // namespace

void validate(const KMeansConfig& config) {
  std::vector<std::string> errors;
  if (config.n_points < 1) errors.emplace_back("points must be >= 1");
  if (config.n_clusters < 1) errors.emplace_back("clusters must be >= 1");
  if (config.n_clusters > config.n_points) errors.emplace_back("clusters must be <= points");
  if (config.n_clusters > 0xffffffffULL) errors.emplace_back("clusters must fit in 32 bits");
  if (config.n_dims < 1) errors.emplace_back("dims must be >= 1");
  if (config.max_iterations < 1) errors.emplace_back("max-iter must be >= 1");
  if (!(config.epsilon >= 0)) errors.emplace_back("epsilon must be >= 0");
  if (config.partitions < 1) errors.emplace_back("partitions must be >= 1");
  if (config.reducers < 1) errors.emplace_back("reducers must be >= 1");
  if (!errors.empty()) {
    throw Error(ErrorCode::ValidationError, "invalid KMeans configuration", errors);
  }
}

std::vector<double> generate_points(std::uint64_t n, std::uint64_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out(n * d);
  for (auto& x : out) x = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return out;
}

std::string encode_centroids(const std::vector<double>& centroids, std::uint64_t d) {
  std::string out;
  const auto k = centroids.size() / d;
  for (std::uint64_t j = 0; j < k; ++j) {
    std::string value;
    for (std::uint64_t t = 0; t < d; ++t) put_f64(value, centroids[j * d + t]);
    append_tuple(out, be_u32(static_cast<std::uint32_t>(j)), value);
  }
  return out;
}

std::vector<double> decode_centroids(std::string_view bytes, std::uint64_t k,
                                     std::uint64_t d) {
  std::vector<double> out;
  out.reserve(k * d);
  TupleReader reader(bytes);
  std::string_view key, value;
  std::uint64_t j = 0;
  while (reader.next(key, value)) {
    if (value.size() != 8 * d || from_be_u32(key) != j) {
      throw Error(ErrorCode::DimensionMismatch,
                  "centroid " + std::to_string(j) + " is not " + std::to_string(d) + "-dimensional");
    }
    for (std::uint64_t t = 0; t < d; ++t) out.push_back(get_f64(value.data() + 8 * t));
    ++j;
  }
  if (j != k) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(k) + " centroids, got " + std::to_string(j));
  }
  return out;
}

InMemoryDataUnit load_points(MemoryEngine& engine, const std::vector<double>& points,
                             std::uint64_t d, std::size_t partitions) {
  const auto n = points.size() / d;
  return engine.parallelize(n, partitions, [&](std::uint64_t i, std::string& key,
                                               std::string& value) {
    key = be_u64(i);
    value.reserve(8 * d);
    for (std::uint64_t t = 0; t < d; ++t) put_f64(value, points[i * d + t]);
  });
}

KMeansIteration kmeans_iteration(MemoryEngine& engine, const InMemoryDataUnit& points,
                                 const BroadcastRef& centroids, std::uint64_t k,
                                 std::uint64_t d, std::size_t reducers) {
  const auto previous = decode_centroids(*engine.read_broadcast(centroids), k, d);
  auto view = std::make_shared<CentroidView>();
  view->engine = &engine;
  view->ref = centroids;
  view->k = k;
  view->d = d;

  // value: d doubles, u64 count, f64 squared distance
  const MapFn map = [view, k, d](std::string_view, std::string_view value, Emitter& out) {
    check_point(value, d);
    const auto [j, dist] = nearest(value.data(), view->get(), k, d);
    thread_local std::string v;
    v.assign(value);
    put_u64_le(v, 1);
    put_f64(v, dist);
    out.emit(be_u32(j), v);
  };
  const ReduceFn reduce = [d](std::string_view key, const std::vector<std::string_view>& values,
                              Emitter& out) {
    std::vector<double> sum(d, 0.0);
    std::uint64_t count = 0;
    double wcss = 0;
    for (const auto& v : values) {
      for (std::uint64_t t = 0; t < d; ++t) sum[t] += get_f64(v.data() + 8 * t);
      count += get_u64_le(v.data() + 8 * d);
      wcss += get_f64(v.data() + 8 * d + 8);
    }
    std::string result;
    for (std::uint64_t t = 0; t < d; ++t) put_f64(result, sum[t] / static_cast<double>(count));
    put_u64_le(result, count);
    put_f64(result, wcss);
    out.emit(key, result);
  };

  InMemoryDataUnit out;
  try {
    out = engine.map_reduce(points, map, reduce, reducers);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TaskFailed && mentions_dimension_mismatch(e)) {
      throw Error(ErrorCode::DimensionMismatch, "points do not match the centroids",
                  e.details());
    }
    throw;
  }

  KMeansIteration it;
  it.stats = engine.last_stats();
  it.centroids = previous;
  it.counts.assign(k, 0);
  std::vector<double> cluster_wcss(k, 0.0);
  for (const auto& t : engine.collect(out)) {
    const auto j = from_be_u32(t.key);
    for (std::uint64_t c = 0; c < d; ++c) {
      it.centroids[j * d + c] = get_f64(t.value.data() + 8 * c);
    }
    it.counts[j] = get_u64_le(t.value.data() + 8 * d);
    cluster_wcss[j] = get_f64(t.value.data() + 8 * d + 8);
  }
  engine.dealloc(out);
  for (std::uint64_t j = 0; j < k; ++j) {
    it.wcss += cluster_wcss[j];
    double shift = 0;
    for (std::uint64_t c = 0; c < d; ++c) {
      const double diff = it.centroids[j * d + c] - previous[j * d + c];
      shift += diff * diff;
    }
    it.max_shift = std::max(it.max_shift, std::sqrt(shift));
  }
  return it;
}

InMemoryDataUnit kmeans_assign(MemoryEngine& engine, const InMemoryDataUnit& points,
                               const BroadcastRef& centroids, std::uint64_t k,
                               std::uint64_t d) {
  decode_centroids(*engine.read_broadcast(centroids), k, d);
  auto view = std::make_shared<CentroidView>();
  view->engine = &engine;
  view->ref = centroids;
  view->k = k;
  view->d = d;
  try {
    return engine.map_only(points, [view, k, d](std::string_view key, std::string_view value,
                                                Emitter& out) {
      check_point(value, d);
      out.emit(key, be_u32(nearest(value.data(), view->get(), k, d).first));
    });
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TaskFailed && mentions_dimension_mismatch(e)) {
      throw Error(ErrorCode::DimensionMismatch, "points do not match the centroids",
                  e.details());
    }
    throw;
  }
}

KMeansResult run_kmeans(MemoryEngine& engine, const KMeansConfig& config,
                        bool want_assignments) {
  validate(config);
  if (engine.backend() != config.backend) {
    throw Error(ErrorCode::ValidationError, "engine backend differs from the configuration");
  }
  if (engine.running_pilot_count() == 0) {
    throw Error(ErrorCode::NoPilots, "no RUNNING pilot for KMeans");
  }
  const auto k = config.n_clusters;
  const auto d = config.n_dims;
  const std::string backend(to_string(config.backend));
  const auto P = config.partitions;
  const auto R = config.reducers;

  KMeansResult result;
  const auto start = Clock::now();
  const auto points_vec = generate_points(config.n_points, d, config.seed);
  auto t0 = Clock::now();
  const auto points = load_points(engine, points_vec, d, P);
  result.rows.push_back(BenchRow{"kmeans", backend, P, R, 0, "load", ms_since(t0),
                                 engine.last_stats().bytes_loaded});

  std::vector<double> centroids(points_vec.begin(),
                                points_vec.begin() + static_cast<std::ptrdiff_t>(k * d));
  for (std::uint64_t iter = 1; iter <= config.max_iterations; ++iter) {
    t0 = Clock::now();
    KMeansIteration it;
    try {
      const auto ref = engine.broadcast(encode_centroids(centroids, d));
      it = kmeans_iteration(engine, points, ref, k, d, R);
      engine.release(ref);
    } catch (const Error& e) {
      engine.dealloc(points);
      throw Error(e.code(), "iteration " + std::to_string(iter) + ": " + e.what(),
                  e.details());
    }
    const double total = ms_since(t0);
    const auto& s = it.stats;
    result.rows.push_back(BenchRow{"kmeans", backend, P, R, iter, "map", s.map_ms, 0});
    result.rows.push_back(
        BenchRow{"kmeans", backend, P, R, iter, "shuffle", s.shuffle_ms, s.shuffle_bytes});
    result.rows.push_back(BenchRow{"kmeans", backend, P, R, iter, "reduce", s.reduce_ms, 0});
    result.rows.push_back(
        BenchRow{"kmeans", backend, P, R, iter, "total", total, s.shuffle_bytes});
    result.wcss.push_back(it.wcss);
    result.iterations = iter;
    centroids = std::move(it.centroids);
    result.final_counts = std::move(it.counts);
    if (it.max_shift <= config.epsilon) {
      result.converged = true;
      break;
    }
  }

  if (want_assignments) {
    try {
      const auto ref = engine.broadcast(encode_centroids(centroids, d));
      const auto assigned = kmeans_assign(engine, points, ref, k, d);
      engine.release(ref);
      result.assignments.assign(config.n_points, 0);
      for (const auto& t : engine.collect(assigned)) {
        result.assignments[from_be_u64(t.key)] = from_be_u32(t.value);
      }
      engine.dealloc(assigned);
    } catch (const Error& e) {
      engine.dealloc(points);
      throw Error(e.code(), "assignment pass: " + std::string(e.what()), e.details());
    }
  }
  engine.dealloc(points);
  result.centroids = std::move(centroids);
  result.total_ms = ms_since(start);
  return result;
}

}  // namespace pilotkit
