#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pilotkit/engine.hpp"
#include "pilotkit/hash.hpp"
#include "pilotkit/session.hpp"
#include "support.hpp"

using namespace pilotkit;
using testing_support::TempDir;

namespace {

struct Stack {
  TempDir dir;
  std::unique_ptr<Session> session;
  std::vector<std::string> pilots;

  explicit Stack(int n_pilots = 2, int cores = 2) {
    SessionConfig c;
    c.root = dir.path();
    c.local_cores = 16;
    session = std::make_unique<Session>(c);
    for (int i = 0; i < n_pilots; ++i) pilots.push_back(session->add_local_pilot(cores));
  }

  std::string import_text(const std::string& name, const std::string& text,
                          const std::string& space_url = "file://inputs") {
    const auto path = dir / name;
    write_file(path, text);
    PilotDataDescription pdd;
    pdd.storage_url = space_url;
    pdd.space_mb = 64;
    const auto space = session->data().create_pilot_data(pdd);
    DataUnitDescription dud;
    dud.items = {{"file://" + path.string(), name, static_cast<std::int64_t>(text.size())}};
    return session->data().import_data_unit(dud, space).id;
  }
};

MapFn word_map() {
  return [](std::string_view, std::string_view line, Emitter& out) {
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && line[pos] == ' ') ++pos;
      auto end = line.find(' ', pos);
      if (end == std::string_view::npos) end = line.size();
      if (end > pos) out.emit(line.substr(pos, end - pos), be_u64(1));
      pos = end;
    }
  };
}

ReduceFn sum_reduce() {
  return [](std::string_view key, const std::vector<std::string_view>& values, Emitter& out) {
    std::uint64_t total = 0;
    for (const auto& v : values) total += from_be_u64(v);
    out.emit(key, be_u64(total));
  };
}

std::map<std::string, std::uint64_t> as_counts(const std::vector<Tuple>& tuples) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& t : tuples) {
    CHECK(out.count(t.key) == 0);
    out[t.key] = from_be_u64(t.value);
  }
  return out;
}

std::string random_text(std::mt19937_64& rng, int lines) {
  static const char* words[] = {"alpha", "beta", "gamma", "delta", "pi", "rho", "x", "yy"};
  std::ostringstream os;
  for (int l = 0; l < lines; ++l) {
    const int n = static_cast<int>(rng() % 7);
    for (int w = 0; w < n; ++w) os << (w ? " " : "") << words[rng() % 8];
    os << '\n';
  }
  return os.str();
}

}  // namespace

TEST_CASE("word count matches a serial count on both backends") {
  std::mt19937_64 rng(11);
  const auto text = random_text(rng, 300);
  std::map<std::string, std::uint64_t> oracle;
  {
    std::istringstream is(text);
    std::string w;
    while (is >> w) ++oracle[w];
  }
  for (auto backend : {EngineBackend::Memory, EngineBackend::File}) {
    Stack st;
    const auto du = st.import_text("words.txt", text);
    EngineConfig ec;
    ec.backend = backend;
    MemoryEngine engine(st.session->manager(), st.session->data(), ec);
    const auto input = engine.load(du, 3);
    CHECK(input.total_tuples() == 300);
    const auto out = engine.map_reduce(input, word_map(), sum_reduce(), 2);
    CHECK(as_counts(engine.collect(out)) == oracle);
    const auto& stats = engine.last_stats();
    CHECK(stats.map_units.size() == 3);
    CHECK(stats.reduce_units.size() == 2);
    CHECK(stats.map_input_tuples == 300);
  }
}

TEST_CASE("line splitter numbers lines globally") {
  std::vector<std::pair<std::string, std::string>> seen;
  const RecordSink sink = [&](std::string_view k, std::string_view v) {
    seen.emplace_back(std::string(k), std::string(v));
  };
  line_splitter()("a\n\nb", 7, sink);
  REQUIRE(seen.size() == 3);
  CHECK(from_be_u64(seen[0].first) == 7);
  CHECK(seen[1].second.empty());
  CHECK(from_be_u64(seen[2].first) == 9);
  seen.clear();
  line_splitter()("x\n", 0, sink);
  CHECK(seen.size() == 1);
}

TEST_CASE("reducers see values in (key, record, emit) order for any P and R") {
  Stack st;
  EngineConfig ec;
  MemoryEngine engine(st.session->manager(), st.session->data(), ec);
  const std::uint64_t n = 500;
  std::string reference;
  for (std::size_t P : {1, 2, 4, 7}) {
    for (std::size_t R : {1, 3, 5}) {
      const auto input = engine.parallelize(n, P, [](std::uint64_t i, std::string& k,
                                                     std::string& v) {
        k = be_u64(i);
        v = std::to_string(i % 13);
      });
      // two emits per record so emit order matters as well
      const MapFn map = [](std::string_view key, std::string_view value, Emitter& out) {
        const auto rec = from_be_u64(key);
        out.emit(value, be_u64(rec * 2));
        out.emit(value, be_u64(rec * 2 + 1));
      };
      const ReduceFn reduce = [](std::string_view key, const std::vector<std::string_view>& vs,
                                 Emitter& out) {
        std::string joined;
        for (std::size_t i = 0; i < vs.size(); ++i) {
          if (i) CHECK(from_be_u64(vs[i - 1]) < from_be_u64(vs[i]));
          joined.append(vs[i]);
        }
        out.emit(key, joined);
      };
      const auto out = engine.map_reduce(input, map, reduce, R);
      CHECK(out.partitions.size() == R);
      auto tuples = engine.collect(out);
      for (std::size_t r = 0; r < R; ++r) {
        for (const auto& t : engine.read_partition(out, r)) {
          CHECK(shuffle_hash(t.key) % R == r);
        }
      }
      std::sort(tuples.begin(), tuples.end());
      const auto canonical = encode_tuples(tuples);
      if (reference.empty()) reference = canonical;
      CHECK(canonical == reference);
      engine.dealloc(input);
      engine.dealloc(out);
    }
  }
}

TEST_CASE("combiner gives the same answer for an associative reduce") {
  std::mt19937_64 rng(3);
  Stack st;
  const auto du = st.import_text("w.txt", random_text(rng, 200));
  MemoryEngine engine(st.session->manager(), st.session->data());
  const auto input = engine.load(du, 4);
  const auto plain = engine.map_reduce(input, word_map(), sum_reduce(), 3);
  const auto plain_shuffle = engine.last_stats().shuffle_bytes;
  MapReduceOptions opts;
  opts.combine = true;
  const auto combined = engine.map_reduce(input, word_map(), sum_reduce(), 3, opts);
  CHECK(as_counts(engine.collect(plain)) == as_counts(engine.collect(combined)));
  CHECK(engine.last_stats().shuffle_bytes < plain_shuffle);
}

TEST_CASE("empty input yields one empty partition per reducer") {
  Stack st(1);
  MemoryEngine engine(st.session->manager(), st.session->data());
  const auto input = engine.parallelize(0, 3, [](std::uint64_t, std::string&, std::string&) {});
  const auto out = engine.map_reduce(input, word_map(), sum_reduce(), 4);
  CHECK(out.partitions.size() == 4);
  CHECK(out.total_tuples() == 0);
  CHECK(engine.collect(out).empty());
  const auto mapped = engine.map_only(input, word_map());
  CHECK(mapped.partitions.size() == 3);
}

TEST_CASE("map_only keeps partition layout and emission order") {
  Stack st;
  MemoryEngine engine(st.session->manager(), st.session->data());
  const auto input = engine.parallelize(
      50, 4, [](std::uint64_t i, std::string& k, std::string& v) {
        k = be_u64(i);
        v = std::to_string(i);
      });
  const auto out = engine.map_only(input, [](std::string_view k, std::string_view v,
                                             Emitter& e) { e.emit(k, std::string(v) + "!"); });
  CHECK(engine.collect(out).size() == 50);
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(out.partitions[p].pilot_id == input.partitions[p].pilot_id);
    std::uint64_t expect = p;
    for (const auto& t : engine.read_partition(out, p)) {
      CHECK(from_be_u64(t.key) == expect);
      CHECK(t.value == std::to_string(expect) + "!");
      expect += 4;
    }
    CHECK(expect >= 50);
  }
}

TEST_CASE("persist then load reproduces the partition bytes") {
  Stack st;
  MemoryEngine engine(st.session->manager(), st.session->data());
  std::mt19937_64 rng(8);
  const auto input = engine.parallelize(
      300, 3, [&](std::uint64_t i, std::string& k, std::string& v) {
        k = be_u64(i);
        v = testing_support::random_bytes(rng, rng() % 40);
      });
  PilotDataDescription pdd;
  pdd.storage_url = "file://persisted";
  pdd.space_mb = 16;
  const auto space = st.session->data().create_pilot_data(pdd);
  const auto du = engine.persist(input, space);
  CHECK(du.items.size() == 3);
  std::string concat;
  for (std::size_t p = 0; p < 3; ++p) {
    const auto name = "partition-0000" + std::to_string(p);
    CHECK(*st.session->data().read_item(du.id, name) == *engine.partition_bytes(input, p));
    concat += *engine.partition_bytes(input, p);
  }
  const auto back = engine.load(du.id, 1, tuple_splitter());
  CHECK(*engine.partition_bytes(back, 0) == concat);
  auto a = engine.collect(input);
  auto b = engine.collect(back);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("lost memory partitions reload from their origin") {
  Stack st(1);
  const auto du = st.import_text("lines.txt", "a b\nb c\nc d\nd e\n");
  MemoryEngine engine(st.session->manager(), st.session->data());
  const auto input = engine.load(du, 2);
  const auto before = as_counts(engine.collect(engine.map_reduce(input, word_map(),
                                                                  sum_reduce(), 1)));
  // memory spaces are tied to the pilot; drop them under the engine
  st.session->data().terminate_pilot(st.pilots[0]);
  CHECK(engine.lost_partitions(input).size() == 2);
  try {
    engine.collect(input);
    FAIL("read a lost partition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PartitionLost);
  }
  const auto out = engine.map_reduce(input, word_map(), sum_reduce(), 1);
  CHECK(as_counts(engine.collect(out)) == before);
  CHECK(st.session->log().for_entity("imdu:" + input.id).size() == 2);

  const auto generated = engine.parallelize(
      4, 2, [](std::uint64_t i, std::string& k, std::string& v) {
        k = be_u64(i);
        v = "z";
      });
  st.session->data().terminate_pilot(st.pilots[0]);
  try {
    engine.map_reduce(generated, word_map(), sum_reduce(), 1);
    FAIL("no origin but repaired");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PartitionLost);
  }
}

TEST_CASE("dealloc, broadcast and error paths") {
  Stack st(1);
  EngineConfig ec;
  ec.broadcast_limit_bytes = 16;
  MemoryEngine engine(st.session->manager(), st.session->data(), ec);
  const auto input = engine.parallelize(
      3, 1, [](std::uint64_t i, std::string& k, std::string& v) {
        k = be_u64(i);
        v = "w";
      });
  engine.dealloc(input);
  try {
    engine.collect(input);
    FAIL("read after dealloc");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Deallocated);
  }

  const auto v1 = engine.broadcast("one");
  const auto v2 = engine.broadcast("two");
  CHECK(v2.version > v1.version);
  CHECK(*engine.read_broadcast(v1) == "one");
  engine.release(v1);
  try {
    engine.read_broadcast(v1);
    FAIL("released broadcast readable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownBroadcast);
  }
  CHECK(*engine.read_broadcast(v2) == "two");
  try {
    engine.broadcast(std::string(17, 'x'));
    FAIL("oversized broadcast");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BroadcastTooLarge);
  }

  try {
    engine.load("du-nope", 2);
    FAIL("missing DU loaded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownDataUnit);
  }

  const auto good = engine.parallelize(
      2, 1, [](std::uint64_t i, std::string& k, std::string& v) {
        k = be_u64(i);
        v = "w";
      });
  const MapFn boom = [](std::string_view, std::string_view, Emitter&) {
    throw std::runtime_error("map exploded");
  };
  try {
    engine.map_reduce(good, boom, sum_reduce(), 1);
    FAIL("failing map succeeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TaskFailed);
    CHECK(std::string(e.what()).find("exploded") != std::string::npos);
  }

  st.session->compute().cancel_pilot(st.pilots[0]);
  REQUIRE(st.session->manager().wait_terminal({}, std::chrono::milliseconds(1)));
  for (int i = 0; i < 1000 && engine.running_pilot_count() > 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  try {
    engine.map_reduce(good, word_map(), sum_reduce(), 1);
    FAIL("ran without pilots");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoPilots);
  }
}

TEST_CASE("tuple codec round trip over random tuples") {
  std::mt19937_64 rng(1);
  for (int round = 0; round < 200; ++round) {
    std::vector<Tuple> tuples(rng() % 20);
    for (auto& t : tuples) {
      t.key = testing_support::random_bytes(rng, rng() % 12);
      t.value = testing_support::random_bytes(rng, rng() % 50);
    }
    const auto bytes = encode_tuples(tuples);
    CHECK(decode_tuples(bytes) == tuples);
    CHECK(count_tuples(bytes) == tuples.size());
    if (!bytes.empty()) {
      CHECK_THROWS_AS(decode_tuples(std::string_view(bytes).substr(0, bytes.size() - 1)),
                      Error);
    }
  }
  CHECK(from_be_u64(be_u64(0x0102030405060708ULL)) == 0x0102030405060708ULL);
  CHECK(be_u32(1) < be_u32(256));
  CHECK(parse_engine_backend("file") == EngineBackend::File);
  CHECK_THROWS_AS(parse_engine_backend("disk"), Error);
}
