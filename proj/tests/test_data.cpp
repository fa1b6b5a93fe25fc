#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "pilotkit/data_service.hpp"
#include "pilotkit/hash.hpp"
#include "support.hpp"

using namespace pilotkit;
using testing_support::TempDir;

namespace {

PilotDataDescription pdd(std::string url, std::int64_t mb, AffinityLabels labels = {}) {
  PilotDataDescription d;
  d.storage_url = std::move(url);
  d.space_mb = mb;
  d.affinity = std::move(labels);
  return d;
}

struct Fixture {
  TempDir dir;
  DataService data;
  std::shared_ptr<FileStorage> files;

  Fixture() {
    data.register_backend(std::make_shared<MemoryStorage>(64));
    files = std::make_shared<FileStorage>(dir / "tier", 64);
    data.register_backend(files);
  }

  DataItemRef source(const std::string& name, const std::string& content) {
    const auto path = dir / ("src-" + name);
    write_file(path, content);
    return {"file://" + path.string(), name, static_cast<std::int64_t>(content.size())};
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

TEST_CASE("storage adaptors charge whole megabytes per item") {
  TempDir dir;
  std::vector<std::shared_ptr<StorageAdaptor>> tiers = {
      std::make_shared<MemoryStorage>(4), std::make_shared<FileStorage>(dir.path(), 4)};
  for (auto& tier : tiers) {
    CHECK(code_of([&] { tier->create_space(pdd("mem://x", 5)); }) ==
          ErrorCode::InsufficientSpace);
    const auto s = tier->create_space(pdd("mem://x", 3));
    tier->put(s, "a", std::string(10, 'a'));
    CHECK(tier->space_info(s).used_mb == 1);
    tier->put(s, "b", std::string(kMiB + 1, 'b'));
    CHECK(code_of([&] { tier->put(s, "c", "c"); }) == ErrorCode::SpaceExhausted);
    // overwriting refunds the old charge first
    tier->put(s, "b", "small");
    CHECK(tier->space_info(s).used_mb == 2);
    CHECK(*tier->get(s, "b") == "small");
    tier->remove(s, "a");
    CHECK(tier->free_mb(s) == 2);
    CHECK_FALSE(tier->contains(s, "a"));
    CHECK(code_of([&] { tier->get(s, "a"); }) == ErrorCode::ItemNotFound);
    tier->destroy_space(s);
    CHECK(code_of([&] { tier->get(s, "b"); }) == ErrorCode::UnknownSpace);
    CHECK(tier->reserved_mb() == 0);
  }
  CHECK(charged_mb(0) == 0);
  CHECK(charged_mb(1) == 1);
  CHECK(charged_mb(kMiB) == 1);
  CHECK(charged_mb(kMiB + 1) == 2);
}

TEST_CASE("storage round trip over random payloads") {
  TempDir dir;
  std::mt19937_64 rng(99);
  FileStorage files(dir.path(), 64);
  MemoryStorage mem(64);
  const auto fs_space = files.create_space(pdd("file://x", 50));
  const auto mem_space = mem.create_space(pdd("mem://x", 50));
  for (int i = 0; i < 50; ++i) {
    const auto payload = testing_support::random_bytes(rng, rng() % 5000);
    const auto name = "item-" + std::to_string(i);
    files.put(fs_space, name, payload);
    mem.put(mem_space, name, payload);
    CHECK(*files.get(fs_space, name) == payload);
    CHECK(*mem.get(mem_space, name) == payload);
  }
  CHECK(files.list(fs_space).size() == 50);
  CHECK(std::filesystem::exists(files.path_of(fs_space, "item-0")));
}

TEST_CASE("import, read and export preserve bytes and checksums") {
  Fixture f;
  const auto space = f.data.create_pilot_data(pdd("file://tier", 8));
  std::mt19937_64 rng(5);
  const auto a = testing_support::random_bytes(rng, 4096);
  const auto b = std::string("hello\n");
  DataUnitDescription dud;
  dud.items = {f.source("a.bin", a), f.source("b.txt", b)};
  const auto du = f.data.import_data_unit(dud, space, "du-x");
  CHECK(du.state == DataUnitState::Available);
  CHECK(du.items.at("a.bin").checksum == xxh64(a));
  CHECK(du.items.at("b.txt").size_bytes == 6);
  CHECK(*f.data.read_item("du-x", "b.txt") == b);

  const auto out = f.dir / "export";
  f.data.export_data_unit("du-x", "file://" + out.string());
  CHECK(read_file(out / "a.bin") == a);
  CHECK(read_file(out / "b.txt") == b);
  CHECK(code_of([&] { f.data.import_data_unit(dud, space, "du-x"); }) ==
        ErrorCode::DuplicateId);
}

TEST_CASE("failed import rolls back and reports per-item status") {
  Fixture f;
  const auto space = f.data.create_pilot_data(pdd("mem://m", 1));
  DataUnitDescription dud;
  dud.items = {f.source("ok", "x"), {"file:///definitely/not/here", "gone", 0}};
  try {
    f.data.import_data_unit(dud, space, "du-bad");
    FAIL("import succeeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SourceNotFound);
  }
  const auto du = f.data.data_unit("du-bad");
  CHECK(du.state == DataUnitState::Failed);
  CHECK(du.item_status.at("gone") == "SOURCE_NOT_FOUND");
  CHECK(f.data.space_info(space).used_mb == 0);

  dud.items = {f.source("big1", std::string(kMiB, 'x')), f.source("big2", "y")};
  CHECK(code_of([&] { f.data.import_data_unit(dud, space, "du-full"); }) ==
        ErrorCode::SpaceExhausted);
  CHECK(f.data.space_info(space).used_mb == 0);
  CHECK(f.data.data_unit("du-full").state == DataUnitState::Failed);
}

TEST_CASE("export into an unwritable destination") {
  Fixture f;
  const auto space = f.data.create_pilot_data(pdd("mem://m", 1));
  DataUnitDescription dud;
  dud.items = {f.source("a", "abc")};
  f.data.import_data_unit(dud, space, "du-1");
  const auto blocker = f.dir / "plain-file";
  write_file(blocker, "not a directory");
  CHECK(code_of([&] { f.data.export_data_unit("du-1", (blocker / "sub").string()); }) ==
        ErrorCode::DestNotWritable);
}

TEST_CASE("staging copies once and skips intact replicas") {
  Fixture f;
  const auto src = f.data.create_pilot_data(pdd("file://tier", 4, {"dc", "m1"}));
  const auto dst = f.data.create_pilot_data(pdd("mem://m", 4, {"dc", "m2"}));
  DataUnitDescription dud;
  dud.items = {f.source("a", std::string(1000, 'a')), f.source("b", "bb")};
  f.data.import_data_unit(dud, src, "du-1");
  CHECK_FALSE(f.data.has_matching_replica("du-1", {std::nullopt, "m2"}));

  const auto before = f.data.bytes_copied();
  auto du = f.data.stage("du-1", dst);
  CHECK(f.data.bytes_copied() - before == 1002);
  CHECK(du.replicas.size() == 2);
  CHECK(f.data.has_matching_replica("du-1", {std::nullopt, "m2"}));
  du = f.data.stage("du-1", dst);
  CHECK(f.data.bytes_copied() - before == 1002);
  CHECK(du.resident_labels.count("m2"));
}

TEST_CASE("corrupted replicas are detected and skipped") {
  Fixture f;
  const auto a = f.data.create_pilot_data(pdd("file://tier", 4));
  const auto b = f.data.create_pilot_data(pdd("mem://m", 4));
  DataUnitDescription dud;
  dud.items = {f.source("x", "payload")};
  f.data.import_data_unit(dud, a, "du-1");
  f.data.stage("du-1", b);
  // flip the on-disk copy behind the service's back
  write_file(f.files->path_of(a, "x"), "PAYLOAD");
  CHECK(*f.data.read_item("du-1", "x") == "payload");

  const auto c = f.data.create_pilot_data(pdd("file://tier", 4));
  const auto du = f.data.stage("du-1", c);
  CHECK(*f.files->get(c, "x") == "payload");
  CHECK_FALSE(du.replicas.count(a));

  f.data.terminate_space(b);
  f.data.terminate_space(c);
  CHECK(code_of([&] { f.data.read_item("du-1", "x"); }) == ErrorCode::DuNotAvailable);
}

TEST_CASE("memory spaces die with their pilot, file spaces survive") {
  Fixture f;
  const auto mem = f.data.create_pilot_data(pdd("mem://m", 4), "pilot-1");
  const auto disk = f.data.create_pilot_data(pdd("file://tier", 4), "pilot-1");
  DataUnitDescription dud;
  dud.items = {f.source("a", "aaa")};
  f.data.import_data_unit(dud, mem, "du-mem");
  f.data.import_data_unit(dud, disk, "du-disk");
  CHECK(f.data.space_for({}, "pilot-1").has_value());

  f.data.terminate_pilot("pilot-1");
  CHECK(code_of([&] { f.data.space_info(mem); }) == ErrorCode::UnknownSpace);
  CHECK_NOTHROW(f.data.space_info(disk));
  CHECK(f.data.data_unit("du-mem").state == DataUnitState::Failed);
  CHECK(*f.data.read_item("du-disk", "a") == "aaa");
  CHECK(code_of([&] { f.data.stage("du-mem", disk); }) == ErrorCode::DuNotAvailable);
}

TEST_CASE("replica label matching") {
  CHECK(replica_matches({"dc", "m1"}, {}));
  CHECK(replica_matches({"dc", "m1"}, {std::nullopt, "m1"}));
  CHECK_FALSE(replica_matches({"dc", "m1"}, {"dc", "m2"}));
  CHECK(replica_matches({"dc", std::nullopt}, {"dc", std::nullopt}));
  CHECK_FALSE(replica_matches({"dc2", std::nullopt}, {"dc", std::nullopt}));
}

TEST_CASE("adopting items already written to a space") {
  Fixture f;
  const auto space = f.data.create_pilot_data(pdd("mem://m", 4));
  f.data.adaptor_of(space)->put(space, "p0", "zero");
  f.data.adaptor_of(space)->put(space, "p1", "one");
  const auto du = f.data.adopt_data_unit(space, {"p0", "p1"});
  CHECK(du.state == DataUnitState::Available);
  CHECK(f.data.has_data_unit(du.id));
  CHECK(*f.data.read_item(du.id, "p1") == "one");
  CHECK(code_of([&] { f.data.adopt_data_unit(space, {"p9"}); }) == ErrorCode::ItemNotFound);
  CHECK(code_of([&] { f.data.create_pilot_data(pdd("yarn-emu://c", 1)); }) ==
        ErrorCode::ValidationError);
}
