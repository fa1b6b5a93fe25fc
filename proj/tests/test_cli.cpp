#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "pilotkit/bench.hpp"
#include "pilotkit/core.hpp"
#include "support.hpp"

using namespace pilotkit;
using testing_support::TempDir;

namespace {

struct Outcome {
  int status = -1;
  std::string out;
  std::string err;
};

Outcome run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout";
  const auto err = dir / "stderr";
  const std::string cmd = std::string("\"") + PILOTKIT_CLI + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  Outcome o;
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  o.out = read_file(out);
  o.err = read_file(err);
  return o;
}

std::string drop_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::string out;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (cols.size() == 8) cols.erase(cols.begin() + 6);
    for (const auto& c : cols) out += c + ",";
    out += "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("validate is silent on a good spec and exits 1 on a bad one") {
  TempDir dir;
  write_file(dir / "good.json",
             R"({"spec_version": 1, "pilots": [{"id": "p", "resource_url": "local://localhost", "cores": 2}], "jobs": [{"id": "k", "type": "kmeans", "points": 20, "clusters": 2}]})");
  auto o = run_cli(dir, "validate \"" + (dir / "good.json").string() + "\"");
  CHECK(o.status == 0);
  CHECK(o.out.empty());
  CHECK(o.err.empty());

  write_file(dir / "bad.json", R"({"spec_version": 1, "units": [{"id": "u"}]})");
  o = run_cli(dir, "validate \"" + (dir / "bad.json").string() + "\"");
  CHECK(o.status == 1);
  CHECK(o.err.find("executable") != std::string::npos);
  CHECK(o.err.find("no pilot") != std::string::npos);

  o = run_cli(dir, "validate \"" + (dir / "absent.json").string() + "\"");
  CHECK(o.status == 1);
}

TEST_CASE("usage and argument errors exit 1") {
  TempDir dir;
  CHECK(run_cli(dir, "").status == 1);
  CHECK(run_cli(dir, "frobnicate").status == 1);
  CHECK(run_cli(dir, "kmeans --points 10").status == 1);
  const auto o = run_cli(dir, "kmeans --points 10 --clusters 0");
  CHECK(o.status == 1);
  CHECK(o.err.find("clusters") != std::string::npos);
  CHECK(run_cli(dir, "kmeans --points 10 --clusters 2 --backend tape").status == 1);
  CHECK(run_cli(dir, "bench-io --sizes 1,x").status == 1);
  CHECK(run_cli(dir, "--help").status == 0);
}

TEST_CASE("kmeans output is reproducible apart from timings") {
  TempDir dir;
  const std::string args =
      "kmeans --points 300 --clusters 4 --partitions 3 --reducers 2 --max-iter 4 --out -";
  const auto a = run_cli(dir, args);
  const auto b = run_cli(dir, args + " --workers 2");
  REQUIRE(a.status == 0);
  REQUIRE(b.status == 0);
  CHECK(a.err.find("iterations") != std::string::npos);
  const auto rows = parse_csv(a.out);
  CHECK_FALSE(rows.empty());
  CHECK(drop_wall_ms(a.out) == drop_wall_ms(b.out));
}

TEST_CASE("run executes a workload and writes csv and events") {
  TempDir dir;
  write_file(dir / "spec.json", R"({
    "spec_version": 1,
    "pilots": [{"id": "p", "resource_url": "local://localhost", "cores": 2}],
    "units": [{"id": "hello", "executable": "/bin/echo", "arguments": ["hi"]}],
    "jobs": [{"id": "k", "type": "kmeans", "points": 40, "clusters": 2, "max_iter": 2}]
  })");
  const auto csv = dir / "out.csv";
  const auto events = dir / "events.log";
  const auto o = run_cli(dir, "run \"" + (dir / "spec.json").string() + "\" --out \"" +
                                  csv.string() + "\" --events \"" + events.string() + "\"");
  CHECK(o.status == 0);
  CHECK(o.err.find("hello DONE") != std::string::npos);
  CHECK_FALSE(parse_csv(read_file(csv)).empty());
  CHECK(read_file(events).find("SCHEDULED->STAGING_IN") != std::string::npos);

  write_file(dir / "fail.json", R"({
    "spec_version": 1,
    "pilots": [{"id": "p", "resource_url": "local://localhost", "cores": 2}],
    "units": [{"id": "boom", "executable": "/bin/false"}]
  })");
  CHECK(run_cli(dir, "run \"" + (dir / "fail.json").string() + "\"").status == 2);
}
