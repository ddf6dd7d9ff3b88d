#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "mglab/series.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = MGLAB_TEST_DATA;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mglab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = mglab::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mglab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

json manifest(const fs::path& dir) { return json::parse(slurp(dir / "manifest.json")); }

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("simulate writes a series, a trajectory and a manifest") {
  const auto dir = fresh_dir("simulate");
  const auto r = run({"--seed", "1", "--out-dir", dir.string(), "simulate"});
  REQUIRE(r.code == 0);
  CHECK(lines_of(dir / "series.csv").size() == 62);
  CHECK(lines_of(dir / "series.csv")[0] == "period,price");
  CHECK(lines_of(dir / "trajectory.csv")[0] == "period,d_plus,d_minus,delta_d");
  const auto m = manifest(dir);
  CHECK(m["command"] == "simulate");
  CHECK(m["seed"] == 1);
  CHECK(m["outputs"].size() == 2);
  CHECK(m["outputs"][0]["sha256"].get<std::string>().size() == 64);
  CHECK(m["results"]["warmup_bits"].get<std::string>().size() == 6);

  SUBCASE("same seed, same bytes") {
    const auto again = fresh_dir("simulate_again");
    REQUIRE(run({"--seed", "1", "--out-dir", again.string(), "simulate"}).code == 0);
    CHECK(manifest(again)["outputs"] == m["outputs"]);
    const auto other = fresh_dir("simulate_other");
    REQUIRE(run({"--seed", "2", "--out-dir", other.string(), "simulate"}).code == 0);
    CHECK(manifest(other)["outputs"] != m["outputs"]);
  }
  SUBCASE("forced constant tables give the exponential path") {
    const auto forced = fresh_dir("simulate_forced");
    REQUIRE(run({"--out-dir", forced.string(), "simulate", "--force-constant", "+1"}).code == 0);
    std::ifstream in(forced / "series.csv");
    const auto series = mglab::read_series_csv(in);
    REQUIRE(series.prices.size() == 61);
    CHECK(series.prices.back() == doctest::Approx(5 * std::exp(6.0)).epsilon(1e-12));
    for (auto b : series.bits) CHECK(b == 1);
    CHECK(run({"--out-dir", forced.string(), "simulate", "--force-constant", "2"}).code == 2);
  }
}

TEST_CASE("analyze, predict and bootstrap on a file") {
  const auto dir = fresh_dir("analyze");
  REQUIRE(run({"--seed", "4", "--out-dir", dir.string(), "simulate"}).code == 0);
  const auto series = (dir / "series.csv").string();

  SUBCASE("threshold grid") {
    const auto out = fresh_dir("analyze_grid");
    const auto r = run({"--out-dir", out.string(), "analyze", series, "--runs", "40", "--thresholds", "0.2:0.02:0.34"});
    REQUIRE(r.code == 0);
    const auto rows = lines_of(out / "success_table.csv");
    REQUIRE(rows.size() == 9);
    CHECK(rows[0] == "threshold,success_rate,n_events");
    CHECK(rows[1].rfind("0.2,", 0) == 0);
    CHECK(rows[8].rfind("0.34,", 0) == 0);
    CHECK(lines_of(out / "trajectory.csv").size() == 56);
    const auto m = manifest(out);
    CHECK(m["inputs"][0]["path"] == series);
    CHECK(m["config"]["runs"] == 40);
    CHECK(r.out.find("events") != std::string::npos);

    const auto list = fresh_dir("analyze_list");
    REQUIRE(run({"--out-dir", list.string(), "analyze", "--series", series, "--runs", "40", "--thresholds",
                 "0.2,0.3"})
                .code == 0);
    CHECK(lines_of(list / "success_table.csv").size() == 3);
    CHECK(run({"--out-dir", list.string(), "analyze", series, "--thresholds", "0.3,0.2"}).code == 2);
  }
  SUBCASE("predict") {
    const auto out = fresh_dir("predict");
    REQUIRE(run({"--out-dir", out.string(), "predict", series, "--runs", "40", "--threshold", "0.05"}).code == 0);
    const auto rows = lines_of(out / "predictions.csv");
    CHECK(rows[0] == "period,predicted_bit,realized_bit");
    CHECK(run({"--out-dir", out.string(), "predict", series, "--threshold", "0"}).code == 2);
  }
  SUBCASE("bootstrap") {
    const auto out = fresh_dir("bootstrap");
    REQUIRE(run({"--out-dir", out.string(), "bootstrap", series, "--runs", "10", "--outer", "2", "--inner", "10"})
                .code == 0);
    const auto rows = lines_of(out / "bands.csv");
    CHECK(rows.size() == 1 + 2 * 55);
    CHECK(run({"--out-dir", out.string(), "bootstrap", series, "--outer", "1"}).code == 2);
  }
  SUBCASE("input and usage errors") {
    const auto bad = dir / "bad.csv";
    write_file(bad, "period,price\n0,5\n1,abc\n2,5.1\n");
    const auto r = run({"--out-dir", dir.string(), "analyze", bad.string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("line 3") != std::string::npos);
    CHECK(run({"--out-dir", dir.string(), "analyze", (dir / "missing.csv").string()}).code == 3);
    CHECK(run({"--out-dir", dir.string(), "analyze", series, "--mode", "bogus"}).code == 2);
    CHECK(run({"--out-dir", dir.string(), "analyze", series, "--prefix-bits", "01"}).code == 2);
    CHECK(run({"--out-dir", dir.string(), "analyze", series, "--thresholds", "a:b"}).code == 2);
    CHECK(run({"nonsense"}).code == 2);
    CHECK(run({"--help"}).code == 0);
  }
}

TEST_CASE("a manifest re-executes to identical bytes, and flags override it") {
  const auto base = fresh_dir("manifest");
  REQUIRE(run({"--seed", "9", "--out-dir", base.string(), "simulate", "--m-max", "4"}).code == 0);
  const auto series = (base / "series.csv").string();
  const auto first = fresh_dir("manifest_first");
  REQUIRE(run({"--seed", "11", "--out-dir", first.string(), "analyze", series, "--runs", "30", "--m-max", "4"})
              .code == 0);

  const auto again = fresh_dir("manifest_again");
  REQUIRE(run({"--config", (first / "manifest.json").string(), "--out-dir", again.string()}).code == 0);
  CHECK(slurp(again / "trajectory.csv") == slurp(first / "trajectory.csv"));
  CHECK(slurp(again / "success_table.csv") == slurp(first / "success_table.csv"));
  CHECK(manifest(again)["config"] == manifest(first)["config"]);
  CHECK(manifest(again)["outputs"] == manifest(first)["outputs"]);

  const auto changed = fresh_dir("manifest_changed");
  REQUIRE(run({"--config", (first / "manifest.json").string(), "--out-dir", changed.string(), "analyze", "--runs",
               "20"})
              .code == 0);
  CHECK(manifest(changed)["config"]["runs"] == 20);
  CHECK(manifest(changed)["config"]["seed"] == 11);

  const auto flags = base / "flags.json";
  write_file(flags, R"({"runs": 25, "m-max": 4, "seed": 11})");
  const auto from_flags = fresh_dir("manifest_flags");
  REQUIRE(run({"--config", flags.string(), "--out-dir", from_flags.string(), "analyze", series}).code == 0);
  CHECK(manifest(from_flags)["config"]["runs"] == 25);
  CHECK(run({"--config", (base / "none.json").string(), "analyze", series}).code == 3);
}

TEST_CASE("self-play series slaved to its own population reproduces the trajectory") {
  const auto sim = fresh_dir("selfplay");
  REQUIRE(run({"--seed", "21", "--out-dir", sim.string(), "simulate", "--m-max", "3"}).code == 0);
  const auto warm = manifest(sim)["results"]["warmup_bits"].get<std::string>();
  const auto out = fresh_dir("selfplay_analyze");
  REQUIRE(run({"--seed", "21", "--out-dir", out.string(), "analyze", (sim / "series.csv").string(), "--m-max", "3",
               "--runs", "1", "--prefix-bits", warm})
              .code == 0);
  CHECK(slurp(out / "trajectory.csv") == slurp(sim / "trajectory.csv"));
}

TEST_CASE("headless session, replay and analysis") {
  const auto dir = fresh_dir("serve");
  const auto r = run({"--seed", "5", "--out-dir", dir.string(), "serve", (kData / "session.json").string(),
                      "--scripted-clients", "random"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("60 periods") != std::string::npos);
  CHECK(manifest(dir)["command"] == "serve");

  const auto rep = fresh_dir("replay");
  REQUIRE(run({"--out-dir", rep.string(), "replay", (dir / "session.log").string()}).code == 0);
  CHECK(lines_of(rep / "series.csv").size() == 62);
  const auto ana = fresh_dir("replay_analyze");
  REQUIRE(run({"--out-dir", ana.string(), "analyze", (rep / "series.csv").string(), "--runs", "20"}).code == 0);
  CHECK(lines_of(ana / "success_table.csv").size() == 12);

  // Re-running from the manifest reproduces the log byte for byte; the
  // virtual clock makes even the timestamps repeat.
  const auto again = fresh_dir("serve_again");
  REQUIRE(run({"--config", (dir / "manifest.json").string(), "--out-dir", again.string()}).code == 0);
  CHECK(slurp(again / "session.log") == slurp(dir / "session.log"));

  SUBCASE("truncated log") {
    auto lines = lines_of(dir / "session.log");
    std::ostringstream cut;
    for (const auto& l : lines) {
      if (l.find("\"period_close\"") != std::string::npos && l.find("\"period\":31") != std::string::npos) break;
      cut << l << '\n';
    }
    const auto path = dir / "cut.log";
    write_file(path, cut.str());
    const auto bad = run({"--out-dir", rep.string(), "replay", path.string()});
    CHECK(bad.code == 3);
    CHECK(bad.err.find("period 31") != std::string::npos);
  }
  SUBCASE("not enough news") {
    const auto bad = run({"--out-dir", dir.string(), "serve", (kData / "session_short_news.json").string(),
                          "--scripted-clients", "buy"});
    CHECK(bad.code == 3);
    CHECK(bad.err.find("news") != std::string::npos);
  }
  SUBCASE("bad scripted client kind") {
    CHECK(run({"--out-dir", dir.string(), "serve", (kData / "session.json").string(), "--scripted-clients",
               "clever"})
              .code == 2);
  }
}
