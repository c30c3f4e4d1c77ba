#include "doctest.h"
#include "support.hpp"

using namespace perfskill;
namespace fs = std::filesystem;

namespace {

std::string cli() { return PERFSKILL_CLI; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

int run(const std::string& args) {
  return support::run_command(q(cli()) + " " + args + " >/dev/null 2>&1");
}

std::string profile_args(const fs::path& campaign) {
  const auto d = support::data_dir();
  return "profile --space " + q(d / "space10.json") + " --workloads " + q(d / "workloads1.json") +
         " --adapter sim:" + q(d / "model10.json") + " --seed 42 --campaign " + q(campaign);
}

}  // namespace

TEST_CASE("stage gating") {
  const auto dir = support::temp_dir("gate");
  CHECK(run("screen --campaign " + q(dir / "c")) == 1);
  CHECK(run("compile --campaign " + q(dir / "c")) == 1);
  REQUIRE(run(profile_args(dir / "c")) == 0);
  CHECK(run("joint --campaign " + q(dir / "c")) == 1);
  CHECK(run("compile --campaign " + q(dir / "c")) == 1);
  CHECK(run("screen --campaign " + q(dir / "c")) == 0);
  CHECK(run("compile --campaign " + q(dir / "c")) == 1);
  CHECK(run("joint --campaign " + q(dir / "c")) == 0);
  CHECK(run("compile --campaign " + q(dir / "c")) == 0);
  CHECK(run("validate --document " + q(dir / "c" / "document.json")) == 0);
  CHECK(run("budget --campaign " + q(dir / "c")) == 0);

  SUBCASE("export parses back") {
    REQUIRE(run("export --document " + q(dir / "c" / "document.json") + " --format gptuner --out " +
                q(dir / "x.json")) == 0);
    const auto doc = parse_document_text(read_file(dir / "c" / "document.json"));
    CHECK(parse_export(support::load_json(dir / "x.json")) == knowledge_from_document(doc, "gptuner"));
    CHECK(run("export --document " + q(dir / "c" / "document.json") + " --format bogus --out " +
              q(dir / "y.json")) == 1);
  }
  SUBCASE("tune, replay and exit codes") {
    const auto d = support::data_dir();
    REQUIRE(run("tune --document " + q(dir / "c" / "document.json") + " --adapter sim:" +
                q(d / "model10.json") + " --budget 60 --seed 1 --out " + q(dir / "t")) == 0);
    CHECK(fs::exists(dir / "t" / "trace.jsonl"));
    CHECK(fs::exists(dir / "t" / "final_config.conf"));
    CHECK(run("replay --document " + q(dir / "c" / "document.json") + " --trace " +
              q(dir / "t" / "trace.jsonl")) == 0);
    // Too small a budget aborts: analysis failure.
    CHECK(run("tune --document " + q(dir / "c" / "document.json") + " --adapter sim:" +
              q(d / "model10.json") + " --budget 1 --out " + q(dir / "t2")) == 2);
    CHECK(run("tune --document " + q(dir / "c" / "document.json")) == 1);
    CHECK(run("tune --document " + q(dir / "c" / "document.json") +
              " --adapter shell:/nonexistent/bench-{workload} --budget 5 --out " + q(dir / "t3")) != 0);
  }
  SUBCASE("broken document fails validation") {
    auto j = support::load_json(dir / "c" / "document.json");
    j["root"] = "missing";
    write_file(dir / "bad.json", j.dump(2));
    CHECK(run("validate --document " + q(dir / "bad.json")) == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("held lock is a usage error") {
  const auto dir = support::temp_dir("lock");
  REQUIRE(run(profile_args(dir / "c")) == 0);
  {
    CampaignLock lock(dir / "c");
    CHECK(run("screen --campaign " + q(dir / "c")) == 1);
  }
  CHECK(run("screen --campaign " + q(dir / "c")) == 0);
  fs::remove_all(dir);
}

TEST_CASE("profile resumes from a partial log") {
  const auto dir = support::temp_dir("resume");
  const auto sf = support::space10();
  ProfileRequest req;
  req.space = support::data_dir() / "space10.json";
  req.workloads = support::data_dir() / "workloads1.json";
  req.adapter = "sim:" + (support::data_dir() / "model10.json").string();
  req.seed = 42;
  std::ostringstream full_out;
  cmd_profile(dir / "full", req, {}, full_out);
  const auto full_log = read_file(dir / "full" / "measurements.jsonl");
  const auto full_report = read_file(dir / "full" / "sensitivity.json");

  // Interrupt: keep the header and half the records, plus a torn line.
  fs::create_directories(dir / "part");
  fs::copy(dir / "full", dir / "part", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  std::istringstream lines(full_log);
  std::string line, kept;
  std::size_t n = 0, total = 0;
  for (std::string l; std::getline(lines, l);) ++total;
  const std::size_t records = total - 1;
  lines.clear();
  lines.str(full_log);
  while (std::getline(lines, line) && n <= records / 2) {
    kept += line + "\n";
    ++n;
  }
  kept += "{\"config\":";
  write_file(dir / "part" / "measurements.jsonl", kept);

  std::ostringstream out;
  cmd_profile(dir / "part", req, {}, out);
  const std::string expect = "sweep: " + std::to_string(records) + " runs planned, " +
                             std::to_string(records - records / 2) + " executed, " +
                             std::to_string(records / 2) + " reused";
  CHECK(out.str().find(expect) != std::string::npos);
  CHECK(read_file(dir / "part" / "measurements.jsonl") == full_log);
  CHECK(read_file(dir / "part" / "sensitivity.json") == full_report);

  // A different seed on the same directory is refused.
  req.seed = 43;
  std::ostringstream ignored;
  CHECK_THROWS_AS(cmd_profile(dir / "part", req, {}, ignored), UsageError);
  fs::remove_all(dir);
}

TEST_CASE("report lists parameters in descending CV") {
  const auto dir = support::temp_dir("report");
  REQUIRE(run(profile_args(dir / "c")) == 0);
  const auto report = support::load_json(dir / "c" / "sensitivity.json");
  const auto profiles = report.at("profiles").get<std::vector<SensitivityProfile>>();
  CHECK(profiles.size() == 10);
  for (std::size_t i = 1; i < profiles.size(); ++i)
    CHECK(profiles[i - 1].aggregate_cv >= profiles[i].aggregate_cv);
  fs::remove_all(dir);
}

TEST_CASE("campaign state JSON") {
  CampaignState s;
  s.campaign_id = "cx";
  s.stage = Stage::joint_done;
  s.budgets["sweep"] = {10, 7};
  nlohmann::json j = s;
  CHECK(j.get<CampaignState>() == s);
  CHECK(to_string(Stage::screen_done) == "screen-done");
  CHECK(stage_from_string("compiled") == Stage::compiled);
}
