#include "doctest.h"
#include "support.hpp"

using namespace perfskill;

namespace {

const support::Pipeline& planted() {
  static const support::Pipeline p = [] {
    auto sf = support::space10();
    return support::run_pipeline(sf.space, sf.workloads, support::model10());
  }();
  return p;
}

std::size_t benchmark_events(const TuningSession& s) {
  std::size_t n = 0;
  for (const auto& e : s.trace)
    if ((e.kind == "benchmark" || e.kind == "measure") && e.outputs.contains("cached") &&
        !e.outputs.at("cached").get<bool>())
      ++n;
  return n;
}

// Counts adapter calls to check the trial accounting from the outside.
class CountingAdapter : public Adapter {
 public:
  explicit CountingAdapter(Adapter& inner) : inner_(inner) {}
  std::string id() const override { return inner_.id(); }
  const ParameterSpace& space() const override { return inner_.space(); }
  std::size_t max_concurrency() const override { return inner_.max_concurrency(); }
  RunResult run(const Configuration& c, const WorkloadSpec& w, std::uint64_t seed) override {
    ++calls;
    return inner_.run(c, w, seed);
  }
  std::atomic<std::size_t> calls{0};

 private:
  Adapter& inner_;
};

}  // namespace

TEST_CASE("trivial document converges with zero trials") {
  const auto doc = support::trivial_document();
  REQUIRE(validate_document(doc).ok());
  SimulatorAdapter sim(doc.space, SimulatorModel{});
  const auto s = run_session(doc, sim, 5, 1);
  CHECK(s.status == SessionStatus::converged);
  CHECK(s.trials_used == 0);
  CHECK(s.final_config.has_value());
}

TEST_CASE("invalid documents and zero budgets are rejected up front") {
  auto doc = support::trivial_document();
  SimulatorAdapter sim(doc.space, SimulatorModel{});
  CountingAdapter counting(sim);
  CHECK_THROWS_AS(run_session(doc, counting, 0, 1), ParameterError);
  doc.skills[0].postconditions = {"nope > 1"};
  CHECK_THROWS_AS(run_session(doc, counting, 10, 1), DocumentError);
  CHECK(counting.calls == 0);
}

TEST_CASE("session on the planted model") {
  const auto& doc = planted().doc;
  SimulatorAdapter sim(doc.space, support::model10());
  CountingAdapter counting(sim);
  const auto s = run_session(doc, counting, 60, 9);
  CHECK(s.status == SessionStatus::converged);
  CHECK(s.trials_used <= 60);
  CHECK(s.trials_used == benchmark_events(s));
  // Each trial is one benchmark of r repetitions.
  CHECK(counting.calls <= s.trials_used * 3);
  REQUIRE(s.final_config);
  CHECK(validate_configuration(doc.space, *s.final_config).ok());

  SUBCASE("every benchmarked configuration is inside the safe ranges") {
    for (const auto& e : s.trace) {
      if (!e.inputs.contains("config")) continue;
      const auto c = e.inputs.at("config").get<Configuration>();
      for (const auto& [name, v] : c.assignments())
        CHECK(doc.find_profile(name)->safe_range.contains(v));
    }
  }
  SUBCASE("determinism") {
    const auto again = run_session(doc, sim, 60, 9);
    CHECK(trace_jsonl(again) == trace_jsonl(s));
    SessionOptions par;
    par.parallelism = 8;
    CHECK(trace_jsonl(run_session(doc, sim, 60, 9, par)) == trace_jsonl(s));
  }
  SUBCASE("replay") {
    const auto parsed = parse_trace(trace_jsonl(s));
    CHECK(parsed.trace == s.trace);
    CHECK(replay_session(parsed, doc).ok());

    auto flipped = parsed;
    std::size_t at = 0;
    for (auto& e : flipped.trace) {
      if (e.kind == "postcondition" && !e.verdicts.empty()) {
        e.verdicts[0].holds = !e.verdicts[0].holds;
        at = e.seq;
        break;
      }
    }
    const auto r = replay_session(flipped, doc);
    REQUIRE(r.mismatches.size() == 1);
    CHECK(r.mismatches[0].find("event " + std::to_string(at)) != std::string::npos);

    auto tampered = parsed;
    for (auto& e : tampered.trace) {
      // A compute verdict records a value, so any input change shows up.
      if (e.kind == "compute" && !e.verdicts.empty() && !e.verdicts[0].inputs.empty()) {
        e.verdicts[0].inputs.begin()->second += 1000.0;
        break;
      }
    }
    CHECK_FALSE(replay_session(tampered, doc).ok());
  }
  SUBCASE("fingerprint rejection") {
    auto p = planted();
    CompilePolicy other;
    other.campaign_id = "test";
    other.convergence_tol = 0.02;
    const auto doc2 =
        compile_document(p.space, p.workloads, p.profiles, p.records, p.graph, p.optima, other);
    CHECK_THROWS_AS(replay_session(s, doc2), DocumentError);
  }
}

TEST_CASE("budget exhaustion aborts without overrunning") {
  const auto& doc = planted().doc;
  SimulatorAdapter sim(doc.space, support::model10());
  for (std::size_t budget : {1u, 2u, 5u}) {
    CountingAdapter counting(sim);
    const auto s = run_session(doc, counting, budget, 3);
    CHECK(s.status == SessionStatus::aborted);
    CHECK(s.trials_used <= budget);
    CHECK(counting.calls <= budget * 3);
    CHECK_FALSE(s.diagnostic.empty());
  }
}

TEST_CASE("a crashing adapter aborts cleanly") {
  const auto& doc = planted().doc;
  auto model = support::model10();
  model.crash_regions.push_back({"io_threads", -1, 100});
  SimulatorAdapter sim(doc.space, model);
  const auto s = run_session(doc, sim, 120, 3);
  CHECK(s.status == SessionStatus::aborted);
  bool error_event = false;
  for (const auto& e : s.trace) error_event |= e.outputs.contains("error");
  CHECK(error_event);
}

TEST_CASE("the step resolver can override transitions") {
  struct Stop : StepResolver {
    std::optional<std::string> next_skill(const Skill& current, const SignalStore&,
                                          const std::string&) override {
      if (current.kind == SkillKind::orchestration) return std::string(kAbort);
      return std::nullopt;
    }
  } stop;
  const auto& doc = planted().doc;
  SimulatorAdapter sim(doc.space, support::model10());
  SessionOptions o;
  o.resolver = &stop;
  const auto s = run_session(doc, sim, 60, 3, o);
  CHECK(s.status == SessionStatus::aborted);
}

TEST_CASE("canonical_config drops defaults") {
  const auto& space = planted().space;
  CHECK(canonical_config(space, Configuration{{"buffer_pool", 50}, {"io_threads", 70}}) ==
        Configuration{{"io_threads", 70}});
}

TEST_CASE("trace file round trip") {
  const auto& doc = planted().doc;
  SimulatorAdapter sim(doc.space, support::model10());
  const auto s = run_session(doc, sim, 40, 2);
  const auto dir = support::temp_dir("trace");
  save_trace(dir / "t.jsonl", s);
  const auto back = load_trace(dir / "t.jsonl");
  CHECK(back.trace == s.trace);
  CHECK(back.status == s.status);
  CHECK(back.trials_used == s.trials_used);
  CHECK(back.final_config == s.final_config);
  CHECK(trace_jsonl(back) == trace_jsonl(s));
  std::filesystem::remove_all(dir);
}
