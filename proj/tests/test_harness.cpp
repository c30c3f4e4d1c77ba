#include "doctest.h"
#include "support.hpp"

using namespace perfskill;

namespace {

ParameterSpace pspace() { return ParameterSpace({continuous_param("p", 0, 10, 5)}); }

}  // namespace

TEST_CASE("flat model yields the base rate") {
  SimulatorModel m;
  SimulatorAdapter sim(pspace(), m);
  const auto w = support::one_workload()[0];
  for (double v : {0.0, 3.0, 10.0}) {
    const auto meas = run_experiment(sim, Configuration{{"p", v}}, w, 0, 1);
    CHECK(meas.outcome == Outcome::ok);
    CHECK(*meas.metric_value == 1000.0);
  }
}

TEST_CASE("planted crash region") {
  SimulatorModel m;
  m.crash_regions.push_back({"p", 8, 10});
  SimulatorAdapter sim(pspace(), m);
  const auto w = support::one_workload()[0];
  CHECK(run_experiment(sim, Configuration{{"p", 9}}, w, 0, 1).outcome == Outcome::crash);
  CHECK(run_experiment(sim, Configuration{{"p", 8}}, w, 0, 1).outcome == Outcome::ok);
  CHECK_FALSE(run_experiment(sim, Configuration{{"p", 9}}, w, 0, 1).metric_value);
}

TEST_CASE("linear-up at the domain maximum") {
  SimulatorModel m;
  m.responses.push_back(support::linear_up("p", 0.2));
  SimulatorAdapter sim(pspace(), m);
  const auto meas = run_experiment(sim, Configuration{{"p", 10}}, support::one_workload()[0], 0, 1);
  CHECK(*meas.metric_value == doctest::Approx(1200.0).epsilon(1e-12));
}

TEST_CASE("coupling corners") {
  ParameterSpace space({continuous_param("a", 0, 1, 0.5), continuous_param("b", 0, 1, 0.5)});
  SimulatorModel m;
  m.couplings.push_back(support::coupling("a", "b", 0.3));
  SimulatorAdapter sim(space, m);
  CHECK(*sim.evaluate(Configuration{{"a", 1}, {"b", 1}}, "w") == doctest::Approx(1300.0));
  CHECK(*sim.evaluate(Configuration{{"a", 0}, {"b", 0}}, "w") == doctest::Approx(1300.0));
  CHECK(*sim.evaluate(Configuration{{"a", 1}, {"b", 0}}, "w") == doctest::Approx(700.0));
  CHECK(*sim.evaluate(Configuration{{"a", 0.5}, {"b", 0}}, "w") == doctest::Approx(1000.0));
}

TEST_CASE("timeouts from the wall-time budget") {
  SimulatorModel m;
  m.seconds_per_run = 60;
  SimulatorAdapter sim(pspace(), m);
  ExperimentOptions o;
  o.wall_time_budget = 30;
  const auto meas = run_experiment(sim, Configuration{}, support::one_workload()[0], 0, 1, o);
  CHECK(meas.outcome == Outcome::timeout);
}

TEST_CASE("run_plan is deterministic across parallelism") {
  auto sf = support::space10();
  auto model = support::model10();
  model.noise_sigma = 0.05;
  SimulatorAdapter sim(sf.space, model);
  const auto plan = plan_sweep(sf.space, sf.workloads, 5, 3);
  RunPlanOptions o1;
  o1.seed = 99;
  RunPlanOptions o8 = o1;
  o8.parallelism = 8;
  const auto a = run_plan(sim, sf.workloads, plan, o1);
  const auto b = run_plan(sim, sf.workloads, plan, o8);
  REQUIRE(a.size() == plan.size());
  CHECK(a.records() == b.records());
}

TEST_CASE("empty plan gives an empty log") {
  auto sf = support::space10();
  SimulatorAdapter sim(sf.space, support::model10());
  CHECK(run_plan(sim, sf.workloads, {}, {}).empty());
}

TEST_CASE("noise is unbiased in the mean") {
  SimulatorModel m;
  m.noise_sigma = 0.05;
  SimulatorAdapter sim(pspace(), m);
  const auto w = support::one_workload();
  ExperimentPlan plan;
  for (int r = 0; r < 1000; ++r) plan.push_back({Configuration{}, "oltp", r});
  RunPlanOptions o;
  o.seed = 3;
  o.parallelism = 4;
  const auto log = run_plan(sim, w, plan, o);
  const double mean = *baseline_mean(log, "oltp");
  CHECK(mean > 990.0);
  CHECK(mean < 1020.0);
}

TEST_CASE("resume executes only the missing entries") {
  auto sf = support::space10();
  SimulatorAdapter sim(sf.space, support::model10());
  const auto plan = plan_sweep(sf.space, sf.workloads, 5, 3);
  RunPlanOptions o;
  o.seed = 5;
  const auto full = run_plan(sim, sf.workloads, plan, o);
  const ExperimentPlan half(plan.begin(), plan.begin() + plan.size() / 2);
  const auto partial = run_plan(sim, sf.workloads, half, o);
  RunPlanOptions resume = o;
  resume.existing = &partial;
  RunPlanStats stats;
  const auto rest = run_plan(sim, sf.workloads, plan, resume, &stats);
  CHECK(stats.executed == plan.size() - half.size());
  CHECK(stats.reused == half.size());
  CHECK(rest.records() == full.records());
}

TEST_CASE("log save and load, truncated tail tolerated") {
  auto sf = support::space10();
  SimulatorAdapter sim(sf.space, support::model10());
  RunPlanOptions o;
  o.seed = 11;
  const auto log = run_plan(sim, sf.workloads, plan_sweep(sf.space, sf.workloads, 3, 1), o);
  const auto dir = support::temp_dir("log");
  log.save(dir / "m.jsonl");
  const auto back = MeasurementLog::load(dir / "m.jsonl");
  CHECK(back.records() == log.records());
  {
    std::ofstream app(dir / "m.jsonl", std::ios::app);
    app << "{\"config\":{\"buffer_po";
  }
  CHECK(MeasurementLog::load(dir / "m.jsonl").size() == log.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("duplicate run keys are rejected") {
  MeasurementLog log;
  Measurement m;
  m.workload_id = "w";
  m.metric_value = 1.0;
  log.append(m);
  CHECK_THROWS_AS(log.append(m), ParameterError);
}

TEST_CASE("shell adapter") {
  ParameterSpace space({integer_param("x", 0, 10, 5), enum_param("mode", {"off", "on"}, 1)});
  const auto w = support::one_workload()[0];
  ShellAdapter ok(space, "echo \"mode=$mode\"; echo METRIC ${x}00.5");
  auto m = run_experiment(ok, Configuration{{"x", 7}}, w, 0, 1);
  CHECK(m.outcome == Outcome::ok);
  CHECK(*m.metric_value == 700.5);
  ShellAdapter enum_check(space, "test \"$mode\" = on && echo METRIC 1");
  CHECK(run_experiment(enum_check, Configuration{}, w, 0, 1).outcome == Outcome::ok);
  CHECK(run_experiment(enum_check, Configuration{{"mode", 0}}, w, 0, 1).outcome == Outcome::crash);
  ShellAdapter placeholders(space, "test {workload} = oltp && echo METRIC {seed}");
  CHECK(*placeholders.run(resolve(space, {}), w, 42).metric_value == 42.0);
  ShellAdapter failing(space, "echo METRIC 5; exit 3");
  m = run_experiment(failing, Configuration{}, w, 0, 1);
  CHECK(m.outcome == Outcome::crash);
  CHECK_FALSE(m.diagnostic.empty());
  CHECK(parse_metric_line("warmup\nMETRIC 1.5\nMETRIC 2.5\n") == 2.5);
  CHECK_FALSE(parse_metric_line("no metric here"));
}
