#include "doctest.h"
#include "support.hpp"

using namespace perfskill;

TEST_CASE("plan_sweep arithmetic") {
  ParameterSpace one({continuous_param("x", 0, 1, 0.5)});
  CHECK(plan_sweep(one, support::one_workload(), 3, 3).size() == 9 + 3);

  ParameterSpace two({continuous_param("x", 0, 1, 0.5), continuous_param("y", 0, 1, 0.5)});
  const auto plan = plan_sweep(two, support::one_workload(), 3, 1);
  std::size_t sweep_entries = 0;
  for (const auto& e : plan) {
    if (e.config.empty()) continue;  // baseline
    ++sweep_entries;
    CHECK(e.config.size() == 1);
  }
  CHECK(sweep_entries == 6);

  // 20 params, L=5, r=3, W=2: 600 sweep runs plus r*W baseline runs.
  const auto wl = parse_workloads_file(support::load_json(support::data_dir() / "workloads2.json"));
  CHECK(plan_sweep(support::numbered_space(20), wl, 5, 3).size() == 600 + 6);

  CHECK_THROWS_AS(plan_sweep(ParameterSpace{}, support::one_workload(), 3, 3), ParameterError);
  CHECK_THROWS_AS(plan_sweep(one, {}, 3, 3), ParameterError);
}

TEST_CASE("plan_sweep at the reference scale") {
  // 116 parameters with 700 levels in total, r=3, W=3.
  std::vector<ParameterSpec> specs;
  for (int i = 0; i < 116; ++i) {
    auto p = continuous_param("k" + std::to_string(i), 0, 1, 0.5);
    p.levels = i < 60 ? 7 : 5;
    specs.push_back(p);
  }
  std::vector<WorkloadSpec> w = {{"a", "tps", Direction::maximize},
                                 {"b", "tps", Direction::maximize},
                                 {"c", "tps", Direction::maximize}};
  CHECK(plan_sweep(ParameterSpace(specs), w, 5, 3).size() == 700 * 9 + 9);
}

TEST_CASE("compute_cv") {
  const std::vector<double> lv = {0, 1, 2};
  CHECK(compute_cv(sweep_from_means("x", lv, {100, 100, 100}, 1), 100) == 0.0);
  CHECK(compute_cv(sweep_from_means("x", lv, {90, 100, 120}, 1), 100) == doctest::Approx(0.30));
  CHECK_THROWS_AS(compute_cv(sweep_from_means("x", lv, {90, 100, 120}, 1), 0), AnalysisError);
  auto one = sweep_from_means("x", lv, {90, 100, 120}, 1);
  one.levels[0].mean.reset();
  one.levels[2].mean.reset();
  CHECK_THROWS_AS(compute_cv(one, 100), AnalysisError);
}

TEST_CASE("compute_cv of a linear-up simulator parameter") {
  ParameterSpace space({continuous_param("x", 0, 10, 5)});
  SimulatorModel m;
  m.responses.push_back(support::linear_up("x", 0.2));
  SimulatorAdapter sim(space, m);
  const auto w = support::one_workload();
  const auto log = run_plan(sim, w, plan_sweep(space, w, 5, 3), {});
  const auto sweep = collect_sweep(log, space.at("x"), "oltp", sweep_levels(space.at("x"), 5));
  CHECK(compute_cv(sweep, *baseline_mean(log, "oltp")) == doctest::Approx(0.2 / 1.1).epsilon(1e-12));
}

TEST_CASE("classify_shape") {
  CHECK(classify_shape(sweep_from_means("x", {0, 1, 2}, {100, 101, 100}, 1), 100).shape ==
        CurveShape::flat);
  CHECK(classify_shape(sweep_from_means("x", {0, 1, 2, 3}, {100, 110, 125, 140}, 1), 100).shape ==
        CurveShape::monotonic_up);
  CHECK(classify_shape(sweep_from_means("x", {0, 1, 2, 3}, {140, 125, 110, 100}, 1), 100).shape ==
        CurveShape::monotonic_down);
  CHECK(classify_shape(sweep_from_means("x", {0, 1, 2, 3}, {100, 101, 160, 161}, 1), 100, 0.02, 0.8)
            .shape == CurveShape::step_function);
  CHECK(classify_shape(sweep_from_means("x", {0, 1, 2, 3}, {100, 130, 125, 100}, 1), 100).shape ==
        CurveShape::non_monotonic);
  const auto few = classify_shape(sweep_from_means("x", {0, 1}, {100, 150}, 0), 100);
  CHECK(few.shape == CurveShape::flat);
  CHECK(few.warning);
}

TEST_CASE("shape labels are scale invariant") {
  const std::vector<std::vector<double>> cases = {
      {100, 101, 100}, {100, 110, 125, 140}, {100, 101, 160, 161}, {100, 130, 125, 100}};
  for (const auto& means : cases) {
    std::vector<double> lv, scaled;
    for (std::size_t i = 0; i < means.size(); ++i) {
      lv.push_back(static_cast<double>(i));
      scaled.push_back(means[i] * 37.5);
    }
    const auto a = classify_shape(sweep_from_means("x", lv, means, 0), 100);
    const auto b = classify_shape(sweep_from_means("x", lv, scaled, 0), 3750);
    CHECK(a.shape == b.shape);
    CHECK(compute_cv(sweep_from_means("x", lv, means, 0), 100) ==
          doctest::Approx(compute_cv(sweep_from_means("x", lv, scaled, 0), 3750)).epsilon(1e-12));
  }
}

TEST_CASE("extract_safe_range") {
  SUBCASE("all levels ok") {
    const auto s = sweep_from_means("x", {0, 25, 50, 75, 100}, {90, 95, 100, 105, 110}, 50);
    CHECK(extract_safe_range(s, 100) == SafeRange{0, 100});
  }
  SUBCASE("crash at the top level only") {
    ParameterSpace space({continuous_param("x", 0, 100, 50)});
    SimulatorModel m;
    m.crash_regions.push_back({"x", 90, 100});
    SimulatorAdapter sim(space, m);
    const auto w = support::one_workload();
    const auto log = run_plan(sim, w, plan_sweep(space, w, 5, 3), {});
    const auto s = collect_sweep(log, space.at("x"), "oltp", sweep_levels(space.at("x"), 5));
    CHECK(s.levels.back().crashed == 3);
    CHECK(extract_safe_range(s, *baseline_mean(log, "oltp")) == SafeRange{0, 75});
  }
  SUBCASE("degraded middle level above the default") {
    const auto s = sweep_from_means("x", {0, 25, 50, 75, 100}, {100, 100, 100, 40, 100}, 25);
    CHECK(extract_safe_range(s, 100) == SafeRange{0, 50});
  }
  SUBCASE("unsafe default") {
    const auto s = sweep_from_means("x", {0, 50, 100}, {100, 30, 100}, 50);
    CHECK_THROWS_AS(extract_safe_range(s, 100), AnalysisError);
  }
}

TEST_CASE("select_top_k") {
  std::vector<SensitivityProfile> ps(3);
  ps[0].parameter = "a";
  ps[0].aggregate_cv = 0.30;
  ps[1].parameter = "b";
  ps[1].aggregate_cv = 0.04;
  ps[2].parameter = "c";
  ps[2].aggregate_cv = 0.08;
  auto top = select_top_k(ps, 0.05);
  REQUIRE(top.size() == 2);
  CHECK(top[0].parameter == "a");
  CHECK(top[1].parameter == "c");
  CHECK(select_top_k(ps, 0.5).empty());
  ps[2].aggregate_cv = 0.30;
  top = select_top_k(ps, 0.05);
  CHECK(top[0].parameter == "a");  // ties by name
  CHECK(top[1].parameter == "c");
  CHECK_THROWS_AS(select_top_k(ps, -1), ParameterError);
}

TEST_CASE("CV equals a brute-force recomputation from the raw log") {
  auto sf = support::space10();
  auto model = support::model10();
  model.noise_sigma = 0.02;
  SimulatorAdapter sim(sf.space, model);
  RunPlanOptions o;
  o.seed = 17;
  const auto log = run_plan(sim, sf.workloads, plan_sweep(sf.space, sf.workloads, 5, 3), o);
  const auto profiles = analyze_sensitivity(sf.space, sf.workloads, log, {});
  for (const auto& prof : profiles) {
    // Independent route: group the raw ok records by the swept value.
    std::map<double, std::pair<double, int>> sums;
    double base = 0;
    int nb = 0;
    for (const auto& m : log.records()) {
      if (m.outcome != Outcome::ok || !m.metric_value) continue;
      if (m.config.empty()) {
        base += *m.metric_value;
        ++nb;
      } else if (m.config.size() == 1 && m.config.get(prof.parameter)) {
        auto& s = sums[*m.config.get(prof.parameter)];
        s.first += *m.metric_value;
        ++s.second;
      }
    }
    base /= nb;
    double lo = 1e300, hi = -1e300;
    for (const auto& [v, s] : sums) {
      const double mean = s.first / s.second;
      lo = std::min(lo, mean);
      hi = std::max(hi, mean);
    }
    const double cv = (hi - lo) / base;
    CHECK(support::rel_close(prof.cv("oltp"), cv, 1e-12));
  }
}

TEST_CASE("planted sensitivity recovery and shapes") {
  auto sf = support::space10();
  SimulatorAdapter sim(sf.space, support::model10());
  RunPlanOptions o;
  o.seed = 42;
  const auto log = run_plan(sim, sf.workloads, plan_sweep(sf.space, sf.workloads, 5, 3), o);
  const auto profiles = analyze_sensitivity(sf.space, sf.workloads, log, {});
  std::set<std::string> selected;
  for (const auto& p : profiles)
    if (p.selected) selected.insert(p.parameter);
  CHECK(selected == std::set<std::string>{"buffer_pool", "flush_interval", "io_threads"});
  for (std::size_t i = 1; i < profiles.size(); ++i) {
    CHECK(profiles[i - 1].aggregate_cv >= profiles[i].aggregate_cv);
    CHECK(profiles[i].rank == static_cast<int>(i + 1));
  }
  auto find = [&](const std::string& n) {
    return *std::find_if(profiles.begin(), profiles.end(),
                         [&](const auto& p) { return p.parameter == n; });
  };
  CHECK(find("io_threads").shape == CurveShape::monotonic_up);
  CHECK(find("flush_interval").shape == CurveShape::monotonic_down);
  CHECK(find("buffer_pool").shape == CurveShape::non_monotonic);
  CHECK(find("log_size").safe_range == SafeRange{0, 75});
  CHECK(find("compress_level").shape == CurveShape::flat);
  // Profile JSON round trip.
  for (const auto& p : profiles) {
    nlohmann::json j = p;
    CHECK(j.get<SensitivityProfile>() == p);
  }
}

TEST_CASE("sensitivity is invariant to scaling every measurement") {
  auto sf = support::space10();
  auto m1 = support::model10();
  auto m2 = m1;
  m2.base_rate *= 4.0;
  RunPlanOptions o;
  o.seed = 8;
  SimulatorAdapter s1(sf.space, m1), s2(sf.space, m2);
  const auto plan = plan_sweep(sf.space, sf.workloads, 5, 3);
  const auto p1 = analyze_sensitivity(sf.space, sf.workloads, run_plan(s1, sf.workloads, plan, o), {});
  const auto p2 = analyze_sensitivity(sf.space, sf.workloads, run_plan(s2, sf.workloads, plan, o), {});
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].parameter == p2[i].parameter);
    CHECK(p1[i].rank == p2[i].rank);
    CHECK(p1[i].selected == p2[i].selected);
    CHECK(p1[i].shape == p2[i].shape);
    CHECK(p1[i].safe_range == p2[i].safe_range);
    CHECK(support::rel_close(p1[i].aggregate_cv, p2[i].aggregate_cv, 1e-9));
  }
}

TEST_CASE("long-tail recovery at n >= 5k") {
  auto space = support::numbered_space(25);
  SimulatorModel m;
  m.noise_sigma = 0.01;
  m.seed = 4;
  for (const char* p : {"p03", "p11", "p17", "p22", "p24"}) m.responses.push_back(support::linear_up(p, 0.25));
  SimulatorAdapter sim(space, m);
  const auto w = support::one_workload();
  RunPlanOptions o;
  o.seed = 21;
  const auto profiles =
      analyze_sensitivity(space, w, run_plan(sim, w, plan_sweep(space, w, 5, 3), o), {});
  std::set<std::string> sel;
  for (const auto& p : select_top_k(profiles, 0.05)) sel.insert(p.parameter);
  CHECK(sel == std::set<std::string>{"p03", "p11", "p17", "p22", "p24"});
}

TEST_CASE("cumulative CV share") {
  std::vector<SensitivityProfile> ps(3);
  ps[0].aggregate_cv = 0.6;
  ps[1].aggregate_cv = 0.3;
  ps[2].aggregate_cv = 0.1;
  const auto s = cumulative_cv_share(ps);
  CHECK(s[0] == doctest::Approx(0.6));
  CHECK(s[1] == doctest::Approx(0.9));
  CHECK(s[2] == doctest::Approx(1.0));
}
