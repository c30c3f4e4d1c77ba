#include "perfskill/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "perfskill/error.hpp"

namespace perfskill {

SweepResult sweep_from_means(std::string parameter, const std::vector<double>& levels,
                             const std::vector<double>& means, double default_value) {
  if (levels.size() != means.size()) throw ParameterError("levels/means size mismatch");
  SweepResult s;
  s.parameter = std::move(parameter);
  s.default_value = default_value;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    LevelStats l;
    l.value = levels[i];
    l.ok = 1;
    l.mean = means[i];
    s.levels.push_back(l);
  }
  return s;
}

int sweep_level_count(const ParameterSpec& spec, int requested) {
  int n = spec.levels != 0 ? spec.levels : requested;
  if (const auto card = spec.cardinality(); card != 0) {
    n = std::min<int>(n, static_cast<int>(card));
  }
  return n;
}

std::vector<double> sweep_levels(const ParameterSpec& spec, int requested) {
  return level_grid(spec, sweep_level_count(spec, requested));
}

ExperimentPlan plan_sweep(const ParameterSpace& space, const std::vector<WorkloadSpec>& workloads,
                          int levels_per_param, int repetitions) {
  if (space.empty()) throw ParameterError("plan_sweep: empty parameter space");
  if (workloads.empty()) throw ParameterError("plan_sweep: no workloads");
  if (levels_per_param < 3 || levels_per_param > 9) {
    throw ParameterError("plan_sweep: levels per parameter must be in [3,9]");
  }
  if (repetitions < 1) throw ParameterError("plan_sweep: repetitions must be >= 1");

  ExperimentPlan plan;
  for (const auto& w : workloads) {
    for (int r = 0; r < repetitions; ++r) plan.push_back({Configuration{}, w.id, r});
    for (const auto& p : space.parameters()) {
      for (double v : sweep_levels(p, levels_per_param)) {
        for (int r = 0; r < repetitions; ++r) plan.push_back({Configuration{{p.name, v}}, w.id, r});
      }
    }
  }
  return plan;
}

SweepResult collect_sweep(const MeasurementLog& log, const ParameterSpec& spec,
                          const std::string& workload, const std::vector<double>& levels) {
  SweepResult s;
  s.parameter = spec.name;
  s.workload_id = workload;
  s.default_value = spec.default_value;
  for (double v : levels) {
    LevelStats l;
    l.value = v;
    std::vector<double> values;
    for (const auto* m : log.select(Configuration{{spec.name, v}}, workload)) {
      switch (m->outcome) {
        case Outcome::ok:
          values.push_back(*m->metric_value);
          break;
        case Outcome::crash:
          ++l.crashed;
          break;
        case Outcome::timeout:
          ++l.timed_out;
          break;
        case Outcome::degraded:
          ++l.degraded;
          break;
      }
    }
    l.ok = values.size();
    if (!values.empty()) {
      const double mean =
          std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      l.mean = mean;
      if (values.size() > 1) {
        double ss = 0.0;
        for (double x : values) ss += (x - mean) * (x - mean);
        l.variance = ss / static_cast<double>(values.size() - 1);
      }
    }
    s.levels.push_back(l);
  }
  return s;
}

namespace {

std::vector<const LevelStats*> usable_levels(const SweepResult& sweep) {
  std::vector<const LevelStats*> out;
  for (const auto& l : sweep.levels) {
    if (l.usable()) out.push_back(&l);
  }
  return out;
}

}  // namespace

double compute_cv(const SweepResult& sweep, double baseline_mean) {
  if (!(baseline_mean > 0.0)) {
    throw AnalysisError("parameter " + sweep.parameter + ": baseline mean must be > 0");
  }
  const auto usable = usable_levels(sweep);
  if (usable.size() < 2) {
    throw AnalysisError("parameter " + sweep.parameter + ": fewer than 2 usable levels");
  }
  double lo = *usable.front()->mean;
  double hi = lo;
  for (const auto* l : usable) {
    lo = std::min(lo, *l->mean);
    hi = std::max(hi, *l->mean);
  }
  return (hi - lo) / baseline_mean;
}

std::string to_string(CurveShape s) {
  switch (s) {
    case CurveShape::monotonic_up:
      return "monotonic-up";
    case CurveShape::monotonic_down:
      return "monotonic-down";
    case CurveShape::non_monotonic:
      return "non-monotonic";
    case CurveShape::step_function:
      return "step-function";
    case CurveShape::flat:
      return "flat";
  }
  return "?";
}

CurveShape curve_shape_from_string(std::string_view s) {
  for (auto shape : {CurveShape::monotonic_up, CurveShape::monotonic_down,
                     CurveShape::non_monotonic, CurveShape::step_function, CurveShape::flat}) {
    if (to_string(shape) == s) return shape;
  }
  throw ParameterError("unknown curve shape " + std::string(s));
}

ShapeResult classify_shape(const SweepResult& sweep, double baseline_mean, double flat_tol,
                           double step_frac) {
  const auto usable = usable_levels(sweep);
  if (usable.size() < 3) return {CurveShape::flat, true};

  double lo = *usable.front()->mean;
  double hi = lo;
  for (const auto* l : usable) {
    lo = std::min(lo, *l->mean);
    hi = std::max(hi, *l->mean);
  }
  const double range = hi - lo;
  if (range <= flat_tol * baseline_mean) return {CurveShape::flat, false};

  // Pooled within-level variance; reversals smaller than one standard error
  // of the difference do not break monotonicity.
  double ss = 0.0;
  std::size_t df = 0;
  for (const auto* l : usable) {
    if (l->ok > 1) {
      ss += l->variance * static_cast<double>(l->ok - 1);
      df += l->ok - 1;
    }
  }
  auto tolerance = [&](const LevelStats& a, const LevelStats& b) {
    if (df == 0) return flat_tol * baseline_mean;
    const double pooled = ss / static_cast<double>(df);
    return std::sqrt(pooled * (1.0 / static_cast<double>(a.ok) + 1.0 / static_cast<double>(b.ok)));
  };

  const double trend = *usable.back()->mean - *usable.front()->mean;
  bool up = trend > 0.0;
  bool down = trend < 0.0;
  double max_gap = 0.0;
  for (std::size_t i = 1; i < usable.size(); ++i) {
    const double diff = *usable[i]->mean - *usable[i - 1]->mean;
    const double tol = tolerance(*usable[i - 1], *usable[i]);
    if (diff < -tol) up = false;
    if (diff > tol) down = false;
    max_gap = std::max(max_gap, std::abs(diff));
  }
  if (!up && !down) return {CurveShape::non_monotonic, false};
  if (max_gap >= step_frac * range) return {CurveShape::step_function, false};
  return {up ? CurveShape::monotonic_up : CurveShape::monotonic_down, false};
}

std::size_t default_level_index(const SweepResult& sweep) {
  if (sweep.levels.empty()) throw AnalysisError("parameter " + sweep.parameter + ": empty sweep");
  std::size_t best = 0;
  for (std::size_t i = 1; i < sweep.levels.size(); ++i) {
    if (std::abs(sweep.levels[i].value - sweep.default_value) <
        std::abs(sweep.levels[best].value - sweep.default_value)) {
      best = i;
    }
  }
  return best;
}

std::pair<std::size_t, std::size_t> safe_level_span(const SweepResult& sweep,
                                                    double baseline_mean,
                                                    Direction direction) {
  auto safe = [&](const LevelStats& l) {
    if (l.crashed || l.timed_out || l.degraded || !l.mean) return false;
    return direction == Direction::maximize ? *l.mean >= 0.5 * baseline_mean
                                            : *l.mean <= 2.0 * baseline_mean;
  };
  const std::size_t d = default_level_index(sweep);
  if (!safe(sweep.levels[d])) {
    throw AnalysisError("parameter " + sweep.parameter +
                        ": default level crashed or degraded (system unsafe at default)");
  }
  std::size_t lo = d;
  std::size_t hi = d;
  while (lo > 0 && safe(sweep.levels[lo - 1])) --lo;
  while (hi + 1 < sweep.levels.size() && safe(sweep.levels[hi + 1])) ++hi;
  return {lo, hi};
}

SafeRange extract_safe_range(const SweepResult& sweep, double baseline_mean,
                             Direction direction) {
  const auto [lo, hi] = safe_level_span(sweep, baseline_mean, direction);
  return {sweep.levels[lo].value, sweep.levels[hi].value};
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void to_json(nlohmann::json& j, const SensitivityProfile& p) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [w, s] : p.per_workload) {
    nlohmann::json means = nlohmann::json::array();
    for (const auto& m : s.level_means) means.push_back(optional_json(m));
    per[w] = {{"cv", s.cv},
              {"shape", to_string(s.shape)},
              {"endpoint_delta", s.endpoint_delta},
              {"baseline", s.baseline},
              {"rank", s.rank},
              {"excluded", s.excluded},
              {"level_means", means}};
  }
  j = {{"parameter", p.parameter},
       {"per_workload", per},
       {"aggregate_cv", p.aggregate_cv},
       {"shape", to_string(p.shape)},
       {"shape_workload", p.shape_workload},
       {"safe_range", {p.safe_range.lo, p.safe_range.hi}},
       {"levels", p.levels},
       {"rank", p.rank},
       {"selected", p.selected},
       {"warnings", p.warnings}};
}

void from_json(const nlohmann::json& j, SensitivityProfile& p) {
  p = SensitivityProfile{};
  p.parameter = j.at("parameter").get<std::string>();
  for (const auto& [w, s] : j.at("per_workload").items()) {
    WorkloadSensitivity ws;
    ws.cv = s.at("cv").get<double>();
    ws.shape = curve_shape_from_string(s.at("shape").get<std::string>());
    ws.endpoint_delta = s.at("endpoint_delta").get<double>();
    ws.baseline = s.at("baseline").get<double>();
    ws.rank = s.at("rank").get<int>();
    ws.excluded = s.at("excluded").get<std::size_t>();
    for (const auto& m : s.at("level_means")) {
      ws.level_means.push_back(m.is_null() ? std::nullopt : std::optional<double>(m.get<double>()));
    }
    p.per_workload[w] = std::move(ws);
  }
  p.aggregate_cv = j.at("aggregate_cv").get<double>();
  p.shape = curve_shape_from_string(j.at("shape").get<std::string>());
  p.shape_workload = j.at("shape_workload").get<std::string>();
  p.safe_range = {j.at("safe_range").at(0).get<double>(), j.at("safe_range").at(1).get<double>()};
  p.levels = j.at("levels").get<std::vector<double>>();
  p.rank = j.at("rank").get<int>();
  p.selected = j.at("selected").get<bool>();
  p.warnings = j.at("warnings").get<std::vector<std::string>>();
}

namespace {

bool ranks_before(double cv_a, const std::string& a, double cv_b, const std::string& b) {
  if (cv_a != cv_b) return cv_a > cv_b;
  return a < b;
}

}  // namespace

std::vector<SensitivityProfile> select_top_k(const std::vector<SensitivityProfile>& profiles,
                                             double tau_s) {
  if (tau_s < 0.0) throw ParameterError("tau_s must be >= 0");
  std::vector<SensitivityProfile> out;
  for (const auto& p : profiles) {
    if (p.aggregate_cv > tau_s) out.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.aggregate_cv, a.parameter, b.aggregate_cv, b.parameter);
  });
  return out;
}

void rank_profiles(std::vector<SensitivityProfile>& profiles, double tau_s) {
  std::sort(profiles.begin(), profiles.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.aggregate_cv, a.parameter, b.aggregate_cv, b.parameter);
  });
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    profiles[i].rank = static_cast<int>(i + 1);
    profiles[i].selected = profiles[i].aggregate_cv > tau_s;
  }
  std::set<std::string> workloads;
  for (const auto& p : profiles) {
    for (const auto& [w, _] : p.per_workload) workloads.insert(w);
  }
  for (const auto& w : workloads) {
    std::vector<SensitivityProfile*> order;
    for (auto& p : profiles) {
      if (p.per_workload.count(w)) order.push_back(&p);
    }
    std::sort(order.begin(), order.end(), [&](const auto* a, const auto* b) {
      return ranks_before(a->per_workload.at(w).cv, a->parameter, b->per_workload.at(w).cv,
                          b->parameter);
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i]->per_workload[w].rank = static_cast<int>(i + 1);
    }
  }
}

std::vector<SensitivityProfile> analyze_sensitivity(const ParameterSpace& space,
                                                    const std::vector<WorkloadSpec>& workloads,
                                                    const MeasurementLog& log,
                                                    const SensitivityOptions& options) {
  std::map<std::string, double> baselines;
  for (const auto& w : workloads) {
    auto b = baseline_mean(log, w.id);
    if (!b || !(*b > 0.0)) {
      throw AnalysisError("workload " + w.id + ": no usable all-defaults baseline");
    }
    baselines[w.id] = *b;
  }

  std::vector<SensitivityProfile> profiles;
  for (const auto& spec : space.parameters()) {
    SensitivityProfile prof;
    prof.parameter = spec.name;
    prof.levels = sweep_levels(spec, options.levels_per_param);
    std::size_t span_lo = 0;
    std::size_t span_hi = prof.levels.size() - 1;
    double best_cv = -1.0;
    for (const auto& w : workloads) {
      const double baseline = baselines.at(w.id);
      const auto sweep = collect_sweep(log, spec, w.id, prof.levels);
      WorkloadSensitivity ws;
      ws.baseline = baseline;
      try {
        ws.cv = compute_cv(sweep, baseline);
      } catch (const AnalysisError& e) {
        prof.warnings.push_back(w.id + ": " + e.what());
      }
      const auto shape = classify_shape(sweep, baseline, options.flat_tol, options.step_frac);
      ws.shape = shape.shape;
      if (shape.warning) prof.warnings.push_back(w.id + ": too few usable levels for shape");
      const auto [lo, hi] = safe_level_span(sweep, baseline, w.direction);
      span_lo = std::max(span_lo, lo);
      span_hi = std::min(span_hi, hi);
      if (sweep.levels[lo].mean && sweep.levels[hi].mean) {
        ws.endpoint_delta = (*sweep.levels[hi].mean - *sweep.levels[lo].mean) / baseline;
      }
      for (const auto& l : sweep.levels) {
        ws.level_means.push_back(l.mean);
        ws.excluded += l.excluded();
      }
      if (ws.cv > best_cv) {
        best_cv = ws.cv;
        prof.aggregate_cv = ws.cv;
        prof.shape = ws.shape;
        prof.shape_workload = w.id;
      }
      prof.per_workload[w.id] = std::move(ws);
    }
    prof.safe_range = {prof.levels[span_lo], prof.levels[span_hi]};
    profiles.push_back(std::move(prof));
  }
  rank_profiles(profiles, options.tau_s);
  return profiles;
}

std::vector<double> cumulative_cv_share(const std::vector<SensitivityProfile>& ranked) {
  double total = 0.0;
  for (const auto& p : ranked) total += p.aggregate_cv;
  std::vector<double> out;
  double acc = 0.0;
  for (const auto& p : ranked) {
    acc += p.aggregate_cv;
    out.push_back(total > 0.0 ? acc / total : 0.0);
  }
  return out;
}

}  // namespace perfskill
