#include "perfskill/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "perfskill/error.hpp"
#include "perfskill/stats.hpp"

namespace perfskill {

std::size_t FactorialTable::replicates() const {
  if (cells.empty() || cells.front().empty()) return 0;
  return cells.front().front().size();
}

bool FactorialTable::balanced() const {
  const std::size_t r = replicates();
  if (r == 0 || cells.size() != levels_a.size()) return false;
  for (const auto& row : cells) {
    if (row.size() != levels_b.size()) return false;
    for (const auto& cell : row) {
      if (cell.size() != r) return false;
    }
  }
  return true;
}

void check_table(const FactorialTable& t) {
  auto valid_levels = [](std::size_t n) { return n == 2 || n == 4; };
  if (!valid_levels(t.levels_a.size()) || !valid_levels(t.levels_b.size())) {
    throw AnalysisError("pair " + t.pair.first + "x" + t.pair.second +
                        ": factorial levels must be 2 or 4 per factor");
  }
  if (!t.balanced()) {
    throw AnalysisError("pair " + t.pair.first + "x" + t.pair.second + " on " + t.workload_id +
                        ": unbalanced factorial table");
  }
}

void to_json(nlohmann::json& j, const AnovaDecomposition& a) {
  j = {{"ss_a", a.ss_a},
       {"ss_b", a.ss_b},
       {"ss_interaction", a.ss_interaction},
       {"ss_error", a.ss_error},
       {"ss_total", a.ss_total},
       {"df_a", a.df_a},
       {"df_b", a.df_b},
       {"df_interaction", a.df_interaction},
       {"df_error", a.df_error},
       {"p_value", a.p_value}};
  j["f_interaction"] = std::isfinite(a.f_interaction) ? nlohmann::json(a.f_interaction)
                                                      : nlohmann::json("inf");
}

void from_json(const nlohmann::json& j, AnovaDecomposition& a) {
  a.ss_a = j.at("ss_a").get<double>();
  a.ss_b = j.at("ss_b").get<double>();
  a.ss_interaction = j.at("ss_interaction").get<double>();
  a.ss_error = j.at("ss_error").get<double>();
  a.ss_total = j.at("ss_total").get<double>();
  a.df_a = j.at("df_a").get<int>();
  a.df_b = j.at("df_b").get<int>();
  a.df_interaction = j.at("df_interaction").get<int>();
  a.df_error = j.at("df_error").get<int>();
  a.p_value = j.at("p_value").get<double>();
  const auto& f = j.at("f_interaction");
  a.f_interaction = f.is_string() ? std::numeric_limits<double>::infinity() : f.get<double>();
}

std::string to_string(StageVerdict v) {
  switch (v) {
    case StageVerdict::advance:
      return "advance";
    case StageVerdict::independent:
      return "independent";
    case StageVerdict::undetermined:
      return "undetermined";
  }
  return "?";
}

StageVerdict stage_verdict_from_string(std::string_view s) {
  if (s == "advance") return StageVerdict::advance;
  if (s == "independent") return StageVerdict::independent;
  if (s == "undetermined") return StageVerdict::undetermined;
  throw ParameterError("unknown stage verdict " + std::string(s));
}

std::vector<ParamPair> plan_pairs(const std::vector<std::string>& top_k) {
  if (top_k.size() < 2) throw AnalysisError("pair screening needs at least 2 parameters");
  std::vector<ParamPair> out;
  for (std::size_t i = 0; i < top_k.size(); ++i) {
    for (std::size_t j = i + 1; j < top_k.size(); ++j) {
      if (top_k[i] == top_k[j]) throw ParameterError("duplicate parameter " + top_k[i]);
      out.push_back(std::minmax(top_k[i], top_k[j]));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

double cell_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double stage_a_int_pct(const FactorialTable& t) {
  if (t.levels_a.size() != 2 || t.levels_b.size() != 2) {
    throw AnalysisError("stage A needs a 2x2 table");
  }
  check_table(t);
  const double mm = cell_mean(t.cells[0][0]);
  const double mp = cell_mean(t.cells[0][1]);
  const double pm = cell_mean(t.cells[1][0]);
  const double pp = cell_mean(t.cells[1][1]);
  const double grand = std::abs(pp + pm + mp + mm) / 4.0;
  if (grand == 0.0) {
    throw AnalysisError("pair " + t.pair.first + "x" + t.pair.second + ": zero grand mean");
  }
  return 100.0 * std::abs(pp - pm - mp + mm) / grand;
}

StageVerdict stage_a_verdict(double int_pct, const InteractionThresholds& t) {
  if (int_pct > t.advance_pct) return StageVerdict::advance;
  if (int_pct < t.independent_pct) return StageVerdict::independent;
  return StageVerdict::undetermined;
}

AnovaDecomposition two_way_anova(const FactorialTable& t) {
  check_table(t);
  const std::size_t a = t.levels_a.size();
  const std::size_t b = t.levels_b.size();
  const std::size_t r = t.replicates();
  if (r < 2) throw AnalysisError("two-way ANOVA needs at least 2 replicates per cell");

  double grand = 0.0;
  for (const auto& row : t.cells) {
    for (const auto& cell : row) {
      for (double y : cell) grand += y;
    }
  }
  grand /= static_cast<double>(a * b * r);

  // Work on centered values to limit cancellation.
  std::vector<std::vector<double>> cell(a, std::vector<double>(b));
  std::vector<double> row_mean(a, 0.0);
  std::vector<double> col_mean(b, 0.0);
  AnovaDecomposition d;
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (double y : t.cells[i][j]) {
        const double c = y - grand;
        s += c;
        d.ss_total += c * c;
      }
      cell[i][j] = s / static_cast<double>(r);
      row_mean[i] += cell[i][j] / static_cast<double>(b);
      col_mean[j] += cell[i][j] / static_cast<double>(a);
    }
  }
  for (std::size_t i = 0; i < a; ++i) d.ss_a += row_mean[i] * row_mean[i];
  d.ss_a *= static_cast<double>(b * r);
  for (std::size_t j = 0; j < b; ++j) d.ss_b += col_mean[j] * col_mean[j];
  d.ss_b *= static_cast<double>(a * r);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double inter = cell[i][j] - row_mean[i] - col_mean[j];
      d.ss_interaction += inter * inter;
      for (double y : t.cells[i][j]) {
        const double e = (y - grand) - cell[i][j];
        d.ss_error += e * e;
      }
    }
  }
  d.ss_interaction *= static_cast<double>(r);

  d.df_a = static_cast<int>(a - 1);
  d.df_b = static_cast<int>(b - 1);
  d.df_interaction = static_cast<int>((a - 1) * (b - 1));
  d.df_error = static_cast<int>(a * b * (r - 1));

  // Sums below this are rounding residue of an exact zero.
  const double negligible = 1e-12 * d.ss_total;
  const bool no_interaction = d.ss_interaction <= negligible;
  const bool no_error = d.ss_error <= negligible;
  if (d.ss_total == 0.0 || (no_error && no_interaction)) {
    d.f_interaction = 0.0;
    d.p_value = 1.0;
  } else if (no_error) {
    d.f_interaction = std::numeric_limits<double>::infinity();
    d.p_value = 0.0;
  } else {
    d.f_interaction = (d.ss_interaction / d.df_interaction) / (d.ss_error / d.df_error);
    d.p_value = f_upper_tail_p(d.f_interaction, d.df_interaction, d.df_error);
  }
  return d;
}

double eta_squared(const AnovaDecomposition& d, bool* warning) {
  if (warning) *warning = false;
  if (!(d.ss_total > 0.0)) {
    if (warning) *warning = true;
    return 0.0;
  }
  return std::clamp(d.ss_interaction / d.ss_total, 0.0, 1.0);
}

double partial_eta_squared(const AnovaDecomposition& d) {
  const double denom = d.ss_interaction + d.ss_error;
  return denom > 0.0 ? d.ss_interaction / denom : 0.0;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const InteractionRecord& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& w : r.per_workload) {
    nlohmann::json e{{"workload", w.workload_id},
                     {"int_pct", w.int_pct},
                     {"verdict", to_string(w.verdict)},
                     {"eta_squared", opt(w.eta_squared)},
                     {"partial_eta_squared", opt(w.partial_eta_squared)},
                     {"q_value", opt(w.q_value)},
                     {"confirmed", w.confirmed}};
    e["anova"] = w.anova ? nlohmann::json(*w.anova) : nlohmann::json(nullptr);
    per.push_back(e);
  }
  j = {{"a", r.pair.first},
       {"b", r.pair.second},
       {"status", r.status == ScreenStatus::screened ? "screened" : "unsafe-to-screen"},
       {"stage_a_int_pct", r.stage_a_int_pct},
       {"stage_a_verdict", to_string(r.stage_a_verdict)},
       {"eta_squared", opt(r.eta_squared)},
       {"partial_eta_squared", opt(r.partial_eta_squared)},
       {"p_value", opt(r.p_value)},
       {"q_value", opt(r.q_value)},
       {"representative_workload", r.representative_workload},
       {"confirmed", r.confirmed},
       {"shrunk", r.shrunk},
       {"note", r.note},
       {"per_workload", per}};
}

void from_json(const nlohmann::json& j, InteractionRecord& r) {
  r = InteractionRecord{};
  r.pair = {j.at("a").get<std::string>(), j.at("b").get<std::string>()};
  r.status = j.at("status").get<std::string>() == "screened" ? ScreenStatus::screened
                                                             : ScreenStatus::unsafe_to_screen;
  r.stage_a_int_pct = j.at("stage_a_int_pct").get<double>();
  r.stage_a_verdict = stage_verdict_from_string(j.at("stage_a_verdict").get<std::string>());
  r.eta_squared = opt_from(j, "eta_squared");
  r.partial_eta_squared = opt_from(j, "partial_eta_squared");
  r.p_value = opt_from(j, "p_value");
  r.q_value = opt_from(j, "q_value");
  r.representative_workload = j.at("representative_workload").get<std::string>();
  r.confirmed = j.at("confirmed").get<bool>();
  r.shrunk = j.value("shrunk", false);
  r.note = j.value("note", std::string{});
  for (const auto& e : j.at("per_workload")) {
    WorkloadInteraction w;
    w.workload_id = e.at("workload").get<std::string>();
    w.int_pct = e.at("int_pct").get<double>();
    w.verdict = stage_verdict_from_string(e.at("verdict").get<std::string>());
    w.eta_squared = opt_from(e, "eta_squared");
    w.partial_eta_squared = opt_from(e, "partial_eta_squared");
    w.q_value = opt_from(e, "q_value");
    w.confirmed = e.at("confirmed").get<bool>();
    if (!e.at("anova").is_null()) w.anova = e.at("anova").get<AnovaDecomposition>();
    r.per_workload.push_back(std::move(w));
  }
}

std::vector<double> fine_levels(const ParameterSpec& spec, const SafeRange& range, int count) {
  if (!(range.lo < range.hi)) return {range.lo};
  const auto restricted = restrict_domain(spec, range.lo, range.hi);
  int n = count;
  if (spec.kind != DomainKind::continuous) {
    const auto distinct = static_cast<int>(range.hi - range.lo) + 1;
    if (distinct < n) n = 2;
  }
  auto levels = level_grid(restricted, n);
  if (levels.size() != static_cast<std::size_t>(n)) levels = level_grid(restricted, 2);
  return levels;
}

PairDesign design_pair(const ParameterSpace& space, const SensitivityProfile& a,
                       const SensitivityProfile& b) {
  const auto& pa = a.parameter < b.parameter ? a : b;
  const auto& pb = a.parameter < b.parameter ? b : a;
  PairDesign d;
  d.pair = {pa.parameter, pb.parameter};
  d.coarse_a = {pa.safe_range.lo, pa.safe_range.hi};
  d.coarse_b = {pb.safe_range.lo, pb.safe_range.hi};
  d.fine_a = fine_levels(space.at(pa.parameter), pa.safe_range);
  d.fine_b = fine_levels(space.at(pb.parameter), pb.safe_range);
  return d;
}

namespace {

SafeRange shrink_toward_default(const ParameterSpec& spec, double lo, double hi) {
  const double def = std::clamp(spec.default_value, lo, hi);
  double nlo = 0.5 * (lo + def);
  double nhi = 0.5 * (hi + def);
  if (spec.kind != DomainKind::continuous) {
    nlo = std::floor(nlo);
    nhi = std::ceil(nhi);
  }
  return {nlo, nhi};
}

}  // namespace

PairDesign shrink_design(const ParameterSpace& space, const PairDesign& design) {
  PairDesign d = design;
  const auto& sa = space.at(design.pair.first);
  const auto& sb = space.at(design.pair.second);
  const auto ra = shrink_toward_default(sa, design.coarse_a.front(), design.coarse_a.back());
  const auto rb = shrink_toward_default(sb, design.coarse_b.front(), design.coarse_b.back());
  d.coarse_a = {ra.lo, ra.hi};
  d.coarse_b = {rb.lo, rb.hi};
  d.fine_a = fine_levels(sa, ra);
  d.fine_b = fine_levels(sb, rb);
  d.shrunk = true;
  return d;
}

ExperimentPlan plan_factorial(const ParamPair& pair, const std::vector<double>& levels_a,
                              const std::vector<double>& levels_b, const std::string& workload,
                              int repetitions) {
  ExperimentPlan plan;
  for (double va : levels_a) {
    for (double vb : levels_b) {
      for (int r = 0; r < repetitions; ++r) {
        plan.push_back({Configuration{{pair.first, va}, {pair.second, vb}}, workload, r});
      }
    }
  }
  return plan;
}

FactorialTable build_table(const MeasurementLog& log, const ParamPair& pair,
                           const std::vector<double>& levels_a,
                           const std::vector<double>& levels_b, const std::string& workload,
                           int repetitions) {
  FactorialTable t;
  t.pair = pair;
  t.levels_a = levels_a;
  t.levels_b = levels_b;
  t.workload_id = workload;
  t.cells.assign(levels_a.size(), std::vector<std::vector<double>>(levels_b.size()));
  for (std::size_t i = 0; i < levels_a.size(); ++i) {
    for (std::size_t j = 0; j < levels_b.size(); ++j) {
      const Configuration c{{pair.first, levels_a[i]}, {pair.second, levels_b[j]}};
      auto records = log.select(c, workload);
      std::sort(records.begin(), records.end(),
                [](const auto* x, const auto* y) { return x->repetition < y->repetition; });
      for (const auto* m : records) {
        if (m->repetition < repetitions && m->outcome == Outcome::ok) {
          t.cells[i][j].push_back(*m->metric_value);
        }
      }
    }
  }
  return t;
}

namespace {

bool usable_table(const FactorialTable& t, int repetitions) {
  return t.balanced() && t.replicates() == static_cast<std::size_t>(repetitions);
}

bool has_fine_design(const PairDesign& d) {
  return d.fine_a.size() >= 2 && d.fine_b.size() >= 2;
}

}  // namespace

InteractionRecord screen_pair(const MeasurementLog& log, const PairDesign& design,
                              const std::vector<WorkloadSpec>& workloads,
                              const ScreenOptions& options) {
  InteractionRecord rec;
  rec.pair = design.pair;
  rec.shrunk = design.shrunk;
  rec.stage_a_int_pct = -1.0;
  for (const auto& w : workloads) {
    WorkloadInteraction wi;
    wi.workload_id = w.id;
    const auto coarse = build_table(log, design.pair, design.coarse_a, design.coarse_b, w.id,
                                     options.coarse_repetitions);
    if (!usable_table(coarse, options.coarse_repetitions)) {
      throw AnalysisError("pair " + design.pair.first + "x" + design.pair.second + " on " +
                          w.id + ": unbalanced coarse table");
    }
    wi.int_pct = stage_a_int_pct(coarse);
    wi.verdict = stage_a_verdict(wi.int_pct, options.thresholds);
    if (wi.int_pct > rec.stage_a_int_pct) rec.stage_a_int_pct = wi.int_pct;
    if (wi.verdict != StageVerdict::independent && has_fine_design(design)) {
      const auto fine = build_table(log, design.pair, design.fine_a, design.fine_b, w.id,
                                     options.fine_repetitions);
      if (!usable_table(fine, options.fine_repetitions)) {
        throw AnalysisError("pair " + design.pair.first + "x" + design.pair.second + " on " +
                            w.id + ": unbalanced fine table");
      }
      wi.anova = two_way_anova(fine);
      wi.eta_squared = eta_squared(*wi.anova);
      wi.partial_eta_squared = partial_eta_squared(*wi.anova);
    }
    rec.per_workload.push_back(std::move(wi));
  }
  rec.stage_a_verdict = stage_a_verdict(rec.stage_a_int_pct, options.thresholds);
  return rec;
}

void apply_fdr(std::vector<InteractionRecord>& records, const InteractionThresholds& t) {
  std::vector<double> p;
  std::vector<WorkloadInteraction*> tested;
  for (auto& r : records) {
    for (auto& w : r.per_workload) {
      if (w.anova) {
        p.push_back(w.anova->p_value);
        tested.push_back(&w);
      }
    }
  }
  const auto q = benjamini_hochberg(p);
  for (std::size_t i = 0; i < tested.size(); ++i) {
    tested[i]->q_value = q[i];
    tested[i]->confirmed = *tested[i]->eta_squared > t.eta_min && q[i] < t.q_max;
  }
  for (auto& r : records) {
    r.confirmed = false;
    const WorkloadInteraction* rep = nullptr;
    for (const auto& w : r.per_workload) {
      if (!w.anova) continue;
      const bool better_rep = !rep || (w.confirmed && !rep->confirmed) ||
                              (w.confirmed == rep->confirmed && *w.eta_squared > *rep->eta_squared);
      if (better_rep) rep = &w;
    }
    if (rep) {
      r.confirmed = rep->confirmed;
      r.eta_squared = rep->eta_squared;
      r.partial_eta_squared = rep->partial_eta_squared;
      r.p_value = rep->anova->p_value;
      r.q_value = rep->q_value;
      r.representative_workload = rep->workload_id;
    }
  }
}

ScreenResult screen_interactions(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                 const std::vector<SensitivityProfile>& profiles,
                                 const std::vector<std::string>& top_k,
                                 const MeasurementLog& log, const RunPlanOptions& run_options,
                                 const ScreenOptions& options) {
  const auto& space = adapter.space();
  std::map<std::string, const SensitivityProfile*> by_name;
  for (const auto& p : profiles) by_name[p.parameter] = &p;

  ScreenResult result;
  result.log = log;
  if (top_k.size() < 2) return result;

  auto run = [&](const ExperimentPlan& plan, std::size_t& planned, std::size_t& executed) {
    RunPlanOptions opts = run_options;
    opts.existing = &result.log;
    RunPlanStats stats;
    result.log = run_plan(adapter, workloads, plan, opts, &stats);
    planned += plan.size();
    executed += stats.executed;
  };
  auto coarse_plan = [&](const PairDesign& d) {
    ExperimentPlan plan;
    for (const auto& w : workloads) {
      auto part = plan_factorial(d.pair, d.coarse_a, d.coarse_b, w.id,
                                 options.coarse_repetitions);
      plan.insert(plan.end(), part.begin(), part.end());
    }
    return plan;
  };
  auto coarse_ok = [&](const PairDesign& d) {
    for (const auto& w : workloads) {
      if (!usable_table(build_table(result.log, d.pair, d.coarse_a, d.coarse_b, w.id,
                                    options.coarse_repetitions),
                        options.coarse_repetitions)) {
        return false;
      }
    }
    return true;
  };
  auto advancing = [&](const PairDesign& d) {
    std::vector<std::string> out;
    if (!has_fine_design(d)) return out;
    for (const auto& w : workloads) {
      const auto t = build_table(result.log, d.pair, d.coarse_a, d.coarse_b, w.id,
                                    options.coarse_repetitions);
      if (stage_a_verdict(stage_a_int_pct(t), options.thresholds) != StageVerdict::independent) {
        out.push_back(w.id);
      }
    }
    return out;
  };
  auto fine_plan = [&](const PairDesign& d, const std::vector<std::string>& ws) {
    ExperimentPlan plan;
    for (const auto& w : ws) {
      auto part = plan_factorial(d.pair, d.fine_a, d.fine_b, w, options.fine_repetitions);
      plan.insert(plan.end(), part.begin(), part.end());
    }
    return plan;
  };
  auto fine_ok = [&](const PairDesign& d, const std::vector<std::string>& ws) {
    for (const auto& w : ws) {
      if (!usable_table(build_table(result.log, d.pair, d.fine_a, d.fine_b, w,
                                    options.fine_repetitions),
                        options.fine_repetitions)) {
        return false;
      }
    }
    return true;
  };

  std::vector<PairDesign> designs;
  for (const auto& pair : plan_pairs(top_k)) {
    designs.push_back(design_pair(space, *by_name.at(pair.first), *by_name.at(pair.second)));
  }
  std::vector<bool> unsafe(designs.size(), false);

  // Stage A, with one shrink-and-retry for unbalanced pairs.
  {
    ExperimentPlan plan;
    for (const auto& d : designs) {
      auto part = coarse_plan(d);
      plan.insert(plan.end(), part.begin(), part.end());
    }
    run(plan, result.runs.coarse_planned, result.runs.coarse_executed);
    ExperimentPlan retry;
    std::vector<std::size_t> retried;
    for (std::size_t i = 0; i < designs.size(); ++i) {
      if (coarse_ok(designs[i])) continue;
      designs[i] = shrink_design(space, designs[i]);
      auto part = coarse_plan(designs[i]);
      retry.insert(retry.end(), part.begin(), part.end());
      retried.push_back(i);
    }
    if (!retry.empty()) run(retry, result.runs.coarse_planned, result.runs.coarse_executed);
    for (auto i : retried) unsafe[i] = !coarse_ok(designs[i]);
  }

  // Stage B for every (pair, workload) that was not marked independent.
  {
    ExperimentPlan plan;
    for (std::size_t i = 0; i < designs.size(); ++i) {
      if (unsafe[i]) continue;
      auto part = fine_plan(designs[i], advancing(designs[i]));
      plan.insert(plan.end(), part.begin(), part.end());
    }
    run(plan, result.runs.fine_planned, result.runs.fine_executed);
    for (std::size_t i = 0; i < designs.size(); ++i) {
      if (unsafe[i] || fine_ok(designs[i], advancing(designs[i]))) continue;
      if (designs[i].shrunk) {
        unsafe[i] = true;
        continue;
      }
      designs[i] = shrink_design(space, designs[i]);
      run(coarse_plan(designs[i]), result.runs.coarse_planned, result.runs.coarse_executed);
      if (!coarse_ok(designs[i])) {
        unsafe[i] = true;
        continue;
      }
      const auto ws = advancing(designs[i]);
      run(fine_plan(designs[i], ws), result.runs.fine_planned, result.runs.fine_executed);
      unsafe[i] = !fine_ok(designs[i], ws);
    }
  }

  for (std::size_t i = 0; i < designs.size(); ++i) {
    if (unsafe[i]) {
      InteractionRecord rec;
      rec.pair = designs[i].pair;
      rec.status = ScreenStatus::unsafe_to_screen;
      rec.stage_a_verdict = StageVerdict::undetermined;
      rec.shrunk = true;
      rec.note = "factorial cells crashed even after shrinking toward defaults";
      result.records.push_back(std::move(rec));
      continue;
    }
    result.records.push_back(screen_pair(result.log, designs[i], workloads, options));
  }
  apply_fdr(result.records, options.thresholds);
  return result;
}

}  // namespace perfskill
