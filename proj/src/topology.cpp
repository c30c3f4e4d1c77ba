#include "perfskill/topology.hpp"

#include <algorithm>
#include <numeric>

#include "perfskill/error.hpp"

namespace perfskill {

const Component& CorrelationGraph::component_of(std::string_view node) const {
  for (const auto& c : components) {
    if (std::find(c.members.begin(), c.members.end(), node) != c.members.end()) return c;
  }
  throw ParameterError("node " + std::string(node) + " not in graph");
}

double CorrelationGraph::max_eta(const Component& c) const {
  double best = 0.0;
  for (const auto& e : edges) {
    if (std::find(c.members.begin(), c.members.end(), e.a) != c.members.end()) {
      best = std::max(best, e.eta_squared);
    }
  }
  return best;
}

void to_json(nlohmann::json& j, const CorrelationGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) {
    edges.push_back({{"a", e.a}, {"b", e.b}, {"eta_squared", e.eta_squared},
                     {"p_value", e.p_value}, {"q_value", e.q_value}});
  }
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : g.components) comps.push_back({{"id", c.id}, {"members", c.members}});
  j = {{"nodes", g.nodes}, {"edges", edges}, {"components", comps}};
}

void from_json(const nlohmann::json& j, CorrelationGraph& g) {
  g = CorrelationGraph{};
  g.nodes = j.at("nodes").get<std::vector<std::string>>();
  for (const auto& e : j.at("edges")) {
    g.edges.push_back({e.at("a").get<std::string>(), e.at("b").get<std::string>(),
                       e.at("eta_squared").get<double>(), e.at("p_value").get<double>(),
                       e.at("q_value").get<double>()});
  }
  for (const auto& c : j.at("components")) {
    g.components.push_back(
        {c.at("id").get<std::string>(), c.at("members").get<std::vector<std::string>>()});
  }
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

CorrelationGraph build_graph(const std::vector<std::string>& top_k,
                             const std::vector<InteractionRecord>& records) {
  CorrelationGraph g;
  g.nodes = top_k;
  std::vector<std::string> sorted = top_k;
  std::sort(sorted.begin(), sorted.end());
  auto index_of = [&](const std::string& n) -> std::optional<std::size_t> {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), n);
    if (it == sorted.end() || *it != n) return std::nullopt;
    return static_cast<std::size_t>(it - sorted.begin());
  };
  UnionFind uf(sorted.size());
  for (const auto& r : records) {
    if (!r.confirmed) continue;
    auto ia = index_of(r.pair.first);
    auto ib = index_of(r.pair.second);
    if (!ia || !ib) continue;
    g.edges.push_back({r.pair.first, r.pair.second, *r.eta_squared, *r.p_value, *r.q_value});
    uf.unite(*ia, *ib);
  }
  std::sort(g.edges.begin(), g.edges.end(),
            [](const auto& x, const auto& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  // Sorted node order makes each root the smallest member, so components
  // come out ordered by smallest member name.
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < sorted.size(); ++i) groups[uf.find(i)].push_back(sorted[i]);
  int id = 1;
  for (auto& [root, members] : groups) {
    g.components.push_back({"C" + std::to_string(id++), std::move(members)});
  }
  return g;
}

std::size_t JointSearchPlan::budget() const {
  std::size_t points = 1;
  for (const auto& name : component) points *= grid.at(name).size();
  return points * static_cast<std::size_t>(repetitions) * workloads.size();
}

std::vector<Configuration> JointSearchPlan::grid_points() const {
  std::vector<Configuration> out;
  std::vector<std::size_t> idx(component.size(), 0);
  for (;;) {
    Configuration c = pinned;
    for (std::size_t k = 0; k < component.size(); ++k) {
      c.set(component[k], grid.at(component[k])[idx[k]]);
    }
    out.push_back(std::move(c));
    std::size_t k = component.size();
    while (k > 0) {
      --k;
      if (++idx[k] < grid.at(component[k]).size()) break;
      idx[k] = 0;
      if (k == 0) return out;
    }
    if (component.empty()) return out;
  }
}

ExperimentPlan JointSearchPlan::experiment_plan() const {
  ExperimentPlan plan;
  for (const auto& w : workloads) {
    for (int r = 0; r < repetitions; ++r) plan.push_back({Configuration{}, w, r});
  }
  for (const auto& c : grid_points()) {
    for (const auto& w : workloads) {
      for (int r = 0; r < repetitions; ++r) {
        PlanEntry e{c, w, r};
        if (std::find(plan.begin(), plan.end(), e) == plan.end()) plan.push_back(std::move(e));
      }
    }
  }
  return plan;
}

JointSearchPlan plan_joint_search(const ParameterSpace& space,
                                  const std::vector<std::string>& component,
                                  const std::vector<SensitivityProfile>& profiles, int levels,
                                  int repetitions, const std::vector<WorkloadSpec>& workloads,
                                  std::size_t cap, Configuration pinned) {
  if (component.empty()) throw AnalysisError("joint search over an empty component");
  if (component.size() > cap) {
    throw AnalysisError("component of size " + std::to_string(component.size()) +
                        " exceeds cap " + std::to_string(cap) +
                        "; decompose it manually before joint search");
  }
  if (levels < 2 || levels > 9) throw ParameterError("joint search levels must be in [2,9]");
  if (repetitions < 1) throw ParameterError("joint search repetitions must be >= 1");
  JointSearchPlan plan;
  plan.component = component;
  std::sort(plan.component.begin(), plan.component.end());
  plan.repetitions = repetitions;
  for (const auto& w : workloads) plan.workloads.push_back(w.id);
  for (const auto& name : plan.component) {
    auto it = std::find_if(profiles.begin(), profiles.end(),
                           [&](const auto& p) { return p.parameter == name; });
    if (it == profiles.end()) throw AnalysisError("no sensitivity profile for " + name);
    plan.grid[name] = fine_levels(space.at(name), it->safe_range, levels);
    pinned.erase(name);
  }
  plan.pinned = std::move(pinned);
  return plan;
}

void to_json(nlohmann::json& j, const JointOptimum& o) {
  j = {{"component", o.component},
       {"best_config", o.best_config},
       {"best_metric", o.best_metric},
       {"objective", o.objective},
       {"improvement_vs_default", o.improvement_vs_default},
       {"metric_per_workload", o.metric_per_workload},
       {"valid_points", o.valid_points}};
}

void from_json(const nlohmann::json& j, JointOptimum& o) {
  o.component = j.at("component").get<std::vector<std::string>>();
  o.best_config = j.at("best_config").get<Configuration>();
  o.best_metric = j.at("best_metric").get<double>();
  o.objective = j.at("objective").get<double>();
  o.improvement_vs_default = j.at("improvement_vs_default").get<double>();
  o.metric_per_workload = j.at("metric_per_workload").get<std::map<std::string, double>>();
  o.valid_points = j.at("valid_points").get<std::size_t>();
}

namespace {

struct PointScore {
  double objective = 0.0;
  std::map<std::string, double> means;
};

std::optional<double> point_mean(const MeasurementLog& log, const Configuration& c,
                                 const std::string& workload, int repetitions) {
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < repetitions; ++r) {
    const auto* m = log.find(key_of(c, workload, r));
    if (!m) continue;
    if (m->outcome == Outcome::crash || m->outcome == Outcome::timeout) return std::nullopt;
    sum += *m->metric_value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::optional<PointScore> score_point(const MeasurementLog& log, const Configuration& c,
                                      const std::vector<WorkloadSpec>& workloads,
                                      const std::vector<std::string>& ids,
                                      const std::map<std::string, double>& baselines,
                                      int repetitions) {
  PointScore s;
  for (const auto& id : ids) {
    auto mean = point_mean(log, c, id, repetitions);
    if (!mean) return std::nullopt;
    const auto& w = find_workload(workloads, id);
    s.means[id] = *mean;
    s.objective += w.direction == Direction::maximize ? *mean / baselines.at(id)
                                                      : baselines.at(id) / *mean;
  }
  s.objective /= static_cast<double>(ids.size());
  return s;
}

std::map<std::string, double> plan_baselines(const MeasurementLog& log,
                                             const JointSearchPlan& plan) {
  std::map<std::string, double> out;
  for (const auto& w : plan.workloads) {
    auto b = point_mean(log, Configuration{}, w, plan.repetitions);
    if (!b || !(*b > 0.0)) throw AnalysisError("joint search: no usable baseline on " + w);
    out[w] = *b;
  }
  return out;
}

void measure(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
             const ExperimentPlan& plan, MeasurementLog& log, const RunPlanOptions& run_options,
             SearchRuns* runs) {
  RunPlanOptions opts = run_options;
  opts.existing = &log;
  RunPlanStats stats;
  log = run_plan(adapter, workloads, plan, opts, &stats);
  if (runs) {
    runs->planned += plan.size();
    runs->executed += stats.executed;
  }
}

Configuration members_only(const Configuration& c, const std::vector<std::string>& members) {
  Configuration out;
  for (const auto& m : members) {
    if (auto v = c.get(m)) out.set(m, *v);
  }
  return out;
}

JointOptimum make_optimum(const JointSearchPlan& plan, const Configuration& config,
                          const PointScore& score, std::size_t valid) {
  JointOptimum o;
  o.component = plan.component;
  o.best_config = members_only(config, plan.component);
  o.best_metric = score.means.at(plan.workloads.front());
  o.objective = score.objective;
  o.improvement_vs_default = score.objective - 1.0;
  o.metric_per_workload = score.means;
  o.valid_points = valid;
  return o;
}

}  // namespace

JointOptimum optimize_component(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                const JointSearchPlan& plan, MeasurementLog& log,
                                const RunPlanOptions& run_options, SearchRuns* runs) {
  measure(adapter, workloads, plan.experiment_plan(), log, run_options, runs);
  const auto baselines = plan_baselines(log, plan);
  std::optional<PointScore> best;
  Configuration best_config;
  std::size_t valid = 0;
  for (const auto& c : plan.grid_points()) {
    auto s = score_point(log, c, workloads, plan.workloads, baselines, plan.repetitions);
    if (!s) continue;
    ++valid;
    const bool wins = !best || s->objective > best->objective ||
                      (s->objective == best->objective && c < best_config);
    if (wins) {
      best = std::move(s);
      best_config = c;
    }
  }
  if (!best) throw AnalysisError("joint search: every grid point crashed");
  return make_optimum(plan, best_config, *best, valid);
}

JointOptimum independent_baseline(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                  const JointSearchPlan& plan, MeasurementLog& log,
                                  const RunPlanOptions& run_options, SearchRuns* runs) {
  ExperimentPlan sweeps;
  for (const auto& w : plan.workloads) {
    for (int r = 0; r < plan.repetitions; ++r) sweeps.push_back({Configuration{}, w, r});
  }
  auto add = [&](const Configuration& c) {
    for (const auto& w : plan.workloads) {
      for (int r = 0; r < plan.repetitions; ++r) {
        PlanEntry e{c, w, r};
        if (std::find(sweeps.begin(), sweeps.end(), e) == sweeps.end()) sweeps.push_back(e);
      }
    }
  };
  for (const auto& name : plan.component) {
    for (double v : plan.grid.at(name)) add(overlay(plan.pinned, Configuration{{name, v}}));
  }
  measure(adapter, workloads, sweeps, log, run_options, runs);
  const auto baselines = plan_baselines(log, plan);

  Configuration combined = plan.pinned;
  for (const auto& name : plan.component) {
    std::optional<double> best;
    double best_value = 0.0;
    for (double v : plan.grid.at(name)) {
      auto s = score_point(log, overlay(plan.pinned, Configuration{{name, v}}), workloads,
                           plan.workloads, baselines, plan.repetitions);
      if (s && (!best || s->objective > *best)) {
        best = s->objective;
        best_value = v;
      }
    }
    if (!best) throw AnalysisError("independent search: every level of " + name + " crashed");
    combined.set(name, best_value);
  }
  ExperimentPlan final_runs;
  for (const auto& w : plan.workloads) {
    for (int r = 0; r < plan.repetitions; ++r) final_runs.push_back({combined, w, r});
  }
  measure(adapter, workloads, final_runs, log, run_options, runs);
  auto s = score_point(log, combined, workloads, plan.workloads, baselines, plan.repetitions);
  if (!s) throw AnalysisError("independent combination crashed");
  return make_optimum(plan, combined, *s, 1);
}

void to_json(nlohmann::json& j, const ComponentResult& c) {
  nlohmann::json grid = nlohmann::json::object();
  for (const auto& [name, levels] : c.plan.grid) grid[name] = levels;
  j = {{"id", c.component.id},
       {"members", c.component.members},
       {"grid", grid},
       {"budget", c.plan.budget()},
       {"repetitions", c.plan.repetitions},
       {"workloads", c.plan.workloads},
       {"joint", c.joint},
       {"independent", c.independent},
       {"joint_gain_over_independent", c.joint.objective - c.independent.objective}};
}

void from_json(const nlohmann::json& j, ComponentResult& c) {
  c.component.id = j.at("id").get<std::string>();
  c.component.members = j.at("members").get<std::vector<std::string>>();
  c.plan = JointSearchPlan{};
  c.plan.component = c.component.members;
  c.plan.grid = j.at("grid").get<std::map<std::string, std::vector<double>>>();
  c.plan.repetitions = j.at("repetitions").get<int>();
  c.plan.workloads = j.at("workloads").get<std::vector<std::string>>();
  c.joint = j.at("joint").get<JointOptimum>();
  c.independent = j.at("independent").get<JointOptimum>();
}

JointStageResult optimize_components(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                     const CorrelationGraph& graph,
                                     const std::vector<SensitivityProfile>& profiles,
                                     int repetitions, MeasurementLog& log,
                                     const RunPlanOptions& run_options, std::size_t cap) {
  JointStageResult result;
  for (const auto& comp : graph.components) {
    if (comp.members.size() < 2) continue;
    ComponentResult cr;
    cr.component = comp;
    cr.plan = plan_joint_search(adapter.space(), comp.members, profiles, 4, repetitions,
                                workloads, cap);
    cr.joint = optimize_component(adapter, workloads, cr.plan, log, run_options, &result.runs);
    cr.independent =
        independent_baseline(adapter, workloads, cr.plan, log, run_options, &result.runs);
    result.components.push_back(std::move(cr));
  }
  return result;
}

}  // namespace perfskill
