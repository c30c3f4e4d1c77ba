#pragma once

#include <map>
#include <string>
#include <vector>

#include "perfskill/interaction.hpp"

namespace perfskill {

struct GraphEdge {
  std::string a;
  std::string b;
  double eta_squared = 0.0;
  double p_value = 1.0;
  double q_value = 1.0;
  bool operator==(const GraphEdge&) const = default;
};

struct Component {
  std::string id;
  std::vector<std::string> members;  // sorted
  bool operator==(const Component&) const = default;
};

struct CorrelationGraph {
  std::vector<std::string> nodes;
  std::vector<GraphEdge> edges;
  // Partition of nodes, ordered by smallest member name; ids C1..Cm.
  std::vector<Component> components;

  const Component& component_of(std::string_view node) const;
  // Largest edge weight inside the component, 0 for singletons.
  double max_eta(const Component& c) const;
  bool operator==(const CorrelationGraph&) const = default;
};

void to_json(nlohmann::json& j, const CorrelationGraph& g);
void from_json(const nlohmann::json& j, CorrelationGraph& g);

// Edge for every confirmed record between top-k nodes; components by union-find.
CorrelationGraph build_graph(const std::vector<std::string>& top_k,
                             const std::vector<InteractionRecord>& records);

struct JointSearchPlan {
  std::vector<std::string> component;
  std::map<std::string, std::vector<double>> grid;
  int repetitions = 3;
  std::vector<std::string> workloads;
  // Values for parameters outside the component (empty = defaults).
  Configuration pinned;

  // prod(levels) x repetitions x workloads
  std::size_t budget() const;
  // Grid points in lexicographic order of level indices.
  std::vector<Configuration> grid_points() const;
  // Grid runs plus the all-defaults baseline runs.
  ExperimentPlan experiment_plan() const;
};

inline constexpr std::size_t kDefaultComponentCap = 5;

// Full-factorial grid over the component's safe ranges (4 levels each, 2
// for small domains). Throws AnalysisError above the size cap.
JointSearchPlan plan_joint_search(const ParameterSpace& space,
                                  const std::vector<std::string>& component,
                                  const std::vector<SensitivityProfile>& profiles, int levels,
                                  int repetitions, const std::vector<WorkloadSpec>& workloads,
                                  std::size_t cap = kDefaultComponentCap,
                                  Configuration pinned = {});

struct JointOptimum {
  std::vector<std::string> component;
  Configuration best_config;  // component members only
  double best_metric = 0.0;   // mean on the first workload
  // Mean over workloads of the direction-aware ratio to the baseline.
  double objective = 0.0;
  double improvement_vs_default = 0.0;  // objective - 1
  std::map<std::string, double> metric_per_workload;
  std::size_t valid_points = 0;
  bool operator==(const JointOptimum&) const = default;
};

void to_json(nlohmann::json& j, const JointOptimum& o);
void from_json(const nlohmann::json& j, JointOptimum& o);

struct SearchRuns {
  std::size_t planned = 0;
  std::size_t executed = 0;
};

// Measures the plan (reusing cells already in log) and returns the grid point
// with the best objective; ties go to the lexicographically smallest config.
JointOptimum optimize_component(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                const JointSearchPlan& plan, MeasurementLog& log,
                                const RunPlanOptions& run_options, SearchRuns* runs = nullptr);

// Each member tuned alone over its grid levels (others pinned), then the
// individual optima combined and measured.
JointOptimum independent_baseline(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                  const JointSearchPlan& plan, MeasurementLog& log,
                                  const RunPlanOptions& run_options, SearchRuns* runs = nullptr);

struct ComponentResult {
  Component component;
  JointSearchPlan plan;
  JointOptimum joint;
  JointOptimum independent;
};

void to_json(nlohmann::json& j, const ComponentResult& c);
void from_json(const nlohmann::json& j, ComponentResult& c);

struct JointStageResult {
  std::vector<ComponentResult> components;  // multi-node components only
  SearchRuns runs;
};

JointStageResult optimize_components(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                     const CorrelationGraph& graph,
                                     const std::vector<SensitivityProfile>& profiles,
                                     int repetitions, MeasurementLog& log,
                                     const RunPlanOptions& run_options,
                                     std::size_t cap = kDefaultComponentCap);

}  // namespace perfskill
