#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "perfskill/harness.hpp"
#include "perfskill/sensitivity.hpp"

namespace perfskill {

using ParamPair = std::pair<std::string, std::string>;

// Balanced a x b factorial: cells[i][j] holds the usable values observed at
// (levels_a[i], levels_b[j]).
struct FactorialTable {
  ParamPair pair;
  std::vector<double> levels_a;
  std::vector<double> levels_b;
  std::vector<std::vector<std::vector<double>>> cells;
  std::string workload_id;

  std::size_t replicates() const;
  bool balanced() const;
};

// Throws AnalysisError unless the table is a balanced 2x2 or 4x4 (mixed
// 2x4 allowed) design with at least one value per cell.
void check_table(const FactorialTable& table);

struct AnovaDecomposition {
  double ss_a = 0.0;
  double ss_b = 0.0;
  double ss_interaction = 0.0;
  double ss_error = 0.0;
  double ss_total = 0.0;
  int df_a = 0;
  int df_b = 0;
  int df_interaction = 0;
  int df_error = 0;
  double f_interaction = 0.0;  // +inf when the interaction is exact
  double p_value = 1.0;

  bool operator==(const AnovaDecomposition&) const = default;
};

void to_json(nlohmann::json& j, const AnovaDecomposition& a);
void from_json(const nlohmann::json& j, AnovaDecomposition& a);

enum class StageVerdict { advance, independent, undetermined };
std::string to_string(StageVerdict v);
StageVerdict stage_verdict_from_string(std::string_view s);

struct InteractionThresholds {
  double advance_pct = 15.0;
  double independent_pct = 5.0;
  double eta_min = 0.15;
  double q_max = 0.05;
};

// All k(k-1)/2 unordered pairs, each lexicographically ordered, sorted.
std::vector<ParamPair> plan_pairs(const std::vector<std::string>& top_k);

// Coarse 2x2 interaction strength as a percentage of the grand mean.
double stage_a_int_pct(const FactorialTable& table);
StageVerdict stage_a_verdict(double int_pct, const InteractionThresholds& t = {});

// Balanced two-way fixed-effects ANOVA with an F test for the interaction.
AnovaDecomposition two_way_anova(const FactorialTable& table);

// SS_interaction / SS_total; 0 (with *warning set) when SS_total is 0.
double eta_squared(const AnovaDecomposition& d, bool* warning = nullptr);
// SS_interaction / (SS_interaction + SS_error).
double partial_eta_squared(const AnovaDecomposition& d);

struct WorkloadInteraction {
  std::string workload_id;
  double int_pct = 0.0;
  StageVerdict verdict = StageVerdict::undetermined;
  std::optional<AnovaDecomposition> anova;
  std::optional<double> eta_squared;
  std::optional<double> partial_eta_squared;
  std::optional<double> q_value;
  bool confirmed = false;
  bool operator==(const WorkloadInteraction&) const = default;
};

enum class ScreenStatus { screened, unsafe_to_screen };

struct InteractionRecord {
  ParamPair pair;
  ScreenStatus status = ScreenStatus::screened;
  double stage_a_int_pct = 0.0;  // max over workloads
  StageVerdict stage_a_verdict = StageVerdict::independent;
  // From the representative workload: the confirmed one with the largest
  // eta^2, else the tested one with the largest eta^2.
  std::optional<double> eta_squared;
  std::optional<double> partial_eta_squared;
  std::optional<double> p_value;
  std::optional<double> q_value;
  std::string representative_workload;
  bool confirmed = false;
  bool shrunk = false;
  std::string note;
  std::vector<WorkloadInteraction> per_workload;

  bool operator==(const InteractionRecord&) const = default;
};

void to_json(nlohmann::json& j, const InteractionRecord& r);
void from_json(const nlohmann::json& j, InteractionRecord& r);

// Factor levels for one pair.
struct PairDesign {
  ParamPair pair;
  std::vector<double> coarse_a;  // 2 levels
  std::vector<double> coarse_b;
  std::vector<double> fine_a;  // 4 levels (2 for small domains)
  std::vector<double> fine_b;
  bool shrunk = false;
};

// Coarse levels are the safe-range endpoints; fine levels are 4 uniformly
// spaced points within the safe range.
PairDesign design_pair(const ParameterSpace& space, const SensitivityProfile& a,
                       const SensitivityProfile& b);
// Pulls both safe ranges halfway toward the defaults.
PairDesign shrink_design(const ParameterSpace& space, const PairDesign& design);

std::vector<double> fine_levels(const ParameterSpec& spec, const SafeRange& range, int count = 4);

ExperimentPlan plan_factorial(const ParamPair& pair, const std::vector<double>& levels_a,
                              const std::vector<double>& levels_b, const std::string& workload,
                              int repetitions);

FactorialTable build_table(const MeasurementLog& log, const ParamPair& pair,
                           const std::vector<double>& levels_a,
                           const std::vector<double>& levels_b, const std::string& workload,
                           int repetitions);

struct ScreenOptions {
  InteractionThresholds thresholds;
  int coarse_repetitions = 1;
  int fine_repetitions = 3;
};

// Statistics for one pair from logged measurements, before FDR correction.
// Throws AnalysisError when a required table is unbalanced.
InteractionRecord screen_pair(const MeasurementLog& log, const PairDesign& design,
                              const std::vector<WorkloadSpec>& workloads,
                              const ScreenOptions& options);

// BH over every (pair, workload) Stage B p-value, then sets confirmations.
void apply_fdr(std::vector<InteractionRecord>& records, const InteractionThresholds& t);

struct ScreenStageRuns {
  std::size_t coarse_planned = 0;
  std::size_t coarse_executed = 0;
  std::size_t fine_planned = 0;
  std::size_t fine_executed = 0;
};

struct ScreenResult {
  std::vector<InteractionRecord> records;
  MeasurementLog log;
  ScreenStageRuns runs;
};

// Full two-stage screen over all top-k pairs, measuring through the adapter.
ScreenResult screen_interactions(Adapter& adapter, const std::vector<WorkloadSpec>& workloads,
                                 const std::vector<SensitivityProfile>& profiles,
                                 const std::vector<std::string>& top_k,
                                 const MeasurementLog& log, const RunPlanOptions& run_options,
                                 const ScreenOptions& options);

}  // namespace perfskill
