#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perfskill/harness.hpp"

namespace perfskill {

struct LevelStats {
  double value = 0.0;
  std::size_t ok = 0;
  std::optional<double> mean;  // over ok repetitions only
  double variance = 0.0;       // sample variance, 0 when ok < 2
  std::size_t crashed = 0;
  std::size_t timed_out = 0;
  std::size_t degraded = 0;

  std::size_t excluded() const { return crashed + timed_out + degraded; }
  bool usable() const { return mean.has_value(); }
};

// One parameter swept with everything else at defaults, on one workload.
struct SweepResult {
  std::string parameter;
  std::string workload_id;
  double default_value = 0.0;
  std::vector<LevelStats> levels;
};

// Sweep built from bare level means (one repetition each).
SweepResult sweep_from_means(std::string parameter, const std::vector<double>& levels,
                             const std::vector<double>& means, double default_value);

// Level count actually used for spec when the campaign default is `requested`.
int sweep_level_count(const ParameterSpec& spec, int requested);
std::vector<double> sweep_levels(const ParameterSpec& spec, int requested);

// Per workload: r all-defaults baseline runs, then for each parameter every
// level x repetition with only that parameter assigned.
ExperimentPlan plan_sweep(const ParameterSpace& space, const std::vector<WorkloadSpec>& workloads,
                          int levels_per_param, int repetitions);

SweepResult collect_sweep(const MeasurementLog& log, const ParameterSpec& spec,
                          const std::string& workload, const std::vector<double>& levels);

// (max level mean - min level mean) / baseline_mean over usable levels.
double compute_cv(const SweepResult& sweep, double baseline_mean);

enum class CurveShape { monotonic_up, monotonic_down, non_monotonic, step_function, flat };

std::string to_string(CurveShape s);
CurveShape curve_shape_from_string(std::string_view s);

struct ShapeResult {
  CurveShape shape = CurveShape::flat;
  bool warning = false;  // too few usable levels to classify
};

ShapeResult classify_shape(const SweepResult& sweep, double baseline_mean,
                           double flat_tol = 0.02, double step_frac = 0.6);

// Closed interval of parameter values (ordinals for enum/boolean).
struct SafeRange {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const SafeRange&) const = default;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

// Index of the level nearest the parameter default (ties go low).
std::size_t default_level_index(const SweepResult& sweep);

// Inclusive level-index span around the default level in which no level has
// crash/timeout/degraded records and every ok mean is >= 0.5 * baseline.
std::pair<std::size_t, std::size_t> safe_level_span(const SweepResult& sweep,
                                                    double baseline_mean,
                                                    Direction direction = Direction::maximize);

SafeRange extract_safe_range(const SweepResult& sweep, double baseline_mean,
                             Direction direction = Direction::maximize);

struct WorkloadSensitivity {
  double cv = 0.0;
  CurveShape shape = CurveShape::flat;
  // (mean at safe hi - mean at safe lo) / baseline, signed.
  double endpoint_delta = 0.0;
  double baseline = 0.0;
  int rank = 0;
  std::size_t excluded = 0;
  std::vector<std::optional<double>> level_means;
  bool operator==(const WorkloadSensitivity&) const = default;
};

struct SensitivityProfile {
  std::string parameter;
  std::map<std::string, WorkloadSensitivity> per_workload;
  double aggregate_cv = 0.0;
  CurveShape shape = CurveShape::flat;
  std::string shape_workload;
  SafeRange safe_range;
  std::vector<double> levels;
  int rank = 0;
  bool selected = false;
  std::vector<std::string> warnings;

  double cv(const std::string& workload) const { return per_workload.at(workload).cv; }
  bool operator==(const SensitivityProfile&) const = default;
};

void to_json(nlohmann::json& j, const SensitivityProfile& p);
void from_json(const nlohmann::json& j, SensitivityProfile& p);

// {a : aggregate_cv_a > tau_s} sorted by descending CV, ties by name.
std::vector<SensitivityProfile> select_top_k(const std::vector<SensitivityProfile>& profiles,
                                             double tau_s);

// Assigns rank (1-based, descending CV, ties by name) and selected flags,
// overall and per workload, and reorders profiles by rank.
void rank_profiles(std::vector<SensitivityProfile>& profiles, double tau_s);

struct SensitivityOptions {
  double tau_s = 0.05;
  double flat_tol = 0.02;
  double step_frac = 0.6;
  int levels_per_param = 5;
};

// Profiles for every parameter of the space, ranked.
std::vector<SensitivityProfile> analyze_sensitivity(const ParameterSpace& space,
                                                    const std::vector<WorkloadSpec>& workloads,
                                                    const MeasurementLog& log,
                                                    const SensitivityOptions& options);

// Fraction of the summed CV captured by the first n ranked profiles.
std::vector<double> cumulative_cv_share(const std::vector<SensitivityProfile>& ranked);

}  // namespace perfskill
