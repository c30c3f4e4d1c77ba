#pragma once

#include <string>
#include <vector>

#include "perfskill/document.hpp"

namespace perfskill {

struct CompilePolicy {
  std::string campaign_id = "campaign";
  double eta_threshold = 0.15;
  // Online endpoint delta must match the profiled one within
  // max(rel * |documented|, abs).
  double verify_rel_tol = 0.5;
  double verify_abs_tol = 0.02;
  int online_repetitions = 3;
  int grid_levels = 4;
  // A pass that moves the incumbent by less than this (relative) converges.
  double convergence_tol = 0.01;
  // Tuned/default ratio required on every secondary workload.
  double cross_workload_min_ratio = 0.95;
};

// Skill ids used by the compiler.
std::string parameter_skill_id(std::string_view parameter);
std::string adaptation_skill_id(std::string_view parameter);
std::string component_skill_id(std::string_view component);
inline constexpr std::string_view kRootSkillId = "orchestrate";
inline constexpr std::string_view kCrossWorkloadSkillId = "verify.cross_workload";

// profiles: every swept parameter (selected ones become per-parameter
// skills). optima may omit components; their grids then come from the safe
// ranges. Throws DocumentError when the inputs disagree with each other or
// the result fails validation.
ProceduralDocument compile_document(const ParameterSpace& space,
                                    const std::vector<WorkloadSpec>& workloads,
                                    const std::vector<SensitivityProfile>& profiles,
                                    const std::vector<InteractionRecord>& records,
                                    const CorrelationGraph& graph,
                                    const std::vector<ComponentResult>& optima,
                                    const CompilePolicy& policy = {});

struct ExportParameter {
  std::string name;
  int rank = 0;
  double cv = 0.0;
  std::string shape;
  double default_value = 0.0;
  double safe_lo = 0.0;
  double safe_hi = 0.0;
  bool operator==(const ExportParameter&) const = default;
};

struct ExportInteraction {
  std::string a;
  std::string b;
  double eta_squared = 0.0;
  std::string component;
  bool operator==(const ExportInteraction&) const = default;
};

struct KnowledgeExport {
  std::string format;
  std::string fingerprint;
  std::vector<ExportParameter> parameters;  // by rank
  std::vector<ExportInteraction> interactions;
  bool operator==(const KnowledgeExport&) const = default;
};

inline const std::vector<std::string>& export_formats() {
  static const std::vector<std::string> f = {"generic", "gptuner"};
  return f;
}

// Values are read from skill reference data, never recomputed.
KnowledgeExport knowledge_from_document(const ProceduralDocument& doc, std::string format);
// Throws ParameterError for an unknown format profile.
nlohmann::json export_knowledge(const ProceduralDocument& doc, const std::string& format);
KnowledgeExport parse_export(const nlohmann::json& j);

// Plain text rendering of the skills, one block per skill.
std::string render_document(const ProceduralDocument& doc);

}  // namespace perfskill
