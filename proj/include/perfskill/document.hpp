#pragma once

#include <optional>
#include <string>
#include <vector>

#include "perfskill/expression.hpp"
#include "perfskill/sensitivity.hpp"
#include "perfskill/topology.hpp"

namespace perfskill {

inline constexpr int kDocumentSchemaVersion = 1;

enum class SkillKind { parameter, component, orchestration, adaptation, verification };
enum class StepKind { benchmark, measure, compute, compare, branch };

std::string to_string(SkillKind k);
SkillKind skill_kind_from_string(std::string_view s);
std::string to_string(StepKind k);
StepKind step_kind_from_string(std::string_view s);

// One action. Which fields matter depends on kind:
//   benchmark  base + assignments (value expressions) on workload, r reps;
//              stores the mean in signal (optional) and adopts it as the
//              incumbent when adopt is set and it beats the incumbent
//   measure    benchmarks the incumbent as is into signal
//   compute    signal := expression
//   compare    signal := (lhs op rhs) ? 1 : 0
//   branch     jump to target when expression holds (target == size ends)
struct Step {
  StepKind kind = StepKind::compute;
  std::string signal;
  std::string base = "incumbent";
  std::map<std::string, std::string> assignments;
  std::string workload;  // empty: the document's primary workload
  int repetitions = 3;
  bool adopt = false;
  std::string expression;
  std::string lhs;
  std::string op;
  std::string rhs;
  int target = 0;
  std::optional<int> on_error;
  bool operator==(const Step&) const = default;
};

// First matching condition wins. Targets are skill ids or "@done" (end of
// pass) / "@abort".
struct DecisionCriterion {
  std::string condition;
  std::string target;
  bool operator==(const DecisionCriterion&) const = default;
};

inline constexpr std::string_view kDone = "@done";
inline constexpr std::string_view kAbort = "@abort";

struct Skill {
  std::string id;
  SkillKind kind = SkillKind::parameter;
  std::string summary;
  std::vector<std::string> preconditions;
  std::vector<Step> procedure;
  std::vector<DecisionCriterion> decision_criteria;
  std::vector<std::string> postconditions;
  std::string on_postcondition_failure;  // empty: abort
  ReferenceData reference_data;
  bool operator==(const Skill&) const = default;
};

struct Provenance {
  std::string campaign;
  std::string operation;
  bool operator==(const Provenance&) const = default;
};

struct DocumentFingerprint {
  std::string space_hash;  // 16 hex digits
  std::string campaign_id;
  bool operator==(const DocumentFingerprint&) const = default;
};

struct ProceduralDocument {
  int schema_version = kDocumentSchemaVersion;
  DocumentFingerprint fingerprint;
  ParameterSpace space;
  std::vector<WorkloadSpec> workloads;  // first is primary
  std::vector<SensitivityProfile> profiles;
  CorrelationGraph graph;
  std::string root;
  std::vector<Skill> skills;
  std::vector<std::pair<std::string, std::string>> edges;
  // Keyed "<skill id>/<reference key>".
  std::map<std::string, Provenance> provenance;

  const Skill* find_skill(std::string_view id) const;
  const SensitivityProfile* find_profile(std::string_view parameter) const;
  bool operator==(const ProceduralDocument&) const = default;
};

// Signals maintained by the executor and visible to every skill.
const std::vector<std::string>& builtin_signals();

std::string hex64(std::uint64_t v);

// Edges implied by decision criteria and adaptation targets, sorted.
std::vector<std::pair<std::string, std::string>> derive_edges(const std::vector<Skill>& skills);

// Skill ids in dependency order; throws DocumentError naming the cycle.
std::vector<std::string> topological_order(const ProceduralDocument& doc);

struct DocumentReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Every check runs; the report lists all violations found.
DocumentReport validate_document(const ProceduralDocument& doc);

nlohmann::json document_json(const ProceduralDocument& doc);
// Sorted keys, two-space indent, trailing newline.
std::string serialize_document(const ProceduralDocument& doc);
ProceduralDocument parse_document(const nlohmann::json& j);
ProceduralDocument parse_document_text(std::string_view text);
// FNV-1a of the canonical serialization, as hex.
std::string document_digest(const ProceduralDocument& doc);

}  // namespace perfskill
