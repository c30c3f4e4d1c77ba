#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "perfskill/document.hpp"
#include "perfskill/harness.hpp"

namespace perfskill {

enum class SessionStatus { running, converged, aborted };
std::string to_string(SessionStatus s);
SessionStatus session_status_from_string(std::string_view s);

// One evaluated expression with the values it read. Predicates yield 0 or 1.
struct Verdict {
  std::string expression;
  std::map<std::string, double> inputs;
  double value = 0.0;
  bool holds = false;
  bool operator==(const Verdict&) const = default;
};

struct TraceEvent {
  std::size_t seq = 0;
  std::string skill;
  int step = -1;  // -1 for skill-level events
  // enter, precondition, benchmark, measure, compute, compare, branch,
  // postcondition, decision, convergence, error
  std::string kind;
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  std::vector<Verdict> verdicts;
  double timestamp = 0.0;  // simulated seconds of benchmarking so far
  bool operator==(const TraceEvent&) const = default;
};

struct TuningSession {
  std::string document_fingerprint;
  std::string adapter_id;
  std::uint64_t seed = 0;
  SignalStore signals;  // builtins at the end of the session
  std::vector<TraceEvent> trace;
  SessionStatus status = SessionStatus::running;
  std::optional<Configuration> final_config;
  std::optional<double> final_metric;
  // Best configuration seen, kept even when the session aborts.
  std::optional<Configuration> incumbent;
  std::size_t trial_budget = 0;
  std::size_t trials_used = 0;
  int passes = 0;
  std::string diagnostic;
};

// Lets an external agent override the skill transition chosen from the
// decision criteria. Returning nullopt keeps the default.
class StepResolver {
 public:
  virtual ~StepResolver() = default;
  virtual std::optional<std::string> next_skill(const Skill& current, const SignalStore& signals,
                                                const std::string& chosen) = 0;
};

struct SessionOptions {
  std::size_t parallelism = 1;
  int max_passes = 8;
  StepResolver* resolver = nullptr;
  std::function<void(const TraceEvent&)> on_event;
};

// A trial is one benchmark of a (configuration, workload, repetitions) not
// already measured in this session. Throws DocumentError for an invalid
// document and ParameterError for a zero budget, before any benchmark.
TuningSession run_session(const ProceduralDocument& doc, Adapter& adapter,
                          std::size_t trial_budget, std::uint64_t seed,
                          const SessionOptions& options = {});

// Assignments equal to the default are dropped.
Configuration canonical_config(const ParameterSpace& space, const Configuration& c);

nlohmann::json event_json(const TraceEvent& e);
TraceEvent event_from_json(const nlohmann::json& j);

// Header line, one line per event, summary line.
std::string trace_jsonl(const TuningSession& s);
TuningSession parse_trace(std::string_view jsonl);
void save_trace(const std::filesystem::path& path, const TuningSession& s);
TuningSession load_trace(const std::filesystem::path& path);

struct ReplayResult {
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

// Re-evaluates every recorded expression from its recorded inputs. Throws
// DocumentError when the trace belongs to another document.
ReplayResult replay_session(const TuningSession& trace, const ProceduralDocument& doc);

}  // namespace perfskill
