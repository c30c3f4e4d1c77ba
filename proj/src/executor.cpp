#include "perfskill/executor.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "perfskill/error.hpp"

namespace perfskill {

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::running:
      return "running";
    case SessionStatus::converged:
      return "converged";
    case SessionStatus::aborted:
      return "aborted";
  }
  return "?";
}

SessionStatus session_status_from_string(std::string_view s) {
  if (s == "running") return SessionStatus::running;
  if (s == "converged") return SessionStatus::converged;
  if (s == "aborted") return SessionStatus::aborted;
  throw ParameterError("unknown session status " + std::string(s));
}

Configuration canonical_config(const ParameterSpace& space, const Configuration& c) {
  Configuration out;
  for (const auto& [name, v] : c.assignments()) {
    const auto* spec = space.find(name);
    if (!spec || v != spec->default_value) out.set(name, v);
  }
  return out;
}

namespace {

// Unwinds the interpreter to the session level.
struct Abort {
  std::string diagnostic;
};

struct BenchKey {
  Configuration config;
  std::string workload;
  int repetitions;
  bool operator<(const BenchKey& o) const {
    return std::tie(config.assignments(), workload, repetitions) <
           std::tie(o.config.assignments(), o.workload, o.repetitions);
  }
  bool operator==(const BenchKey&) const = default;
};

struct BenchResult {
  std::optional<double> mean;
  std::string diagnostic;
};

class Interpreter {
 public:
  Interpreter(const ProceduralDocument& doc, Adapter& adapter, std::size_t budget,
              std::uint64_t seed, const SessionOptions& options)
      : doc_(doc), adapter_(adapter), options_(options) {
    s_.document_fingerprint = document_digest(doc);
    s_.adapter_id = adapter.id();
    s_.seed = seed;
    s_.trial_budget = budget;
    direction_ = doc.workloads.front().direction;
  }

  TuningSession run() {
    try {
      for (int pass = 1;; ++pass) {
        s_.passes = pass;
        const std::optional<double> start = incumbent_metric_;
        std::string current = doc_.root;
        for (;;) {
          const std::string next = run_skill(*doc_.find_skill(current));
          if (next == kAbort) throw Abort{"skill " + current + " routed to " + next};
          if (next == kDone) break;
          current = next;
        }
        pass_improvement_ = start && incumbent_metric_
                                ? std::abs(*incumbent_metric_ - *start) / std::abs(*start)
                                : 1.0;
        const Skill& root = *doc_.find_skill(doc_.root);
        TraceEvent ev = event(root.id, -1, "convergence");
        ev.inputs["pass"] = pass;
        bool all = true;
        for (const auto& p : root.postconditions) all = check(root, p, ev) && all;
        ev.outputs["converged"] = all;
        emit(std::move(ev));
        if (all) {
          s_.status = SessionStatus::converged;
          s_.final_config = incumbent_.value_or(Configuration{});
          s_.final_metric = incumbent_metric_;
          if (!validate_configuration(doc_.space, *s_.final_config).ok()) {
            throw Abort{"final configuration fails validation"};
          }
          break;
        }
        if (pass >= options_.max_passes) {
          throw Abort{"no convergence within " + std::to_string(options_.max_passes) +
                      " passes"};
        }
      }
    } catch (const Abort& a) {
      s_.status = SessionStatus::aborted;
      s_.diagnostic = a.diagnostic;
      TraceEvent ev = event(current_skill_, -1, "error");
      ev.outputs["diagnostic"] = a.diagnostic;
      emit(std::move(ev));
    }
    s_.incumbent = incumbent_;
    s_.signals = builtins();
    return std::move(s_);
  }

 private:
  SignalStore builtins() const {
    SignalStore b;
    if (incumbent_metric_) b["incumbent_metric"] = *incumbent_metric_;
    b["pass_improvement"] = pass_improvement_;
    b["pass_index"] = s_.passes;
    b["trials_used"] = static_cast<double>(s_.trials_used);
    b["trial_budget"] = static_cast<double>(s_.trial_budget);
    return b;
  }

  SignalStore visible() const {
    SignalStore all = builtins();
    for (const auto& [k, v] : locals_) all[k] = v;
    return all;
  }

  TraceEvent event(const std::string& skill, int step, std::string kind) {
    TraceEvent e;
    e.skill = skill;
    e.step = step;
    e.kind = std::move(kind);
    return e;
  }

  void emit(TraceEvent e) {
    e.seq = s_.trace.size();
    e.timestamp = clock_;
    if (options_.on_event) options_.on_event(e);
    s_.trace.push_back(std::move(e));
  }

  // Evaluates an expression, recording the values it read.
  double eval(const Skill& skill, const std::string& text, TraceEvent& ev, bool predicate) {
    const SignalStore sig = visible();
    Verdict v;
    v.expression = text;
    try {
      const auto e = Expression::parse(text);
      for (const auto& sym : e.symbols()) {
        if (auto it = sig.find(sym); it != sig.end()) {
          v.inputs[sym] = it->second;
          continue;
        }
        auto it = skill.reference_data.find(sym);
        if (it == skill.reference_data.end()) {
          throw EvalError("unresolved symbol " + sym, sym);
        }
        if (const double* d = std::get_if<double>(&it->second)) {
          v.inputs[sym] = *d;
        } else {
          throw EvalError("symbol " + sym + " is not numeric", sym);
        }
      }
      v.value = e.evaluate(v.inputs, {});
    } catch (const std::exception& err) {
      ev.verdicts.push_back(v);
      ev.outputs["error"] = err.what();
      emit(ev);
      throw Abort{"skill " + skill.id + ": cannot evaluate \"" + text + "\": " + err.what()};
    }
    if (predicate) v.value = v.value != 0.0 ? 1.0 : 0.0;
    v.holds = v.value != 0.0;
    ev.verdicts.push_back(v);
    return v.value;
  }

  bool check(const Skill& skill, const std::string& text, TraceEvent& ev) {
    return eval(skill, text, ev, true) != 0.0;
  }

  BenchResult benchmark(const Configuration& config, const std::string& workload, int r) {
    const BenchKey key{config, workload, r};
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    if (s_.trials_used >= s_.trial_budget) {
      throw Abort{"trial budget of " + std::to_string(s_.trial_budget) + " exhausted"};
    }
    ++s_.trials_used;
    ExperimentPlan plan;
    for (int i = 0; i < r; ++i) plan.push_back({config, workload, i});
    RunPlanOptions opts;
    opts.parallelism = options_.parallelism;
    opts.seed = s_.seed;
    opts.tag_degraded = false;
    const auto log = run_plan(adapter_, doc_.workloads, plan, opts);
    BenchResult res;
    double sum = 0.0;
    bool ok = true;
    for (const auto& m : log.records()) {
      clock_ += m.wall_time;
      if (m.outcome != Outcome::ok) {
        ok = false;
        if (res.diagnostic.empty()) {
          res.diagnostic = to_string(m.outcome) + (m.diagnostic.empty() ? "" : ": " + m.diagnostic);
        }
      } else {
        sum += *m.metric_value;
      }
    }
    if (ok) res.mean = sum / r;
    cache_[key] = res;
    return res;
  }

  // Every benchmarked value must lie in its documented safe range, and
  // parameters without a profile stay at their defaults.
  void check_safe(const Configuration& config) const {
    for (const auto& [name, v] : config.assignments()) {
      const auto* prof = doc_.find_profile(name);
      if (!prof) throw Abort{"parameter " + name + " has no documented safe range"};
      if (!prof->safe_range.contains(v)) {
        throw Abort{"configuration " + config.to_string() + " leaves the safe range of " + name};
      }
    }
  }

  // Returns the next step index.
  int run_step(const Skill& skill, int pc) {
    const Step& st = skill.procedure[pc];
    TraceEvent ev = event(skill.id, pc, to_string(st.kind));
    switch (st.kind) {
      case StepKind::benchmark:
      case StepKind::measure: {
        Configuration config =
            st.kind == StepKind::measure || st.base == "incumbent"
                ? incumbent_.value_or(Configuration{})
                : Configuration{};
        for (const auto& [p, expr] : st.assignments) config.set(p, eval(skill, expr, ev, false));
        config = canonical_config(doc_.space, config);
        const std::string workload = st.workload.empty() ? doc_.workloads.front().id : st.workload;
        ev.inputs = {{"config", config}, {"workload", workload}, {"repetitions", st.repetitions}};
        if (auto v = validate_configuration(doc_.space, config); !v.ok()) {
          emit(ev);
          throw Abort{"skill " + skill.id + " step " + std::to_string(pc) +
                      ": invalid configuration: " + v.violations.front().message};
        }
        check_safe(config);
        const std::size_t before = s_.trials_used;
        const BenchResult res = benchmark(config, workload, st.repetitions);
        ev.outputs["cached"] = s_.trials_used == before;
        if (!res.mean) {
          ev.outputs["error"] = res.diagnostic;
          emit(std::move(ev));
          if (st.on_error) return *st.on_error;
          throw Abort{"skill " + skill.id + " step " + std::to_string(pc) +
                      ": benchmark failed: " + res.diagnostic};
        }
        ev.outputs["metric"] = *res.mean;
        if (!st.signal.empty()) locals_[st.signal] = *res.mean;
        if (st.adopt) {
          const bool wins = !incumbent_metric_ || better(direction_, *res.mean, *incumbent_metric_);
          if (wins) {
            incumbent_ = config;
            incumbent_metric_ = *res.mean;
          }
          ev.outputs["adopted"] = wins;
        }
        emit(std::move(ev));
        return pc + 1;
      }
      case StepKind::compute: {
        const double v = eval(skill, st.expression, ev, false);
        locals_[st.signal] = v;
        ev.outputs[st.signal] = v;
        emit(std::move(ev));
        return pc + 1;
      }
      case StepKind::compare: {
        const double v = eval(skill, st.lhs + " " + st.op + " " + st.rhs, ev, true);
        locals_[st.signal] = v;
        ev.outputs[st.signal] = v;
        emit(std::move(ev));
        return pc + 1;
      }
      case StepKind::branch: {
        const bool taken = check(skill, st.expression, ev);
        ev.outputs["taken"] = taken;
        emit(std::move(ev));
        return taken ? st.target : pc + 1;
      }
    }
    return pc + 1;
  }

  // Runs one skill and returns the next skill id or action.
  std::string run_skill(const Skill& skill) {
    current_skill_ = skill.id;
    locals_.clear();
    emit(event(skill.id, -1, "enter"));
    if (!skill.preconditions.empty()) {
      TraceEvent ev = event(skill.id, -1, "precondition");
      bool all = true;
      for (const auto& p : skill.preconditions) all = check(skill, p, ev) && all;
      emit(std::move(ev));
      if (!all) throw Abort{"skill " + skill.id + ": precondition failed"};
    }
    const int n = static_cast<int>(skill.procedure.size());
    std::size_t executed = 0;
    for (int pc = 0; pc < n;) {
      if (++executed > 100000) throw Abort{"skill " + skill.id + ": procedure does not terminate"};
      pc = run_step(skill, pc);
    }
    // The root's postconditions describe a whole pass and are checked at its end.
    if (skill.id != doc_.root && !skill.postconditions.empty()) {
      TraceEvent ev = event(skill.id, -1, "postcondition");
      bool all = true;
      for (const auto& p : skill.postconditions) all = check(skill, p, ev) && all;
      ev.outputs["holds"] = all;
      if (!all) {
        ev.outputs["next"] = skill.on_postcondition_failure;
        emit(std::move(ev));
        if (skill.on_postcondition_failure.empty()) {
          throw Abort{"skill " + skill.id + ": postcondition failed"};
        }
        return skill.on_postcondition_failure;
      }
      emit(std::move(ev));
    }
    std::string next(kDone);
    TraceEvent ev = event(skill.id, -1, "decision");
    for (const auto& c : skill.decision_criteria) {
      if (check(skill, c.condition, ev)) {
        next = c.target;
        break;
      }
      if (&c == &skill.decision_criteria.back()) {
        emit(std::move(ev));
        throw Abort{"skill " + skill.id + ": no decision criterion matched"};
      }
    }
    if (options_.resolver) {
      if (auto o = options_.resolver->next_skill(skill, visible(), next)) {
        if (*o != kDone && *o != kAbort && !doc_.find_skill(*o)) {
          emit(std::move(ev));
          throw Abort{"step resolver chose unknown skill " + *o};
        }
        ev.inputs["resolver_override"] = *o;
        next = *o;
      }
    }
    ev.outputs["next"] = next;
    emit(std::move(ev));
    return next;
  }

  const ProceduralDocument& doc_;
  Adapter& adapter_;
  const SessionOptions& options_;
  TuningSession s_;
  Direction direction_ = Direction::maximize;
  SignalStore locals_;
  std::optional<Configuration> incumbent_;
  std::optional<double> incumbent_metric_;
  double pass_improvement_ = 1.0;
  double clock_ = 0.0;
  std::string current_skill_;
  std::map<BenchKey, BenchResult> cache_;
};

}  // namespace

TuningSession run_session(const ProceduralDocument& doc, Adapter& adapter,
                          std::size_t trial_budget, std::uint64_t seed,
                          const SessionOptions& options) {
  if (auto report = validate_document(doc); !report.ok()) {
    std::string msg = "document rejected:";
    for (const auto& v : report.violations) msg += "\n  " + v;
    throw DocumentError(msg);
  }
  if (trial_budget < 1) throw ParameterError("trial budget must be >= 1");
  if (!(adapter.space() == doc.space)) {
    throw DocumentError("adapter parameter space differs from the document's");
  }
  return Interpreter(doc, adapter, trial_budget, seed, options).run();
}

nlohmann::json event_json(const TraceEvent& e) {
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& v : e.verdicts) {
    verdicts.push_back(
        {{"expression", v.expression}, {"inputs", v.inputs}, {"value", v.value}, {"holds", v.holds}});
  }
  return {{"seq", e.seq},         {"skill", e.skill},     {"step", e.step},
          {"kind", e.kind},       {"inputs", e.inputs},   {"outputs", e.outputs},
          {"verdicts", verdicts}, {"timestamp", e.timestamp}};
}

TraceEvent event_from_json(const nlohmann::json& j) {
  TraceEvent e;
  e.seq = j.at("seq").get<std::size_t>();
  e.skill = j.at("skill").get<std::string>();
  e.step = j.at("step").get<int>();
  e.kind = j.at("kind").get<std::string>();
  e.inputs = j.at("inputs");
  e.outputs = j.at("outputs");
  for (const auto& v : j.at("verdicts")) {
    e.verdicts.push_back({v.at("expression").get<std::string>(),
                          v.at("inputs").get<std::map<std::string, double>>(),
                          v.at("value").get<double>(), v.at("holds").get<bool>()});
  }
  e.timestamp = j.at("timestamp").get<double>();
  return e;
}

std::string trace_jsonl(const TuningSession& s) {
  std::string out;
  nlohmann::json header = {{"type", "header"},
                           {"document", s.document_fingerprint},
                           {"adapter", s.adapter_id},
                           {"seed", s.seed},
                           {"trial_budget", s.trial_budget}};
  out += header.dump() + "\n";
  for (const auto& e : s.trace) {
    auto j = event_json(e);
    j["type"] = "event";
    out += j.dump() + "\n";
  }
  nlohmann::json summary = {{"type", "summary"},
                            {"status", to_string(s.status)},
                            {"trials_used", s.trials_used},
                            {"passes", s.passes},
                            {"signals", s.signals},
                            {"diagnostic", s.diagnostic}};
  summary["final_config"] = s.final_config ? nlohmann::json(*s.final_config) : nlohmann::json();
  summary["final_metric"] = s.final_metric ? nlohmann::json(*s.final_metric) : nlohmann::json();
  summary["incumbent"] = s.incumbent ? nlohmann::json(*s.incumbent) : nlohmann::json();
  out += summary.dump() + "\n";
  return out;
}

TuningSession parse_trace(std::string_view jsonl) {
  TuningSession s;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        s.document_fingerprint = j.at("document").get<std::string>();
        s.adapter_id = j.at("adapter").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.trial_budget = j.at("trial_budget").get<std::size_t>();
        header = true;
      } else if (type == "event") {
        s.trace.push_back(event_from_json(j));
      } else if (type == "summary") {
        s.status = session_status_from_string(j.at("status").get<std::string>());
        s.trials_used = j.at("trials_used").get<std::size_t>();
        s.passes = j.at("passes").get<int>();
        s.signals = j.at("signals").get<SignalStore>();
        s.diagnostic = j.at("diagnostic").get<std::string>();
        if (!j.at("final_config").is_null()) s.final_config = j.at("final_config").get<Configuration>();
        if (!j.at("final_metric").is_null()) s.final_metric = j.at("final_metric").get<double>();
        if (!j.at("incumbent").is_null()) s.incumbent = j.at("incumbent").get<Configuration>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DocumentError(std::string("malformed trace: ") + e.what());
  }
  if (!header) throw DocumentError("trace has no header line");
  return s;
}

void save_trace(const std::filesystem::path& path, const TuningSession& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw AdapterError("cannot write " + path.string());
  out << trace_jsonl(s);
}

TuningSession load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DocumentError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_trace(buf.str());
}

ReplayResult replay_session(const TuningSession& trace, const ProceduralDocument& doc) {
  const auto digest = document_digest(doc);
  if (trace.document_fingerprint != digest) {
    throw DocumentError("trace was recorded against document " + trace.document_fingerprint +
                        ", not " + digest);
  }
  ReplayResult r;
  for (const auto& e : trace.trace) {
    if (!e.skill.empty() && !doc.find_skill(e.skill)) {
      r.mismatches.push_back("event " + std::to_string(e.seq) + ": unknown skill " + e.skill);
      continue;
    }
    for (const auto& v : e.verdicts) {
      const std::string where = "event " + std::to_string(e.seq) + " (" + e.skill + " " +
                                e.kind + "): \"" + v.expression + "\"";
      try {
        double value = Expression::parse(v.expression).evaluate(v.inputs, {});
        const bool predicate = e.kind != "compute" && !(e.kind == "benchmark" || e.kind == "measure");
        if (predicate) value = value != 0.0 ? 1.0 : 0.0;
        if (value != v.value || (value != 0.0) != v.holds) {
          r.mismatches.push_back(where + " recorded " + format_number(v.value) + ", replayed " +
                                 format_number(value));
        }
      } catch (const EvalError& err) {
        if (!e.outputs.contains("error")) {
          r.mismatches.push_back(where + " no longer evaluates: " + err.what());
        }
      }
    }
  }
  return r;
}

}  // namespace perfskill
