#include "perfskill/document.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "perfskill/error.hpp"
#include "perfskill/hash.hpp"

namespace perfskill {

namespace {

constexpr std::pair<SkillKind, std::string_view> kSkillKinds[] = {
    {SkillKind::parameter, "per-parameter"},
    {SkillKind::component, "per-component"},
    {SkillKind::orchestration, "orchestration"},
    {SkillKind::adaptation, "adaptation"},
    {SkillKind::verification, "verification"}};

constexpr std::pair<StepKind, std::string_view> kStepKinds[] = {
    {StepKind::benchmark, "benchmark"}, {StepKind::measure, "measure"},
    {StepKind::compute, "compute"},     {StepKind::compare, "compare"},
    {StepKind::branch, "branch"}};

bool is_action(std::string_view t) { return t == kDone || t == kAbort; }

}  // namespace

std::string to_string(SkillKind k) {
  for (const auto& [kind, name] : kSkillKinds) {
    if (kind == k) return std::string(name);
  }
  return "?";
}

SkillKind skill_kind_from_string(std::string_view s) {
  for (const auto& [kind, name] : kSkillKinds) {
    if (name == s) return kind;
  }
  throw DocumentError("unknown skill kind " + std::string(s));
}

std::string to_string(StepKind k) {
  for (const auto& [kind, name] : kStepKinds) {
    if (kind == k) return std::string(name);
  }
  return "?";
}

StepKind step_kind_from_string(std::string_view s) {
  for (const auto& [kind, name] : kStepKinds) {
    if (name == s) return kind;
  }
  throw DocumentError("unknown step kind " + std::string(s));
}

const std::vector<std::string>& builtin_signals() {
  static const std::vector<std::string> names = {"incumbent_metric", "pass_improvement",
                                                 "pass_index", "trials_used", "trial_budget"};
  return names;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const Skill* ProceduralDocument::find_skill(std::string_view id) const {
  for (const auto& s : skills) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const SensitivityProfile* ProceduralDocument::find_profile(std::string_view parameter) const {
  for (const auto& p : profiles) {
    if (p.parameter == parameter) return &p;
  }
  return nullptr;
}

std::vector<std::pair<std::string, std::string>> derive_edges(const std::vector<Skill>& skills) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& s : skills) {
    for (const auto& c : s.decision_criteria) {
      if (!is_action(c.target)) out.emplace(s.id, c.target);
    }
    if (!s.on_postcondition_failure.empty() && !is_action(s.on_postcondition_failure)) {
      out.emplace(s.id, s.on_postcondition_failure);
    }
  }
  return {out.begin(), out.end()};
}

namespace {

// Adjacency restricted to targets that exist.
std::map<std::string, std::vector<std::string>> adjacency(const ProceduralDocument& doc) {
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& s : doc.skills) adj[s.id];
  for (const auto& [a, b] : derive_edges(doc.skills)) {
    if (adj.count(b)) adj[a].push_back(b);
  }
  return adj;
}

// One cycle as a closed path, or empty.
std::vector<std::string> find_cycle(const std::map<std::string, std::vector<std::string>>& adj) {
  std::map<std::string, int> color;
  std::vector<std::string> stack;
  std::vector<std::string> cycle;
  std::function<bool(const std::string&)> dfs = [&](const std::string& u) {
    color[u] = 1;
    stack.push_back(u);
    for (const auto& v : adj.at(u)) {
      if (color[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        cycle.assign(it, stack.end());
        cycle.push_back(v);
        return true;
      }
      if (color[v] == 0 && dfs(v)) return true;
    }
    stack.pop_back();
    color[u] = 2;
    return false;
  };
  for (const auto& [u, _] : adj) {
    if (color[u] == 0 && dfs(u)) return cycle;
  }
  return {};
}

std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> topological_order(const ProceduralDocument& doc) {
  const auto adj = adjacency(doc);
  if (auto cycle = find_cycle(adj); !cycle.empty()) {
    throw DocumentError("skill graph has a cycle: " + join(cycle, " -> "));
  }
  std::map<std::string, int> indegree;
  for (const auto& [u, vs] : adj) {
    indegree[u];
    for (const auto& v : vs) ++indegree[v];
  }
  std::vector<std::string> order;
  std::set<std::string> ready;
  for (const auto& [u, d] : indegree) {
    if (d == 0) ready.insert(u);
  }
  while (!ready.empty()) {
    auto u = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(u);
    for (const auto& v : adj.at(u)) {
      if (--indegree[v] == 0) ready.insert(v);
    }
  }
  return order;
}

DocumentReport validate_document(const ProceduralDocument& doc) {
  DocumentReport r;
  auto add = [&](std::string v) { r.violations.push_back(std::move(v)); };

  if (doc.schema_version != kDocumentSchemaVersion) {
    add("unsupported schema_version " + std::to_string(doc.schema_version));
  }
  if (doc.fingerprint.space_hash != hex64(doc.space.hash())) {
    add("fingerprint space hash does not match the embedded space");
  }
  if (doc.fingerprint.campaign_id.empty()) add("fingerprint has no campaign id");
  if (doc.workloads.empty()) add("document lists no workloads");

  std::set<std::string> ids;
  std::vector<std::string> roots;
  for (const auto& s : doc.skills) {
    if (!ids.insert(s.id).second) add("duplicate skill id " + s.id);
    if (s.kind == SkillKind::orchestration) roots.push_back(s.id);
  }
  if (roots.size() != 1) {
    add("expected exactly one orchestration skill, found " + std::to_string(roots.size()));
  }
  if (!doc.find_skill(doc.root)) {
    add("unresolved skill id " + doc.root + " (root)");
  } else if (doc.find_skill(doc.root)->kind != SkillKind::orchestration) {
    add("root skill " + doc.root + " is not an orchestration skill");
  }

  const std::set<std::string> builtins(builtin_signals().begin(), builtin_signals().end());
  std::set<std::string> workload_ids;
  for (const auto& w : doc.workloads) workload_ids.insert(w.id);

  for (const auto& s : doc.skills) {
    auto target_ok = [&](const std::string& t, const std::string& where) {
      if (!is_action(t) && !ids.count(t)) {
        add("skill " + s.id + ": unresolved skill id " + t + " in " + where);
      }
    };
    for (const auto& c : s.decision_criteria) target_ok(c.target, "decision criteria");
    if (!s.on_postcondition_failure.empty()) {
      target_ok(s.on_postcondition_failure, "postcondition failure edge");
    }

    std::set<std::string> signals;
    for (std::size_t i = 0; i < s.procedure.size(); ++i) {
      const auto& st = s.procedure[i];
      const std::string where = "skill " + s.id + " step " + std::to_string(i);
      if (!st.signal.empty()) {
        if (builtins.count(st.signal)) add(where + ": signal " + st.signal + " shadows a builtin");
        if (!signals.insert(st.signal).second) add(where + ": duplicate signal " + st.signal);
      } else if (st.kind != StepKind::benchmark && st.kind != StepKind::branch) {
        add(where + ": " + to_string(st.kind) + " step needs an output signal");
      }
      if (st.kind == StepKind::branch &&
          (st.target < 0 || st.target > static_cast<int>(s.procedure.size()))) {
        add(where + ": branch target " + std::to_string(st.target) + " out of range");
      }
      if (st.on_error &&
          (*st.on_error < 0 || *st.on_error > static_cast<int>(s.procedure.size()))) {
        add(where + ": error target " + std::to_string(*st.on_error) + " out of range");
      }
      if (st.kind == StepKind::benchmark || st.kind == StepKind::measure) {
        if (st.repetitions < 1) add(where + ": repetitions must be >= 1");
        if (!st.workload.empty() && !workload_ids.count(st.workload)) {
          add(where + ": unknown workload " + st.workload);
        }
      }
      if (st.kind == StepKind::benchmark) {
        if (st.base != "defaults" && st.base != "incumbent") {
          add(where + ": unknown base " + st.base);
        }
        for (const auto& [p, _] : st.assignments) {
          if (!doc.space.find(p)) add(where + ": unknown parameter " + p);
        }
      }
      if (st.kind == StepKind::compare) {
        static const std::set<std::string> ops = {"<", "<=", "=", "==", "!=", ">=", ">"};
        if (!ops.count(st.op)) add(where + ": unknown comparison operator " + st.op);
      }
    }

    // Every expression of the skill with a label for messages.
    std::vector<std::pair<std::string, std::string>> exprs;
    for (const auto& p : s.preconditions) exprs.emplace_back("precondition", p);
    for (const auto& p : s.postconditions) exprs.emplace_back("postcondition", p);
    for (const auto& c : s.decision_criteria) exprs.emplace_back("decision criterion", c.condition);
    for (std::size_t i = 0; i < s.procedure.size(); ++i) {
      const auto& st = s.procedure[i];
      const std::string label = "step " + std::to_string(i);
      switch (st.kind) {
        case StepKind::benchmark:
          for (const auto& [_, v] : st.assignments) exprs.emplace_back(label, v);
          break;
        case StepKind::compute:
        case StepKind::branch:
          exprs.emplace_back(label, st.expression);
          break;
        case StepKind::compare:
          exprs.emplace_back(label, st.lhs);
          exprs.emplace_back(label, st.rhs);
          break;
        case StepKind::measure:
          break;
      }
    }
    for (const auto& [label, text] : exprs) {
      try {
        for (const auto& sym : Expression::parse(text).symbols()) {
          if (!signals.count(sym) && !builtins.count(sym) && !s.reference_data.count(sym)) {
            add("skill " + s.id + ": " + label + " \"" + text +
                "\" references undeclared symbol " + sym);
          }
        }
      } catch (const DocumentError& e) {
        add("skill " + s.id + ": " + label + " does not parse: " + e.what());
      }
    }

    for (const auto& [key, value] : s.reference_data) {
      if (const double* d = std::get_if<double>(&value); d && !std::isfinite(*d)) {
        add("skill " + s.id + ": reference datum " + key + " is not finite");
      }
      auto it = doc.provenance.find(s.id + "/" + key);
      if (it == doc.provenance.end() || it->second.campaign.empty() ||
          it->second.operation.empty()) {
        add("skill " + s.id + ": reference datum " + key + " has no provenance");
      }
    }
  }

  if (doc.edges != derive_edges(doc.skills)) add("edge list does not match decision criteria");

  const auto adj = adjacency(doc);
  if (auto cycle = find_cycle(adj); !cycle.empty()) {
    add("skill graph has a cycle: " + join(cycle, " -> "));
  }
  if (doc.find_skill(doc.root)) {
    std::set<std::string> seen{doc.root};
    std::vector<std::string> todo{doc.root};
    while (!todo.empty()) {
      auto u = todo.back();
      todo.pop_back();
      for (const auto& v : adj.at(u)) {
        if (seen.insert(v).second) todo.push_back(v);
      }
    }
    for (const auto& s : doc.skills) {
      if (!seen.count(s.id)) add("skill " + s.id + " is unreachable from the root");
    }
  }
  return r;
}

namespace {

nlohmann::json reference_json(const ReferenceData& ref) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : ref) {
    if (const double* d = std::get_if<double>(&v)) {
      if (!std::isfinite(*d)) throw DocumentError("reference datum " + k + " is not finite");
      j[k] = *d;
    } else {
      j[k] = std::get<std::string>(v);
    }
  }
  return j;
}

ReferenceData reference_from_json(const nlohmann::json& j) {
  ReferenceData ref;
  for (const auto& [k, v] : j.items()) {
    if (v.is_string()) {
      ref[k] = v.get<std::string>();
    } else if (v.is_number()) {
      ref[k] = v.get<double>();
    } else {
      throw DocumentError("reference datum " + k + " must be a number or string");
    }
  }
  return ref;
}

nlohmann::json step_json(const Step& s) {
  nlohmann::json j = {{"kind", to_string(s.kind)},
                      {"signal", s.signal},
                      {"base", s.base},
                      {"assignments", s.assignments},
                      {"workload", s.workload},
                      {"repetitions", s.repetitions},
                      {"adopt", s.adopt},
                      {"expression", s.expression},
                      {"lhs", s.lhs},
                      {"op", s.op},
                      {"rhs", s.rhs},
                      {"target", s.target}};
  j["on_error"] = s.on_error ? nlohmann::json(*s.on_error) : nlohmann::json(nullptr);
  return j;
}

Step step_from_json(const nlohmann::json& j) {
  Step s;
  s.kind = step_kind_from_string(j.at("kind").get<std::string>());
  s.signal = j.value("signal", "");
  s.base = j.value("base", "incumbent");
  s.assignments = j.value("assignments", std::map<std::string, std::string>{});
  s.workload = j.value("workload", "");
  s.repetitions = j.value("repetitions", 3);
  s.adopt = j.value("adopt", false);
  s.expression = j.value("expression", "");
  s.lhs = j.value("lhs", "");
  s.op = j.value("op", "");
  s.rhs = j.value("rhs", "");
  s.target = j.value("target", 0);
  if (j.contains("on_error") && !j.at("on_error").is_null()) s.on_error = j.at("on_error").get<int>();
  return s;
}

nlohmann::json skill_json(const Skill& s) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : s.procedure) steps.push_back(step_json(st));
  nlohmann::json criteria = nlohmann::json::array();
  for (const auto& c : s.decision_criteria) {
    criteria.push_back({{"condition", c.condition}, {"target", c.target}});
  }
  return {{"id", s.id},
          {"kind", to_string(s.kind)},
          {"summary", s.summary},
          {"preconditions", s.preconditions},
          {"procedure", steps},
          {"decision_criteria", criteria},
          {"postconditions", s.postconditions},
          {"on_postcondition_failure", s.on_postcondition_failure},
          {"reference_data", reference_json(s.reference_data)}};
}

Skill skill_from_json(const nlohmann::json& j) {
  Skill s;
  s.id = j.at("id").get<std::string>();
  s.kind = skill_kind_from_string(j.at("kind").get<std::string>());
  s.summary = j.value("summary", "");
  s.preconditions = j.value("preconditions", std::vector<std::string>{});
  for (const auto& st : j.value("procedure", nlohmann::json::array())) {
    s.procedure.push_back(step_from_json(st));
  }
  for (const auto& c : j.value("decision_criteria", nlohmann::json::array())) {
    s.decision_criteria.push_back(
        {c.at("condition").get<std::string>(), c.at("target").get<std::string>()});
  }
  s.postconditions = j.value("postconditions", std::vector<std::string>{});
  s.on_postcondition_failure = j.value("on_postcondition_failure", "");
  s.reference_data = reference_from_json(j.value("reference_data", nlohmann::json::object()));
  return s;
}

}  // namespace

nlohmann::json document_json(const ProceduralDocument& doc) {
  nlohmann::json skills = nlohmann::json::array();
  for (const auto& s : doc.skills) skills.push_back(skill_json(s));
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : doc.edges) edges.push_back({a, b});
  nlohmann::json prov = nlohmann::json::object();
  for (const auto& [k, p] : doc.provenance) {
    prov[k] = {{"campaign", p.campaign}, {"operation", p.operation}};
  }
  return {{"schema_version", doc.schema_version},
          {"fingerprint",
           {{"space_hash", doc.fingerprint.space_hash},
            {"campaign_id", doc.fingerprint.campaign_id}}},
          {"space", doc.space},
          {"workloads", doc.workloads},
          {"parameter_profiles", doc.profiles},
          {"graph", doc.graph},
          {"root", doc.root},
          {"skills", skills},
          {"edges", edges},
          {"provenance", prov}};
}

std::string serialize_document(const ProceduralDocument& doc) {
  return document_json(doc).dump(2) + "\n";
}

ProceduralDocument parse_document(const nlohmann::json& j) {
  try {
    ProceduralDocument doc;
    doc.schema_version = j.at("schema_version").get<int>();
    if (doc.schema_version != kDocumentSchemaVersion) {
      throw DocumentError("unsupported document schema_version " +
                          std::to_string(doc.schema_version));
    }
    doc.fingerprint.space_hash = j.at("fingerprint").at("space_hash").get<std::string>();
    doc.fingerprint.campaign_id = j.at("fingerprint").at("campaign_id").get<std::string>();
    doc.space = j.at("space").get<ParameterSpace>();
    doc.workloads = j.at("workloads").get<std::vector<WorkloadSpec>>();
    doc.profiles = j.at("parameter_profiles").get<std::vector<SensitivityProfile>>();
    doc.graph = j.at("graph").get<CorrelationGraph>();
    doc.root = j.at("root").get<std::string>();
    for (const auto& s : j.at("skills")) doc.skills.push_back(skill_from_json(s));
    for (const auto& e : j.at("edges")) {
      doc.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    }
    for (const auto& [k, p] : j.at("provenance").items()) {
      doc.provenance[k] = {p.at("campaign").get<std::string>(),
                           p.at("operation").get<std::string>()};
    }
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw DocumentError(std::string("malformed document: ") + e.what());
  }
}

ProceduralDocument parse_document_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DocumentError(std::string("document is not valid JSON: ") + e.what());
  }
  return parse_document(j);
}

std::string document_digest(const ProceduralDocument& doc) {
  return hex64(fnv1a(serialize_document(doc)));
}

}  // namespace perfskill
