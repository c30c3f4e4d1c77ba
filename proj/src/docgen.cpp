#include "perfskill/docgen.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "perfskill/error.hpp"

namespace perfskill {

std::string parameter_skill_id(std::string_view parameter) {
  return "param." + std::string(parameter);
}
std::string adaptation_skill_id(std::string_view parameter) {
  return "adapt." + std::string(parameter);
}
std::string component_skill_id(std::string_view component) {
  return "component." + std::string(component);
}

namespace {

// Name usable as an expression identifier.
std::string ident(std::string_view name) {
  std::string out;
  for (char c : name) {
    out += std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ? c : '_';
  }
  if (out.empty() || std::isdigit(static_cast<unsigned char>(out[0]))) out.insert(0, "_");
  return out;
}

class Builder {
 public:
  Builder(ProceduralDocument& doc, std::string campaign)
      : doc_(doc), campaign_(std::move(campaign)) {}

  void put(Skill& s, const std::string& key, ReferenceValue v, const std::string& op) {
    s.reference_data[key] = std::move(v);
    doc_.provenance[s.id + "/" + key] = {campaign_, op};
  }

 private:
  ProceduralDocument& doc_;
  std::string campaign_;
};

Step benchmark(std::string base, std::map<std::string, std::string> assignments, int r,
               std::string signal = {}, bool adopt = false) {
  Step s;
  s.kind = StepKind::benchmark;
  s.base = std::move(base);
  s.assignments = std::move(assignments);
  s.repetitions = r;
  s.signal = std::move(signal);
  s.adopt = adopt;
  return s;
}

Step compute(std::string signal, std::string expression) {
  Step s;
  s.kind = StepKind::compute;
  s.signal = std::move(signal);
  s.expression = std::move(expression);
  return s;
}

Step branch(std::string condition, int target) {
  Step s;
  s.kind = StepKind::branch;
  s.expression = std::move(condition);
  s.target = target;
  return s;
}

// Adopting grid cell; a crashed cell just moves on.
void push_candidate(std::vector<Step>& steps, std::map<std::string, std::string> assignments,
                    int r) {
  auto s = benchmark("incumbent", std::move(assignments), r, {}, true);
  s.on_error = static_cast<int>(steps.size()) + 1;
  steps.push_back(std::move(s));
}

double offline_endpoint_delta(const SensitivityProfile& p, const std::string& workload) {
  const auto& ws = p.per_workload.at(workload);
  std::optional<double> lo, hi;
  for (std::size_t i = 0; i < p.levels.size() && i < ws.level_means.size(); ++i) {
    if (p.levels[i] == p.safe_range.lo) lo = ws.level_means[i];
    if (p.levels[i] == p.safe_range.hi) hi = ws.level_means[i];
  }
  if (lo && hi && ws.baseline > 0.0) return (*hi - *lo) / ws.baseline;
  return ws.endpoint_delta;
}

}  // namespace

ProceduralDocument compile_document(const ParameterSpace& space,
                                    const std::vector<WorkloadSpec>& workloads,
                                    const std::vector<SensitivityProfile>& profiles,
                                    const std::vector<InteractionRecord>& records,
                                    const CorrelationGraph& graph,
                                    const std::vector<ComponentResult>& optima,
                                    const CompilePolicy& policy) {
  if (workloads.empty()) throw DocumentError("compile: no workloads");
  if (policy.grid_levels < 2 || policy.online_repetitions < 1) {
    throw ParameterError("compile: grid_levels must be >= 2 and online_repetitions >= 1");
  }
  const std::string& primary = workloads.front().id;
  const Direction dir = workloads.front().direction;

  std::vector<const SensitivityProfile*> selected;
  for (const auto& p : profiles) {
    if (!space.find(p.parameter)) {
      throw DocumentError("profile for " + p.parameter + " is not in the parameter space");
    }
    for (const auto& w : workloads) {
      if (!p.per_workload.count(w.id)) {
        throw DocumentError("profile for " + p.parameter + " lacks workload " + w.id);
      }
    }
    if (p.selected) selected.push_back(&p);
  }
  std::sort(selected.begin(), selected.end(), [](auto* a, auto* b) {
    return std::tie(a->rank, a->parameter) < std::tie(b->rank, b->parameter);
  });
  std::set<std::string> selected_names;
  for (const auto* p : selected) selected_names.insert(p->parameter);
  if (std::set<std::string>(graph.nodes.begin(), graph.nodes.end()) != selected_names) {
    throw DocumentError("graph nodes do not match the selected parameters; inputs come from "
                        "different campaigns");
  }
  std::map<std::pair<std::string, std::string>, const InteractionRecord*> confirmed;
  for (const auto& r : records) {
    if (r.confirmed) confirmed[r.pair] = &r;
  }
  for (const auto& e : graph.edges) {
    if (!confirmed.count({e.a, e.b})) {
      throw DocumentError("graph edge " + e.a + "-" + e.b + " has no confirmed interaction");
    }
  }
  std::map<std::string, const ComponentResult*> optimum_of;
  for (const auto& o : optima) {
    auto it = std::find(graph.components.begin(), graph.components.end(), o.component);
    if (it == graph.components.end()) {
      throw DocumentError("optimum for " + o.component.id + " matches no graph component");
    }
    optimum_of[o.component.id] = &o;
  }

  ProceduralDocument doc;
  doc.fingerprint = {hex64(space.hash()), policy.campaign_id};
  doc.space = space;
  doc.workloads = workloads;
  doc.profiles = profiles;
  doc.graph = graph;
  doc.root = std::string(kRootSkillId);
  Builder b(doc, policy.campaign_id);
  const int r = policy.online_repetitions;

  std::vector<const Component*> multi;
  for (const auto& c : graph.components) {
    if (c.members.size() > 1) multi.push_back(&c);
  }
  auto component_of = [&](const std::string& p) -> const Component* {
    for (const auto* c : multi) {
      if (std::find(c->members.begin(), c->members.end(), p) != c->members.end()) return c;
    }
    return nullptr;
  };

  // Chain order: root, parameters by rank, components, cross-workload check.
  std::vector<std::string> chain{doc.root};
  for (const auto* p : selected) chain.push_back(parameter_skill_id(p->parameter));
  for (const auto* c : multi) chain.push_back(component_skill_id(c->id));
  if (workloads.size() > 1) chain.emplace_back(kCrossWorkloadSkillId);
  auto next_of = [&](const std::string& id) {
    auto it = std::find(chain.begin(), chain.end(), id);
    return it + 1 == chain.end() ? std::string(kDone) : *(it + 1);
  };

  {
    Skill s;
    s.id = doc.root;
    s.kind = SkillKind::orchestration;
    s.summary =
        "Diagnose the deployment against the profiled baseline, verify and tune sensitive "
        "parameters, optimize correlated components jointly, then check other workloads. "
        "Passes repeat until one changes the incumbent by less than convergence_tol.";
    b.put(s, "convergence_tol", policy.convergence_tol, "compile_document");
    b.put(s, "offline_baseline",
          profiles.empty() ? 1.0 : profiles.front().per_workload.at(primary).baseline,
          "analyze_sensitivity");
    b.put(s, "top_k", static_cast<double>(selected.size()), "select_top_k");
    b.put(s, "components", static_cast<double>(multi.size()), "build_graph");
    s.preconditions = {"trial_budget >= 1"};
    s.procedure.push_back(benchmark("defaults", {}, r, "baseline", true));
    s.procedure.push_back(compute("baseline_ratio", "baseline / offline_baseline"));
    s.postconditions = {"pass_improvement < convergence_tol"};
    s.decision_criteria = {{"true", next_of(s.id)}};
    doc.skills.push_back(std::move(s));
  }

  for (const auto* p : selected) {
    const auto& spec = space.at(p->parameter);
    const Component* comp = component_of(p->parameter);
    const auto levels = fine_levels(spec, p->safe_range, policy.grid_levels);
    const double delta = offline_endpoint_delta(*p, primary);

    Skill s;
    s.id = parameter_skill_id(p->parameter);
    s.kind = SkillKind::parameter;
    b.put(s, "parameter", p->parameter, "analyze_sensitivity");
    b.put(s, "cv", p->aggregate_cv, "analyze_sensitivity");
    b.put(s, "rank", static_cast<double>(p->rank), "analyze_sensitivity");
    b.put(s, "shape", to_string(p->shape), "classify_shape");
    b.put(s, "default", spec.default_value, "extract_safe_range");
    b.put(s, "safe_lo", p->safe_range.lo, "extract_safe_range");
    b.put(s, "safe_hi", p->safe_range.hi, "extract_safe_range");
    b.put(s, "baseline", p->per_workload.at(primary).baseline, "analyze_sensitivity");
    b.put(s, "endpoint_delta", delta, "analyze_sensitivity");
    b.put(s, "verify_tol", std::max(policy.verify_rel_tol * std::abs(delta), policy.verify_abs_tol),
          "compile_document");
    b.put(s, "component", comp ? comp->id : std::string(), "build_graph");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      b.put(s, "level." + std::to_string(i), levels[i], "plan_joint_search");
    }
    for (const auto& w : workloads) {
      const auto& ws = p->per_workload.at(w.id);
      b.put(s, "cv." + ident(w.id), ws.cv, "analyze_sensitivity");
      b.put(s, "rank." + ident(w.id), static_cast<double>(ws.rank), "analyze_sensitivity");
      b.put(s, "shape." + ident(w.id), to_string(ws.shape), "classify_shape");
    }

    s.summary = "Verify that " + p->parameter + " still moves the metric as profiled (" +
                to_string(p->shape) + ", CV " + format_number(p->aggregate_cv) + ")" +
                (comp ? "; tuning is left to " + component_skill_id(comp->id)
                      : "; then tune it within its safe range") +
                ".";
    s.preconditions = {"incumbent_metric > 0"};
    auto& st = s.procedure;
    st.push_back(benchmark("defaults", {}, r, "y_default"));
    st.push_back(benchmark("defaults", {{p->parameter, "safe_lo"}}, r, "y_lo"));
    st.push_back(benchmark("defaults", {{p->parameter, "safe_hi"}}, r, "y_hi"));
    st.push_back(compute("online_delta", "(y_hi - y_lo) / y_default"));
    Step cmp;
    cmp.kind = StepKind::compare;
    cmp.signal = "verified";
    cmp.lhs = "abs(online_delta - endpoint_delta)";
    cmp.op = "<=";
    cmp.rhs = "verify_tol";
    st.push_back(std::move(cmp));
    const std::size_t branch_at = st.size();
    st.push_back(branch("verified = 0", 0));
    if (!comp) {
      std::vector<std::string> candidates;
      const bool up_is_better = dir == Direction::maximize;
      switch (p->shape) {
        case CurveShape::monotonic_up:
          candidates = {up_is_better ? "safe_hi" : "safe_lo"};
          break;
        case CurveShape::monotonic_down:
          candidates = {up_is_better ? "safe_lo" : "safe_hi"};
          break;
        case CurveShape::non_monotonic:
          for (std::size_t i = 0; i < levels.size(); ++i) {
            candidates.push_back("level." + std::to_string(i));
          }
          break;
        default:
          candidates = {"safe_lo", "safe_hi"};
          break;
      }
      for (const auto& c : candidates) push_candidate(st, {{p->parameter, c}}, r);
    }
    st[branch_at].target = static_cast<int>(st.size());
    s.postconditions = {"verified = 1"};
    s.on_postcondition_failure = adaptation_skill_id(p->parameter);
    s.decision_criteria = {{"true", next_of(s.id)}};

    Skill a;
    a.id = adaptation_skill_id(p->parameter);
    a.kind = SkillKind::adaptation;
    a.summary = "The profiled behavior of " + p->parameter +
                " did not reproduce; re-sweep it over its safe range from the incumbent.";
    b.put(a, "parameter", p->parameter, "analyze_sensitivity");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      b.put(a, "level." + std::to_string(i), levels[i], "plan_joint_search");
    }
    a.preconditions = {"incumbent_metric > 0"};
    for (std::size_t i = 0; i < levels.size(); ++i) {
      push_candidate(a.procedure, {{p->parameter, "level." + std::to_string(i)}}, r);
    }
    a.postconditions = {"incumbent_metric > 0"};
    a.decision_criteria = {{"true", next_of(s.id)}};

    doc.skills.push_back(std::move(s));
    doc.skills.push_back(std::move(a));
  }

  for (const auto* c : multi) {
    Skill s;
    s.id = component_skill_id(c->id);
    s.kind = SkillKind::component;
    b.put(s, "component", c->id, "build_graph");
    b.put(s, "eta2_max", graph.max_eta(*c), "screen_interactions");
    b.put(s, "eta_threshold", policy.eta_threshold, "compile_document");
    b.put(s, "size", static_cast<double>(c->members.size()), "build_graph");
    std::size_t ei = 0;
    for (const auto& e : graph.edges) {
      if (std::find(c->members.begin(), c->members.end(), e.a) == c->members.end()) continue;
      const std::string k = "edge." + std::to_string(ei++);
      b.put(s, k + ".a", e.a, "build_graph");
      b.put(s, k + ".b", e.b, "build_graph");
      b.put(s, k + ".eta2", e.eta_squared, "screen_interactions");
      b.put(s, k + ".q", e.q_value, "screen_interactions");
    }
    const ComponentResult* opt = optimum_of.count(c->id) ? optimum_of.at(c->id) : nullptr;
    if (opt) {
      b.put(s, "joint_objective", opt->joint.objective, "optimize_component");
      b.put(s, "independent_objective", opt->independent.objective, "independent_baseline");
    }
    std::map<std::string, std::vector<std::string>> keys;
    for (const auto& m : c->members) {
      const auto* prof = doc.find_profile(m);
      std::vector<double> levels = opt && opt->plan.grid.count(m)
                                       ? opt->plan.grid.at(m)
                                       : fine_levels(space.at(m), prof->safe_range,
                                                     policy.grid_levels);
      for (std::size_t i = 0; i < levels.size(); ++i) {
        const std::string k = ident(m) + ".level." + std::to_string(i);
        b.put(s, k, levels[i], opt ? "optimize_component" : "plan_joint_search");
        keys[m].push_back(k);
      }
    }
    s.summary = "Parameters " + [&] {
      std::string out;
      for (const auto& m : c->members) out += (out.empty() ? "" : ", ") + m;
      return out;
    }() + " interact; search them jointly when eta2_max exceeds eta_threshold, "
          "otherwise tune each alone.";
    s.preconditions = {"incumbent_metric > 0"};
    auto& st = s.procedure;
    st.push_back(branch("eta2_max <= eta_threshold", 0));
    std::vector<std::size_t> idx(c->members.size(), 0);
    for (bool more = true; more;) {
      std::map<std::string, std::string> assign;
      for (std::size_t k = 0; k < c->members.size(); ++k) {
        assign[c->members[k]] = keys[c->members[k]][idx[k]];
      }
      push_candidate(st, std::move(assign), r);
      more = false;
      for (std::size_t k = c->members.size(); k-- > 0;) {
        if (++idx[k] < keys[c->members[k]].size()) {
          more = true;
          break;
        }
        idx[k] = 0;
      }
    }
    const std::size_t skip_at = st.size();
    st.push_back(branch("true", 0));
    st.front().target = static_cast<int>(st.size());
    for (const auto& m : c->members) {
      for (const auto& k : keys[m]) push_candidate(st, {{m, k}}, r);
    }
    st[skip_at].target = static_cast<int>(st.size());
    s.postconditions = {"incumbent_metric > 0"};
    s.decision_criteria = {{"true", next_of(s.id)}};
    doc.skills.push_back(std::move(s));
  }

  if (workloads.size() > 1) {
    Skill s;
    s.id = std::string(kCrossWorkloadSkillId);
    s.kind = SkillKind::verification;
    s.summary = "Check that the tuned configuration does not lose more than the allowed "
                "fraction on the other workloads.";
    b.put(s, "min_ratio_threshold", policy.cross_workload_min_ratio, "compile_document");
    s.preconditions = {"incumbent_metric > 0"};
    std::vector<std::string> ratios;
    for (std::size_t i = 1; i < workloads.size(); ++i) {
      const auto& w = workloads[i];
      const std::string id = ident(w.id);
      Step m;
      m.kind = StepKind::measure;
      m.signal = "tuned." + id;
      m.workload = w.id;
      m.repetitions = r;
      s.procedure.push_back(m);
      auto d = benchmark("defaults", {}, r, "default." + id);
      d.workload = w.id;
      s.procedure.push_back(d);
      s.procedure.push_back(compute("ratio." + id, w.direction == Direction::maximize
                                                       ? "tuned." + id + " / default." + id
                                                       : "default." + id + " / tuned." + id));
      ratios.push_back("ratio." + id);
    }
    std::string min_expr = ratios.front();
    if (ratios.size() > 1) {
      min_expr = "min(" + ratios.front();
      for (std::size_t i = 1; i < ratios.size(); ++i) min_expr += ", " + ratios[i];
      min_expr += ")";
    }
    s.procedure.push_back(compute("min_ratio", min_expr));
    s.postconditions = {"min_ratio >= min_ratio_threshold"};
    s.decision_criteria = {{"true", std::string(kDone)}};
    doc.skills.push_back(std::move(s));
  }

  doc.edges = derive_edges(doc.skills);
  topological_order(doc);
  if (auto report = validate_document(doc); !report.ok()) {
    std::string msg = "compiled document is invalid:";
    for (const auto& v : report.violations) msg += "\n  " + v;
    throw DocumentError(msg);
  }
  return doc;
}

KnowledgeExport knowledge_from_document(const ProceduralDocument& doc, std::string format) {
  auto num = [](const Skill& s, const std::string& k) {
    return std::get<double>(s.reference_data.at(k));
  };
  auto str = [](const Skill& s, const std::string& k) {
    return std::get<std::string>(s.reference_data.at(k));
  };
  KnowledgeExport out;
  out.format = std::move(format);
  out.fingerprint = doc.fingerprint.space_hash + ":" + doc.fingerprint.campaign_id;
  try {
    for (const auto& s : doc.skills) {
      if (s.kind == SkillKind::parameter) {
        out.parameters.push_back({str(s, "parameter"), static_cast<int>(num(s, "rank")),
                                  num(s, "cv"), str(s, "shape"), num(s, "default"),
                                  num(s, "safe_lo"), num(s, "safe_hi")});
      } else if (s.kind == SkillKind::component) {
        for (int i = 0; s.reference_data.count("edge." + std::to_string(i) + ".a"); ++i) {
          const std::string k = "edge." + std::to_string(i);
          out.interactions.push_back(
              {str(s, k + ".a"), str(s, k + ".b"), num(s, k + ".eta2"), str(s, "component")});
        }
      }
    }
  } catch (const std::exception& e) {
    throw DocumentError(std::string("document reference data incomplete: ") + e.what());
  }
  std::stable_sort(out.parameters.begin(), out.parameters.end(),
                   [](const auto& a, const auto& b) { return a.rank < b.rank; });
  return out;
}

nlohmann::json export_knowledge(const ProceduralDocument& doc, const std::string& format) {
  const auto& formats = export_formats();
  if (std::find(formats.begin(), formats.end(), format) == formats.end()) {
    throw ParameterError("unknown export format profile " + format);
  }
  const auto k = knowledge_from_document(doc, format);
  nlohmann::json j;
  j["format"] = format;
  j["schema_version"] = kDocumentSchemaVersion;
  j["fingerprint"] = k.fingerprint;
  if (format == "generic") {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : k.parameters) {
      const auto& spec = doc.space.at(p.name);
      nlohmann::json e = {{"name", p.name},       {"rank", p.rank},
                          {"cv", p.cv},           {"shape", p.shape},
                          {"default", p.default_value},
                          {"type", to_string(spec.kind)},
                          {"safe_range", {{"lo", p.safe_lo}, {"hi", p.safe_hi}}}};
      if (!spec.choices.empty()) e["choices"] = spec.choices;
      params.push_back(std::move(e));
    }
    nlohmann::json inter = nlohmann::json::array();
    for (const auto& i : k.interactions) {
      inter.push_back({{"a", i.a}, {"b", i.b}, {"eta_squared", i.eta_squared},
                       {"component", i.component}});
    }
    j["parameters"] = std::move(params);
    j["interactions"] = std::move(inter);
  } else {
    nlohmann::json knobs = nlohmann::json::object();
    for (const auto& p : k.parameters) {
      const auto& spec = doc.space.at(p.name);
      nlohmann::json e = {{"min", p.safe_lo},   {"max", p.safe_hi},
                          {"default", p.default_value},
                          {"type", to_string(spec.kind)},
                          {"importance_rank", p.rank},
                          {"cv", p.cv},         {"shape", p.shape}};
      if (!spec.choices.empty()) e["enum_values"] = spec.choices;
      knobs[p.name] = std::move(e);
    }
    nlohmann::json hints = nlohmann::json::array();
    for (const auto& i : k.interactions) {
      hints.push_back({{"knobs", {i.a, i.b}},
                       {"eta_squared", i.eta_squared},
                       {"group", i.component},
                       {"advice", "tune jointly"}});
    }
    j["knobs"] = std::move(knobs);
    j["hints"] = std::move(hints);
  }
  return j;
}

KnowledgeExport parse_export(const nlohmann::json& j) {
  try {
    KnowledgeExport k;
    k.format = j.at("format").get<std::string>();
    k.fingerprint = j.at("fingerprint").get<std::string>();
    if (k.format == "generic") {
      for (const auto& p : j.at("parameters")) {
        k.parameters.push_back({p.at("name").get<std::string>(), p.at("rank").get<int>(),
                                p.at("cv").get<double>(), p.at("shape").get<std::string>(),
                                p.at("default").get<double>(),
                                p.at("safe_range").at("lo").get<double>(),
                                p.at("safe_range").at("hi").get<double>()});
      }
      for (const auto& i : j.at("interactions")) {
        k.interactions.push_back({i.at("a").get<std::string>(), i.at("b").get<std::string>(),
                                  i.at("eta_squared").get<double>(),
                                  i.at("component").get<std::string>()});
      }
    } else if (k.format == "gptuner") {
      for (const auto& [name, p] : j.at("knobs").items()) {
        k.parameters.push_back({name, p.at("importance_rank").get<int>(),
                                p.at("cv").get<double>(), p.at("shape").get<std::string>(),
                                p.at("default").get<double>(), p.at("min").get<double>(),
                                p.at("max").get<double>()});
      }
      std::stable_sort(k.parameters.begin(), k.parameters.end(),
                       [](const auto& a, const auto& b) { return a.rank < b.rank; });
      for (const auto& h : j.at("hints")) {
        k.interactions.push_back({h.at("knobs").at(0).get<std::string>(),
                                  h.at("knobs").at(1).get<std::string>(),
                                  h.at("eta_squared").get<double>(),
                                  h.at("group").get<std::string>()});
      }
    } else {
      throw ParameterError("unknown export format profile " + k.format);
    }
    return k;
  } catch (const nlohmann::json::exception& e) {
    throw DocumentError(std::string("malformed export: ") + e.what());
  }
}

std::string render_document(const ProceduralDocument& doc) {
  std::ostringstream out;
  for (const auto& id : topological_order(doc)) {
    const Skill& s = *doc.find_skill(id);
    out << "[" << to_string(s.kind) << "] " << s.id << "\n  " << s.summary << "\n";
    for (const auto& p : s.preconditions) out << "  requires: " << p << "\n";
    for (std::size_t i = 0; i < s.procedure.size(); ++i) {
      const auto& st = s.procedure[i];
      out << "  " << i << ". " << to_string(st.kind);
      switch (st.kind) {
        case StepKind::benchmark:
          out << " " << st.base;
          for (const auto& [p, v] : st.assignments) out << " " << p << "=" << v;
          if (st.adopt) out << " (adopt if better)";
          break;
        case StepKind::measure:
          out << " incumbent on " << st.workload;
          break;
        case StepKind::compute:
          out << " " << st.expression;
          break;
        case StepKind::compare:
          out << " " << st.lhs << " " << st.op << " " << st.rhs;
          break;
        case StepKind::branch:
          out << " if " << st.expression << " goto " << st.target;
          break;
      }
      if (!st.signal.empty()) out << " -> " << st.signal;
      out << "\n";
    }
    for (const auto& p : s.postconditions) out << "  ensures: " << p << "\n";
    if (!s.on_postcondition_failure.empty()) {
      out << "  otherwise: " << s.on_postcondition_failure << "\n";
    }
    for (const auto& c : s.decision_criteria) out << "  when " << c.condition << ": " << c.target << "\n";
  }
  return out.str();
}

}  // namespace perfskill
