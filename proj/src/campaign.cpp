#include "perfskill/campaign.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "perfskill/error.hpp"
#include "perfskill/hash.hpp"
#include "perfskill/shell_adapter.hpp"
#include "perfskill/simulator.hpp"

namespace fs = std::filesystem;

namespace perfskill {

namespace {

constexpr std::pair<Stage, std::string_view> kStages[] = {
    {Stage::planned, "planned"},         {Stage::sweep_done, "sweep-done"},
    {Stage::screen_done, "screen-done"}, {Stage::joint_done, "joint-done"},
    {Stage::compiled, "compiled"}};

const char* const kState = "state.json";
const char* const kSensitivity = "sensitivity.json";
const char* const kInteractions = "interactions.json";
const char* const kGraph = "graph.json";
const char* const kOptima = "optima.json";
const char* const kDocument = "document.json";
const char* const kSimModel = "sim-model.json";

}  // namespace

std::string to_string(Stage s) {
  for (const auto& [st, name] : kStages) {
    if (st == s) return std::string(name);
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (const auto& [st, name] : kStages) {
    if (name == s) return st;
  }
  throw ParameterError("unknown campaign stage " + std::string(s));
}

void to_json(nlohmann::json& j, const CampaignState& s) {
  nlohmann::json budgets = nlohmann::json::object();
  for (const auto& [k, b] : s.budgets) budgets[k] = {{"planned", b.planned}, {"executed", b.executed}};
  j = {{"schema_version", s.schema_version},
       {"campaign_id", s.campaign_id},
       {"stage", to_string(s.stage)},
       {"seed", s.seed},
       {"repetitions", s.repetitions},
       {"levels", s.levels},
       {"tau_s", s.tau_s},
       {"adapter", s.adapter},
       {"space_file", s.space_file},
       {"log_file", s.log_file},
       {"budgets", budgets}};
}

void from_json(const nlohmann::json& j, CampaignState& s) {
  s.schema_version = j.at("schema_version").get<int>();
  s.campaign_id = j.at("campaign_id").get<std::string>();
  s.stage = stage_from_string(j.at("stage").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.repetitions = j.at("repetitions").get<int>();
  s.levels = j.at("levels").get<int>();
  s.tau_s = j.at("tau_s").get<double>();
  s.adapter = j.at("adapter").get<std::string>();
  s.space_file = j.at("space_file").get<std::string>();
  s.log_file = j.at("log_file").get<std::string>();
  s.budgets.clear();
  for (const auto& [k, b] : j.at("budgets").items()) {
    s.budgets[k] = {b.at("planned").get<std::size_t>(), b.at("executed").get<std::size_t>()};
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

namespace {

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

}  // namespace

std::unique_ptr<Adapter> make_adapter(const std::string& spec, const ParameterSpace& space,
                                      const fs::path& base) {
  if (spec.rfind("sim:", 0) == 0) {
    fs::path file = spec.substr(4);
    if (file.is_relative() && !base.empty()) file = base / file;
    SimulatorModel model;
    try {
      model = read_json(file).get<SimulatorModel>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("bad simulator model " + file.string() + ": " + e.what());
    }
    return std::make_unique<SimulatorAdapter>(space, std::move(model));
  }
  if (spec.rfind("shell:", 0) == 0) {
    if (spec.size() == 6) throw UsageError("shell adapter needs a command template");
    return std::make_unique<ShellAdapter>(space, spec.substr(6));
  }
  throw UsageError("adapter must be sim:<model-file> or shell:<command-template>, got \"" +
                   spec + "\"");
}

CampaignLock::CampaignLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw UsageError("campaign " + dir.string() +
                       " is locked by another process (remove .lock if it is stale)");
    }
    throw UsageError("cannot lock " + dir.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

CampaignLock::~CampaignLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

struct Loaded {
  CampaignState state;
  ParameterSpace space;
  std::vector<WorkloadSpec> workloads;
};

Loaded load_campaign(const fs::path& dir) {
  if (!fs::exists(dir / kState)) {
    throw UsageError("no campaign in " + dir.string() + "; run profile first");
  }
  Loaded l;
  try {
    l.state = read_json(dir / kState).get<CampaignState>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("corrupt state.json: ") + e.what());
  }
  const auto sf = parse_space_file(read_json(dir / l.state.space_file));
  l.space = sf.space;
  l.workloads = sf.workloads;
  return l;
}

void require_stage(const CampaignState& s, Stage needed, std::string_view command,
                   std::string_view producer) {
  if (s.stage < needed) {
    throw UsageError(std::string(command) + " needs stage " + to_string(needed) + " (run " +
                     std::string(producer) + " first); campaign is at " + to_string(s.stage));
  }
}

void save_state(const fs::path& dir, const CampaignState& s) { write_json(dir / kState, s); }

MeasurementLog open_log(const fs::path& dir, const CampaignState& s, const ParameterSpace& space) {
  const fs::path path = dir / s.log_file;
  if (fs::exists(path) && fs::file_size(path) > 0) return MeasurementLog::load(path);
  return MeasurementLog(LogHeader{s.seed, space.hash(), ""});
}

std::unique_ptr<Adapter> campaign_adapter(const fs::path& dir, const Loaded& l,
                                          const RunSettings& run) {
  if (run.adapter) return make_adapter(*run.adapter, l.space, fs::current_path());
  return make_adapter(l.state.adapter, l.space, dir);
}

std::vector<SensitivityProfile> load_profiles(const fs::path& dir) {
  return read_json(dir / kSensitivity).at("profiles").get<std::vector<SensitivityProfile>>();
}

std::vector<std::string> top_k_of(const std::vector<SensitivityProfile>& profiles) {
  std::vector<std::string> out;
  for (const auto& p : profiles) {
    if (p.selected) out.push_back(p.parameter);
  }
  return out;
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << v << "%";
  return s.str();
}

}  // namespace

void cmd_profile(const fs::path& dir, const ProfileRequest& req, const RunSettings& run,
                 std::ostream& out) {
  if (req.space.empty()) throw UsageError("profile needs --space");
  if (req.adapter.empty()) throw UsageError("profile needs --adapter");
  auto sf = parse_space_file(read_json(req.space));
  if (!req.workloads.empty()) sf.workloads = parse_workloads_file(read_json(req.workloads));
  if (sf.workloads.empty()) throw UsageError("no workloads: pass --workloads or list them in the space file");
  if (req.levels < 3 || req.levels > 9) throw UsageError("--levels must be in [3,9]");
  if (req.repetitions < 1) throw UsageError("--repetitions must be >= 1");
  if (req.tau_s < 0.0) throw UsageError("--tau-s must be >= 0");

  CampaignLock lock(dir);
  const std::string space_text = space_file_json(sf.space, sf.workloads).dump(2) + "\n";
  CampaignState state;
  if (fs::exists(dir / kState)) {
    state = read_json(dir / kState).get<CampaignState>();
    if (read_file(dir / state.space_file) != space_text || state.seed != req.seed ||
        state.repetitions != req.repetitions || state.levels != req.levels) {
      throw UsageError("campaign " + dir.string() +
                       " was created with a different space, seed, repetitions or levels");
    }
    state.tau_s = req.tau_s;
  } else {
    state.seed = req.seed;
    state.repetitions = req.repetitions;
    state.levels = req.levels;
    state.tau_s = req.tau_s;
    state.campaign_id = !req.campaign_id.empty()
                            ? req.campaign_id
                            : "c" + hex64(combine64(fnv1a(space_text), req.seed)).substr(0, 12);
    state.adapter = req.adapter;
    write_file(dir / state.space_file, space_text);
  }
  if (req.adapter.rfind("sim:", 0) == 0) {
    // Keep the model with the campaign so later stages do not depend on cwd.
    const std::string model = read_file(req.adapter.substr(4));
    write_file(dir / kSimModel, model);
    state.adapter = std::string("sim:") + kSimModel;
  } else {
    state.adapter = req.adapter;
  }
  save_state(dir, state);

  auto adapter = make_adapter(state.adapter, sf.space, dir);
  const auto plan = plan_sweep(sf.space, sf.workloads, state.levels, state.repetitions);
  MeasurementLog log = open_log(dir, state, sf.space);
  LogAppender appender(dir / state.log_file, log.header());
  RunPlanOptions opts;
  opts.parallelism = run.parallelism;
  opts.seed = state.seed;
  opts.existing = &log;
  opts.appender = &appender;
  RunPlanStats stats;
  log = run_plan(*adapter, sf.workloads, plan, opts, &stats);
  log.save(dir / state.log_file);

  SensitivityOptions so;
  so.tau_s = state.tau_s;
  so.levels_per_param = state.levels;
  const auto profiles = analyze_sensitivity(sf.space, sf.workloads, log, so);
  const auto top_k = top_k_of(profiles);
  nlohmann::json report = {{"campaign_id", state.campaign_id},
                           {"tau_s", state.tau_s},
                           {"top_k", top_k},
                           {"profiles", profiles}};
  write_json(dir / kSensitivity, report);

  auto& b = state.budgets["sweep"];
  b.planned = plan.size();
  b.executed += stats.executed;
  if (state.stage < Stage::sweep_done) state.stage = Stage::sweep_done;
  save_state(dir, state);

  out << "sweep: " << plan.size() << " runs planned, " << stats.executed << " executed, "
      << stats.reused << " reused\n";
  out << "top-k at tau_s=" << format_number(state.tau_s) << ": " << top_k.size() << " of "
      << profiles.size() << " parameters\n";
  out << "rank  parameter                         cv        shape            safe range\n";
  for (const auto& p : profiles) {
    out << std::left << std::setw(6) << p.rank << std::setw(34) << p.parameter << std::setw(10)
        << format_number(std::round(p.aggregate_cv * 1e4) / 1e4) << std::setw(17)
        << to_string(p.shape) << "[" << format_number(p.safe_range.lo) << ", "
        << format_number(p.safe_range.hi) << "]" << (p.selected ? "  *" : "") << "\n";
  }
}

void cmd_screen(const fs::path& dir, const RunSettings& run, std::ostream& out) {
  CampaignLock lock(dir);
  auto l = load_campaign(dir);
  require_stage(l.state, Stage::sweep_done, "screen", "profile");
  const auto profiles = load_profiles(dir);
  const auto top_k = top_k_of(profiles);
  auto adapter = campaign_adapter(dir, l, run);
  MeasurementLog log = open_log(dir, l.state, l.space);

  std::vector<InteractionRecord> records;
  ScreenStageRuns runs;
  if (top_k.size() >= 2) {
    LogAppender appender(dir / l.state.log_file, log.header());
    RunPlanOptions opts;
    opts.parallelism = run.parallelism;
    opts.seed = l.state.seed;
    opts.appender = &appender;
    auto result = screen_interactions(*adapter, l.workloads, profiles, top_k, log, opts, {});
    records = std::move(result.records);
    runs = result.runs;
    log = std::move(result.log);
    log.save(dir / l.state.log_file);
  }
  const auto graph = build_graph(top_k, records);
  write_json(dir / kInteractions, {{"campaign_id", l.state.campaign_id}, {"records", records}});
  write_json(dir / kGraph, graph);

  auto& b = l.state.budgets["screen"];
  b.planned = runs.coarse_planned + runs.fine_planned;
  b.executed = runs.coarse_executed + runs.fine_executed;
  if (l.state.stage < Stage::screen_done) l.state.stage = Stage::screen_done;
  save_state(dir, l.state);

  std::size_t confirmed = 0;
  for (const auto& r : records) confirmed += r.confirmed;
  out << "screen: " << records.size() << " pairs, stage A " << runs.coarse_planned
      << " runs, stage B " << runs.fine_planned << " runs, " << confirmed << " confirmed\n";
  for (const auto& e : graph.edges) {
    out << "  " << e.a << " -- " << e.b << "  eta2=" << format_number(std::round(e.eta_squared * 1e4) / 1e4)
        << "  q=" << format_number(e.q_value) << "\n";
  }
  for (const auto& c : graph.components) {
    out << c.id << " {";
    for (std::size_t i = 0; i < c.members.size(); ++i) out << (i ? ", " : "") << c.members[i];
    out << "}  " << (c.members.size() > 1 ? std::to_string(c.members.size()) + "-D joint search"
                                          : std::string("tune independently"))
        << "\n";
  }
}

void cmd_joint(const fs::path& dir, const RunSettings& run, std::ostream& out) {
  CampaignLock lock(dir);
  auto l = load_campaign(dir);
  require_stage(l.state, Stage::screen_done, "joint", "screen");
  const auto profiles = load_profiles(dir);
  const auto graph = read_json(dir / kGraph).get<CorrelationGraph>();
  auto adapter = campaign_adapter(dir, l, run);
  MeasurementLog log = open_log(dir, l.state, l.space);
  LogAppender appender(dir / l.state.log_file, log.header());
  RunPlanOptions opts;
  opts.parallelism = run.parallelism;
  opts.seed = l.state.seed;
  opts.appender = &appender;
  const auto result = optimize_components(*adapter, l.workloads, graph, profiles,
                                          l.state.repetitions, log, opts);
  log.save(dir / l.state.log_file);
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : result.components) comps.push_back(c);
  write_json(dir / kOptima, {{"campaign_id", l.state.campaign_id}, {"components", comps}});

  auto& b = l.state.budgets["joint"];
  b.planned = result.runs.planned;
  b.executed = result.runs.executed;
  if (l.state.stage < Stage::joint_done) l.state.stage = Stage::joint_done;
  save_state(dir, l.state);

  out << "joint: " << result.components.size() << " components, " << result.runs.planned
      << " runs planned, " << result.runs.executed << " executed\n";
  for (const auto& c : result.components) {
    out << c.component.id << " joint " << c.joint.best_config.to_string() << " objective "
        << format_number(c.joint.objective) << "; independent "
        << c.independent.best_config.to_string() << " objective "
        << format_number(c.independent.objective) << "\n";
  }
}

void cmd_compile(const fs::path& dir, const CompilePolicy& policy, std::ostream& out) {
  CampaignLock lock(dir);
  auto l = load_campaign(dir);
  require_stage(l.state, Stage::joint_done, "compile", "joint");
  const auto profiles = load_profiles(dir);
  const auto records =
      read_json(dir / kInteractions).at("records").get<std::vector<InteractionRecord>>();
  const auto graph = read_json(dir / kGraph).get<CorrelationGraph>();
  const auto optima = read_json(dir / kOptima).at("components").get<std::vector<ComponentResult>>();
  CompilePolicy p = policy;
  p.campaign_id = l.state.campaign_id;
  const auto doc = compile_document(l.space, l.workloads, profiles, records, graph, optima, p);
  write_file(dir / kDocument, serialize_document(doc));
  write_file(dir / "document.txt", render_document(doc));
  l.state.stage = Stage::compiled;
  save_state(dir, l.state);
  out << "document: " << doc.skills.size() << " skills, " << doc.profiles.size()
      << " parameter profiles, digest " << document_digest(doc) << "\n";
}

TuningSession cmd_tune(const TuneRequest& req, std::ostream& out, std::ostream& log) {
  if (req.adapter.empty()) throw UsageError("tune needs --adapter");
  const auto doc = parse_document_text(read_file(req.document));
  auto adapter = make_adapter(req.adapter, doc.space, fs::current_path());
  SessionOptions opts;
  opts.parallelism = req.parallelism;
  opts.on_event = [&](const TraceEvent& e) {
    if (e.kind == "enter") {
      log << "[" << e.skill << "]\n";
    } else if (e.kind == "benchmark" || e.kind == "measure") {
      log << "  " << e.step << " " << e.kind << " "
          << e.inputs.value("config", nlohmann::json::object()).dump();
      if (e.outputs.contains("metric")) log << " -> " << e.outputs["metric"].get<double>();
      if (e.outputs.value("cached", false)) log << " (cached)";
      if (e.outputs.value("adopted", false)) log << " adopted";
      if (e.outputs.contains("error")) log << " failed: " << e.outputs["error"].get<std::string>();
      log << "\n";
    } else if (e.kind == "postcondition" && !e.outputs.value("holds", true)) {
      log << "  postcondition failed -> " << e.outputs.value("next", std::string("abort")) << "\n";
    } else if (e.kind == "convergence") {
      log << "pass " << e.inputs.value("pass", 0)
          << (e.outputs.value("converged", false) ? " converged\n" : " continues\n");
    } else if (e.kind == "error") {
      log << "aborted: " << e.outputs.value("diagnostic", std::string()) << "\n";
    }
  };
  auto session = run_session(doc, *adapter, req.budget, req.seed, opts);
  const fs::path dir = req.out_dir.empty() ? req.document.parent_path() : req.out_dir;
  if (!dir.empty()) fs::create_directories(dir);
  save_trace(dir / "trace.jsonl", session);
  if (session.final_config) {
    std::string conf;
    const auto resolved = resolve(doc.space, *session.final_config);
    for (const auto& spec : doc.space.parameters()) {
      conf += spec.name + "=" + spec.format_value(*resolved.get(spec.name)) + "\n";
    }
    write_file(dir / "final_config.conf", conf);
  }
  out << "status: " << to_string(session.status) << "\n"
      << "trials: " << session.trials_used << " of " << session.trial_budget << "\n"
      << "passes: " << session.passes << "\n";
  if (session.final_metric) out << "final metric: " << format_number(*session.final_metric) << "\n";
  if (session.final_config) out << "final config: " << session.final_config->to_string() << "\n";
  if (!session.diagnostic.empty()) out << "diagnostic: " << session.diagnostic << "\n";
  return session;
}

void cmd_export(const fs::path& document, const std::string& format, const fs::path& output,
                std::ostream& out) {
  const auto doc = parse_document_text(read_file(document));
  if (auto report = validate_document(doc); !report.ok()) {
    throw DocumentError("document is invalid: " + report.violations.front());
  }
  const auto j = export_knowledge(doc, format);
  write_file(output, j.dump(2) + "\n");
  const auto k = parse_export(j);
  out << "exported " << k.parameters.size() << " parameters and " << k.interactions.size()
      << " interaction hints (" << format << ") to " << output.string() << "\n";
}

bool cmd_replay(const fs::path& document, const fs::path& trace, std::ostream& out) {
  const auto doc = parse_document_text(read_file(document));
  const auto session = load_trace(trace);
  const auto result = replay_session(session, doc);
  std::size_t verdicts = 0;
  for (const auto& e : session.trace) verdicts += e.verdicts.size();
  if (result.ok()) {
    out << "replay ok: " << session.trace.size() << " events, " << verdicts
        << " expressions re-evaluated\n";
  } else {
    for (const auto& m : result.mismatches) out << "mismatch: " << m << "\n";
  }
  return result.ok();
}

bool cmd_validate(const fs::path& document, std::ostream& out) {
  const auto doc = parse_document_text(read_file(document));
  const auto report = validate_document(doc);
  if (report.ok()) {
    out << "document ok: " << doc.skills.size() << " skills\n";
  } else {
    for (const auto& v : report.violations) out << "violation: " << v << "\n";
  }
  return report.ok();
}

double BudgetReport::share(const StageBudget& b) const {
  const auto total = total_planned();
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(b.planned) / static_cast<double>(total);
}

BudgetReport cmd_budget(const fs::path& dir, std::ostream& out) {
  const auto l = load_campaign(dir);
  BudgetReport r;
  auto get = [&](const char* k) {
    auto it = l.state.budgets.find(k);
    return it == l.state.budgets.end() ? StageBudget{} : it->second;
  };
  r.sweep = get("sweep");
  r.screen = get("screen");
  r.joint = get("joint");
  const std::pair<const char*, const StageBudget*> rows[] = {
      {"1. sensitivity scan", &r.sweep},
      {"2. correlation screen", &r.screen},
      {"3. joint optimization", &r.joint}};
  out << "stage                     planned  executed  share   reference\n";
  for (std::size_t i = 0; i < 3; ++i) {
    out << std::left << std::setw(26) << rows[i].first << std::setw(9) << rows[i].second->planned
        << std::setw(10) << rows[i].second->executed << std::setw(8) << pct(r.share(*rows[i].second))
        << pct(kReferenceShares[i]) << "\n";
  }
  out << std::left << std::setw(26) << "total" << r.total_planned() << "\n";
  out << "campaign stage: " << to_string(l.state.stage) << "\n";
  return r;
}

}  // namespace perfskill
