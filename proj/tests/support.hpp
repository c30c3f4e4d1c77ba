#pragma once

// Shared fixtures for the unit tests and the acceptance runner: planted
// simulator models, an in-process pipeline, and brute-force oracles that do
// not call into the library's statistics code.

#include <algorithm>
#include <atomic>
#include <numeric>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "perfskill/campaign.hpp"
#include "perfskill/error.hpp"
#include "perfskill/shell_adapter.hpp"
#include "perfskill/docgen.hpp"
#include "perfskill/executor.hpp"
#include "perfskill/interaction.hpp"
#include "perfskill/simulator.hpp"
#include "perfskill/topology.hpp"

namespace support {

using namespace perfskill;

inline Response linear_up(std::string p, double s) {
  Response r;
  r.parameter = std::move(p);
  r.shape = ResponseShape::linear_up;
  r.strength = s;
  return r;
}

inline Response linear_down(std::string p, double s) {
  Response r = linear_up(std::move(p), s);
  r.shape = ResponseShape::linear_down;
  return r;
}

inline Response quad_peak(std::string p, double s, double peak) {
  Response r = linear_up(std::move(p), s);
  r.shape = ResponseShape::quadratic_peak;
  r.peak = peak;
  return r;
}

inline Coupling coupling(std::string a, std::string b, double s) {
  return Coupling{std::move(a), std::move(b), s, {}};
}

// n continuous parameters p00..p{n-1} on [0, 100], default 50.
inline ParameterSpace numbered_space(int n, const std::string& prefix = "p") {
  std::vector<ParameterSpec> specs;
  for (int i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%02d", prefix.c_str(), i);
    specs.push_back(continuous_param(buf, 0, 100, 50));
  }
  return ParameterSpace(std::move(specs));
}

inline ParameterSpace named_space(const std::vector<std::string>& names) {
  std::vector<ParameterSpec> specs;
  for (const auto& n : names) specs.push_back(continuous_param(n, 0, 100, 50));
  return ParameterSpace(std::move(specs));
}

inline std::vector<WorkloadSpec> one_workload() {
  return {WorkloadSpec{"oltp", "tps", Direction::maximize}};
}

inline nlohmann::json load_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline std::filesystem::path data_dir() { return PERFSKILL_TEST_DATA; }

inline SpaceFile space10() {
  auto sf = parse_space_file(load_json(data_dir() / "space10.json"));
  sf.workloads = parse_workloads_file(load_json(data_dir() / "workloads1.json"));
  return sf;
}

inline SimulatorModel model10() { return load_json(data_dir() / "model10.json").get<SimulatorModel>(); }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("perfskill-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct Pipeline {
  ParameterSpace space;
  std::vector<WorkloadSpec> workloads;
  MeasurementLog log;
  std::vector<SensitivityProfile> profiles;
  std::vector<std::string> top_k;
  std::vector<InteractionRecord> records;
  CorrelationGraph graph;
  std::vector<ComponentResult> optima;
  ProceduralDocument doc;
};

struct PipelineOptions {
  std::uint64_t seed = 42;
  int levels = 5;
  int repetitions = 3;
  double tau_s = 0.05;
  std::size_t parallelism = 4;
  bool joint = true;
  bool compile = true;
};

// profile -> screen -> joint -> compile, in process.
inline Pipeline run_pipeline(const ParameterSpace& space, const std::vector<WorkloadSpec>& workloads,
                             const SimulatorModel& model, const PipelineOptions& o = {}) {
  Pipeline p;
  p.space = space;
  p.workloads = workloads;
  SimulatorAdapter adapter(space, model);
  RunPlanOptions ro;
  ro.parallelism = o.parallelism;
  ro.seed = o.seed;
  p.log = run_plan(adapter, workloads, plan_sweep(space, workloads, o.levels, o.repetitions), ro);
  SensitivityOptions so;
  so.tau_s = o.tau_s;
  so.levels_per_param = o.levels;
  p.profiles = analyze_sensitivity(space, workloads, p.log, so);
  for (const auto& pr : p.profiles)
    if (pr.selected) p.top_k.push_back(pr.parameter);
  if (p.top_k.size() >= 2) {
    auto sr = screen_interactions(adapter, workloads, p.profiles, p.top_k, p.log, ro, {});
    p.records = std::move(sr.records);
    p.log = std::move(sr.log);
  }
  p.graph = build_graph(p.top_k, p.records);
  if (o.joint) {
    auto jr = optimize_components(adapter, workloads, p.graph, p.profiles, o.repetitions, p.log, ro);
    p.optima = std::move(jr.components);
  }
  if (o.compile) {
    CompilePolicy policy;
    policy.campaign_id = "test";
    p.doc = compile_document(space, workloads, p.profiles, p.records, p.graph, p.optima, policy);
  }
  return p;
}

// Balanced a x b x r table of raw values.
using Grid3 = std::vector<std::vector<std::vector<double>>>;

struct OracleAnova {
  double ss_a, ss_b, ss_ab, ss_e, ss_total, f, eta2;
};

// Direct sums over the raw grid: every deviation computed from explicit means.
inline OracleAnova oracle_anova(const Grid3& y) {
  const std::size_t a = y.size(), b = y[0].size(), r = y[0][0].size();
  long double grand = 0;
  for (auto& row : y)
    for (auto& cell : row)
      for (double v : cell) grand += v;
  grand /= static_cast<long double>(a * b * r);
  std::vector<long double> ma(a, 0), mb(b, 0);
  std::vector<std::vector<long double>> mc(a, std::vector<long double>(b, 0));
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      for (double v : y[i][j]) mc[i][j] += v;
      mc[i][j] /= r;
    }
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) ma[i] += mc[i][j];
    ma[i] /= b;
  }
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < a; ++i) mb[j] += mc[i][j];
    mb[j] /= a;
  }
  OracleAnova o{};
  long double sa = 0, sb = 0, sab = 0, se = 0, st = 0;
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < r; ++k) {
        const long double v = y[i][j][k];
        sa += (ma[i] - grand) * (ma[i] - grand);
        sb += (mb[j] - grand) * (mb[j] - grand);
        const long double inter = mc[i][j] - ma[i] - mb[j] + grand;
        sab += inter * inter;
        se += (v - mc[i][j]) * (v - mc[i][j]);
        st += (v - grand) * (v - grand);
      }
  o.ss_a = static_cast<double>(sa);
  o.ss_b = static_cast<double>(sb);
  o.ss_ab = static_cast<double>(sab);
  o.ss_e = static_cast<double>(se);
  o.ss_total = static_cast<double>(st);
  const double df_ab = static_cast<double>((a - 1) * (b - 1));
  const double df_e = static_cast<double>(a * b * (r - 1));
  o.f = (o.ss_ab / df_ab) / (o.ss_e / df_e);
  o.eta2 = o.ss_ab / o.ss_total;
  return o;
}

inline FactorialTable table_from(const Grid3& y) {
  FactorialTable t;
  t.pair = {"a", "b"};
  for (std::size_t i = 0; i < y.size(); ++i) t.levels_a.push_back(static_cast<double>(i));
  for (std::size_t j = 0; j < y[0].size(); ++j) t.levels_b.push_back(static_cast<double>(j));
  t.cells = y;
  t.workload_id = "w";
  return t;
}

inline Grid3 random_grid(std::mt19937_64& rng, std::size_t a, std::size_t b, std::size_t r) {
  std::normal_distribution<double> noise(0.0, 5.0);
  std::uniform_real_distribution<double> effect(-20.0, 20.0);
  Grid3 y(a, std::vector<std::vector<double>>(b));
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double m = 100.0 + effect(rng);
      for (std::size_t k = 0; k < r; ++k) y[i][j].push_back(m + noise(rng));
    }
  return y;
}

inline bool rel_close(double x, double y, double tol) {
  const double scale = std::max({std::abs(x), std::abs(y), 1e-300});
  return std::abs(x - y) <= tol * scale || std::abs(x - y) <= 1e-12;
}

// Every level value the document offers for a parameter: sweep levels in the
// per-parameter skill and component grid levels.
inline std::vector<double> documented_levels(const ProceduralDocument& doc, const std::string& p) {
  std::set<double> out;
  for (const auto& s : doc.skills) {
    for (const auto& [k, v] : s.reference_data) {
      const auto* d = std::get_if<double>(&v);
      if (!d) continue;
      const bool own = s.id == parameter_skill_id(p) && k.rfind("level.", 0) == 0;
      const bool comp = k.rfind(p + ".level.", 0) == 0;
      const bool endpoint = s.id == parameter_skill_id(p) && (k == "safe_lo" || k == "safe_hi");
      if (own || comp || endpoint) out.insert(*d);
    }
  }
  return {out.begin(), out.end()};
}

struct GridOptimum {
  Configuration config;
  double metric = 0.0;
  std::size_t points = 0;
};

// Exhaustive search over the product of the given per-parameter grids, all
// other parameters at defaults, with the noise-free model.
inline GridOptimum brute_force(const SimulatorAdapter& sim,
                               const std::vector<std::pair<std::string, std::vector<double>>>& grids,
                               const std::string& workload) {
  GridOptimum best;
  best.metric = -1.0;
  std::vector<std::size_t> idx(grids.size(), 0);
  for (;;) {
    Configuration c;
    for (std::size_t i = 0; i < grids.size(); ++i) c.set(grids[i].first, grids[i].second[idx[i]]);
    ++best.points;
    if (auto m = sim.evaluate(c, workload); m && *m > best.metric) {
      best.metric = *m;
      best.config = c;
    }
    std::size_t i = grids.size();
    while (i > 0) {
      --i;
      if (++idx[i] < grids[i].second.size()) break;
      idx[i] = 0;
      if (i == 0) return best;
    }
    if (grids.empty()) return best;
  }
}

// Smallest valid document: one orchestration skill with no steps.
inline ProceduralDocument trivial_document() {
  ProceduralDocument d;
  d.space = ParameterSpace({continuous_param("x", 0, 10, 5)});
  d.workloads = one_workload();
  d.fingerprint = {hex64(d.space.hash()), "trivial"};
  Skill root;
  root.id = "orchestrate";
  root.kind = SkillKind::orchestration;
  root.postconditions = {"true"};
  d.skills = {root};
  d.root = "orchestrate";
  d.edges = derive_edges(d.skills);
  return d;
}

inline int run_command(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace support
