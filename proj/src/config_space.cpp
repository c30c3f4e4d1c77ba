#include "perfskill/config_space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "perfskill/error.hpp"
#include "perfskill/hash.hpp"

namespace perfskill {

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParameterSpec::domain_lo() const {
  switch (kind) {
    case DomainKind::continuous:
    case DomainKind::integer:
      return lo;
    default:
      return 0.0;
  }
}

double ParameterSpec::domain_hi() const {
  switch (kind) {
    case DomainKind::continuous:
    case DomainKind::integer:
      return hi;
    case DomainKind::enumeration:
      return choices.empty() ? 0.0 : static_cast<double>(choices.size() - 1);
    case DomainKind::boolean:
      return 1.0;
  }
  return hi;
}

std::size_t ParameterSpec::cardinality() const {
  switch (kind) {
    case DomainKind::continuous:
      return 0;
    case DomainKind::integer:
      return static_cast<std::size_t>(hi - lo) + 1;
    case DomainKind::enumeration:
      return choices.size();
    case DomainKind::boolean:
      return 2;
  }
  return 0;
}

bool ParameterSpec::contains(double value) const {
  if (!std::isfinite(value)) return false;
  if (value < domain_lo() || value > domain_hi()) return false;
  if (kind != DomainKind::continuous && value != std::floor(value)) return false;
  return true;
}

double ParameterSpec::normalize(double value) const {
  const double a = domain_lo();
  const double b = domain_hi();
  if (b <= a) return 0.0;
  return (value - a) / (b - a);
}

std::string ParameterSpec::format_value(double value) const {
  switch (kind) {
    case DomainKind::continuous:
      return format_number(value);
    case DomainKind::integer:
      return std::to_string(static_cast<long long>(std::llround(value)));
    case DomainKind::enumeration: {
      auto idx = static_cast<long long>(std::llround(value));
      if (idx >= 0 && static_cast<std::size_t>(idx) < choices.size()) return choices[idx];
      return format_number(value);
    }
    case DomainKind::boolean:
      return value != 0.0 ? "true" : "false";
  }
  return format_number(value);
}

ParameterSpec continuous_param(std::string name, double lo, double hi, double def,
                               std::string unit) {
  ParameterSpec p;
  p.name = std::move(name);
  p.kind = DomainKind::continuous;
  p.lo = lo;
  p.hi = hi;
  p.default_value = def;
  p.unit = std::move(unit);
  check_spec(p);
  return p;
}

ParameterSpec integer_param(std::string name, long lo, long hi, long def, std::string unit) {
  ParameterSpec p;
  p.name = std::move(name);
  p.kind = DomainKind::integer;
  p.lo = static_cast<double>(lo);
  p.hi = static_cast<double>(hi);
  p.default_value = static_cast<double>(def);
  p.unit = std::move(unit);
  check_spec(p);
  return p;
}

ParameterSpec enum_param(std::string name, std::vector<std::string> choices,
                         std::size_t default_index) {
  ParameterSpec p;
  p.name = std::move(name);
  p.kind = DomainKind::enumeration;
  p.choices = std::move(choices);
  p.lo = 0.0;
  p.hi = p.choices.empty() ? 0.0 : static_cast<double>(p.choices.size() - 1);
  p.default_value = static_cast<double>(default_index);
  check_spec(p);
  return p;
}

ParameterSpec bool_param(std::string name, bool def) {
  ParameterSpec p;
  p.name = std::move(name);
  p.kind = DomainKind::boolean;
  p.lo = 0.0;
  p.hi = 1.0;
  p.default_value = def ? 1.0 : 0.0;
  check_spec(p);
  return p;
}

void check_spec(const ParameterSpec& p) {
  if (p.name.empty()) throw ParameterError("parameter with empty name");
  switch (p.kind) {
    case DomainKind::continuous:
    case DomainKind::integer:
      if (!(p.lo < p.hi)) {
        throw ParameterError("parameter " + p.name + ": lo must be < hi");
      }
      if (p.kind == DomainKind::integer &&
          (p.lo != std::floor(p.lo) || p.hi != std::floor(p.hi))) {
        throw ParameterError("parameter " + p.name + ": integer bounds must be integral");
      }
      if (p.scale == Scale::log && p.lo <= 0.0) {
        throw ParameterError("parameter " + p.name + ": log scale needs lo > 0");
      }
      break;
    case DomainKind::enumeration: {
      if (p.choices.empty()) {
        throw ParameterError("parameter " + p.name + ": empty enum value list");
      }
      std::set<std::string> seen(p.choices.begin(), p.choices.end());
      if (seen.size() != p.choices.size()) {
        throw ParameterError("parameter " + p.name + ": duplicate enum values");
      }
      break;
    }
    case DomainKind::boolean:
      break;
  }
  if (!p.contains(p.default_value)) {
    throw ParameterError("parameter " + p.name + ": default outside domain");
  }
  if (p.levels != 0 && (p.levels < 2 || p.levels > 9)) {
    throw ParameterError("parameter " + p.name + ": levels must be in [2,9]");
  }
}

ParameterSpace::ParameterSpace(std::vector<ParameterSpec> parameters)
    : parameters_(std::move(parameters)) {
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    check_spec(parameters_[i]);
    if (!index_.emplace(parameters_[i].name, i).second) {
      throw ParameterError("duplicate parameter name " + parameters_[i].name);
    }
  }
}

const ParameterSpec* ParameterSpace::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &parameters_[it->second];
}

const ParameterSpec& ParameterSpace::at(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw ParameterError("unknown parameter " + std::string(name));
  return *p;
}

std::uint64_t ParameterSpace::hash() const {
  nlohmann::json j = *this;
  return fnv1a(j.dump());
}

std::optional<double> Configuration::get(std::string_view name) const {
  auto it = values_.find(std::string(name));
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

double Configuration::value_or_default(const ParameterSpec& spec) const {
  auto v = get(spec.name);
  return v ? *v : spec.default_value;
}

std::uint64_t Configuration::hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, value] : values_) {
    h = fnv1a(name, h);
    h = fnv1a("=", h);
    h = fnv1a(format_number(value), h);
    h = fnv1a(";", h);
  }
  return h;
}

std::string Configuration::to_string() const {
  std::string out;
  for (const auto& [name, value] : values_) {
    if (!out.empty()) out += ',';
    out += name + "=" + format_number(value);
  }
  return out.empty() ? "{defaults}" : out;
}

Configuration resolve(const ParameterSpace& space, const Configuration& config) {
  Configuration out;
  for (const auto& p : space.parameters()) out.set(p.name, config.value_or_default(p));
  return out;
}

Configuration defaults_of(const ParameterSpace& space) {
  return resolve(space, Configuration{});
}

Configuration overlay(const Configuration& base, const Configuration& overrides) {
  Configuration out = base;
  for (const auto& [k, v] : overrides.assignments()) out.set(k, v);
  return out;
}

ValidationResult validate_configuration(const ParameterSpace& space,
                                        const Configuration& config) {
  ValidationResult result;
  for (const auto& [name, value] : config.assignments()) {
    const auto* spec = space.find(name);
    if (!spec) {
      result.violations.push_back({name, "unknown parameter " + name});
      continue;
    }
    if (spec->contains(value)) continue;
    std::string msg;
    switch (spec->kind) {
      case DomainKind::continuous:
      case DomainKind::integer:
        if (value < spec->lo || value > spec->hi || !std::isfinite(value)) {
          msg = name + " out of range [" + spec->format_value(spec->lo) + "," +
                spec->format_value(spec->hi) + "]";
        } else {
          msg = name + " must be an integer";
        }
        break;
      case DomainKind::enumeration:
        msg = name + " is not a valid choice index [0," +
              std::to_string(spec->choices.size() - 1) + "]";
        break;
      case DomainKind::boolean:
        msg = name + " must be 0 or 1";
        break;
    }
    result.violations.push_back({name, msg});
  }
  return result;
}

std::vector<double> level_grid(const ParameterSpec& spec, int count) {
  if (count < 2 || count > 9) {
    throw ParameterError("level count for " + spec.name + " must be in [2,9], got " +
                         std::to_string(count));
  }
  std::vector<double> out;
  if (spec.kind == DomainKind::enumeration || spec.kind == DomainKind::boolean) {
    // Enumerations may be restricted to a contiguous ordinal window.
    const auto first = static_cast<long>(spec.lo);
    const auto n = static_cast<long>(spec.hi) - first + 1;
    if (count > n) {
      throw ParameterError("level count for " + spec.name + " exceeds cardinality " +
                           std::to_string(n));
    }
    for (int k = 0; k < count; ++k) {
      out.push_back(static_cast<double>(
          first + std::lround(static_cast<double>(k) * (n - 1) / (count - 1))));
    }
    return out;
  }
  const double lo = spec.lo;
  const double hi = spec.hi;
  for (int k = 0; k < count; ++k) {
    double v;
    if (k == count - 1) {
      v = hi;
    } else if (spec.scale == Scale::log) {
      v = lo * std::pow(hi / lo, static_cast<double>(k) / (count - 1));
    } else {
      v = lo + k * (hi - lo) / (count - 1);
    }
    if (spec.kind == DomainKind::integer) v = std::round(v);
    if (out.empty() || v > out.back()) out.push_back(v);
  }
  return out;
}

ParameterSpec restrict_domain(const ParameterSpec& spec, double lo, double hi) {
  ParameterSpec out = spec;
  out.lo = lo;
  out.hi = hi;
  out.default_value = std::clamp(spec.default_value, lo, hi);
  return out;
}

std::string to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::continuous:
      return "continuous";
    case DomainKind::integer:
      return "integer";
    case DomainKind::enumeration:
      return "enum";
    case DomainKind::boolean:
      return "boolean";
  }
  return "?";
}

std::string to_string(Direction d) {
  return d == Direction::maximize ? "maximize" : "minimize";
}

Direction direction_from_string(std::string_view s) {
  if (s == "maximize") return Direction::maximize;
  if (s == "minimize") return Direction::minimize;
  throw ParameterError("direction must be maximize or minimize, got " + std::string(s));
}

void to_json(nlohmann::json& j, const ParameterSpec& p) {
  nlohmann::json domain;
  domain["type"] = to_string(p.kind);
  switch (p.kind) {
    case DomainKind::continuous:
      domain["lo"] = p.lo;
      domain["hi"] = p.hi;
      j["default"] = p.default_value;
      break;
    case DomainKind::integer:
      domain["lo"] = static_cast<long long>(p.lo);
      domain["hi"] = static_cast<long long>(p.hi);
      j["default"] = static_cast<long long>(p.default_value);
      break;
    case DomainKind::enumeration:
      domain["values"] = p.choices;
      j["default"] = p.choices.at(static_cast<std::size_t>(p.default_value));
      break;
    case DomainKind::boolean:
      j["default"] = p.default_value != 0.0;
      break;
  }
  j["name"] = p.name;
  j["domain"] = domain;
  j["unit"] = p.unit;
  j["restart_required"] = p.restart_required;
  j["scale"] = p.scale == Scale::log ? "log" : "linear";
  if (p.levels != 0) j["levels"] = p.levels;
}

void from_json(const nlohmann::json& j, ParameterSpec& p) {
  p = ParameterSpec{};
  p.name = j.at("name").get<std::string>();
  const auto& domain = j.at("domain");
  const auto type = domain.at("type").get<std::string>();
  const auto& def = j.at("default");
  if (type == "continuous" || type == "integer") {
    p.kind = type == "continuous" ? DomainKind::continuous : DomainKind::integer;
    p.lo = domain.at("lo").get<double>();
    p.hi = domain.at("hi").get<double>();
    p.default_value = def.get<double>();
  } else if (type == "enum") {
    p.kind = DomainKind::enumeration;
    p.choices = domain.at("values").get<std::vector<std::string>>();
    p.lo = 0.0;
    p.hi = p.choices.empty() ? 0.0 : static_cast<double>(p.choices.size() - 1);
    const auto name = def.get<std::string>();
    auto it = std::find(p.choices.begin(), p.choices.end(), name);
    if (it == p.choices.end()) {
      throw ParameterError("parameter " + p.name + ": default '" + name + "' not a choice");
    }
    p.default_value = static_cast<double>(it - p.choices.begin());
  } else if (type == "boolean") {
    p.kind = DomainKind::boolean;
    p.lo = 0.0;
    p.hi = 1.0;
    p.default_value = def.get<bool>() ? 1.0 : 0.0;
  } else {
    throw ParameterError("parameter " + p.name + ": unknown domain type " + type);
  }
  p.unit = j.value("unit", std::string{});
  p.restart_required = j.value("restart_required", false);
  const auto scale = j.value("scale", std::string{"linear"});
  if (scale == "log") {
    p.scale = Scale::log;
  } else if (scale != "linear") {
    throw ParameterError("parameter " + p.name + ": scale must be linear or log");
  }
  p.levels = j.value("levels", 0);
  check_spec(p);
}

void to_json(nlohmann::json& j, const ParameterSpace& s) {
  j = nlohmann::json::array();
  for (const auto& p : s.parameters()) j.push_back(p);
}

void from_json(const nlohmann::json& j, ParameterSpace& s) {
  s = ParameterSpace(j.get<std::vector<ParameterSpec>>());
}

void to_json(nlohmann::json& j, const WorkloadSpec& w) {
  j = {{"id", w.id}, {"metric_name", w.metric_name}, {"direction", to_string(w.direction)}};
}

void from_json(const nlohmann::json& j, WorkloadSpec& w) {
  w.id = j.at("id").get<std::string>();
  w.metric_name = j.value("metric_name", std::string{"throughput"});
  w.direction = direction_from_string(j.value("direction", std::string{"maximize"}));
}

void to_json(nlohmann::json& j, const Configuration& c) { j = c.assignments(); }

void from_json(const nlohmann::json& j, Configuration& c) {
  c = Configuration(j.get<std::map<std::string, double>>());
}

namespace {

void check_schema(const nlohmann::json& j) {
  const int version = j.value("schema_version", 0);
  if (version != kSchemaVersion) {
    throw ParameterError("unsupported schema_version " + std::to_string(version));
  }
}

std::vector<WorkloadSpec> checked_workloads(const nlohmann::json& arr) {
  auto out = arr.get<std::vector<WorkloadSpec>>();
  std::set<std::string> ids;
  for (const auto& w : out) {
    if (w.id.empty()) throw ParameterError("workload with empty id");
    if (!ids.insert(w.id).second) throw ParameterError("duplicate workload id " + w.id);
  }
  return out;
}

}  // namespace

SpaceFile parse_space_file(const nlohmann::json& j) {
  check_schema(j);
  SpaceFile out;
  out.space = j.at("parameters").get<ParameterSpace>();
  if (j.contains("workloads")) out.workloads = checked_workloads(j.at("workloads"));
  return out;
}

std::vector<WorkloadSpec> parse_workloads_file(const nlohmann::json& j) {
  check_schema(j);
  return checked_workloads(j.at("workloads"));
}

nlohmann::json space_file_json(const ParameterSpace& space,
                               const std::vector<WorkloadSpec>& workloads) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["parameters"] = space;
  j["workloads"] = workloads;
  return j;
}

}  // namespace perfskill
