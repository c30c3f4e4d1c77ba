#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace perfskill {

enum class DomainKind { continuous, integer, enumeration, boolean };
enum class Scale { linear, log };

// A tunable knob. Enumeration and boolean values are ordinal-encoded: the
// numeric value of a choice is its declaration index (false=0, true=1).
struct ParameterSpec {
  std::string name;
  DomainKind kind = DomainKind::continuous;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> choices;
  double default_value = 0.0;
  std::string unit;
  bool restart_required = false;
  Scale scale = Scale::linear;
  // Sweep level count for this parameter; 0 defers to the campaign setting.
  int levels = 0;

  bool operator==(const ParameterSpec&) const = default;

  double domain_lo() const;
  double domain_hi() const;
  // Number of distinct values, 0 for continuous domains.
  std::size_t cardinality() const;
  bool contains(double value) const;
  // Position of value within the domain, mapped to [0, 1].
  double normalize(double value) const;
  std::string format_value(double value) const;
};

ParameterSpec continuous_param(std::string name, double lo, double hi, double def,
                               std::string unit = {});
ParameterSpec integer_param(std::string name, long lo, long hi, long def,
                            std::string unit = {});
ParameterSpec enum_param(std::string name, std::vector<std::string> choices,
                         std::size_t default_index);
ParameterSpec bool_param(std::string name, bool def);

// Throws ParameterError when the spec violates its domain invariants.
void check_spec(const ParameterSpec& spec);

class ParameterSpace {
 public:
  ParameterSpace() = default;
  explicit ParameterSpace(std::vector<ParameterSpec> parameters);

  const std::vector<ParameterSpec>& parameters() const { return parameters_; }
  std::size_t size() const { return parameters_.size(); }
  bool empty() const { return parameters_.empty(); }

  const ParameterSpec* find(std::string_view name) const;
  const ParameterSpec& at(std::string_view name) const;

  // FNV-1a over the canonical serialization.
  std::uint64_t hash() const;

  bool operator==(const ParameterSpace& other) const {
    return parameters_ == other.parameters_;
  }

 private:
  std::vector<ParameterSpec> parameters_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Sparse assignment of parameter values; anything unassigned is at default.
class Configuration {
 public:
  Configuration() = default;
  Configuration(std::initializer_list<std::pair<const std::string, double>> init)
      : values_(init) {}
  explicit Configuration(std::map<std::string, double> values)
      : values_(std::move(values)) {}

  void set(const std::string& name, double value) { values_[name] = value; }
  void erase(const std::string& name) { values_.erase(name); }
  std::optional<double> get(std::string_view name) const;
  double value_or_default(const ParameterSpec& spec) const;

  const std::map<std::string, double>& assignments() const { return values_; }
  bool empty() const { return values_.empty(); }
  std::size_t size() const { return values_.size(); }

  // Hash of the explicit assignments (not the resolved point).
  std::uint64_t hash() const;
  std::string to_string() const;

  bool operator==(const Configuration&) const = default;
  bool operator<(const Configuration& other) const { return values_ < other.values_; }

 private:
  std::map<std::string, double> values_;
};

// Every parameter of the space assigned explicitly.
Configuration resolve(const ParameterSpace& space, const Configuration& config);
Configuration defaults_of(const ParameterSpace& space);
// Applies overrides on top of base.
Configuration overlay(const Configuration& base, const Configuration& overrides);

struct Violation {
  std::string parameter;
  std::string message;
  bool operator==(const Violation&) const = default;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationResult validate_configuration(const ParameterSpace& space,
                                        const Configuration& config);

// Uniformly spaced (or geometric, for Scale::log) levels across the domain.
std::vector<double> level_grid(const ParameterSpec& spec, int count);

// Copy of spec whose domain is narrowed to [lo, hi]; the default is clamped.
ParameterSpec restrict_domain(const ParameterSpec& spec, double lo, double hi);

enum class Direction { maximize, minimize };

struct WorkloadSpec {
  std::string id;
  std::string metric_name;
  Direction direction = Direction::maximize;
  bool operator==(const WorkloadSpec&) const = default;
};

// True when a is strictly better than b under the direction.
inline bool better(Direction d, double a, double b) {
  return d == Direction::maximize ? a > b : a < b;
}

std::string to_string(DomainKind kind);
std::string to_string(Direction d);
Direction direction_from_string(std::string_view s);

void to_json(nlohmann::json& j, const ParameterSpec& p);
void from_json(const nlohmann::json& j, ParameterSpec& p);
void to_json(nlohmann::json& j, const ParameterSpace& s);
void from_json(const nlohmann::json& j, ParameterSpace& s);
void to_json(nlohmann::json& j, const WorkloadSpec& w);
void from_json(const nlohmann::json& j, WorkloadSpec& w);
void to_json(nlohmann::json& j, const Configuration& c);
void from_json(const nlohmann::json& j, Configuration& c);

struct SpaceFile {
  ParameterSpace space;
  std::vector<WorkloadSpec> workloads;
};

inline constexpr int kSchemaVersion = 1;

// Reads a space declaration ({"schema_version":1,"parameters":[...],
// "workloads":[...]}); the workload list is optional.
SpaceFile parse_space_file(const nlohmann::json& j);
std::vector<WorkloadSpec> parse_workloads_file(const nlohmann::json& j);
nlohmann::json space_file_json(const ParameterSpace& space,
                               const std::vector<WorkloadSpec>& workloads);

std::string format_number(double v);

}  // namespace perfskill
