#pragma once

// Config-driven coupled runs: builds the N-body and Hartree systems from an
// ExperimentConfig, propagates both, evaluates alpha, gamma, C^t and the
// density distances at every sample, runs the bound checks and persists
// report.json + timeseries.tsv. Also N-sweeps and re-checking of persisted
// series.

#include <nlohmann/json.hpp>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfcount/counting.hpp"
#include "mfcount/errors.hpp"
#include "mfcount/fock.hpp"
#include "mfcount/lattice.hpp"
#include "mfcount/meanfield.hpp"
#include "mfcount/sampling.hpp"
#include "mfcount/validation.hpp"

namespace mfcount {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Thrown for malformed or inconsistent configs (exit code 2).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct GridConfig {
  double length = 8.0;
  int points = 8;
  bool operator==(const GridConfig&) const = default;
};

struct InteractionConfig {
  std::string profile = "box";  // box | gaussian | cosine-bump
  double amplitude = 1.0;
  double width = 1.0;
  double beta = 0.0;
  bool operator==(const InteractionConfig&) const = default;
};

struct TrapConfig {
  std::string kind = "constant";     // constant | linear-ramp-off | quench
  std::string profile = "harmonic";  // harmonic | gaussian | box | cosine-bump
  double amplitude = 0.0;
  double width = 1.0;
  double ramp_time = 1.0;
  bool operator==(const TrapConfig&) const = default;
};

struct InitialConfig {
  std::string state = "product";  // product | one-defect | orbital-file
  double center = 0.0;
  double width = 1.0;
  double momentum = 0.0;
  std::string file;  // orbital-file: one "re im" pair per line
  bool operator==(const InitialConfig&) const = default;
};

struct WeightConfig {
  std::string family = "linear";  // linear | power | truncated | custom
  double parameter = 1.0;         // exponent j for power, gamma for truncated
  std::vector<double> table;      // custom
  bool operator==(const WeightConfig&) const = default;
};

struct TimeConfig {
  double dt = 1e-3;
  double t_final = 1.0;
  int sample_every = 1;
  std::string scheme = "splitting";  // splitting | explicit-rk4
  std::string propagator = "auto";   // auto | dense | krylov
  bool operator==(const TimeConfig&) const = default;
};

struct ChecksConfig {
  bool lemma2 = true;
  bool gronwall = true;
  bool lemma1 = true;
  bool derivative = false;  // adds a companion run at dt/2
  bool conservation = true;
  int random_states = 0;    // extra randomized Lemma 1/2 samples per run
  bool operator==(const ChecksConfig&) const = default;
};

struct ExperimentConfig {
  GridConfig grid;
  std::vector<int> particles{3};
  InteractionConfig interaction;
  TrapConfig trap;
  InitialConfig initial;
  std::vector<WeightConfig> weights{WeightConfig{}};
  std::vector<double> r_values{1.0, 1.5, 2.0, 4.0};
  TimeConfig time;
  ChecksConfig checks;
  std::string output = "runs/out";
  std::uint64_t seed = 1;
  bool operator==(const ExperimentConfig&) const = default;

  void validate() const;
};

// ---------------------------------------------------------------- JSON

inline void to_json(Json& j, const GridConfig& c) { j = {{"length", c.length}, {"points", c.points}}; }
inline void to_json(Json& j, const InteractionConfig& c) {
  j = {{"profile", c.profile}, {"amplitude", c.amplitude}, {"width", c.width}, {"beta", c.beta}};
}
inline void to_json(Json& j, const TrapConfig& c) {
  j = {{"kind", c.kind},   {"profile", c.profile},     {"amplitude", c.amplitude},
       {"width", c.width}, {"ramp_time", c.ramp_time}};
}
inline void to_json(Json& j, const InitialConfig& c) {
  j = {{"state", c.state}, {"center", c.center}, {"width", c.width}, {"momentum", c.momentum}, {"file", c.file}};
}
inline void to_json(Json& j, const WeightConfig& c) {
  j = {{"family", c.family}, {"parameter", c.parameter}};
  if (!c.table.empty()) j["table"] = c.table;
}
inline void to_json(Json& j, const TimeConfig& c) {
  j = {{"dt", c.dt},         {"t_final", c.t_final},       {"sample_every", c.sample_every},
       {"scheme", c.scheme}, {"propagator", c.propagator}};
}
inline void to_json(Json& j, const ChecksConfig& c) {
  j = {{"lemma2", c.lemma2},         {"gronwall", c.gronwall},         {"lemma1", c.lemma1},
       {"derivative", c.derivative}, {"conservation", c.conservation}, {"random_states", c.random_states}};
}
inline void to_json(Json& j, const ExperimentConfig& c) {
  j = {{"grid", c.grid},       {"particles", c.particles}, {"interaction", c.interaction},
       {"trap", c.trap},       {"initial", c.initial},     {"weights", c.weights},
       {"r_values", c.r_values}, {"time", c.time},         {"checks", c.checks},
       {"output", c.output},   {"seed", c.seed}};
}

namespace detail {

template <typename T>
void read_optional(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline const Json& require_object(const Json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("config is missing required section '") + key + "'");
  if (!j.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return j.at(key);
}

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

inline void from_json(const Json& j, GridConfig& c) {
  detail::check_keys(j, {"length", "points"}, "grid");
  if (!j.contains("length") || !j.contains("points")) throw ConfigError("grid needs 'length' and 'points'");
  detail::read_optional(j, "length", c.length);
  detail::read_optional(j, "points", c.points);
}
inline void from_json(const Json& j, InteractionConfig& c) {
  detail::check_keys(j, {"profile", "amplitude", "width", "beta"}, "interaction");
  detail::read_optional(j, "profile", c.profile);
  detail::read_optional(j, "amplitude", c.amplitude);
  detail::read_optional(j, "width", c.width);
  detail::read_optional(j, "beta", c.beta);
}
inline void from_json(const Json& j, TrapConfig& c) {
  detail::check_keys(j, {"kind", "profile", "amplitude", "width", "ramp_time"}, "trap");
  detail::read_optional(j, "kind", c.kind);
  detail::read_optional(j, "profile", c.profile);
  detail::read_optional(j, "amplitude", c.amplitude);
  detail::read_optional(j, "width", c.width);
  detail::read_optional(j, "ramp_time", c.ramp_time);
}
inline void from_json(const Json& j, InitialConfig& c) {
  detail::check_keys(j, {"state", "center", "width", "momentum", "file"}, "initial");
  detail::read_optional(j, "state", c.state);
  detail::read_optional(j, "center", c.center);
  detail::read_optional(j, "width", c.width);
  detail::read_optional(j, "momentum", c.momentum);
  detail::read_optional(j, "file", c.file);
}
inline void from_json(const Json& j, WeightConfig& c) {
  if (j.is_string()) {
    c = WeightConfig{};
    c.family = j.get<std::string>();
    return;
  }
  detail::check_keys(j, {"family", "parameter", "table"}, "weights entry");
  detail::read_optional(j, "family", c.family);
  detail::read_optional(j, "parameter", c.parameter);
  detail::read_optional(j, "table", c.table);
}
inline void from_json(const Json& j, TimeConfig& c) {
  detail::check_keys(j, {"dt", "t_final", "sample_every", "scheme", "propagator"}, "time");
  if (!j.contains("dt") || !j.contains("t_final")) throw ConfigError("time needs 'dt' and 't_final'");
  detail::read_optional(j, "dt", c.dt);
  detail::read_optional(j, "t_final", c.t_final);
  detail::read_optional(j, "sample_every", c.sample_every);
  detail::read_optional(j, "scheme", c.scheme);
  detail::read_optional(j, "propagator", c.propagator);
}
inline void from_json(const Json& j, ChecksConfig& c) {
  detail::check_keys(j, {"lemma2", "gronwall", "lemma1", "derivative", "conservation", "random_states"}, "checks");
  detail::read_optional(j, "lemma2", c.lemma2);
  detail::read_optional(j, "gronwall", c.gronwall);
  detail::read_optional(j, "lemma1", c.lemma1);
  detail::read_optional(j, "derivative", c.derivative);
  detail::read_optional(j, "conservation", c.conservation);
  detail::read_optional(j, "random_states", c.random_states);
}

inline void from_json(const Json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::check_keys(j,
                     {"grid", "particles", "interaction", "trap", "initial", "weights", "r_values", "time",
                      "checks", "output", "seed"},
                     "config");
  c = ExperimentConfig{};
  c.grid = detail::require_object(j, "grid").get<GridConfig>();
  if (!j.contains("particles")) throw ConfigError("config is missing required field 'particles'");
  if (j.at("particles").is_number_integer()) {
    c.particles = {j.at("particles").get<int>()};
  } else {
    detail::read_optional(j, "particles", c.particles);
  }
  c.time = detail::require_object(j, "time").get<TimeConfig>();
  if (j.contains("interaction")) c.interaction = j.at("interaction").get<InteractionConfig>();
  if (j.contains("trap")) c.trap = j.at("trap").get<TrapConfig>();
  if (j.contains("initial")) c.initial = j.at("initial").get<InitialConfig>();
  if (j.contains("weights")) c.weights = j.at("weights").get<std::vector<WeightConfig>>();
  if (j.contains("checks")) c.checks = j.at("checks").get<ChecksConfig>();
  detail::read_optional(j, "r_values", c.r_values);
  detail::read_optional(j, "output", c.output);
  detail::read_optional(j, "seed", c.seed);
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(grid.length > 0.0) || grid.points < 2) fail("grid needs length > 0 and points >= 2");
  if (particles.empty()) fail("particles list is empty");
  for (int n : particles)
    if (n < 1) fail("particle numbers must be >= 1");
  if (interaction.profile != "box" && interaction.profile != "gaussian" && interaction.profile != "cosine-bump")
    fail("interaction.profile must be box, gaussian or cosine-bump");
  if (!(interaction.width > 0.0)) fail("interaction.width must be positive");
  if (interaction.beta != 0.0)
    fail("interaction.beta must be 0: the Hartree comparison is defined for the mean-field scaling only");
  try {
    trap_kind_from_string(trap.kind);
  } catch (const InvalidArgument& e) {
    fail(std::string("trap.kind: ") + e.what());
  }
  if (trap.profile != "harmonic" && trap.profile != "gaussian" && trap.profile != "box" &&
      trap.profile != "cosine-bump")
    fail("trap.profile must be harmonic, gaussian, box or cosine-bump");
  if (trap.kind != "constant" && !(trap.ramp_time > 0.0)) fail("trap.ramp_time must be positive");
  if (!(trap.width > 0.0)) fail("trap.width must be positive");
  if (initial.state != "product" && initial.state != "one-defect" && initial.state != "orbital-file")
    fail("initial.state must be product, one-defect or orbital-file");
  if (initial.state == "orbital-file" && initial.file.empty()) fail("initial.file is required for orbital-file");
  if (!(initial.width > 0.0)) fail("initial.width must be positive");
  if (weights.empty()) fail("weights list is empty");
  for (const auto& w : weights) {
    if (w.family == "power" && !(w.parameter > 0.0)) fail("power weight needs parameter > 0");
    else if (w.family == "truncated" && !(w.parameter > 0.0 && w.parameter < 1.0))
      fail("truncated weight needs 0 < parameter < 1");
    else if (w.family == "custom" && w.table.size() < 2) fail("custom weight needs a table");
    else if (w.family != "linear" && w.family != "power" && w.family != "truncated" && w.family != "custom")
      fail("unknown weight family '" + w.family + "'");
  }
  if (r_values.empty()) fail("r_values is empty");
  for (double r : r_values)
    if (!(r >= 1.0)) fail("r values must be >= 1");
  if (!(time.dt > 0.0) || !(time.t_final >= 0.0)) fail("time needs dt > 0 and t_final >= 0");
  if (time.sample_every < 1) fail("time.sample_every must be >= 1");
  if (time.scheme != "splitting" && time.scheme != "explicit-rk4") fail("time.scheme must be splitting or explicit-rk4");
  if (time.propagator != "auto" && time.propagator != "dense" && time.propagator != "krylov")
    fail("time.propagator must be auto, dense or krylov");
  try {
    const long steps = HartreeParams{time.dt, time.t_final}.steps();
    if (steps % time.sample_every != 0) fail("t_final/dt must be a multiple of time.sample_every");
    if (checks.derivative && steps / time.sample_every < 2)
      fail("derivative check needs at least two sampled steps");
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    fail(std::string("time: ") + e.what());
  }
  if (checks.random_states < 0) fail("checks.random_states must be >= 0");
}

/// Parses JSON with // and /* */ comments.
inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const ConfigError&) {
    throw;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config error: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------- system construction

inline std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

inline WeightSpec make_weight(const WeightConfig& w, int particles) {
  if (w.family == "linear") return WeightSpec::linear(particles);
  if (w.family == "power") return WeightSpec::power(particles, w.parameter);
  if (w.family == "truncated") return WeightSpec::truncated(particles, w.parameter);
  if (w.table.size() != static_cast<std::size_t>(particles) + 1)
    throw ConfigError("custom weight table needs N + 1 = " + std::to_string(particles + 1) + " entries");
  return WeightSpec::custom(w.table);
}

inline LatticeField make_profile(const GridSpec& grid, const std::string& profile, double amplitude,
                                 double width) {
  if (profile == "box") return box_profile(grid, amplitude, width);
  if (profile == "gaussian") return gaussian_profile(grid, amplitude, width);
  if (profile == "cosine-bump") return cosine_bump_profile(grid, amplitude, width);
  if (profile == "harmonic")
    return LatticeField::sample_displacement(grid, [&](double x) { return Complex(amplitude * x * x / (width * width)); });
  throw ConfigError("unknown profile '" + profile + "'");
}

inline Orbital load_orbital_file(const GridSpec& grid, const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open orbital file " + file);
  ComplexVector v(grid.points);
  for (int i = 0; i < grid.points; ++i) {
    double re = 0.0, im = 0.0;
    if (!(in >> re >> im)) throw ConfigError("orbital file " + file + " needs " + std::to_string(grid.points) + " 're im' rows");
    v[i] = Complex(re, im);
  }
  return Orbital::normalized(LatticeField(grid, v));
}

/// Normalized Gaussian wave packet exp(-d^2 / 2w^2 + i k x), d the periodic distance to the center.
inline Orbital wave_packet(const GridSpec& grid, double center, double width, double momentum) {
  return Orbital::normalized(LatticeField::sample(grid, [&](double x) {
    double d = x - center;
    d -= grid.length * std::round(d / grid.length);
    return std::exp(-0.5 * d * d / (width * width)) * std::polar(1.0, momentum * x);
  }));
}

/// phi times the first plane wave that is not parallel to it, orthogonalized against phi.
inline Orbital defect_orbital(const Orbital& phi) {
  const GridSpec& g = phi.grid();
  const ComplexVector u = phi.mode_vector();
  for (int shift = 1; shift < g.points; ++shift) {
    ComplexVector w(g.points);
    for (int i = 0; i < g.points; ++i) w[i] = u[i] * std::polar(1.0, 2.0 * std::numbers::pi * shift * i / g.points);
    w -= u * u.dot(w);
    w -= u * u.dot(w);
    if (w.norm() > 1e-6) return Orbital::from_mode_vector(g, w.normalized());
  }
  ComplexVector e = ComplexVector::Zero(g.points);
  e[0] = 1.0;
  e -= u * u.dot(e);
  return Orbital::from_mode_vector(g, e.normalized());
}

struct CoupledSystem {
  GridSpec grid;
  int particles = 1;
  LatticeField v_base;    // Hartree kernel v
  LatticeField v_scaled;  // v / N in the N-body Hamiltonian
  TrapProtocol trap;
  Orbital phi0;
  BasisPtr basis;
  ManyBodyState psi0;
  std::vector<WeightSpec> weights;
};

inline CoupledSystem build_system(const ExperimentConfig& c, int particles) {
  const GridSpec grid = build_grid(c.grid.length, c.grid.points);
  const LatticeField v = make_profile(grid, c.interaction.profile, c.interaction.amplitude, c.interaction.width);
  const LatticeField v_scaled = sample_interaction(v, particles, c.interaction.beta);
  const TrapProtocol trap(trap_kind_from_string(c.trap.kind),
                          make_profile(grid, c.trap.profile, c.trap.amplitude, c.trap.width), c.trap.ramp_time);
  const Orbital phi0 = c.initial.state == "orbital-file"
                           ? load_orbital_file(grid, c.initial.file)
                           : wave_packet(grid, c.initial.center, c.initial.width, c.initial.momentum);
  BasisPtr basis = make_basis(grid.points, particles);
  ManyBodyState psi0 = c.initial.state == "one-defect" ? one_defect_state(phi0, defect_orbital(phi0), basis)
                                                       : product_state(phi0, basis);
  std::vector<WeightSpec> weights;
  for (const auto& w : c.weights) weights.push_back(make_weight(w, particles));
  return {grid, particles, v, v_scaled, trap, phi0, basis, std::move(psi0), std::move(weights)};
}

// ---------------------------------------------------------------- run

/// Columnar time series in a fixed column order.
struct TimeSeries {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> data;  // data[column][row]

  std::size_t rows() const { return data.empty() ? 0 : data.front().size(); }

  int index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }
  bool has(const std::string& name) const { return index(name) >= 0; }

  const std::vector<double>& column(const std::string& name) const {
    const int i = index(name);
    if (i < 0) throw InvalidArgument("time series has no column '" + name + "'");
    return data[i];
  }

  std::vector<double>& add(const std::string& name) {
    columns.push_back(name);
    data.emplace_back();
    return data.back();
  }
};

inline std::string c_t_column(double r) { return "c_t_r" + format_number(r); }
inline std::string gronwall_column(double r) { return "gronwall_bound_r" + format_number(r); }

/// Aggregate of one family of bound checks.
struct CheckSummary {
  CheckSummary(std::string n = {}) : name(std::move(n)) {}

  std::string name;
  bool enabled = true;
  long evaluated = 0;
  long violations = 0;
  double worst_margin = kInfinity;  // most negative margin minus tolerance seen
  double tolerance = 0.0;
  std::vector<BoundCheck> worst;    // up to kKeepWorst entries with the smallest margins

  static constexpr std::size_t kKeepWorst = 5;

  bool passed() const { return !enabled || violations == 0; }

  void add(const BoundCheck& c) {
    ++evaluated;
    tolerance = c.tolerance;
    if (!c.passed) ++violations;
    worst_margin = std::min(worst_margin, c.margin);
    worst.push_back(c);
    std::sort(worst.begin(), worst.end(), [](const BoundCheck& a, const BoundCheck& b) { return a.margin < b.margin; });
    if (worst.size() > kKeepWorst) worst.pop_back();
  }
};

struct RunReport {
  ExperimentConfig config;
  int particles = 0;
  TimeSeries series;
  std::vector<CheckSummary> checks;
  std::optional<DerivativeCheck> derivative;
  std::vector<std::string> warnings;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed()) return false;
    return !derivative || derivative->passed;
  }

  const CheckSummary* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline constexpr double kGronwallTolerance = 1e-6;
inline constexpr double kConservationTolerance = 1e-8;
inline constexpr double kCondensationTolerance = 1e-9;
inline constexpr double kIdentityTolerance = 1e-10;
inline constexpr double kGammaAgreement = 1e-9;

namespace detail {

inline PropagatorOptions propagator_options(const TimeConfig& t, const CoupledSystem& s) {
  PropagatorOptions o;
  if (t.propagator == "dense") {
    o.dense_threshold = std::numeric_limits<std::size_t>::max();
  } else if (t.propagator == "krylov") {
    o.dense_threshold = 0;
  } else if (!s.trap.is_time_independent()) {
    // A time-dependent trap invalidates the cached eigendecomposition every step.
    o.dense_threshold = 200;
  }
  return o;
}

inline HartreeScheme scheme_of(const TimeConfig& t) {
  return t.scheme == "explicit-rk4" ? HartreeScheme::ExplicitRk4 : HartreeScheme::Splitting;
}

/// Raw coupled evolution: fills the schema columns at every sample.
inline TimeSeries propagate(const ExperimentConfig& c, const CoupledSystem& s, double dt,
                            std::vector<std::string>& warnings) {
  const long steps = HartreeParams{dt, c.time.t_final}.steps();
  const int every = c.time.sample_every;
  const int n = s.particles;
  const WeightSpec linear = WeightSpec::linear(n);

  TimeSeries ts;
  for (const char* name : {"time", "alpha", "gamma"}) ts.add(name);
  for (double r : c.r_values) ts.add(c_t_column(r));
  for (const char* name : {"gronwall_bound", "op_distance", "trace_distance", "nbody_norm_drift",
                           "hartree_norm_drift", "energy", "gamma_reduced", "gamma_imaginary",
                           "identity_residual", "interpolation_margin"})
    ts.add(name);
  std::vector<std::string> weight_columns;
  for (const auto& w : s.weights) {
    weight_columns.push_back("alpha_" + w.name());
    ts.add(weight_columns.back());
  }
  for (double r : c.r_values) ts.add(gronwall_column(r));
  auto col = [&](const std::string& name) -> std::vector<double>& { return ts.data[ts.index(name)]; };

  SchroedingerPropagator prop(HamiltonianSpec{s.grid, s.v_scaled, s.trap, n}, s.basis,
                              propagator_options(c.time, s));
  const HartreeScheme scheme = scheme_of(c.time);
  ManyBodyState psi = s.psi0;
  LatticeField phi_field = s.phi0.field();
  double worst_gamma_gap = 0.0, worst_imag = 0.0;

  for (long k = 0; k <= steps; ++k) {
    const double t = k * dt;
    if (k % every == 0) {
      const Orbital phi = Orbital::normalized(phi_field);
      const CountingSpectrum spectrum = counting_spectrum(psi.normalized(), phi);
      const GammaResult g = gamma_details(psi, phi, s.v_scaled);
      const ReducedDensity mu = reduced_density(psi);
      col("time").push_back(t);
      col("alpha").push_back(alpha(spectrum, linear));
      col("gamma").push_back(g.value);
      col("gamma_reduced").push_back(g.reduced_value);
      col("gamma_imaginary").push_back(g.imaginary_residual);
      for (double r : c.r_values) col(c_t_column(r)).push_back(10.0 * c_phi(s.v_base, phi, r));
      col("op_distance").push_back(density_distance(mu, phi, DensityNorm::Operator));
      col("trace_distance").push_back(density_distance(mu, phi, DensityNorm::Trace));
      col("nbody_norm_drift").push_back(std::abs(psi.norm() - 1.0));
      col("hartree_norm_drift").push_back(std::abs(lp_norm(phi_field, 2.0) - 1.0));
      col("energy").push_back(prop.energy(psi, t));
      const ComplexVector u = phi.mode_vector();
      col("identity_residual").push_back(std::abs(1.0 - u.dot(mu.matrix * u).real() - col("alpha").back()));
      double margin = kInfinity;
      for (double j : {0.5, 1.0, 2.0})
        for (double l : {0.5, 1.0, 2.0}) margin = std::min(margin, lemma1_interpolation_check(spectrum, j, l).margin);
      col("interpolation_margin").push_back(margin);
      for (std::size_t w = 0; w < s.weights.size(); ++w) col(weight_columns[w]).push_back(alpha(spectrum, s.weights[w]));
      worst_gamma_gap = std::max(worst_gamma_gap, std::abs(g.value - g.reduced_value));
      worst_imag = std::max(worst_imag, g.imaginary_residual);
    }
    if (k == steps) break;
    psi = prop.step(psi, t, dt);
    phi_field = hartree_step(phi_field, s.trap, s.v_base, t, dt, scheme);
  }

  const auto& times = col("time");
  const double alpha0 = col("alpha").front();
  std::vector<double>& best = col("gronwall_bound");
  best.assign(times.size(), kInfinity);
  for (double r : c.r_values) {
    auto bound = gronwall_bound(alpha0, col(c_t_column(r)), times, n);
    for (std::size_t i = 0; i < bound.size(); ++i) best[i] = std::min(best[i], bound[i]);
    col(gronwall_column(r)) = std::move(bound);
  }

  if (worst_gamma_gap > kGammaAgreement)
    warnings.push_back("direct and reduced gamma differ by up to " + format_number(worst_gamma_gap));
  if (worst_imag > 1e-10) warnings.push_back("gamma has an imaginary residual up to " + format_number(worst_imag));
  return ts;
}

}  // namespace detail

/// Check suite evaluated on persisted columns. Used both after a run and by `check`.
inline std::vector<CheckSummary> evaluate_checks(const TimeSeries& ts, const ChecksConfig& checks,
                                                 const std::vector<double>& r_values, int particles,
                                                 bool time_independent) {
  std::vector<CheckSummary> out;
  const auto& times = ts.column("time");
  const auto& alpha_series = ts.column("alpha");
  const std::size_t rows = ts.rows();
  if (rows == 0) throw InvalidArgument("time series is empty");

  if (checks.lemma2) {
    for (double r : r_values) {
      CheckSummary s{"lemma2_r" + format_number(r)};
      const auto& c_t = ts.column(c_t_column(r));
      const auto& g = ts.column("gamma");
      for (std::size_t i = 0; i < rows; ++i)
        s.add(make_check(times[i], std::abs(g[i]), c_t[i] * (alpha_series[i] + 1.0 / particles), kLemma2Tolerance));
      out.push_back(std::move(s));
    }
  }
  if (checks.gronwall) {
    for (double r : r_values) {
      CheckSummary s{"gronwall_r" + format_number(r)};
      const auto bound = gronwall_bound(alpha_series.front(), ts.column(c_t_column(r)), times, particles);
      for (std::size_t i = 0; i < rows; ++i) s.add(make_check(times[i], alpha_series[i], bound[i], kGronwallTolerance));
      out.push_back(std::move(s));
    }
  }
  if (checks.lemma1) {
    CheckSummary s{"lemma1_operator"};
    const auto& op = ts.column("op_distance");
    for (std::size_t i = 0; i < rows; ++i) {
      const double a = std::max(alpha_series[i], 0.0);
      s.add(make_check(times[i], op[i], 2.0 * std::sqrt(a) + 2.0 * a, kCondensationTolerance));
    }
    out.push_back(std::move(s));
    if (ts.has("identity_residual")) {
      CheckSummary id{"lemma1_identity"};
      const auto& res = ts.column("identity_residual");
      for (std::size_t i = 0; i < rows; ++i) id.add(make_check(times[i], res[i], 0.0, kIdentityTolerance));
      out.push_back(std::move(id));
    }
    if (ts.has("interpolation_margin")) {
      CheckSummary in{"lemma1_interpolation"};
      const auto& m = ts.column("interpolation_margin");
      for (std::size_t i = 0; i < rows; ++i) in.add(make_check(times[i], 0.0, m[i], kInterpolationTolerance));
      out.push_back(std::move(in));
    }
  }
  if (checks.conservation) {
    CheckSummary s{"conservation"};
    const auto& nb = ts.column("nbody_norm_drift");
    const auto& hn = ts.column("hartree_norm_drift");
    const auto& e = ts.column("energy");
    for (std::size_t i = 0; i < rows; ++i) {
      double drift = std::max(nb[i], hn[i]);
      if (time_independent) drift = std::max(drift, std::abs(e[i] - e.front()));
      s.add(make_check(times[i], drift, 0.0, kConservationTolerance));
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

/// Randomized Lemma 1 / Lemma 2 samples on the run's grid and interaction.
inline std::vector<CheckSummary> random_state_checks(const ExperimentConfig& c, const CoupledSystem& s) {
  Rng rng(c.seed * 1000003ULL + static_cast<std::uint64_t>(s.particles));
  CheckSummary l2{"random_lemma2"}, interp{"random_interpolation"}, cond{"random_condensation"};
  for (int trial = 0; trial < c.checks.random_states; ++trial) {
    const Orbital phi = random_orbital(s.grid, rng);
    const ManyBodyState psi = trial % 2 ? random_state(s.basis, rng) : near_condensate_state(phi, s.basis, 0.1, rng);
    for (double r : c.r_values) l2.add(lemma2_check(psi, phi, s.v_scaled, r));
    const auto spectrum = counting_spectrum(psi, phi);
    for (double j : {0.5, 1.0, 2.0})
      for (double l : {0.5, 1.0, 2.0}) interp.add(lemma1_interpolation_check(spectrum, j, l));
    const auto report = condensation_equivalence_report(psi, phi);
    cond.add(report.operator_bound);
    cond.add(make_check(0.0, report.identity_residual, 0.0, kIdentityTolerance));
  }
  return {l2, interp, cond};
}

}  // namespace detail

/// Runs one particle number from a validated config; nothing is written.
inline RunReport simulate(const ExperimentConfig& c, int particles) {
  c.validate();
  RunReport report;
  report.config = c;
  report.particles = particles;
  const CoupledSystem s = build_system(c, particles);
  report.series = detail::propagate(c, s, c.time.dt, report.warnings);
  report.checks = evaluate_checks(report.series, c.checks, c.r_values, particles, s.trap.is_time_independent());

  if (c.checks.derivative) {
    std::vector<std::string> ignored;
    const TimeSeries fine = detail::propagate(c, s, 0.5 * c.time.dt, ignored);
    auto samples = [](const TimeSeries& t) {
      return DynamicsSamples{t.column("time"), t.column("alpha"), t.column("gamma")};
    };
    report.derivative = alpha_derivative_check(samples(report.series), samples(fine));
  }

  if (c.checks.random_states > 0)
    for (auto& summary : detail::random_state_checks(c, s)) report.checks.push_back(std::move(summary));
  return report;
}

// ---------------------------------------------------------------- persistence

inline Json check_to_json(const BoundCheck& b) {
  return {{"time", b.time}, {"lhs", b.lhs}, {"rhs", b.rhs}, {"margin", b.margin}, {"tolerance", b.tolerance},
          {"passed", b.passed}};
}

inline Json summary_to_json(const CheckSummary& s) {
  Json worst = Json::array();
  for (const auto& b : s.worst) worst.push_back(check_to_json(b));
  return {{"name", s.name},
          {"evaluated", s.evaluated},
          {"violations", s.violations},
          {"worst_margin", std::isfinite(s.worst_margin) ? Json(s.worst_margin) : Json(nullptr)},
          {"tolerance", s.tolerance},
          {"passed", s.passed()},
          {"worst", worst}};
}

inline Json report_to_json(const RunReport& r) {
  Json checks = Json::array();
  for (const auto& s : r.checks) checks.push_back(summary_to_json(s));
  Json j = {{"config", r.config},
            {"particles", r.particles},
            {"passed", r.passed()},
            {"checks", checks},
            {"warnings", r.warnings},
            {"columns", r.series.columns},
            {"rows", r.series.rows()},
            {"timeseries", "timeseries.tsv"}};
  if (r.derivative) {
    j["derivative"] = {{"coarse_residual", r.derivative->coarse_residual},
                       {"fine_residual", r.derivative->fine_residual},
                       {"ratio", r.derivative->ratio},
                       {"passed", r.derivative->passed}};
  }
  return j;
}

inline void write_timeseries(const TimeSeries& ts, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t c = 0; c < ts.columns.size(); ++c) out << (c ? "\t" : "") << ts.columns[c];
  out << '\n';
  char buf[40];
  for (std::size_t row = 0; row < ts.rows(); ++row) {
    for (std::size_t c = 0; c < ts.columns.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ts.data[c][row]);
      out << (c ? "\t" : "") << buf;
    }
    out << '\n';
  }
}

inline TimeSeries read_timeseries(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  TimeSeries ts;
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path.string() + " is empty");
  std::stringstream header(line);
  std::string name;
  while (std::getline(header, name, '\t')) ts.add(name);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(row, cell, '\t')) {
      if (c >= ts.columns.size()) throw InvalidArgument("too many cells in " + path.string());
      ts.data[c++].push_back(std::strtod(cell.c_str(), nullptr));
    }
    if (c != ts.columns.size()) throw InvalidArgument("short row in " + path.string());
  }
  return ts;
}

inline void write_json(const Json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void persist(const RunReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_timeseries(r.series, dir / "timeseries.tsv");
  write_json(report_to_json(r), dir / "report.json");
}

// ---------------------------------------------------------------- exit codes and errors

enum ExitCode : int { kExitPass = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitCapacity = 3, kExitInstability = 4 };

inline void write_error(const fs::path& dir, const std::string& kind, const std::string& message, int code) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return;
  write_json({{"error", kind}, {"message", message}, {"exit_code", code}}, dir / "error.json");
}

struct RunOutcome {
  int exit_code = kExitPass;
  std::optional<RunReport> report;
  std::string error;
};

/// Runs, persists and classifies one particle number. Never throws for
/// config, capacity or instability failures; those land in error.json.
inline RunOutcome execute_run(const ExperimentConfig& c, int particles, const fs::path& dir, bool strict = false) {
  RunOutcome o;
  try {
    RunReport r = simulate(c, particles);
    persist(r, dir);
    o.exit_code = r.passed() && !(strict && !r.warnings.empty()) ? kExitPass : kExitCheckFailed;
    o.report = std::move(r);
  } catch (const CapacityError& e) {
    o = {kExitCapacity, std::nullopt, e.what()};
    write_error(dir, "capacity", e.what(), o.exit_code);
  } catch (const InstabilityError& e) {
    o = {kExitInstability, std::nullopt, e.what()};
    write_error(dir, "instability", e.what(), o.exit_code);
  } catch (const InvalidArgument& e) {
    o = {kExitConfig, std::nullopt, e.what()};
    write_error(dir, "config", e.what(), o.exit_code);
  }
  return o;
}

// ---------------------------------------------------------------- sweep

struct SweepEntry {
  int particles = 0;
  std::string directory;
  int exit_code = 0;
  std::string error;
  double max_alpha = std::nan("");
  double envelope = std::nan("");  // (e^{int C} - 1)/N at t_final, best r
  bool within_envelope = false;
};

struct SweepReport {
  std::vector<SweepEntry> entries;
  double slope = std::nan("");
  double slope_stderr = std::nan("");
  double slope_low = std::nan("");
  double slope_high = std::nan("");
  bool decreasing = false;
  bool passed = false;
};

/// Least-squares slope of log y on log x with a 95% Student-t band.
inline void fit_loglog(const std::vector<double>& x, const std::vector<double>& y, SweepReport& out) {
  const std::size_t n = x.size();
  if (n < 2) return;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
  }
  out.slope = sxy / sxx;
  if (n < 3) return;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::log(y[i]) - my - out.slope * (std::log(x[i]) - mx);
    sse += e * e;
  }
  out.slope_stderr = std::sqrt(sse / (n - 2) / sxx);
  const boost::math::students_t dist(static_cast<double>(n - 2));
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  out.slope_low = out.slope - q * out.slope_stderr;
  out.slope_high = out.slope + q * out.slope_stderr;
}

inline std::string sweep_directory_name(std::size_t index, int particles) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run%02zu_N%d", index, particles);
  return buf;
}

inline Json sweep_to_json(const SweepReport& s) {
  Json entries = Json::array();
  for (const auto& e : s.entries) {
    auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
    entries.push_back({{"particles", e.particles},
                       {"directory", e.directory},
                       {"exit_code", e.exit_code},
                       {"error", e.error},
                       {"max_alpha", num(e.max_alpha)},
                       {"envelope", num(e.envelope)},
                       {"within_envelope", e.within_envelope}});
  }
  auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  return {{"entries", entries},
          {"slope", num(s.slope)},
          {"slope_stderr", num(s.slope_stderr)},
          {"slope_ci95", {num(s.slope_low), num(s.slope_high)}},
          {"max_alpha_decreasing", s.decreasing},
          {"passed", s.passed}};
}

/// Runs every particle number of the config into dir/runNN_N<n>, with up to
/// `jobs` runs in flight, and writes dir/sweep.json.
inline SweepReport execute_sweep(const ExperimentConfig& c, const fs::path& dir, int jobs = 1, bool strict = false) {
  if (c.particles.empty()) throw InvalidArgument("sweep needs a non-empty particle list");
  fs::create_directories(dir);
  SweepReport sweep;
  sweep.entries.resize(c.particles.size());
  auto work = [&](std::size_t i) {
    const int n = c.particles[i];
    SweepEntry& e = sweep.entries[i];
    e.particles = n;
    e.directory = sweep_directory_name(i, n);
    const RunOutcome o = execute_run(c, n, dir / e.directory, strict);
    e.exit_code = o.exit_code;
    e.error = o.error;
    if (o.report) {
      const auto& a = o.report->series.column("alpha");
      e.max_alpha = *std::max_element(a.begin(), a.end());
      double best = kInfinity;
      for (double r : c.r_values) {
        const auto bound = gronwall_bound(0.0, o.report->series.column(c_t_column(r)), o.report->series.column("time"), n);
        best = std::min(best, bound.back());
      }
      e.envelope = best;
      e.within_envelope = e.max_alpha <= best + kGronwallTolerance;
    }
  };
  const std::size_t width = static_cast<std::size_t>(std::max(1, jobs));
  for (std::size_t start = 0; start < c.particles.size(); start += width) {
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < std::min(start + width, c.particles.size()); ++i)
      batch.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred, work, i));
    for (auto& f : batch) f.get();
  }

  std::vector<double> xs, ys;
  bool all_ok = true;
  for (const auto& e : sweep.entries) {
    all_ok = all_ok && e.exit_code == kExitPass && e.within_envelope;
    if (std::isfinite(e.max_alpha) && e.max_alpha > 0.0) {
      xs.push_back(e.particles);
      ys.push_back(e.max_alpha);
    }
  }
  fit_loglog(xs, ys, sweep);
  std::vector<std::pair<double, double>> sorted;
  for (std::size_t i = 0; i < xs.size(); ++i) sorted.emplace_back(xs[i], ys[i]);
  std::sort(sorted.begin(), sorted.end());
  sweep.decreasing = sorted.size() >= 2;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].first > sorted[i - 1].first && !(sorted[i].second < sorted[i - 1].second)) sweep.decreasing = false;
  sweep.passed = all_ok;
  Json j = sweep_to_json(sweep);
  j["config"] = c;
  write_json(j, dir / "sweep.json");
  return sweep;
}

// ---------------------------------------------------------------- check

struct CheckOutcome {
  std::vector<CheckSummary> checks;
  bool passed = true;
};

/// Re-runs the series-level checks on a persisted run directory.
inline CheckOutcome recheck_run(const fs::path& dir) {
  const Json report = read_json(dir / "report.json");
  const ExperimentConfig c = report.at("config").get<ExperimentConfig>();
  const int n = report.at("particles").get<int>();
  const TimeSeries ts = read_timeseries(dir / "timeseries.tsv");
  CheckOutcome out;
  out.checks = evaluate_checks(ts, c.checks, c.r_values, n, trap_kind_from_string(c.trap.kind) == TrapKind::Constant);
  for (const auto& s : out.checks) out.passed = out.passed && s.passed();
  return out;
}

/// Re-checks a single run directory or every run of a sweep directory.
inline CheckOutcome recheck_directory(const fs::path& dir) {
  if (!fs::exists(dir / "sweep.json")) return recheck_run(dir);
  const Json sweep = read_json(dir / "sweep.json");
  CheckOutcome out;
  for (const auto& e : sweep.at("entries")) {
    const fs::path run = dir / e.at("directory").get<std::string>();
    if (!fs::exists(run / "report.json")) {
      out.passed = false;
      continue;
    }
    CheckOutcome one = recheck_run(run);
    for (auto& c : one.checks) {
      c.name = e.at("directory").get<std::string>() + "/" + c.name;
      out.checks.push_back(std::move(c));
    }
    out.passed = out.passed && one.passed;
  }
  return out;
}

}  // namespace mfcount
