#pragma once

// Reduced-order coupled piezoelectric/structural model.
//
// The host structure is a fixed-free chain of n lumped masses. Segment j is
// the spring between DOF j-1 (ground for j = 1) and DOF j, so the healthy
// stiffness is K = sum_j k_j e_j e_j^T with e_j = u_j - u_{j-1}. A fault
// scales one or more segment springs by (1 - alpha_j). The transducer enters
// through the coupling vector K12 and the inverse capacitance k_c:
//
//   Y(w, alpha) = i w / (k_c - K12^T (K_d - M w^2 + i w C)^{-1} K12)
//
// with Rayleigh damping C = a M + b K built from the healthy K.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <algorithm>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultid/core.hpp"
#include "faultid/training_set.hpp"

namespace faultid::sim {

using Complex = std::complex<double>;

struct StructuralModel {
  std::vector<double> masses;     // kg, one DOF per segment
  std::vector<double> stiffness;  // N/m, spring of each segment
  double rayleigh_a = 1e-3;       // 1/s
  double rayleigh_b = 2e-7;       // s
  std::vector<double> coupling;   // K12, N/C
  double k_c = 6.8e8;             // 1/F

  std::size_t n_segments() const noexcept { return masses.size(); }

  void validate() const {
    const auto n = masses.size();
    if (n == 0) throw InputError("model has no segments");
    if (stiffness.size() != n || coupling.size() != n) {
      throw InputError("model arrays must all have length n_segments = " + std::to_string(n));
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (!(masses[j] > 0.0) || !std::isfinite(masses[j])) {
        throw InputError("mass of segment " + std::to_string(j + 1) + " must be positive");
      }
      if (!(stiffness[j] > 0.0) || !std::isfinite(stiffness[j])) {
        throw InputError("stiffness of segment " + std::to_string(j + 1) + " must be positive");
      }
    }
    bool any = false;
    for (double c : coupling) {
      if (!std::isfinite(c)) throw InputError("coupling must be finite");
      any = any || c != 0.0;
    }
    if (!any) throw InputError("coupling vector needs at least one nonzero entry");
    if (!(rayleigh_a >= 0.0) || !(rayleigh_b >= 0.0)) {
      throw InputError("Rayleigh coefficients must be non-negative");
    }
    if (!(k_c > 0.0) || !std::isfinite(k_c)) throw InputError("k_c must be positive");
  }

  Eigen::MatrixXd mass_matrix() const {
    Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(masses.data(), masses.size());
    return m.asDiagonal();
  }

  Eigen::MatrixXd damping_matrix() const;

  Eigen::VectorXd coupling_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(coupling.data(), coupling.size());
  }
};

/// Fault index vector alpha in [0,1]^n; alpha_j is the stiffness loss ratio.
struct FaultScenario {
  std::vector<double> alpha;

  static FaultScenario healthy(std::size_t n) { return {std::vector<double>(n, 0.0)}; }

  /// Compact single-fault form: 1-based segment and severity.
  static FaultScenario single(std::size_t n, int location, double severity) {
    if (location < 1 || static_cast<std::size_t>(location) > n) {
      throw InputError("fault location " + std::to_string(location) + " outside 1.." +
                       std::to_string(n));
    }
    FaultScenario f = healthy(n);
    f.alpha[static_cast<std::size_t>(location - 1)] = severity;
    f.validate(n);
    return f;
  }

  void validate(std::size_t n) const {
    if (alpha.size() != n) {
      throw InputError("fault vector has length " + std::to_string(alpha.size()) +
                       ", model has " + std::to_string(n) + " segments");
    }
    for (double a : alpha) {
      if (!(a >= 0.0 && a <= 1.0)) throw InputError("fault indices must lie in [0, 1]");
    }
  }
};

enum class ResponseChannel { magnitude, real, imaginary };

inline ResponseChannel parse_channel(const std::string& s) {
  if (s == "magnitude") return ResponseChannel::magnitude;
  if (s == "real") return ResponseChannel::real;
  if (s == "imaginary") return ResponseChannel::imaginary;
  throw ConfigError("unknown response channel '" + s + "' (magnitude | real | imaginary)");
}

inline std::string to_string(ResponseChannel c) {
  switch (c) {
    case ResponseChannel::magnitude: return "magnitude";
    case ResponseChannel::real: return "real";
    case ResponseChannel::imaginary: return "imaginary";
  }
  return "magnitude";
}

inline double project(Complex z, ResponseChannel c) {
  switch (c) {
    case ResponseChannel::magnitude: return std::abs(z);
    case ResponseChannel::real: return z.real();
    case ResponseChannel::imaginary: return z.imag();
  }
  return std::abs(z);
}

// ---------------------------------------------------------------------------
// Stiffness assembly

namespace detail {

inline void add_segment(Eigen::MatrixXd& K, std::size_t segment, double k) {
  K(segment, segment) += k;
  if (segment > 0) {
    K(segment - 1, segment - 1) += k;
    K(segment - 1, segment) -= k;
    K(segment, segment - 1) -= k;
  }
}

}  // namespace detail

/// K_d = sum_j k_hj (1 - alpha_j). Equals the healthy K when alpha = 0.
inline Eigen::MatrixXd assemble_damaged_stiffness(const StructuralModel& model,
                                                  const FaultScenario& fault) {
  const auto n = model.n_segments();
  fault.validate(n);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    detail::add_segment(K, j, model.stiffness[j] * (1.0 - fault.alpha[j]));
  }
  return K;
}

inline Eigen::MatrixXd healthy_stiffness(const StructuralModel& model) {
  return assemble_damaged_stiffness(model, FaultScenario::healthy(model.n_segments()));
}

inline Eigen::MatrixXd StructuralModel::damping_matrix() const {
  return rayleigh_a * mass_matrix() + rayleigh_b * healthy_stiffness(*this);
}

// ---------------------------------------------------------------------------
// Admittance

/// Precomputed mass, damping and coupling terms; evaluates Y for any
/// stiffness matrix. Immutable after construction.
class AdmittanceKernel {
 public:
  explicit AdmittanceKernel(const StructuralModel& model)
      : mass_(model.mass_matrix()),
        damping_(model.damping_matrix()),
        coupling_(model.coupling_vector()),
        k_c_(model.k_c) {
    model.validate();
  }

  Complex operator()(const Eigen::MatrixXd& stiffness, double omega) const {
    if (!(omega > 0.0) || !std::isfinite(omega)) {
      throw InputError("excitation frequency must be positive, got " + format_double(omega));
    }
    const Complex iw(0.0, omega);
    Eigen::MatrixXcd D = stiffness.cast<Complex>() - (omega * omega) * mass_.cast<Complex>() +
                         iw * damping_.cast<Complex>();
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(D);
    const auto& U = lu.matrixLU();
    double max_pivot = 0.0, min_pivot = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      const double p = std::abs(U(i, i));
      max_pivot = std::max(max_pivot, p);
      min_pivot = std::min(min_pivot, p);
    }
    if (!(min_pivot > 1e-13 * max_pivot)) {
      throw SingularityError("dynamic stiffness is singular at omega = " + format_double(omega),
                             omega);
    }
    Eigen::VectorXcd rhs = coupling_.cast<Complex>();
    Eigen::VectorXcd x = lu.solve(rhs);
    const Complex denom = k_c_ - rhs.dot(x);  // dot() conjugates the (real) left operand only
    const Complex y = iw / denom;
    if (!std::isfinite(y.real()) || !std::isfinite(y.imag()) || std::abs(denom) == 0.0) {
      throw SingularityError("admittance denominator vanishes at omega = " + format_double(omega),
                             omega);
    }
    return y;
  }

 private:
  Eigen::MatrixXd mass_;
  Eigen::MatrixXd damping_;
  Eigen::VectorXd coupling_;
  double k_c_;
};

inline Complex admittance(const StructuralModel& model, double omega, const FaultScenario& fault) {
  return AdmittanceKernel(model)(assemble_damaged_stiffness(model, fault), omega);
}

/// Scalar channel of Y_d(w, alpha) - Y(w, 0).
inline double admittance_change(const StructuralModel& model, double omega,
                                const FaultScenario& fault,
                                ResponseChannel channel = ResponseChannel::magnitude) {
  AdmittanceKernel kernel(model);
  const Complex healthy = kernel(healthy_stiffness(model), omega);
  const Complex damaged = kernel(assemble_damaged_stiffness(model, fault), omega);
  return project(damaged - healthy, channel);
}

/// Undamped natural frequencies (rad/s), ascending.
inline std::vector<double> find_resonances(const StructuralModel& model,
                                           const FaultScenario* fault = nullptr) {
  model.validate();
  const Eigen::MatrixXd K = fault ? assemble_damaged_stiffness(model, *fault) : healthy_stiffness(model);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(K, model.mass_matrix(),
                                                                    Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigen solver failed");
  std::vector<double> out;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
    out.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()(i))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frequency sweep

struct FrequencySweep {
  std::vector<double> omegas;
  std::vector<int> band;  // which resonance band each frequency belongs to

  std::size_t size() const noexcept { return omegas.size(); }

  void validate() const {
    if (omegas.empty()) throw InputError("empty frequency sweep");
    if (band.size() != omegas.size()) throw InputError("band labels must match frequencies");
    for (std::size_t i = 0; i < omegas.size(); ++i) {
      if (!(omegas[i] > 0.0)) throw InputError("sweep frequencies must be positive");
      if (i > 0 && !(omegas[i] > omegas[i - 1])) {
        throw InputError("sweep frequencies must be strictly increasing");
      }
    }
  }
};

struct BandSpec {
  std::vector<int> modes{7, 11, 13, 15};  // 1-based resonance indices
  int points_per_band = 10;
  double lower_fraction = 0.006;  // band starts at w_r (1 - lower_fraction)
  double upper_fraction = 0.002;  // and ends at w_r (1 + upper_fraction)
};

/// Evenly spaced points in [w_r(1-lo), w_r(1+hi)] around each chosen mode.
inline FrequencySweep make_sweep(const StructuralModel& model, const BandSpec& spec) {
  if (spec.points_per_band < 1) throw InputError("points_per_band must be >= 1");
  if (spec.modes.empty()) throw InputError("at least one resonance band is required");
  if (!(spec.lower_fraction >= 0.0 && spec.lower_fraction < 1.0) || !(spec.upper_fraction >= 0.0)) {
    throw InputError("band fractions must be in [0, 1)");
  }
  if (spec.points_per_band > 1 && spec.lower_fraction + spec.upper_fraction == 0.0) {
    throw InputError("a band with several points needs a nonzero width");
  }
  const auto resonances = find_resonances(model);
  FrequencySweep sweep;
  for (std::size_t b = 0; b < spec.modes.size(); ++b) {
    const int mode = spec.modes[b];
    if (mode < 1 || static_cast<std::size_t>(mode) > resonances.size()) {
      throw InputError("resonance index " + std::to_string(mode) + " outside 1.." +
                       std::to_string(resonances.size()));
    }
    const double w = resonances[static_cast<std::size_t>(mode - 1)];
    const double lo = w * (1.0 - spec.lower_fraction);
    const double hi = w * (1.0 + spec.upper_fraction);
    for (int p = 0; p < spec.points_per_band; ++p) {
      const double t = spec.points_per_band == 1 ? 0.5 : static_cast<double>(p) / (spec.points_per_band - 1);
      sweep.omegas.push_back(lo + t * (hi - lo));
      sweep.band.push_back(static_cast<int>(b));
    }
  }
  sweep.validate();
  return sweep;
}

// ---------------------------------------------------------------------------
// Training data

struct SamplingOptions {
  double max_severity = 0.1;
  ResponseChannel channel = ResponseChannel::magnitude;
};

/// Applies value * (1 + noise_level * z), z ~ N(0,1).
class MultiplicativeNoise {
 public:
  MultiplicativeNoise(double level, std::uint64_t seed) : level_(level), rng_(seed) {
    if (!(level >= 0.0)) throw InputError("noise level must be >= 0");
  }
  double operator()(double value) {
    if (level_ == 0.0) return value;
    return value * (1.0 + level_ * normal_(rng_));
  }

 private:
  double level_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// One training set per sweep frequency, all sharing the same randomly drawn
/// single-fault scenarios (location uniform on 1..n, severity uniform on
/// [0, max_severity]).
inline std::vector<TrainingSet> sample_training_data(const StructuralModel& model,
                                                     const FrequencySweep& sweep,
                                                     std::size_t m_scenarios, double noise_level,
                                                     std::uint64_t seed,
                                                     const SamplingOptions& options = {}) {
  model.validate();
  sweep.validate();
  if (m_scenarios < 1) throw InputError("need at least one training scenario");
  if (!(options.max_severity > 0.0 && options.max_severity <= 1.0)) {
    throw InputError("max_severity must lie in (0, 1]");
  }
  const auto n = model.n_segments();
  std::mt19937_64 rng(derive_seed(seed, "scenarios"));
  std::uniform_int_distribution<int> pick_location(1, static_cast<int>(n));
  std::uniform_real_distribution<double> pick_severity(0.0, options.max_severity);
  std::vector<FaultInput> scenarios(m_scenarios);
  for (auto& s : scenarios) {
    s.location = pick_location(rng);
    s.severity = pick_severity(rng);
  }

  AdmittanceKernel kernel(model);
  const Eigen::MatrixXd K0 = healthy_stiffness(model);
  std::vector<Eigen::MatrixXd> damaged;
  damaged.reserve(m_scenarios);
  for (const auto& s : scenarios) {
    damaged.push_back(assemble_damaged_stiffness(
        model, FaultScenario::single(n, static_cast<int>(s.location), s.severity)));
  }

  MultiplicativeNoise noise(noise_level, derive_seed(seed, "training-noise"));
  std::vector<TrainingSet> sets;
  sets.reserve(sweep.size());
  for (std::size_t j = 0; j < sweep.size(); ++j) {
    const double w = sweep.omegas[j];
    const Complex baseline = kernel(K0, w);
    TrainingSet set{j + 1, w, scenarios, {}};
    set.outputs.reserve(m_scenarios);
    for (std::size_t i = 0; i < m_scenarios; ++i) {
      set.outputs.push_back(noise(project(kernel(damaged[i], w) - baseline, options.channel)));
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

/// Noise-contaminated response of one scenario at every sweep frequency.
inline std::vector<double> measure(const StructuralModel& model, const FrequencySweep& sweep,
                                   const FaultScenario& fault, double noise_level,
                                   std::uint64_t seed,
                                   ResponseChannel channel = ResponseChannel::magnitude) {
  AdmittanceKernel kernel(model);
  const Eigen::MatrixXd K0 = healthy_stiffness(model);
  const Eigen::MatrixXd Kd = assemble_damaged_stiffness(model, fault);
  MultiplicativeNoise noise(noise_level, derive_seed(seed, "measurement-noise"));
  std::vector<double> out;
  out.reserve(sweep.size());
  for (double w : sweep.omegas) out.push_back(noise(project(kernel(Kd, w) - kernel(K0, w), channel)));
  return out;
}

// ---------------------------------------------------------------------------
// Default model and JSON definition

/// 25-segment chain with mild deterministic property variation (so no two
/// segments are mirror images of each other) and a transducer spanning
/// segment 8. The first resonances fall between roughly 100 Hz and 4 kHz.
inline StructuralModel default_model(std::size_t n = 25) {
  StructuralModel model;
  for (std::size_t idx = 1; idx <= n; ++idx) {
    const double j = static_cast<double>(idx);
    model.masses.push_back(0.012 * (1.0 + 0.025 * std::sin(1.3 * j + 0.4)));
    model.stiffness.push_back(2.0e6 * (1.0 + 0.05 * std::cos(0.333 * j * j + 1.1)));
  }
  model.coupling.assign(n, 0.0);
  const std::size_t patch = std::min<std::size_t>(8, n);  // 1-based segment under the transducer
  model.coupling[patch - 1] = 8.0e6;
  if (patch >= 2) model.coupling[patch - 2] = -8.0e6;
  return model;
}

inline nlohmann::json to_json(const StructuralModel& model) {
  return {{"n_segments", model.n_segments()}, {"masses", model.masses},
          {"stiffness", model.stiffness},     {"rayleigh_a", model.rayleigh_a},
          {"rayleigh_b", model.rayleigh_b},   {"coupling", model.coupling},
          {"k_c", model.k_c}};
}

inline StructuralModel model_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"n_segments", "masses",   "stiffness", "rayleigh_a",
                                             "rayleigh_b", "coupling", "k_c"};
  if (!j.is_object()) throw ConfigError("model definition must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown model key '" + key + "'");
    }
  }
  StructuralModel model;
  try {
    model.masses = j.at("masses").get<std::vector<double>>();
    model.stiffness = j.at("stiffness").get<std::vector<double>>();
    model.coupling = j.at("coupling").get<std::vector<double>>();
    model.k_c = j.at("k_c").get<double>();
    model.rayleigh_a = j.value("rayleigh_a", model.rayleigh_a);
    model.rayleigh_b = j.value("rayleigh_b", model.rayleigh_b);
    if (j.contains("n_segments") && j["n_segments"].get<std::size_t>() != model.masses.size()) {
      throw ConfigError("n_segments disagrees with the length of masses");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model definition: ") + e.what());
  }
  try {
    model.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("invalid model: ") + e.what());
  }
  return model;
}

}  // namespace faultid::sim
