#pragma once

// Gaussian-process response surfaces over (location, severity).
//
// Zero-mean GP with either a single squared-exponential kernel over the full
// input distance, or a product of two squared exponentials, one over the
// location coordinate and one over the severity coordinate. Hyperparameters
// are sampled by random-walk Metropolis on their logarithms; the sample with
// the highest log marginal likelihood is kept.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultid/core.hpp"
#include "faultid/csv.hpp"
#include "faultid/training_set.hpp"

namespace faultid::gp {

enum class KernelKind { single_se, product_se };

inline KernelKind parse_kernel(const std::string& s) {
  if (s == "single_se") return KernelKind::single_se;
  if (s == "product_se") return KernelKind::product_se;
  throw ConfigError("unknown kernel '" + s + "' (single_se | product_se)");
}

inline std::string to_string(KernelKind k) {
  return k == KernelKind::single_se ? "single_se" : "product_se";
}

/// theta1, theta3: amplitudes. theta2, theta4: squared length scales, in the
/// coordinates the kernel is evaluated in. theta3/theta4 are ignored by the
/// single-SE kernel.
struct KernelParams {
  KernelKind kind = KernelKind::product_se;
  double theta1 = 1.0;
  double theta2 = 1.0;
  double theta3 = 1.0;
  double theta4 = 1.0;
  double sigma_n = 1e-3;

  double amplitude() const noexcept { return kind == KernelKind::product_se ? theta1 * theta3 : theta1; }

  /// Noise may be zero (the Gram jitter keeps the system positive definite).
  void validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    bool ok = positive(theta1) && positive(theta2) && sigma_n >= 0.0 && std::isfinite(sigma_n);
    if (kind == KernelKind::product_se) ok = ok && positive(theta3) && positive(theta4);
    if (!ok) throw InputError("kernel parameters must be strictly positive: " + describe());
  }

  std::string describe() const {
    std::ostringstream s;
    s << to_string(kind) << "{theta1=" << theta1 << ", theta2=" << theta2;
    if (kind == KernelKind::product_se) s << ", theta3=" << theta3 << ", theta4=" << theta4;
    s << ", sigma_n=" << sigma_n << "}";
    return s.str();
  }
};

inline double kernel_eval(const KernelParams& p, FaultInput a, FaultInput b) {
  const double dl = a.location - b.location;
  const double ds = a.severity - b.severity;
  if (p.kind == KernelKind::single_se) return p.theta1 * std::exp(-(dl * dl + ds * ds) / p.theta2);
  return p.theta1 * std::exp(-dl * dl / p.theta2) * p.theta3 * std::exp(-ds * ds / p.theta4);
}

/// Relative diagonal jitter added before factorization: 1e-10 times the mean
/// prior variance.
inline constexpr double kJitter = 1e-10;

namespace detail {

/// Pairwise squared distances of one training set, reused across every
/// hyperparameter proposal.
class GramCache {
 public:
  explicit GramCache(const std::vector<FaultInput>& x) {
    const auto n = static_cast<Eigen::Index>(x.size());
    dl2_.resize(n, n);
    ds2_.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double dl = x[static_cast<std::size_t>(i)].location - x[static_cast<std::size_t>(j)].location;
        const double ds = x[static_cast<std::size_t>(i)].severity - x[static_cast<std::size_t>(j)].severity;
        dl2_(i, j) = dl * dl;
        ds2_(i, j) = ds * ds;
      }
    }
  }

  /// Noise-free Gram matrix K(X, X).
  Eigen::MatrixXd gram(const KernelParams& p) const {
    if (p.kind == KernelKind::single_se) {
      return p.theta1 * (-(dl2_ + ds2_) / p.theta2).array().exp().matrix();
    }
    return p.amplitude() * (-dl2_ / p.theta2 - ds2_ / p.theta4).array().exp().matrix();
  }

 private:
  Eigen::MatrixXd dl2_, ds2_;
};

inline double jitter_for(const Eigen::MatrixXd& K) {
  return kJitter * K.trace() / static_cast<double>(K.rows());
}

/// K + (sigma_n^2 + jitter) I, factorized. nullopt if not positive definite.
inline std::optional<Eigen::LLT<Eigen::MatrixXd>> factorize(Eigen::MatrixXd K, double sigma_n) {
  K.diagonal().array() += sigma_n * sigma_n + jitter_for(K);
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) return std::nullopt;
  return llt;
}

inline double lml_from(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& y) {
  const Eigen::VectorXd alpha = llt.solve(y);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double n = static_cast<double>(y.size());
  return -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

inline Eigen::VectorXd outputs_of(const TrainingSet& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.outputs.data(), static_cast<Eigen::Index>(t.outputs.size()));
}

inline std::optional<double> try_lml(const GramCache& cache, const Eigen::VectorXd& y,
                                     const KernelParams& p) {
  auto llt = factorize(cache.gram(p), p.sigma_n);
  if (!llt) return std::nullopt;
  const double v = lml_from(*llt, y);
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// -1/2 y^T (K + s^2 I)^{-1} y - 1/2 log|K + s^2 I| - n/2 log(2 pi), evaluated
/// in the coordinates of `training` as given.
inline double log_marginal_likelihood(const TrainingSet& training, const KernelParams& params) {
  params.validate();
  if (training.inputs.empty() || training.inputs.size() != training.outputs.size()) {
    throw InputError("log marginal likelihood needs matching, non-empty inputs and outputs");
  }
  detail::GramCache cache(training.inputs);
  auto v = detail::try_lml(cache, detail::outputs_of(training), params);
  if (!v) throw NumericalError("log marginal likelihood is not finite for " + params.describe());
  return *v;
}

// ---------------------------------------------------------------------------
// Surfaces

/// Affine map of raw inputs onto [0,1] per dimension.
struct InputScaling {
  double location_offset = 0.0, location_scale = 1.0;
  double severity_offset = 0.0, severity_scale = 1.0;

  static InputScaling fit_to(const std::vector<FaultInput>& x) {
    InputScaling s;
    auto [lmin, lmax] = std::minmax_element(x.begin(), x.end(),
                                            [](auto& a, auto& b) { return a.location < b.location; });
    auto [smin, smax] = std::minmax_element(x.begin(), x.end(),
                                            [](auto& a, auto& b) { return a.severity < b.severity; });
    s.location_offset = lmin->location;
    s.severity_offset = smin->severity;
    const double lr = lmax->location - lmin->location;
    const double sr = smax->severity - smin->severity;
    s.location_scale = lr > 0.0 ? lr : 1.0;
    s.severity_scale = sr > 0.0 ? sr : 1.0;
    return s;
  }

  FaultInput apply(FaultInput x) const {
    return {(x.location - location_offset) / location_scale, (x.severity - severity_offset) / severity_scale};
  }
};

struct FitDiagnostics {
  double log_likelihood = 0.0;
  double acceptance_rate = 0.0;
  std::size_t n_samples = 0;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// A calibrated response surface. Immutable; predictions are thread-safe.
/// `params` live in the normalized input coordinates given by `scaling`.
class GpSurface {
 public:
  GpSurface(TrainingSet training, KernelParams params, InputScaling scaling, FitDiagnostics diagnostics = {})
      : training_(std::move(training)), params_(params), scaling_(scaling), diagnostics_(diagnostics) {
    params_.validate();
    if (training_.inputs.empty() || training_.inputs.size() != training_.outputs.size()) {
      throw InputError("surface needs matching, non-empty training inputs and outputs");
    }
    for (const auto& x : training_.inputs) normalized_.push_back(scaling_.apply(x));
    Eigen::MatrixXd K = detail::GramCache(normalized_).gram(params_);
    jitter_ = detail::jitter_for(K);
    auto llt = detail::factorize(K, params_.sigma_n);
    if (!llt) throw NumericalError("Gram matrix is not positive definite for " + params_.describe());
    llt_ = std::move(*llt);
    alpha_ = llt_.solve(detail::outputs_of(training_));
  }

  const TrainingSet& training() const noexcept { return training_; }
  const KernelParams& params() const noexcept { return params_; }
  const InputScaling& scaling() const noexcept { return scaling_; }
  const FitDiagnostics& diagnostics() const noexcept { return diagnostics_; }
  std::size_t frequency_index() const noexcept { return training_.frequency_index; }
  double omega() const noexcept { return training_.omega; }

  double predict_mean(FaultInput query) const {
    const FaultInput q = scaling_.apply(query);
    const double inv_l = 1.0 / params_.theta2;
    const double inv_s = params_.kind == KernelKind::product_se ? 1.0 / params_.theta4 : inv_l;
    double acc = 0.0;
    for (std::size_t i = 0; i < normalized_.size(); ++i) {
      const double dl = q.location - normalized_[i].location;
      const double ds = q.severity - normalized_[i].severity;
      acc += std::exp(-dl * dl * inv_l - ds * ds * inv_s) * alpha_(static_cast<Eigen::Index>(i));
    }
    return params_.amplitude() * acc;
  }

  /// Posterior mean and variance of the latent function at `query`.
  /// Variance is clamped at zero.
  Prediction predict(FaultInput query) const {
    const FaultInput q = scaling_.apply(query);
    Eigen::VectorXd k(static_cast<Eigen::Index>(normalized_.size()));
    for (std::size_t i = 0; i < normalized_.size(); ++i) {
      k(static_cast<Eigen::Index>(i)) = kernel_eval(params_, q, normalized_[i]);
    }
    const double mean = k.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(k);
    const double var = kernel_eval(params_, q, q) - v.squaredNorm();
    return {mean, std::max(0.0, var)};
  }

  /// Smallest eigenvalue of K(X,X) before noise and jitter are added.
  double gram_min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::GramCache(normalized_).gram(params_),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
  }

  double jitter() const noexcept { return jitter_; }

 private:
  TrainingSet training_;
  std::vector<FaultInput> normalized_;
  KernelParams params_;
  InputScaling scaling_;
  FitDiagnostics diagnostics_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
};

// ---------------------------------------------------------------------------
// Hyperparameter sampling

struct McmcConfig {
  std::size_t n_samples = 2000;
  /// Random-walk std per log-parameter; empty means 0.15 for all, a single
  /// entry is broadcast.
  std::vector<double> step_sizes{};
  std::uint64_t seed = 0;
  /// Std of the log-normal priors.
  double prior_log_sd = 3.0;
};

namespace detail {

inline KernelParams params_from_log(KernelKind kind, const std::vector<double>& v) {
  KernelParams p;
  p.kind = kind;
  if (kind == KernelKind::product_se) {
    p.theta1 = std::exp(v[0]);
    p.theta2 = std::exp(v[1]);
    p.theta3 = std::exp(v[2]);
    p.theta4 = std::exp(v[3]);
    p.sigma_n = std::exp(v[4]);
  } else {
    p.theta1 = std::exp(v[0]);
    p.theta2 = std::exp(v[1]);
    p.sigma_n = std::exp(v[2]);
  }
  return p;
}

}  // namespace detail

/// Fits one surface. Inputs are normalized to the unit square and exact
/// duplicate rows are merged before sampling. Deterministic for a given
/// (config.seed, training.frequency_index).
inline GpSurface fit(const TrainingSet& training, KernelKind kind, const McmcConfig& config = {}) {
  training.validate();
  TrainingSet merged = training.merged_duplicates();
  merged.validate();

  const InputScaling scaling = InputScaling::fit_to(merged.inputs);
  std::vector<FaultInput> unit;
  for (const auto& x : merged.inputs) unit.push_back(scaling.apply(x));
  const detail::GramCache cache(unit);
  const Eigen::VectorXd y = detail::outputs_of(merged);

  double y_scale = std::sqrt(y.squaredNorm() / static_cast<double>(y.size()));
  if (!(y_scale > 0.0) || !std::isfinite(y_scale)) y_scale = 1.0;

  // Prior centres: unit-scale amplitudes, moderate length scales, noise at 1%
  // of the output scale.
  std::vector<double> prior_mean;
  const double log_y = std::log(y_scale);
  const double log_len = std::log(0.05);
  if (kind == KernelKind::product_se) {
    prior_mean = {log_y, log_len, log_y, log_len, log_y + std::log(0.01)};
  } else {
    prior_mean = {2.0 * log_y, log_len, log_y + std::log(0.01)};
  }
  const std::size_t dim = prior_mean.size();

  std::vector<double> steps = config.step_sizes;
  if (steps.empty()) steps.assign(dim, 0.15);
  if (steps.size() == 1) steps.assign(dim, steps.front());
  if (steps.size() != dim) {
    throw InputError("expected " + std::to_string(dim) + " MCMC step sizes, got " + std::to_string(steps.size()));
  }

  auto log_prior = [&](const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double z = (v[i] - prior_mean[i]) / config.prior_log_sd;
      acc -= 0.5 * z * z;
    }
    return acc;
  };

  std::mt19937_64 rng(derive_seed(config.seed, "gp-fit", merged.frequency_index));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // The likelihood is often bimodal in the location length scale (segments
  // coupled vs. independent), so the chain starts from the best point of a
  // coarse screen rather than from the prior centre.
  std::vector<double> state = prior_mean;
  std::optional<double> lml = detail::try_lml(cache, y, detail::params_from_log(kind, state));
  for (double len : {1e-3, 1e-2, 0.05, 0.3}) {
    for (double sev_len : {0.05, 0.3, 1.0}) {
      for (double noise : {1e-4, 1e-2}) {
        std::vector<double> v = prior_mean;
        v[1] = std::log(len);
        if (kind == KernelKind::product_se) {
          v[3] = std::log(sev_len);
        } else if (sev_len != 0.05) {
          continue;
        }
        v.back() = log_y + std::log(noise);
        const auto cand = detail::try_lml(cache, y, detail::params_from_log(kind, v));
        if (cand && (!lml || *cand + log_prior(v) > *lml + log_prior(state))) {
          state = v;
          lml = cand;
        }
      }
    }
  }
  double log_post = lml ? *lml + log_prior(state) : -std::numeric_limits<double>::infinity();
  std::vector<double> best = state;
  double best_lml = lml ? *lml : -std::numeric_limits<double>::infinity();

  std::size_t accepted = 0;
  std::vector<double> proposal(dim);
  for (std::size_t s = 0; s < config.n_samples; ++s) {
    for (std::size_t i = 0; i < dim; ++i) proposal[i] = state[i] + steps[i] * normal(rng);
    const auto cand = detail::try_lml(cache, y, detail::params_from_log(kind, proposal));
    const double u = uniform(rng);
    if (!cand) continue;
    const double cand_post = *cand + log_prior(proposal);
    if (!std::isfinite(log_post) || std::log(u) < cand_post - log_post) {
      state = proposal;
      log_post = cand_post;
      ++accepted;
      if (*cand > best_lml) {
        best_lml = *cand;
        best = state;
      }
    }
  }
  if (!std::isfinite(best_lml)) {
    throw FitError("frequency " + std::to_string(merged.frequency_index) +
                   ": no finite marginal likelihood found; consider rescaling the data");
  }
  FitDiagnostics diag{best_lml,
                      config.n_samples ? static_cast<double>(accepted) / static_cast<double>(config.n_samples) : 0.0,
                      config.n_samples};
  return GpSurface(std::move(merged), detail::params_from_log(kind, best), scaling, diag);
}

struct FitOutcome {
  std::optional<GpSurface> surface;
  std::string error;  // empty on success
};

/// Fits every set independently; failures are reported per set.
inline std::vector<FitOutcome> calibrate_each(const std::vector<TrainingSet>& sets, KernelKind kind,
                                              const McmcConfig& config, unsigned threads = 1) {
  std::vector<FitOutcome> out(sets.size());
  parallel_for(sets.size(), threads, [&](std::size_t i) {
    try {
      out[i].surface.emplace(fit(sets[i], kind, config));
    } catch (const Error& e) {
      out[i].error = "frequency " + std::to_string(sets[i].frequency_index) + ": " + e.what();
    }
  });
  return out;
}

/// One surface per training set, order preserved. Throws FitError listing
/// every failed frequency if any fit fails.
inline std::vector<GpSurface> calibrate_all(const std::vector<TrainingSet>& sets, KernelKind kind,
                                            const McmcConfig& config, unsigned threads = 1) {
  if (sets.empty()) throw InputError("no training sets to calibrate");
  auto outcomes = calibrate_each(sets, kind, config, threads);
  std::string errors;
  std::vector<GpSurface> surfaces;
  for (auto& o : outcomes) {
    if (o.surface) {
      surfaces.push_back(std::move(*o.surface));
    } else {
      errors += (errors.empty() ? "" : "; ") + o.error;
    }
  }
  if (!errors.empty()) throw FitError("calibration failed: " + errors);
  return surfaces;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const GpSurface& s) {
  const auto& t = s.training();
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& x : t.inputs) inputs.push_back({x.location, x.severity});
  const auto& p = s.params();
  const auto& sc = s.scaling();
  return {
      {"format", "faultid-gp-surface/1"},
      {"frequency_index", t.frequency_index},
      {"omega", t.omega},
      {"kind", to_string(p.kind)},
      {"params",
       {{"theta1", p.theta1}, {"theta2", p.theta2}, {"theta3", p.theta3}, {"theta4", p.theta4}, {"sigma_n", p.sigma_n}}},
      {"scaling",
       {{"location_offset", sc.location_offset},
        {"location_scale", sc.location_scale},
        {"severity_offset", sc.severity_offset},
        {"severity_scale", sc.severity_scale}}},
      {"diagnostics",
       {{"log_likelihood", s.diagnostics().log_likelihood},
        {"acceptance_rate", s.diagnostics().acceptance_rate},
        {"n_samples", s.diagnostics().n_samples}}},
      {"inputs", inputs},
      {"outputs", t.outputs},
  };
}

inline GpSurface surface_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "faultid-gp-surface/1") {
      throw InputError("unsupported surface format " + j.at("format").dump());
    }
    TrainingSet t;
    t.frequency_index = j.at("frequency_index").get<std::size_t>();
    t.omega = j.at("omega").get<double>();
    for (const auto& row : j.at("inputs")) t.inputs.push_back({row.at(0).get<double>(), row.at(1).get<double>()});
    t.outputs = j.at("outputs").get<std::vector<double>>();
    KernelParams p;
    p.kind = parse_kernel(j.at("kind").get<std::string>());
    const auto& jp = j.at("params");
    p.theta1 = jp.at("theta1").get<double>();
    p.theta2 = jp.at("theta2").get<double>();
    p.theta3 = jp.at("theta3").get<double>();
    p.theta4 = jp.at("theta4").get<double>();
    p.sigma_n = jp.at("sigma_n").get<double>();
    InputScaling sc;
    const auto& js = j.at("scaling");
    sc.location_offset = js.at("location_offset").get<double>();
    sc.location_scale = js.at("location_scale").get<double>();
    sc.severity_offset = js.at("severity_offset").get<double>();
    sc.severity_scale = js.at("severity_scale").get<double>();
    FitDiagnostics d;
    if (j.contains("diagnostics")) {
      const auto& jd = j["diagnostics"];
      d.log_likelihood = jd.value("log_likelihood", 0.0);
      d.acceptance_rate = jd.value("acceptance_rate", 0.0);
      d.n_samples = jd.value("n_samples", std::size_t{0});
    }
    return GpSurface(std::move(t), p, sc, d);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed surface JSON: ") + e.what());
  }
}

inline void save_surface(const GpSurface& s, const std::filesystem::path& path) {
  csv::write_file(path, to_json(s).dump(1) + "\n");
}

inline GpSurface load_surface(const std::filesystem::path& path) {
  try {
    return surface_from_json(nlohmann::json::parse(csv::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

/// freq_index,omega,kind,log_likelihood,acceptance_rate,theta1..theta4,sigma_n
inline std::string diagnostics_csv(const std::vector<GpSurface>& surfaces) {
  std::ostringstream out;
  csv::write_row(out, {"freq_index", "omega", "kind", "log_likelihood", "acceptance_rate", "theta1", "theta2",
                       "theta3", "theta4", "sigma_n"});
  for (const auto& s : surfaces) {
    const auto& p = s.params();
    csv::write_row(out, {std::to_string(s.frequency_index()), format_double(s.omega()), to_string(p.kind),
                         format_double(s.diagnostics().log_likelihood), format_double(s.diagnostics().acceptance_rate),
                         format_double(p.theta1), format_double(p.theta2), format_double(p.theta3),
                         format_double(p.theta4), format_double(p.sigma_n)});
  }
  return out.str();
}

}  // namespace faultid::gp
