#pragma once

// Many-objective simulated annealing with an epsilon-dominance archive.
//
// Objective vectors are mapped to log-spaced boxes, box(f)_i =
// floor(log f_i / log(1 + eps)). The archive keeps at most one solution per
// box and no member's box dominates another's. Each iteration proposes a
// neighbour of the current solution and either updates the archive or, when
// the neighbour is worse, decides through re-seeding or annealing acceptance
// which solution to continue from.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "faultid/core.hpp"
#include "faultid/csv.hpp"

namespace faultid::emosa {

/// Decision vector of the single-fault search: integral segment (1-based)
/// and continuous severity.
struct Scenario {
  int segment = 1;
  double severity = 0.0;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

using ObjectiveVector = std::vector<double>;
using EpsilonBox = std::vector<long long>;

inline constexpr double kDefaultFloor = 1e-12;

/// Pareto dominance for minimization: a <= b everywhere and a < b somewhere.
template <class T>
bool dominates(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw InputError("dominance needs equal lengths, got " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  bool strict = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strict = true;
  }
  return strict;
}

inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  return dominates<double>(std::span<const double>(a), std::span<const double>(b));
}

inline bool dominates(const EpsilonBox& a, const EpsilonBox& b) {
  return dominates<long long>(std::span<const long long>(a), std::span<const long long>(b));
}

/// Largest integer b with (1 + eps)^b <= max(f_i, f_floor), per component.
inline EpsilonBox box_index(std::span<const double> f, double epsilon, double f_floor = kDefaultFloor) {
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
  const double base = 1.0 + epsilon;
  const double log_base = std::log(base);
  EpsilonBox box(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double v = std::max(f[i], f_floor);
    auto b = static_cast<long long>(std::floor(std::log(v) / log_base));
    // The quotient of logs can land a hair off an exact power.
    if (std::pow(base, static_cast<double>(b + 1)) <= v) ++b;
    else if (std::pow(base, static_cast<double>(b)) > v) --b;
    box[i] = b;
  }
  return box;
}

inline EpsilonBox box_index(const ObjectiveVector& f, double epsilon, double f_floor = kDefaultFloor) {
  return box_index(std::span<const double>(f), epsilon, f_floor);
}

struct CandidateSolution {
  Scenario scenario;
  ObjectiveVector objectives;
};

enum class EpsilonRelation { a_dominates, b_dominates, non_dominant, same_box };

inline EpsilonRelation epsilon_relation(const CandidateSolution& a, const CandidateSolution& b, double epsilon,
                                        double f_floor = kDefaultFloor) {
  if (a.objectives.size() != b.objectives.size()) throw InputError("objective counts differ");
  const auto ba = box_index(a.objectives, epsilon, f_floor);
  const auto bb = box_index(b.objectives, epsilon, f_floor);
  if (ba == bb) return EpsilonRelation::same_box;
  if (dominates(ba, bb)) return EpsilonRelation::a_dominates;
  if (dominates(bb, ba)) return EpsilonRelation::b_dominates;
  return EpsilonRelation::non_dominant;
}

/// Product of |f_a,i - f_b,i| / R_i over components that differ; 1 when the
/// vectors are identical.
inline double amount_of_domination(std::span<const double> fa, std::span<const double> fb,
                                   std::span<const double> ranges) {
  if (fa.size() != fb.size() || fa.size() != ranges.size()) throw InputError("amount of domination: size mismatch");
  double prod = 1.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    if (fa[i] != fb[i]) prod *= std::abs(fa[i] - fb[i]) / ranges[i];
  }
  return prod;
}

// ---------------------------------------------------------------------------
// Objectives and moves

class ObjectiveSet {
 public:
  using Evaluator = std::function<double(const Scenario&)>;

  ObjectiveSet(std::vector<Evaluator> evaluators, std::vector<double> ranges)
      : evaluators_(std::move(evaluators)), ranges_(std::move(ranges)) {
    if (evaluators_.empty()) throw InputError("objective set is empty");
    if (ranges_.size() != evaluators_.size()) throw InputError("one normalization range per objective required");
    for (double r : ranges_) {
      if (!(r > 0.0) || !std::isfinite(r)) throw InputError("objective ranges must be positive");
    }
  }

  std::size_t size() const noexcept { return evaluators_.size(); }
  const std::vector<double>& ranges() const noexcept { return ranges_; }

  ObjectiveVector evaluate(const Scenario& x) const {
    ObjectiveVector f(evaluators_.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = evaluators_[i](x);
    return f;
  }

  CandidateSolution candidate(const Scenario& x) const { return {x, evaluate(x)}; }

 private:
  std::vector<Evaluator> evaluators_;
  std::vector<double> ranges_;
};

struct SearchDomain {
  int n_segments = 25;
  double max_severity = 0.1;

  void validate() const {
    if (n_segments < 1) throw InputError("search domain needs at least one segment");
    if (!(max_severity > 0.0)) throw InputError("max_severity must be positive");
  }
};

struct MoveParams {
  double p_loc = 0.3;      // probability of jumping to another segment
  double step_std = 0.005;  // Gaussian severity step

  static MoveParams for_domain(const SearchDomain& d, double p_loc = 0.3, double step_fraction = 0.05) {
    return {p_loc, step_fraction * d.max_severity};
  }
};

/// Folds x back into [0, upper] by mirror reflection at both ends.
inline double reflect_into(double x, double upper) {
  const double period = 2.0 * upper;
  double y = std::fmod(x, period);
  if (y < 0.0) y += period;
  if (y > upper) y = period - y;
  return y;
}

template <class Rng>
CandidateSolution propose_neighbor(const CandidateSolution& current, Rng& rng, const MoveParams& moves,
                                   const SearchDomain& domain, const ObjectiveSet& objectives) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scenario next = current.scenario;
  if (domain.n_segments > 1 && unit(rng) < moves.p_loc) {
    // Uniform over the other n - 1 segments.
    std::uniform_int_distribution<int> pick(1, domain.n_segments - 1);
    int s = pick(rng);
    if (s >= next.segment) ++s;
    next.segment = s;
  } else {
    std::normal_distribution<double> step(0.0, 1.0);
    next.severity = reflect_into(next.severity + moves.step_std * step(rng), domain.max_severity);
  }
  return objectives.candidate(next);
}

// ---------------------------------------------------------------------------
// Archive

class Archive {
 public:
  struct Member {
    CandidateSolution solution;
    EpsilonBox box;
  };

  explicit Archive(double epsilon, double f_floor = kDefaultFloor) : epsilon_(epsilon), f_floor_(f_floor) {
    if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
    if (!(f_floor > 0.0)) throw InputError("f_floor must be positive");
  }

  double epsilon() const noexcept { return epsilon_; }
  double f_floor() const noexcept { return f_floor_; }
  std::size_t size() const noexcept { return members_.size(); }
  bool empty() const noexcept { return members_.empty(); }
  const std::vector<Member>& members() const noexcept { return members_; }

  EpsilonBox box_of(const ObjectiveVector& f) const { return box_index(f, epsilon_, f_floor_); }

  /// Unconditional insertion; callers are responsible for the invariants.
  void insert(CandidateSolution s) {
    auto box = box_of(s.objectives);
    members_.push_back({std::move(s), std::move(box)});
  }

  template <class Pred>
  std::size_t erase_if(Pred pred) {
    return std::erase_if(members_, pred);
  }

  /// No shared boxes and no member box-dominating another.
  bool is_consistent() const {
    for (std::size_t i = 0; i < members_.size(); ++i) {
      for (std::size_t j = 0; j < members_.size(); ++j) {
        if (i == j) continue;
        if (members_[i].box == members_[j].box) return false;
        if (dominates(members_[i].box, members_[j].box)) return false;
      }
    }
    return true;
  }

  /// Euclidean distance of an objective vector to the lower corner of its box.
  double corner_distance(const ObjectiveVector& f, const EpsilonBox& box) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double corner = std::pow(1.0 + epsilon_, static_cast<double>(box[i]));
      const double d = std::max(f[i], f_floor_) - corner;
      acc += d * d;
    }
    return std::sqrt(acc);
  }

 private:
  double epsilon_;
  double f_floor_;
  std::vector<Member> members_;
};

/// Offers `candidate` to the archive. Returns true if it was inserted.
///
/// - Shares a box with a member: replaces it if it dominates it, or if the two
///   are mutually non-dominated and the candidate lies closer to the box's
///   lower corner. Members the candidate dominates are removed.
/// - Box-dominated by any member: rejected.
/// - Otherwise: every member whose box it dominates is removed, then inserted.
inline bool archive_update(Archive& archive, const CandidateSolution& candidate) {
  const auto box = archive.box_of(candidate.objectives);
  const auto& members = archive.members();
  auto mate = std::find_if(members.begin(), members.end(), [&](const auto& m) { return m.box == box; });
  if (mate != members.end()) {
    const auto& mf = mate->solution.objectives;
    bool replace = false;
    if (dominates(candidate.objectives, mf)) {
      replace = true;
    } else if (!dominates(mf, candidate.objectives)) {
      replace = archive.corner_distance(candidate.objectives, box) < archive.corner_distance(mf, box);
    }
    if (!replace) return false;
    archive.erase_if([&](const Archive::Member& m) {
      return m.box == box || dominates(candidate.objectives, m.solution.objectives);
    });
    archive.insert(candidate);
    return true;
  }
  for (const auto& m : members) {
    if (dominates(m.box, box)) return false;
  }
  archive.erase_if([&](const Archive::Member& m) { return dominates(box, m.box); });
  archive.insert(candidate);
  return true;
}

// ---------------------------------------------------------------------------
// Annealing

struct AnnealSchedule {
  double t_max = 100.0;
  double t_min = 1e-4;
  double cooling_rate = 0.8;
  std::size_t total_budget = 100000;

  void validate() const {
    if (!(t_max > t_min) || !(t_min > 0.0)) throw InputError("need t_max > t_min > 0");
    if (!(cooling_rate > 0.0 && cooling_rate < 1.0)) throw InputError("cooling rate must lie in (0, 1)");
  }

  double temperature(std::size_t level) const {
    return std::pow(cooling_rate, static_cast<double>(level)) * t_max;
  }

  /// Number of temperatures T_k = cooling^k * t_max with T_k > t_min.
  std::size_t levels() const {
    validate();
    std::size_t k = 0;
    while (temperature(k) > t_min) ++k;
    return k;
  }

  std::size_t iters_per_temperature() const {
    const auto l = levels();
    return (total_budget + l - 1) / l;
  }
};

struct AnnealOptions {
  double epsilon = 0.05;
  double f_floor = kDefaultFloor;
  SearchDomain domain{};
  MoveParams moves{};
};

struct IterationInfo {
  std::size_t iteration = 0;  // 1-based
  double temperature = 0.0;
  std::size_t archive_size = 0;
  bool accepted = false;  // the proposal became the current solution
};

using Observer = std::function<void(const IterationInfo&, const Archive&)>;

/// Runs the annealer for `schedule.total_budget` proposals split evenly over
/// the temperature ladder. Deterministic for a given seed.
inline Archive run(const ObjectiveSet& objectives, const AnnealSchedule& schedule, const AnnealOptions& options,
                   std::uint64_t seed, const Observer& observer = {}) {
  schedule.validate();
  options.domain.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& ranges = objectives.ranges();

  Archive archive(options.epsilon, options.f_floor);
  Scenario start;
  start.segment = std::uniform_int_distribution<int>(1, options.domain.n_segments)(rng);
  start.severity = options.domain.max_severity * unit(rng);
  archive.insert(objectives.candidate(start));
  CandidateSolution current = archive.members().front().solution;

  const std::size_t budget = schedule.total_budget;
  if (budget == 0) return archive;
  const std::size_t per_level = schedule.iters_per_temperature();

  std::vector<const CandidateSolution*> dominators;
  std::vector<double> ddom;

  std::size_t iteration = 0;
  std::size_t level = 0;
  double T = schedule.t_max;
  while (T > schedule.t_min && iteration < budget) {
    for (std::size_t i = 0; i < per_level && iteration < budget; ++i) {
      ++iteration;
      CandidateSolution proposal = propose_neighbor(current, rng, options.moves, options.domain, objectives);
      bool accepted = false;

      if (archive_update(archive, proposal)) {
        current = std::move(proposal);
        accepted = true;
      } else {
        // Action: the proposal is a deterioration in the epsilon sense.
        dominators.clear();
        for (const auto& m : archive.members()) {
          if (dominates(m.solution.objectives, proposal.objectives)) dominators.push_back(&m.solution);
        }
        auto anneal = [&] {
          double sum = 0.0;
          for (const auto* d : dominators) sum += amount_of_domination(d->objectives, proposal.objectives, ranges);
          const double avg = sum / static_cast<double>(dominators.size());
          if (1.0 / (1.0 + std::exp(avg / T)) > unit(rng)) {
            current = proposal;
            accepted = true;
          }
        };
        if (dominators.empty()) {
          current = proposal;
          accepted = true;
        } else if (dominates(current.objectives, proposal.objectives)) {
          // Re-seed from the dominating archive member closest to the proposal.
          ddom.clear();
          for (const auto* d : dominators) ddom.push_back(amount_of_domination(d->objectives, proposal.objectives, ranges));
          const auto sel = static_cast<std::size_t>(std::min_element(ddom.begin(), ddom.end()) - ddom.begin());
          const double p = 1.0 / (1.0 + std::exp(-ddom[sel] / std::max(T, 1.0)));
          const double u1 = unit(rng);
          const double u2 = unit(rng);
          if (p > u1 * u2) {
            current = *dominators[sel];
          } else {
            anneal();
          }
        } else {
          anneal();
        }
      }
      if (observer) observer({iteration, T, archive.size(), accepted}, archive);
    }
    ++level;
    T = schedule.temperature(level);
  }
  return archive;
}

// ---------------------------------------------------------------------------
// Export

/// segment,severity,J_1..J_l
inline std::string archive_csv(const Archive& archive) {
  std::ostringstream out;
  std::vector<std::string> header{"segment", "severity"};
  const std::size_t l = archive.empty() ? 0 : archive.members().front().solution.objectives.size();
  for (std::size_t i = 1; i <= l; ++i) header.push_back("J_" + std::to_string(i));
  csv::write_row(out, header);
  auto members = archive.members();
  std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
    return std::tie(a.solution.scenario.segment, a.solution.scenario.severity) <
           std::tie(b.solution.scenario.segment, b.solution.scenario.severity);
  });
  for (const auto& m : members) {
    std::vector<std::string> row{std::to_string(m.solution.scenario.segment), format_double(m.solution.scenario.severity)};
    for (double f : m.solution.objectives) row.push_back(format_double(f));
    csv::write_row(out, row);
  }
  return out.str();
}

/// Observer that records iteration,temperature,archive_size,accepted_flag.
class TraceRecorder {
 public:
  void operator()(const IterationInfo& info, const Archive&) { rows_.push_back(info); }
  const std::vector<IterationInfo>& rows() const noexcept { return rows_; }

  std::string csv() const {
    std::ostringstream out;
    csv::write_row(out, {"iteration", "temperature", "archive_size", "accepted_flag"});
    for (const auto& r : rows_) {
      csv::write_row(out, {std::to_string(r.iteration), format_double(r.temperature), std::to_string(r.archive_size),
                           r.accepted ? "1" : "0"});
    }
    return out.str();
  }

 private:
  std::vector<IterationInfo> rows_;
};

}  // namespace faultid::emosa
