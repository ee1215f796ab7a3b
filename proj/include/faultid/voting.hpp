#pragma once

// Ensemble voting over many annealer runs.
//
// Each run optimizes a random N-subset of the l objectives and yields an
// archive A_i. Every archive hands out one unit of score, 1/|A_i| per member,
// and scores of identical keys accumulate across runs. Variants pool members
// into coarser severity ranges and/or withdraw the votes of runs whose archive
// is larger than the mean archive size.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "faultid/core.hpp"
#include "faultid/csv.hpp"
#include "faultid/emosa.hpp"

namespace faultid::voting {

inline std::int64_t pow10i(int digits) {
  std::int64_t p = 1;
  for (int i = 0; i < digits; ++i) p *= 10;
  return p;
}

/// Segment plus severity rounded (half away from zero) to `digits` decimals,
/// stored as an integer count of 10^-digits.
struct SolutionKey {
  int segment = 0;
  std::int64_t units = 0;
  int digits = 4;

  static SolutionKey from(int segment, double severity, int digits = 4) {
    return {segment, static_cast<std::int64_t>(std::llround(severity * static_cast<double>(pow10i(digits)))), digits};
  }

  double severity() const { return static_cast<double>(units) / static_cast<double>(pow10i(digits)); }
  std::string severity_label() const { return format_fixed(severity(), digits); }

  friend auto operator<=>(const SolutionKey&, const SolutionKey&) = default;
};

/// Segment plus a half-open severity interval of width 10^-digits centred on
/// a value with `digits` decimals.
struct RangeKey {
  int segment = 0;
  std::int64_t center_units = 0;
  int digits = 3;

  /// Drops (key.digits - digits) decimals, rounding half away from zero.
  static RangeKey from(const SolutionKey& key, int digits = 3) {
    if (digits >= key.digits) throw InputError("range keys must keep fewer digits than solution keys");
    const std::int64_t div = pow10i(key.digits - digits);
    const std::int64_t half = div / 2;
    const std::int64_t c = key.units >= 0 ? (key.units + half) / div : -((-key.units + half) / div);
    return {key.segment, c, digits};
  }

  double center() const { return static_cast<double>(center_units) / static_cast<double>(pow10i(digits)); }
  double lower() const { return center() - 0.5 / static_cast<double>(pow10i(digits)); }
  double upper() const { return center() + 0.5 / static_cast<double>(pow10i(digits)); }

  /// e.g. "0.0595-0.0605"
  std::string severity_label() const {
    return format_fixed(lower(), digits + 1) + "-" + format_fixed(upper(), digits + 1);
  }

  friend auto operator<=>(const RangeKey&, const RangeKey&) = default;
};

/// One run's archive reduced to its distinct solution keys.
using KeyedArchive = std::vector<SolutionKey>;

inline KeyedArchive keyed(const emosa::Archive& archive, int digits = 4) {
  std::set<SolutionKey> keys;
  for (const auto& m : archive.members()) {
    keys.insert(SolutionKey::from(m.solution.scenario.segment, m.solution.scenario.severity, digits));
  }
  return {keys.begin(), keys.end()};
}

template <class Key>
struct VotingTally {
  std::map<Key, double> scores;
  double total_available = 0.0;
  std::vector<std::size_t> qualifying_runs;  // 1-based run numbers that voted

  double score(const Key& k) const {
    auto it = scores.find(k);
    return it == scores.end() ? 0.0 : it->second;
  }

  double sum() const {
    double s = 0.0;
    for (const auto& [k, v] : scores) s += v;
    return s;
  }
};

namespace detail {

inline std::vector<std::set<SolutionKey>> distinct(std::span<const KeyedArchive> archives) {
  std::vector<std::set<SolutionKey>> out;
  out.reserve(archives.size());
  for (std::size_t i = 0; i < archives.size(); ++i) {
    if (archives[i].empty()) throw InputError("archive of run " + std::to_string(i + 1) + " is empty");
    out.emplace_back(archives[i].begin(), archives[i].end());
  }
  return out;
}

/// Runs with |A_i| <= mean size, compared exactly as M |A_i| <= sum |A_j|.
inline std::vector<bool> at_most_mean(const std::vector<std::set<SolutionKey>>& sets) {
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  std::vector<bool> out;
  for (const auto& s : sets) out.push_back(sets.size() * s.size() <= total);
  return out;
}

/// Contributions are grouped by archive size and summed in ascending size
/// order, so the result does not depend on the order of the runs.
template <class Key, class ToKey>
VotingTally<Key> tally(const std::vector<std::set<SolutionKey>>& sets, const std::vector<bool>& votes, ToKey to_key) {
  std::map<Key, std::map<std::size_t, std::size_t>> counts;  // key -> archive size -> hits
  VotingTally<Key> out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!votes[i]) continue;
    out.qualifying_runs.push_back(i + 1);
    out.total_available += 1.0;
    for (const auto& k : sets[i]) ++counts[to_key(k)][sets[i].size()];
  }
  for (const auto& [key, by_size] : counts) {
    double s = 0.0;
    for (const auto& [size, hits] : by_size) s += static_cast<double>(hits) / static_cast<double>(size);
    out.scores.emplace(key, s);
  }
  return out;
}

}  // namespace detail

inline VotingTally<SolutionKey> voting_score(std::span<const KeyedArchive> archives) {
  const auto sets = detail::distinct(archives);
  return detail::tally<SolutionKey>(sets, std::vector<bool>(sets.size(), true), [](const SolutionKey& k) { return k; });
}

inline VotingTally<RangeKey> range_voting_score(std::span<const KeyedArchive> archives, int range_digits = 3) {
  const auto sets = detail::distinct(archives);
  return detail::tally<RangeKey>(sets, std::vector<bool>(sets.size(), true),
                                 [&](const SolutionKey& k) { return RangeKey::from(k, range_digits); });
}

inline VotingTally<SolutionKey> partial_voting_score(std::span<const KeyedArchive> archives) {
  const auto sets = detail::distinct(archives);
  return detail::tally<SolutionKey>(sets, detail::at_most_mean(sets), [](const SolutionKey& k) { return k; });
}

inline VotingTally<RangeKey> partial_range_voting_score(std::span<const KeyedArchive> archives,
                                                        int range_digits = 3) {
  const auto sets = detail::distinct(archives);
  return detail::tally<RangeKey>(sets, detail::at_most_mean(sets),
                                 [&](const SolutionKey& k) { return RangeKey::from(k, range_digits); });
}

struct OccurrenceCounts {
  std::map<SolutionKey, std::size_t> counts;
  std::size_t total = 0;
};

/// Raw number of archives each key appears in.
inline OccurrenceCounts majority_vote_baseline(std::span<const KeyedArchive> archives) {
  const auto sets = detail::distinct(archives);
  OccurrenceCounts out;
  for (const auto& s : sets) {
    for (const auto& k : s) ++out.counts[k];
    out.total += s.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking

template <class Key>
struct RankedEntry {
  Key key;
  double score = 0.0;
  double percentage = 0.0;  // 100 * score / total_available
};

/// Top-k by descending score; ties broken by (segment, severity) ascending.
template <class Key>
std::vector<RankedEntry<Key>> rank_report(const VotingTally<Key>& tally, std::size_t k) {
  if (k < 1) throw InputError("rank_report needs k >= 1");
  std::vector<RankedEntry<Key>> entries;
  for (const auto& [key, score] : tally.scores) {
    entries.push_back({key, score, tally.total_available > 0.0 ? 100.0 * score / tally.total_available : 0.0});
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.key < b.key;
  });
  if (entries.size() > k) entries.resize(k);
  return entries;
}

inline std::vector<std::pair<SolutionKey, std::size_t>> rank_report(const OccurrenceCounts& c, std::size_t k) {
  if (k < 1) throw InputError("rank_report needs k >= 1");
  std::vector<std::pair<SolutionKey, std::size_t>> entries(c.counts.begin(), c.counts.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (entries.size() > k) entries.resize(k);
  return entries;
}

/// 1-based rank of `key` in the full ranking, or 0 if absent.
template <class Key>
std::size_t rank_of(const VotingTally<Key>& tally, const Key& key) {
  const auto all = rank_report(tally, std::max<std::size_t>(1, tally.scores.size()));
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].key == key) return i + 1;
  }
  return 0;
}

/// "1.784%"
inline std::string format_percentage(double percentage) { return format_fixed(percentage, 3) + "%"; }

// ---------------------------------------------------------------------------
// Subsets and the ensemble driver

/// Uniform random n-subset of {0..l-1} without replacement, sorted.
template <class Rng>
std::vector<std::size_t> select_objective_subset(std::size_t l, std::size_t n, Rng& rng) {
  if (n > l) throw InputError("cannot select " + std::to_string(n) + " objectives out of " + std::to_string(l));
  std::vector<std::size_t> pool(l);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, l - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct EnsembleConfig {
  std::size_t m_runs = 30;
  std::size_t n_objectives = 10;
  std::uint64_t seed = 0;
  int severity_digits = 4;
  int range_digits = 3;

  void validate(std::size_t l) const {
    if (m_runs < 1) throw InputError("ensemble needs at least one run");
    if (n_objectives < 1 || n_objectives > l) {
      throw InputError("objectives per run must lie in 1.." + std::to_string(l));
    }
    if (range_digits < 0 || range_digits >= severity_digits) {
      throw InputError("range_digits must be smaller than severity_digits");
    }
  }
};

struct EnsembleRun {
  std::size_t run = 0;  // 1-based
  std::vector<std::size_t> objective_indices;
  std::uint64_t anneal_seed = 0;
  emosa::Archive archive;
};

/// M independent annealer runs, each over a fresh random N-subset of the l
/// objectives. `make_objectives(indices)` builds the ObjectiveSet for a
/// subset; it is called concurrently and must be thread-safe.
template <class MakeObjectives>
std::vector<EnsembleRun> run_ensemble(std::size_t l, const EnsembleConfig& config,
                                      const emosa::AnnealSchedule& schedule, const emosa::AnnealOptions& options,
                                      MakeObjectives&& make_objectives, unsigned threads = 1) {
  config.validate(l);
  std::vector<std::optional<EnsembleRun>> slots(config.m_runs);
  parallel_for(config.m_runs, threads, [&](std::size_t r) {
    std::mt19937_64 subset_rng(derive_seed(config.seed, "subset", r));
    auto indices = select_objective_subset(l, config.n_objectives, subset_rng);
    const auto seed = derive_seed(config.seed, "anneal", r);
    const emosa::ObjectiveSet objectives = make_objectives(std::span<const std::size_t>(indices));
    slots[r].emplace(EnsembleRun{r + 1, std::move(indices), seed, emosa::run(objectives, schedule, options, seed)});
  });
  std::vector<EnsembleRun> runs;
  for (auto& s : slots) runs.push_back(std::move(*s));
  return runs;
}

inline std::vector<KeyedArchive> keyed(const std::vector<EnsembleRun>& runs, int digits = 4) {
  std::vector<KeyedArchive> out;
  for (const auto& r : runs) out.push_back(keyed(r.archive, digits));
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// segment,severity_or_range,score,percentage (all keys, ranked).
template <class Key>
std::string tally_csv(const VotingTally<Key>& tally) {
  std::ostringstream out;
  csv::write_row(out, {"segment", "severity_or_range", "score", "percentage"});
  for (const auto& e : rank_report(tally, std::max<std::size_t>(1, tally.scores.size()))) {
    csv::write_row(out, {std::to_string(e.key.segment), e.key.severity_label(), format_double(e.score),
                         format_double(e.percentage)});
  }
  return out.str();
}

inline std::string baseline_csv(const OccurrenceCounts& c) {
  std::ostringstream out;
  csv::write_row(out, {"segment", "severity", "occurrence"});
  for (const auto& [key, n] : rank_report(c, std::max<std::size_t>(1, c.counts.size()))) {
    csv::write_row(out, {std::to_string(key.segment), key.severity_label(), std::to_string(n)});
  }
  return out.str();
}

template <class Key>
nlohmann::json to_json(const VotingTally<Key>& tally) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : rank_report(tally, std::max<std::size_t>(1, tally.scores.size()))) {
    nlohmann::json row{{"segment", e.key.segment}, {"label", e.key.severity_label()}, {"score", e.score},
                       {"percentage", e.percentage}};
    if constexpr (std::is_same_v<Key, SolutionKey>) {
      row["severity"] = e.key.severity();
    } else {
      row["lower"] = e.key.lower();
      row["upper"] = e.key.upper();
    }
    entries.push_back(std::move(row));
  }
  return {{"total_available", tally.total_available}, {"qualifying_runs", tally.qualifying_runs},
          {"entries", std::move(entries)}};
}

inline nlohmann::json to_json(const OccurrenceCounts& c) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, n] : rank_report(c, std::max<std::size_t>(1, c.counts.size()))) {
    entries.push_back({{"segment", key.segment}, {"label", key.severity_label()}, {"severity", key.severity()},
                       {"occurrence", n}});
  }
  return {{"total", c.total}, {"entries", std::move(entries)}};
}

}  // namespace faultid::voting
