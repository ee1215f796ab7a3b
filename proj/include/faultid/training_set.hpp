#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "faultid/core.hpp"
#include "faultid/csv.hpp"

namespace faultid {

/// Single-fault coordinates: segment location (1-based, treated as a real
/// number by the kernels) and fractional stiffness loss.
struct FaultInput {
  double location = 0.0;
  double severity = 0.0;

  friend bool operator==(const FaultInput&, const FaultInput&) = default;
  friend auto operator<=>(const FaultInput&, const FaultInput&) = default;
};

/// Calibration data for one excitation frequency.
struct TrainingSet {
  std::size_t frequency_index = 0;  // 1-based position in the sweep
  double omega = 0.0;
  std::vector<FaultInput> inputs;
  std::vector<double> outputs;

  std::size_t size() const noexcept { return inputs.size(); }

  void validate() const {
    if (inputs.size() != outputs.size()) {
      throw InputError("training set " + std::to_string(frequency_index) + ": " +
                       std::to_string(inputs.size()) + " inputs vs " +
                       std::to_string(outputs.size()) + " outputs");
    }
    if (inputs.size() < 2) {
      throw InputError("training set " + std::to_string(frequency_index) +
                       " needs at least 2 samples");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!std::isfinite(inputs[i].location) || !std::isfinite(inputs[i].severity) ||
          !std::isfinite(outputs[i])) {
        throw InputError("training set " + std::to_string(frequency_index) +
                         ": non-finite value in row " + std::to_string(i));
      }
    }
  }

  /// Exact duplicate inputs collapsed into one row holding their mean output.
  /// Row order follows the first occurrence of each input.
  TrainingSet merged_duplicates() const {
    TrainingSet out{frequency_index, omega, {}, {}};
    std::map<FaultInput, std::pair<std::size_t, std::size_t>> seen;  // input -> (row, count)
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto [it, fresh] = seen.try_emplace(inputs[i], out.inputs.size(), 0);
      if (fresh) {
        out.inputs.push_back(inputs[i]);
        out.outputs.push_back(0.0);
      }
      out.outputs[it->second.first] += outputs[i];
      ++it->second.second;
    }
    for (const auto& [input, slot] : seen) {
      out.outputs[slot.first] /= static_cast<double>(slot.second);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV exchange: freq_index,omega,alpha_location,alpha_severity,delta_y

inline const std::vector<std::string>& training_csv_header() {
  static const std::vector<std::string> header{"freq_index", "omega", "alpha_location",
                                               "alpha_severity", "delta_y"};
  return header;
}

inline std::string training_sets_to_csv(const std::vector<TrainingSet>& sets) {
  std::ostringstream out;
  csv::write_row(out, training_csv_header());
  for (const auto& set : sets) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      csv::write_row(out, {std::to_string(set.frequency_index), format_double(set.omega),
                           format_double(set.inputs[i].location),
                           format_double(set.inputs[i].severity),
                           format_double(set.outputs[i])});
    }
  }
  return out.str();
}

/// Parses a training CSV back into per-frequency sets ordered by freq_index.
/// Every set must share the same sample count and a single omega.
inline std::vector<TrainingSet> training_sets_from_csv(std::istream& in) {
  auto rows = csv::read(in, training_csv_header());
  std::map<long long, TrainingSet> by_index;
  for (const auto& row : rows) {
    auto idx = csv::to_int(row, 0);
    if (idx < 1) throw ParseError("freq_index must be >= 1", row.line);
    double omega = csv::to_double(row, 1);
    auto& set = by_index[idx];
    if (set.inputs.empty()) {
      set.frequency_index = static_cast<std::size_t>(idx);
      set.omega = omega;
    } else if (set.omega != omega) {
      throw ParseError("omega changes within freq_index " + std::to_string(idx), row.line);
    }
    set.inputs.push_back({csv::to_double(row, 2), csv::to_double(row, 3)});
    set.outputs.push_back(csv::to_double(row, 4));
  }
  std::vector<TrainingSet> sets;
  for (auto& [idx, set] : by_index) sets.push_back(std::move(set));
  for (const auto& set : sets) {
    if (set.size() != sets.front().size()) {
      throw InputError("per-frequency sample counts differ: freq " +
                       std::to_string(sets.front().frequency_index) + " has " +
                       std::to_string(sets.front().size()) + ", freq " +
                       std::to_string(set.frequency_index) + " has " + std::to_string(set.size()));
    }
  }
  return sets;
}

inline std::vector<TrainingSet> read_training_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return training_sets_from_csv(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

}  // namespace faultid
