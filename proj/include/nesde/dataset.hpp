#pragma once

// Trajectories and their JSON-lines serialization.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "nesde/filter.hpp"
#include "nesde/solver.hpp"
#include "nesde/types.hpp"

namespace nesde {

struct TruthSample {
  double t = 0.0;
  VectorXd x;
};

struct Trajectory {
  long id = 0;
  VectorXd context;
  std::vector<Observation> obs;  // chronological
  ControlSignal control{0};
  std::vector<TruthSample> truth;  // optional dense ground truth, chronological
  nlohmann::json meta = nlohmann::json::object();

  double t_start = 0.0;
  /// Last time covered by observations, control or truth.
  double horizon() const;
};

using Dataset = std::vector<Trajectory>;

nlohmann::json to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

/// Throws DataError on unsorted observations, inconsistent dimensions or
/// non-finite values.
void validate(const Trajectory& traj);

void write_jsonl(const std::filesystem::path& path, const Dataset& data);
Dataset read_jsonl(const std::filesystem::path& path);

}  // namespace nesde
