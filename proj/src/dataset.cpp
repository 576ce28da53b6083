#include "nesde/dataset.hpp"

#include <cmath>
#include <fstream>

#include "nesde/spectral.hpp"

namespace nesde {

using Json = nlohmann::json;

double Trajectory::horizon() const {
  double h = t_start;
  if (!obs.empty()) h = std::max(h, obs.back().t);
  if (!control.empty()) h = std::max(h, control.segments().back().t_end);
  if (!truth.empty()) h = std::max(h, truth.back().t);
  if (meta.contains("horizon")) h = std::max(h, parse_exact(meta.at("horizon")));
  return h;
}

Json to_json(const Trajectory& traj) {
  Json obs = Json::array();
  for (const auto& o : traj.obs) {
    Json mask = Json::array();
    for (bool b : o.mask) mask.push_back(b);
    obs.push_back({{"t", format_exact(o.t)}, {"y", vector_to_json(o.y_hat)}, {"mask", mask}});
  }
  Json control = Json::array();
  for (const auto& s : traj.control.segments())
    control.push_back({{"t0", format_exact(s.t_start)}, {"t1", format_exact(s.t_end)}, {"u", vector_to_json(s.u)}});
  Json truth = Json::array();
  for (const auto& s : traj.truth) truth.push_back({{"t", format_exact(s.t)}, {"x", vector_to_json(s.x)}});
  Json out = {{"id", traj.id},
              {"context", vector_to_json(traj.context)},
              {"obs", obs},
              {"control", control},
              {"control_dim", traj.control.dim()},
              {"truth", truth},
              {"meta", traj.meta}};
  if (traj.t_start != 0.0) out["t_start"] = format_exact(traj.t_start);
  return out;
}

Trajectory trajectory_from_json(const Json& j) {
  if (!j.is_object()) throw DataError("trajectory must be a JSON object");
  Trajectory traj;
  try {
    traj.id = j.at("id").get<long>();
    traj.context = j.contains("context") ? vector_from_json(j.at("context")) : VectorXd();
    if (j.contains("t_start")) traj.t_start = parse_exact(j.at("t_start"));
    for (const auto& o : j.at("obs")) {
      Observation ob;
      ob.t = parse_exact(o.at("t"));
      ob.y_hat = vector_from_json(o.at("y"));
      if (o.contains("mask")) {
        for (const auto& b : o.at("mask")) ob.mask.push_back(b.get<bool>());
      } else {
        ob.mask.assign(static_cast<std::size_t>(ob.y_hat.size()), true);
      }
      traj.obs.push_back(std::move(ob));
    }
    std::vector<ControlSegment> segments;
    int control_dim = j.contains("control_dim") ? j.at("control_dim").get<int>() : 0;
    if (j.contains("control")) {
      for (const auto& s : j.at("control")) {
        ControlSegment seg{parse_exact(s.at("t0")), parse_exact(s.at("t1")), vector_from_json(s.at("u"))};
        control_dim = static_cast<int>(seg.u.size());
        segments.push_back(std::move(seg));
      }
    }
    traj.control = ControlSignal(control_dim, std::move(segments));
    if (j.contains("truth"))
      for (const auto& s : j.at("truth")) traj.truth.push_back({parse_exact(s.at("t")), vector_from_json(s.at("x"))});
    if (j.contains("meta")) traj.meta = j.at("meta");
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed trajectory: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("malformed trajectory: ") + e.what());
  }
  validate(traj);
  return traj;
}

void validate(const Trajectory& traj) {
  const std::string who = "trajectory " + std::to_string(traj.id) + ": ";
  double prev = traj.t_start;
  Eigen::Index m = -1;
  for (const auto& o : traj.obs) {
    if (!std::isfinite(o.t) || o.t < prev) throw DataError(who + "observations are not sorted in time");
    prev = o.t;
    if (m < 0) m = o.y_hat.size();
    if (o.y_hat.size() != m || static_cast<Eigen::Index>(o.mask.size()) != m)
      throw DataError(who + "observation dimensions are inconsistent");
    for (Eigen::Index i = 0; i < m; ++i)
      if (o.mask[static_cast<std::size_t>(i)] && !std::isfinite(o.y_hat(i)))
        throw DataError(who + "non-finite observation value");
  }
  for (std::size_t i = 1; i < traj.truth.size(); ++i)
    if (traj.truth[i].t < traj.truth[i - 1].t) throw DataError(who + "truth samples are not sorted in time");
}

void write_jsonl(const std::filesystem::path& path, const Dataset& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : data) out << to_json(t).dump() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    data.push_back(trajectory_from_json(j));
  }
  return data;
}

}  // namespace nesde
