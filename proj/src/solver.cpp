#include "nesde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nesde {

GaussianBelief values(const BasicGaussianBelief<ad::Var>& belief) {
  return {belief.t, linalg::values(belief.mu), linalg::values(belief.sigma)};
}

ControlSignal::ControlSignal(int dim, std::vector<ControlSegment> segments)
    : dim_(dim), segments_(std::move(segments)) {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (s.u.size() != dim_) throw DimensionError("control: segment dimension mismatch");
    if (!(s.t_start < s.t_end)) throw DataError("control: segment needs t_start < t_end");
    if (!s.u.allFinite()) throw DataError("control: non-finite control value");
    if (i > 0 && s.t_start < segments_[i - 1].t_end - 1e-12)
      throw DataError("control: segments overlap or are not sorted");
  }
}

VectorXd ControlSignal::value_at(double t) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                             [](double x, const ControlSegment& s) { return x < s.t_end; });
  if (it != segments_.end() && it->t_start <= t) return it->u;
  return VectorXd::Zero(dim_);
}

std::vector<ControlSignal::Piece> ControlSignal::pieces(double t0, double t1) const {
  std::vector<Piece> out;
  if (!(t1 > t0)) return out;
  double cursor = t0;
  auto it = std::upper_bound(segments_.begin(), segments_.end(), t0,
                             [](double x, const ControlSegment& s) { return x < s.t_end; });
  for (; it != segments_.end() && it->t_start < t1; ++it) {
    const double a = std::max(it->t_start, t0);
    const double b = std::min(it->t_end, t1);
    if (a > cursor) out.push_back({cursor, a, nullptr});
    if (b > a) out.push_back({a, b, &it->u});
    cursor = std::max(cursor, b);
  }
  if (cursor < t1) out.push_back({cursor, t1, nullptr});
  return out;
}

ControlSignal ControlSignal::truncated(double t) const {
  std::vector<ControlSegment> kept;
  for (const auto& s : segments_) {
    if (s.t_start >= t) break;
    kept.push_back(s);
    kept.back().t_end = std::min(s.t_end, t);
  }
  return ControlSignal(dim_, std::move(kept));
}

double default_numeric_step(const SpectralDynamics& dyn, double horizon) {
  double rate = 0.0;
  for (const auto& e : dyn.spectrum.entries) rate = std::max(rate, std::hypot(e.a, e.b));
  double dt = rate > 0.0 ? 1e-3 / rate : 1e-3;
  if (horizon > 0.0) dt = std::min(dt, horizon / 10.0);
  return dt;
}

VectorXd control_integral_numeric(const SpectralDynamics& dyn, const ControlFunction& u_fn, double t0, double t1,
                                  double dt) {
  if (!(dt > 0.0)) throw Error("control_integral_numeric: dt must be positive");
  if (!(t1 >= t0)) throw Error("control_integral_numeric: t1 < t0 (time reversal)");
  const int n = dyn.state_dim();
  const EigenSdeSolver<double> solver(dyn);
  VectorXd acc = VectorXd::Zero(n);
  const double h = t1 - t0;
  if (h == 0.0) return acc;
  const auto steps = static_cast<long>(std::ceil(h / dt - 1e-9));
  const double width = h / static_cast<double>(steps);
  // Each summand only needs tau, so the terms are independent of one another.
  for (long i = 0; i < steps; ++i) {
    const double tau = t0 + (static_cast<double>(i) + 0.5) * width;
    VectorXd term = solver.drive(u_fn(tau));
    solver.apply_exp(term, t1 - tau);
    acc += term;
  }
  return dyn.basis.V * (acc * width);
}

GaussianBelief propagate_numeric(const GaussianBelief& belief, const SpectralDynamics& dyn,
                                 const ControlFunction& u_fn, double t_target, double dt) {
  const double h = t_target - belief.t;
  if (!(h >= 0.0)) throw Error("propagate: target time precedes the belief (time reversal)");
  if (dt <= 0.0) dt = default_numeric_step(dyn, h);
  const EigenSdeSolver<double> solver(dyn);
  GaussianBelief out = solver.propagate(belief, ControlSignal(dyn.control_dim()), t_target);
  if (h > 0.0 && dyn.control_dim() > 0) out.mu += control_integral_numeric(dyn, u_fn, belief.t, t_target, dt);
  return out;
}

}  // namespace nesde
