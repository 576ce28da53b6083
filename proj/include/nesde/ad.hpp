#pragma once

// Minimal reverse-mode automatic differentiation.
//
// A Tape is a Wengert list: every node stores the indices of its parents and
// the local partial derivative towards each of them. Var is a value plus the
// index of the node that produced it; constants carry index -1 and never touch
// the tape, so code templated on the scalar type costs nothing for the parts
// of an expression that do not depend on parameters.
//
// The active tape is thread-local. One Tape belongs to one thread.

#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace nesde::ad {

using NodeIndex = std::int32_t;
inline constexpr NodeIndex kConstant = -1;

class Tape {
 public:
  Tape() { begin_.push_back(0); }

  NodeIndex leaf() { return close_node(); }

  NodeIndex push(NodeIndex a, double da) {
    if (a == kConstant) return kConstant;
    parents_.push_back(a);
    partials_.push_back(da);
    return close_node();
  }

  NodeIndex push(NodeIndex a, double da, NodeIndex b, double db) {
    if (a == kConstant && b == kConstant) return kConstant;
    if (a != kConstant) {
      parents_.push_back(a);
      partials_.push_back(da);
    }
    if (b != kConstant) {
      parents_.push_back(b);
      partials_.push_back(db);
    }
    return close_node();
  }

  /// Node with arbitrary fan-in. Constant parents are skipped.
  NodeIndex push(std::span<const NodeIndex> parents, std::span<const double> partials) {
    const auto start = parents_.size();
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i] == kConstant) continue;
      parents_.push_back(parents[i]);
      partials_.push_back(partials[i]);
    }
    if (parents_.size() == start) return kConstant;
    return close_node();
  }

  std::size_t size() const { return begin_.size() - 1; }

  /// Reverse sweep from `root`; afterwards adjoint(i) holds d(root)/d(node i).
  void backward(NodeIndex root, double seed = 1.0) {
    adjoints_.assign(size(), 0.0);
    if (root == kConstant) return;
    adjoints_[static_cast<std::size_t>(root)] = seed;
    for (auto i = static_cast<std::size_t>(root) + 1; i-- > 0;) {
      const double a = adjoints_[i];
      if (a == 0.0) continue;
      for (auto e = begin_[i]; e < begin_[i + 1]; ++e) {
        adjoints_[static_cast<std::size_t>(parents_[e])] += partials_[e] * a;
      }
    }
  }

  double adjoint(NodeIndex i) const {
    if (i == kConstant || static_cast<std::size_t>(i) >= adjoints_.size()) return 0.0;
    return adjoints_[static_cast<std::size_t>(i)];
  }

  void clear() {
    begin_.assign(1, 0);
    parents_.clear();
    partials_.clear();
    adjoints_.clear();
  }

 private:
  NodeIndex close_node() {
    begin_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return static_cast<NodeIndex>(begin_.size() - 2);
  }

  std::vector<std::uint32_t> begin_;
  std::vector<NodeIndex> parents_;
  std::vector<double> partials_;
  std::vector<double> adjoints_;
};

Tape*& active_tape_slot();

inline Tape& active_tape() { return *active_tape_slot(); }

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(active_tape_slot()) { active_tape_slot() = &tape; }
  ~TapeScope() { active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

class Var {
 public:
  Var() = default;
  template <class A, std::enable_if_t<std::is_arithmetic_v<A>, int> = 0>
  Var(A v) : value_(static_cast<double>(v)) {}  // NOLINT(google-explicit-constructor)

  static Var from_node(double value, NodeIndex index) {
    Var out(value);
    out.index_ = index;
    return out;
  }

  double value() const { return value_; }
  NodeIndex index() const { return index_; }
  bool is_constant() const { return index_ == kConstant; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);

 private:
  double value_ = 0.0;
  NodeIndex index_ = kConstant;
};

/// Registers a new independent variable on the active tape.
inline Var parameter(double value) { return Var::from_node(value, active_tape().leaf()); }

namespace detail {
inline Var unary(const Var& x, double value, double partial) {
  if (x.is_constant()) return Var(value);
  return Var::from_node(value, active_tape().push(x.index(), partial));
}
inline Var binary(const Var& x, double dx, const Var& y, double dy, double value) {
  if (x.is_constant() && y.is_constant()) return Var(value);
  return Var::from_node(value, active_tape().push(x.index(), dx, y.index(), dy));
}
}  // namespace detail

inline Var operator+(const Var& x, const Var& y) {
  return detail::binary(x, 1.0, y, 1.0, x.value() + y.value());
}
inline Var operator-(const Var& x, const Var& y) {
  return detail::binary(x, 1.0, y, -1.0, x.value() - y.value());
}
inline Var operator*(const Var& x, const Var& y) {
  return detail::binary(x, y.value(), y, x.value(), x.value() * y.value());
}
inline Var operator/(const Var& x, const Var& y) {
  const double inv = 1.0 / y.value();
  const double q = x.value() * inv;
  return detail::binary(x, inv, y, -q * inv, q);
}
inline Var operator-(const Var& x) { return detail::unary(x, -x.value(), -1.0); }
inline Var operator+(const Var& x) { return x; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& x, const Var& y) { return x.value() < y.value(); }
inline bool operator>(const Var& x, const Var& y) { return x.value() > y.value(); }
inline bool operator<=(const Var& x, const Var& y) { return x.value() <= y.value(); }
inline bool operator>=(const Var& x, const Var& y) { return x.value() >= y.value(); }
inline bool operator==(const Var& x, const Var& y) { return x.value() == y.value(); }
inline bool operator!=(const Var& x, const Var& y) { return x.value() != y.value(); }

inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return detail::unary(x, e, e);
}
inline Var expm1(const Var& x) {
  return detail::unary(x, std::expm1(x.value()), std::exp(x.value()));
}
inline Var log(const Var& x) { return detail::unary(x, std::log(x.value()), 1.0 / x.value()); }
inline Var log1p(const Var& x) {
  return detail::unary(x, std::log1p(x.value()), 1.0 / (1.0 + x.value()));
}
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  return detail::unary(x, s, 0.5 / s);
}
inline Var sin(const Var& x) { return detail::unary(x, std::sin(x.value()), std::cos(x.value())); }
inline Var cos(const Var& x) { return detail::unary(x, std::cos(x.value()), -std::sin(x.value())); }
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return detail::unary(x, t, 1.0 - t * t);
}
inline Var abs(const Var& x) {
  return detail::unary(x, std::abs(x.value()), x.value() < 0.0 ? -1.0 : 1.0);
}
inline Var asinh(const Var& x) {
  return detail::unary(x, std::asinh(x.value()), 1.0 / std::sqrt(1.0 + x.value() * x.value()));
}
inline Var pow(const Var& x, double p) {
  return detail::unary(x, std::pow(x.value(), p), p * std::pow(x.value(), p - 1.0));
}
inline bool isfinite(const Var& x) { return std::isfinite(x.value()); }
inline bool isnan(const Var& x) { return std::isnan(x.value()); }
inline bool isinf(const Var& x) { return std::isinf(x.value()); }

// Required by Eigen for real scalar types.
inline const Var& conj(const Var& x) { return x; }
inline const Var& real(const Var& x) { return x; }
inline Var imag(const Var&) { return Var(0.0); }
inline Var abs2(const Var& x) { return x * x; }

/// c + sum_i a_i * b_i as a single tape node.
Var fused_dot(std::span<const Var> a, std::span<const Var> b, const Var& c);

}  // namespace nesde::ad

namespace Eigen {

template <>
struct NumTraits<nesde::ad::Var> : NumTraits<double> {
  using Real = nesde::ad::Var;
  using NonInteger = nesde::ad::Var;
  using Nested = nesde::ad::Var;
  using Literal = nesde::ad::Var;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3
  };
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<nesde::ad::Var, double, BinaryOp> {
  using ReturnType = nesde::ad::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, nesde::ad::Var, BinaryOp> {
  using ReturnType = nesde::ad::Var;
};

}  // namespace Eigen

namespace nesde {

inline double value_of(double x) { return x; }
inline double value_of(const ad::Var& x) { return x.value(); }

/// True when `x` is zero and carries no derivative information.
inline bool is_constant_zero(double x) { return x == 0.0; }
inline bool is_constant_zero(const ad::Var& x) { return x.is_constant() && x.value() == 0.0; }

inline double asinh_of(double x) { return std::asinh(x); }
inline ad::Var asinh_of(const ad::Var& x) { return ad::asinh(x); }

template <class T>
T softplus(const T& x) {
  using std::exp;
  using std::log1p;
  if (value_of(x) > 30.0) return x;
  return log1p(exp(x));
}

}  // namespace nesde
