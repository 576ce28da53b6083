#include "nesde/ad.hpp"

#include <vector>

namespace nesde::ad {

Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}

Var fused_dot(std::span<const Var> a, std::span<const Var> b, const Var& c) {
  double value = c.value();
  bool all_constant = c.is_constant();
  for (std::size_t i = 0; i < a.size(); ++i) {
    value += a[i].value() * b[i].value();
    all_constant = all_constant && a[i].is_constant() && b[i].is_constant();
  }
  if (all_constant) return Var(value);

  thread_local std::vector<NodeIndex> parents;
  thread_local std::vector<double> partials;
  parents.clear();
  partials.clear();
  for (std::size_t i = 0; i < a.size(); ++i) {
    parents.push_back(a[i].index());
    partials.push_back(b[i].value());
    parents.push_back(b[i].index());
    partials.push_back(a[i].value());
  }
  parents.push_back(c.index());
  partials.push_back(1.0);
  return Var::from_node(value, active_tape().push(parents, partials));
}

}  // namespace nesde::ad
