#include "nesde/neural.hpp"

#include "nesde/spectral.hpp"

namespace nesde {

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "tanh";
}

int MlpShape::num_params() const {
  int total = 0;
  for (int l = 0; l < layers(); ++l)
    total += sizes[static_cast<std::size_t>(l)] * sizes[static_cast<std::size_t>(l + 1)] +
             sizes[static_cast<std::size_t>(l + 1)];
  return total;
}

Mlp Mlp::initialized(MlpShape shape, std::mt19937_64& rng, double gain) {
  Mlp net;
  net.shape = std::move(shape);
  net.params = VectorXd::Zero(net.shape.num_params());
  Eigen::Index offset = 0;
  for (int l = 0; l < net.shape.layers(); ++l) {
    const int in = net.shape.sizes[static_cast<std::size_t>(l)];
    const int out = net.shape.sizes[static_cast<std::size_t>(l + 1)];
    const double limit = in + out > 0 ? gain * std::sqrt(6.0 / (in + out)) : 0.0;
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (int i = 0; i < in * out; ++i) net.params(offset + i) = dist(rng);
    offset += static_cast<Eigen::Index>(in) * out + out;
  }
  return net;
}

ParameterBinding::ParameterBinding(ad::Tape& tape, const VectorXd& params) {
  vars_.reserve(static_cast<std::size_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) vars_.push_back(ad::Var::from_node(params(i), tape.leaf()));
}

VectorXd ParameterBinding::gradient(const ad::Tape& tape) const {
  VectorXd g(static_cast<Eigen::Index>(vars_.size()));
  for (std::size_t i = 0; i < vars_.size(); ++i) g(static_cast<Eigen::Index>(i)) = tape.adjoint(vars_[i].index());
  return g;
}

Vec<ad::Var> mlp_forward(const Mlp& net, const Vec<ad::Var>& x, ad::Tape& tape, std::vector<ad::Var>* bound) {
  ad::TapeScope scope(tape);
  ParameterBinding binding(tape, net.params);
  Vec<ad::Var> out = mlp_apply<ad::Var>(net.shape, binding.vars(), x);
  if (bound != nullptr) bound->assign(binding.vars().begin(), binding.vars().end());
  return out;
}

AdamState AdamState::for_params(Eigen::Index size, double lr, double beta1, double beta2, double epsilon) {
  AdamState s;
  s.first_moment = VectorXd::Zero(size);
  s.second_moment = VectorXd::Zero(size);
  s.learning_rate = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_step(AdamState& state, VectorXd& params, const VectorXd& grads) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw DimensionError("adam_step: shape mismatch");
  state.step += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

nlohmann::json to_json(const AdamState& state) {
  return {{"first_moment", vector_to_json(state.first_moment)},
          {"second_moment", vector_to_json(state.second_moment)},
          {"step", state.step},
          {"learning_rate", format_exact(state.learning_rate)},
          {"beta1", format_exact(state.beta1)},
          {"beta2", format_exact(state.beta2)},
          {"epsilon", format_exact(state.epsilon)}};
}

AdamState adam_from_json(const nlohmann::json& j) {
  AdamState s;
  s.first_moment = vector_from_json(j.at("first_moment"));
  s.second_moment = vector_from_json(j.at("second_moment"));
  s.step = j.at("step").get<long>();
  s.learning_rate = parse_exact(j.at("learning_rate"));
  s.beta1 = parse_exact(j.at("beta1"));
  s.beta2 = parse_exact(j.at("beta2"));
  s.epsilon = parse_exact(j.at("epsilon"));
  return s;
}

}  // namespace nesde
