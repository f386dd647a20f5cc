#include "hublab/optim.hpp"

#include <cmath>
#include <string>

namespace hublab {

void adamw_step(std::span<float> params, std::span<const float> grads, AdamWState& state,
                const AdamWHyper& hp, std::int64_t step) {
  const auto n = params.size();
  if (grads.size() != n) {
    throw DimensionError("adamw_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(n) + " parameters");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0f);
    state.v.assign(n, 0.0f);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw DimensionError("adamw_step: optimizer state does not match parameter count");
  }
  if (step < 1) throw UsageError("adamw_step: step counter is 1-based");
  const double bc1 = 1.0 - std::pow(static_cast<double>(hp.beta1), static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(hp.beta2), static_cast<double>(step));
  const float step_size = static_cast<float>(hp.lr / bc1);
  const float bc2_sqrt = static_cast<float>(std::sqrt(bc2));
  const float decay = hp.lr * hp.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grads[i];
    float& m = state.m[i];
    float& v = state.v[i];
    m = hp.beta1 * m + (1.0f - hp.beta1) * g;
    v = hp.beta2 * v + (1.0f - hp.beta2) * g * g;
    params[i] -= decay * params[i];
    params[i] -= step_size * m / (std::sqrt(v) / bc2_sqrt + hp.eps);
  }
}

AdamW::AdamW(std::vector<Group> groups) : groups_(std::move(groups)), states_(groups_.size()) {}

void AdamW::step(const AdamWHyper& hp) {
  ++step_;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    auto& p = groups_[i].param;
    AdamWHyper local = hp;
    if (!groups_[i].decay) local.weight_decay = 0.0f;
    // Leaves without a gradient buffer still get the zero-gradient update.
    auto grads = p.mutable_grad();
    adamw_step(p.mutable_data(), grads, states_[i], local, step_);
  }
}

void AdamW::zero_grad() {
  for (auto& g : groups_) g.param.zero_grad();
}

}  // namespace hublab
