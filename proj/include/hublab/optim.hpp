#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hublab/tensor.hpp"

namespace hublab {

struct AdamWHyper {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

// First and second moments for one parameter array.
struct AdamWState {
  std::vector<float> m;
  std::vector<float> v;
};

// One decoupled-weight-decay Adam update on a flat parameter array.
// `step` is 1-based and drives bias correction.
void adamw_step(std::span<float> params, std::span<const float> grads, AdamWState& state,
                const AdamWHyper& hp, std::int64_t step);

// Drives adamw_step over a fixed list of parameter tensors.
class AdamW {
 public:
  struct Group {
    Tensor param;
    bool decay = true;
  };

  explicit AdamW(std::vector<Group> groups);

  // Applies one update using the current gradients; tensors without a
  // gradient buffer are treated as having zero gradient.
  void step(const AdamWHyper& hp);
  void zero_grad();
  std::int64_t steps_taken() const { return step_; }

 private:
  std::vector<Group> groups_;
  std::vector<AdamWState> states_;
  std::int64_t step_ = 0;
};

}  // namespace hublab
