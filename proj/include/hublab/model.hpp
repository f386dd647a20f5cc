#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hublab/ops.hpp"
#include "hublab/tensor.hpp"

namespace hublab {

struct ModelConfig {
  int n_layers = 8;
  int d_model = 128;
  int n_heads = 4;
  int vocab_size = 0;
  int max_seq_len = 64;
  int ff_mult = 4;
  float rms_eps = 1e-5f;
  bool tied_embeddings = false;

  // Throws UsageError on an inconsistent configuration.
  void validate() const;
};

struct BlockParams {
  Tensor attn_norm;  // [d]
  Tensor w_qkv;      // [3d x d]
  Tensor w_out;      // [d x d]
  Tensor mlp_norm;   // [d]
  Tensor w_fc;       // [ff x d]
  Tensor w_proj;     // [d x ff]
};

struct Parameters {
  Tensor tok_emb;     // E [V x d]
  Tensor pos_emb;     // [max_seq_len x d]
  std::vector<BlockParams> blocks;
  Tensor final_norm;  // [d]
  Tensor unembed;     // O [V x d]; aliases tok_emb when embeddings are tied

  // Every distinct trainable array in a fixed order, with stable names.
  std::vector<std::pair<std::string, Tensor>> named() const;
  Parameters deep_copy(const ModelConfig& config) const;
};

Parameters init_parameters(const ModelConfig& config, std::uint64_t seed);

// Residual stream of one sequence: index 0 is the post-embedding state,
// index l the state after block l (after any hooks at l were applied).
struct HiddenTrace {
  std::size_t n_layers = 0;
  std::size_t seq_len = 0;
  std::size_t d_model = 0;
  std::vector<float> states;  // (n_layers + 1) x seq_len x d_model
  std::vector<TokenId> tokens;

  std::span<const float> state(std::size_t layer, std::size_t position) const;
};

enum class HookMode { Add, Replace };

struct HookDirective {
  int layer = 1;  // in [1, L]
  std::vector<std::size_t> positions;
  std::vector<float> vector;
  float coefficient = 1.0f;
  HookMode mode = HookMode::Add;
};

// Directives are applied in listed order to the residual stream leaving
// block `layer`, before it enters the next block.
struct HookSet {
  std::vector<HookDirective> directives;

  bool empty() const { return directives.empty(); }
  void validate(const ModelConfig& config, std::size_t seq_len) const;
};

struct ForwardResult {
  Tensor logits;  // [T x V]
  HiddenTrace trace;
};

ForwardResult forward_with_trace(const Parameters& params, const ModelConfig& config,
                                 std::span<const TokenId> tokens, const HookSet* hooks = nullptr);

Tensor forward_with_hooks(const Parameters& params, const ModelConfig& config,
                          std::span<const TokenId> tokens, const HookSet& hooks);

// Final norm then unembedding of one residual vector; the logit-lens and the
// model head share this path.
std::vector<float> readout_logits(const Parameters& params, const ModelConfig& config,
                                  std::span<const float> hidden, bool apply_final_norm = true);

// Batched training forward. `inputs` and `targets` are batch x seq, flattened.
Tensor lm_loss(const Parameters& params, const ModelConfig& config, std::span<const TokenId> inputs,
               std::span<const TokenId> targets, std::size_t batch);

// Argmax with ties to the smallest index.
TokenId argmax_token(std::span<const float> values);

// Greedy decoding; hooks are re-applied at their absolute positions on every
// step. Returns prompt followed by generated tokens.
std::vector<TokenId> generate_greedy(const Parameters& params, const ModelConfig& config,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     const HookSet* hooks = nullptr);

}  // namespace hublab
