#include "hublab/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hublab/rng.hpp"

namespace hublab {

void ModelConfig::validate() const {
  if (n_layers < 2) throw UsageError("model config: n_layers must be at least 2");
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw UsageError("model config: d_model must be a positive multiple of n_heads");
  }
  if (vocab_size <= 0) throw UsageError("model config: vocab_size must be positive");
  if (max_seq_len <= 0) throw UsageError("model config: max_seq_len must be positive");
  if (ff_mult <= 0) throw UsageError("model config: ff_mult must be positive");
  if (!(rms_eps >= 0.0f) || !std::isfinite(rms_eps)) throw UsageError("model config: rms_eps must be finite and >= 0");
}

std::vector<std::pair<std::string, Tensor>> Parameters::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto p = "block" + std::to_string(i) + ".";
    const auto& b = blocks[i];
    out.emplace_back(p + "attn_norm", b.attn_norm);
    out.emplace_back(p + "w_qkv", b.w_qkv);
    out.emplace_back(p + "w_out", b.w_out);
    out.emplace_back(p + "mlp_norm", b.mlp_norm);
    out.emplace_back(p + "w_fc", b.w_fc);
    out.emplace_back(p + "w_proj", b.w_proj);
  }
  out.emplace_back("final_norm", final_norm);
  if (unembed.impl() != tok_emb.impl()) out.emplace_back("unembed", unembed);
  return out;
}

Parameters Parameters::deep_copy(const ModelConfig& config) const {
  auto cp = [](const Tensor& t) { return Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad()); };
  Parameters out;
  out.tok_emb = cp(tok_emb);
  out.pos_emb = cp(pos_emb);
  for (const auto& b : blocks) {
    out.blocks.push_back({cp(b.attn_norm), cp(b.w_qkv), cp(b.w_out), cp(b.mlp_norm), cp(b.w_fc), cp(b.w_proj)});
  }
  out.final_norm = cp(final_norm);
  out.unembed = config.tied_embeddings ? out.tok_emb : cp(unembed);
  return out;
}

Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto ff = d * static_cast<std::size_t>(config.ff_mult);
  auto rng = make_rng(seed, "model.init");
  const double base_std = 0.02;
  const double proj_std = base_std / std::sqrt(2.0 * config.n_layers);
  auto normal = [&](Shape shape, double stddev) {
    std::vector<float> values(shape_numel(shape));
    for (auto& x : values) x = static_cast<float>(normal01(rng) * stddev);
    return Tensor::from(std::move(shape), std::move(values), true);
  };
  auto ones = [&](std::size_t n) { return Tensor::full({n}, 1.0f, true); };

  Parameters p;
  p.tok_emb = normal({v, d}, base_std);
  p.pos_emb = normal({static_cast<std::size_t>(config.max_seq_len), d}, base_std);
  for (int l = 0; l < config.n_layers; ++l) {
    BlockParams b;
    b.attn_norm = ones(d);
    b.w_qkv = normal({3 * d, d}, base_std);
    b.w_out = normal({d, d}, proj_std);
    b.mlp_norm = ones(d);
    b.w_fc = normal({ff, d}, base_std);
    b.w_proj = normal({d, ff}, proj_std);
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = ones(d);
  p.unembed = config.tied_embeddings ? p.tok_emb : normal({v, d}, base_std);
  return p;
}

std::span<const float> HiddenTrace::state(std::size_t layer, std::size_t position) const {
  if (layer > n_layers || position >= seq_len) {
    throw UsageError("trace index (" + std::to_string(layer) + ", " + std::to_string(position) +
                     ") outside " + std::to_string(n_layers + 1) + " layers x " + std::to_string(seq_len) +
                     " positions");
  }
  return std::span<const float>(states).subspan((layer * seq_len + position) * d_model, d_model);
}

void HookSet::validate(const ModelConfig& config, std::size_t seq_len) const {
  for (const auto& h : directives) {
    if (h.layer < 1 || h.layer > config.n_layers) {
      throw UsageError("hook layer " + std::to_string(h.layer) + " outside [1, " +
                       std::to_string(config.n_layers) + "]");
    }
    if (h.vector.size() != static_cast<std::size_t>(config.d_model)) {
      throw UsageError("hook vector has " + std::to_string(h.vector.size()) + " entries, model width is " +
                       std::to_string(config.d_model));
    }
    if (!std::isfinite(h.coefficient)) throw UsageError("hook coefficient must be finite");
    for (auto p : h.positions) {
      if (p >= seq_len) {
        throw UsageError("hook position " + std::to_string(p) + " outside sequence of length " +
                         std::to_string(seq_len));
      }
    }
  }
}

namespace {

Tensor block_forward(const BlockParams& b, const ModelConfig& config, const Tensor& x, std::size_t batch) {
  const auto a = rms_norm(x, b.attn_norm, config.rms_eps);
  const auto qkv = matmul_nt(a, b.w_qkv);
  const auto att = causal_attention(qkv, batch, static_cast<std::size_t>(config.n_heads));
  const auto x1 = add(x, matmul_nt(att, b.w_out));
  const auto m = rms_norm(x1, b.mlp_norm, config.rms_eps);
  const auto f = gelu(matmul_nt(m, b.w_fc));
  return add(x1, matmul_nt(f, b.w_proj));
}

Tensor embed(const Parameters& params, std::span<const TokenId> ids, std::size_t seq) {
  return add_tiled_rows(embedding(params.tok_emb, ids), params.pos_emb, seq);
}

// Hooks only touch tensors produced under NoGradGuard.
void apply_hooks(Tensor& x, const HookSet& hooks, int layer, std::size_t seq_len, std::size_t d) {
  for (const auto& h : hooks.directives) {
    if (h.layer != layer) continue;
    auto data = x.mutable_data();
    for (auto p : h.positions) {
      if (p >= seq_len) continue;
      float* row = data.data() + p * d;
      for (std::size_t j = 0; j < d; ++j) {
        if (h.mode == HookMode::Add) {
          row[j] += h.coefficient * h.vector[j];
        } else {
          row[j] = h.coefficient * h.vector[j];
        }
      }
    }
  }
}

ForwardResult run_single(const Parameters& params, const ModelConfig& config, std::span<const TokenId> tokens,
                         const HookSet* hooks, bool keep_trace, bool clip_hooks) {
  if (tokens.empty()) throw UsageError("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config.max_seq_len)) {
    throw UsageError("forward: sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(config.max_seq_len));
  }
  const auto seq = tokens.size();
  const auto d = static_cast<std::size_t>(config.d_model);
  if (hooks && !clip_hooks) hooks->validate(config, seq);

  NoGradGuard guard;
  ForwardResult r;
  if (keep_trace) {
    r.trace.n_layers = static_cast<std::size_t>(config.n_layers);
    r.trace.seq_len = seq;
    r.trace.d_model = d;
    r.trace.tokens.assign(tokens.begin(), tokens.end());
    r.trace.states.resize((r.trace.n_layers + 1) * seq * d);
  }
  auto record = [&](const Tensor& x, std::size_t layer) {
    if (keep_trace) std::copy(x.data().begin(), x.data().end(), r.trace.states.begin() + layer * seq * d);
  };
  Tensor x = embed(params, tokens, seq);
  record(x, 0);
  for (int l = 0; l < config.n_layers; ++l) {
    x = block_forward(params.blocks[static_cast<std::size_t>(l)], config, x, 1);
    if (hooks) apply_hooks(x, *hooks, l + 1, seq, d);
    record(x, static_cast<std::size_t>(l) + 1);
  }
  // Row-wise readout so the lens at the last layer reproduces these logits bit for bit.
  const auto v = static_cast<std::size_t>(config.vocab_size);
  std::vector<float> logits(seq * v);
  for (std::size_t t = 0; t < seq; ++t) {
    const auto row = readout_logits(params, config, x.data().subspan(t * d, d));
    std::copy(row.begin(), row.end(), logits.begin() + t * v);
  }
  r.logits = Tensor::from({seq, v}, std::move(logits));
  return r;
}

}  // namespace

ForwardResult forward_with_trace(const Parameters& params, const ModelConfig& config,
                                 std::span<const TokenId> tokens, const HookSet* hooks) {
  return run_single(params, config, tokens, hooks, true, false);
}

Tensor forward_with_hooks(const Parameters& params, const ModelConfig& config, std::span<const TokenId> tokens,
                          const HookSet& hooks) {
  return run_single(params, config, tokens, &hooks, false, false).logits;
}

std::vector<float> readout_logits(const Parameters& params, const ModelConfig& config, std::span<const float> hidden,
                                  bool apply_final_norm) {
  const auto d = static_cast<std::size_t>(config.d_model);
  if (hidden.size() != d) throw DimensionError("readout: hidden vector has wrong width");
  NoGradGuard guard;
  Tensor h = Tensor::from({1, d}, {hidden.begin(), hidden.end()});
  if (apply_final_norm) h = rms_norm(h, params.final_norm, config.rms_eps);
  const auto logits = matmul_nt(h, params.unembed);
  return {logits.data().begin(), logits.data().end()};
}

Tensor lm_loss(const Parameters& params, const ModelConfig& config, std::span<const TokenId> inputs,
               std::span<const TokenId> targets, std::size_t batch) {
  if (batch == 0 || inputs.size() % batch != 0 || inputs.size() != targets.size()) {
    throw DimensionError("lm_loss: inputs/targets do not form a batch");
  }
  const auto seq = inputs.size() / batch;
  if (seq > static_cast<std::size_t>(config.max_seq_len)) throw UsageError("lm_loss: sequence exceeds max_seq_len");
  Tensor x = embed(params, inputs, seq);
  for (const auto& b : params.blocks) x = block_forward(b, config, x, batch);
  const auto logits = matmul_nt(rms_norm(x, params.final_norm, config.rms_eps), params.unembed);
  return cross_entropy(logits, targets);
}

TokenId argmax_token(std::span<const float> values) {
  if (values.empty()) throw UsageError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

std::vector<TokenId> generate_greedy(const Parameters& params, const ModelConfig& config,
                                     std::span<const TokenId> prompt, std::size_t max_new, const HookSet* hooks) {
  if (prompt.empty()) throw UsageError("generate: empty prompt");
  if (prompt.size() + max_new > static_cast<std::size_t>(config.max_seq_len)) {
    throw UsageError("generate: prompt of " + std::to_string(prompt.size()) + " plus " + std::to_string(max_new) +
                     " new tokens would be truncated at max_seq_len " + std::to_string(config.max_seq_len));
  }
  if (hooks) hooks->validate(config, prompt.size() + max_new);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  const auto v = static_cast<std::size_t>(config.vocab_size);
  for (std::size_t step = 0; step < max_new; ++step) {
    const auto r = run_single(params, config, seq, hooks, false, true);
    const auto last = r.logits.data().subspan((seq.size() - 1) * v, v);
    seq.push_back(argmax_token(last));
  }
  return seq;
}

}  // namespace hublab
