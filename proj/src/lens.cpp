#include "hublab/lens.hpp"

#include <cmath>

#include "hublab/rng.hpp"

namespace hublab {

std::vector<double> lens_log_probs(const Parameters& params, const ModelConfig& config, std::span<const float> hidden,
                                   bool apply_final_norm) {
  const auto logits = readout_logits(params, config, hidden, apply_final_norm);
  double mx = logits[0];
  for (auto x : logits) mx = std::max(mx, static_cast<double>(x));
  double z = 0.0;
  for (auto x : logits) z += std::exp(static_cast<double>(x) - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lz;
  return out;
}

namespace {

void check_site(const HiddenTrace& trace, std::size_t layer, std::size_t position) {
  if (layer > trace.n_layers || position >= trace.seq_len) {
    throw UsageError("logit lens: (layer " + std::to_string(layer) + ", position " + std::to_string(position) +
                     ") outside the trace");
  }
}

}  // namespace

LensDistribution logit_lens(const HiddenTrace& trace, const Parameters& params, const ModelConfig& config,
                            std::size_t layer, std::size_t position, bool apply_final_norm) {
  check_site(trace, layer, position);
  LensDistribution d{layer, position, lens_log_probs(params, config, trace.state(layer, position), apply_final_norm)};
  for (auto& p : d.probs) p = std::exp(p);
  return d;
}

TokenId nearest_token(const HiddenTrace& trace, const Parameters& params, const ModelConfig& config,
                      std::size_t layer, std::size_t position, bool apply_final_norm) {
  check_site(trace, layer, position);
  return argmax_token(readout_logits(params, config, trace.state(layer, position), apply_final_norm));
}

AnchorCase AnchorCase::make(std::vector<TokenId> prefix, TokenId anchor, TokenId input_token) {
  if (prefix.empty()) throw UsageError("anchor case: empty prefix");
  if (anchor == input_token) throw UsageError("anchor case: anchor and input tokens coincide");
  AnchorCase c;
  c.position = prefix.size() - 1;
  c.prefix = std::move(prefix);
  c.anchor = anchor;
  c.input_token = input_token;
  return c;
}

std::vector<AnchorCase> make_anchor_cases(const std::vector<ParallelPair>& pairs, const Lexicon& lex, DataType input,
                                          DataType dominant, std::uint64_t seed) {
  auto rng = make_rng(seed, "lens.anchor.positions");
  std::vector<AnchorCase> cases;
  for (const auto& pair : pairs) {
    const auto seq = render(pair.lexemes, input, lex);
    if (seq.size() < 3) continue;
    // t in [1, n - 2]: the prefix holds at least one word and has a successor.
    const auto t = 1 + uniform_index(rng, seq.size() - 2);
    const auto lexeme = pair.lexemes[t];  // seq[t + 1] realizes lexemes[t]
    const auto anchor = lex.surface(lexeme, dominant);
    if (anchor == seq[t + 1]) continue;
    cases.push_back(AnchorCase::make({seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(t + 1)}, anchor, seq[t + 1]));
  }
  return cases;
}

AnchorResult anchor_test(const std::vector<AnchorCase>& cases, const Parameters& params, const ModelConfig& config,
                         std::uint64_t seed, bool apply_final_norm) {
  if (cases.empty()) throw UsageError("anchor_test: no cases");
  const auto n_layers = static_cast<std::size_t>(config.n_layers);
  const auto vocab = static_cast<TokenId>(config.vocab_size);
  std::vector<std::vector<double>> anchor(n_layers + 1), input(n_layers + 1), win(n_layers + 1);
  for (const auto& c : cases) {
    if (c.anchor < 0 || c.anchor >= vocab || c.input_token < 0 || c.input_token >= vocab) {
      throw UsageError("anchor_test: anchor token outside the vocabulary");
    }
    const auto r = forward_with_trace(params, config, c.prefix);
    for (std::size_t l = 0; l <= n_layers; ++l) {
      const auto lp = lens_log_probs(params, config, r.trace.state(l, c.position), apply_final_norm);
      const double a = lp[static_cast<std::size_t>(c.anchor)];
      const double b = lp[static_cast<std::size_t>(c.input_token)];
      anchor[l].push_back(a);
      input[l].push_back(b);
      win[l].push_back(a > b ? 1.0 : 0.0);
    }
  }
  AnchorResult out;
  out.anchor_logp = {"lens-anchor", "anchor_logp", {}};
  out.input_logp = {"lens-anchor", "input_logp", {}};
  out.win_rate = {"lens-anchor", "win_rate", {}};
  for (std::size_t l = 0; l <= n_layers; ++l) {
    const int layer = static_cast<int>(l);
    out.anchor_logp.points.push_back(summarize(layer, anchor[l], seed, "anchor_logp"));
    out.input_logp.points.push_back(summarize(layer, input[l], seed, "input_logp"));
    out.win_rate.points.push_back(summarize(layer, win[l], seed, "win_rate"));
  }
  out.uniform_baseline = -std::log(static_cast<double>(config.vocab_size));
  return out;
}

double TokenLanguageModel::likelihood(std::size_t type_index, TokenId token) const {
  const auto& c = counts.at(type_index);
  if (token < 0 || static_cast<std::size_t>(token) >= c.size()) throw UsageError("token outside the vocabulary");
  double total = 0.0;
  for (auto x : c) total += x;
  const double denom = total + alpha * static_cast<double>(c.size());
  return denom > 0.0 ? (c[static_cast<std::size_t>(token)] + alpha) / denom : 0.0;
}

TokenLanguageModel fit_token_language_model(std::size_t vocab_size, const std::vector<TypedCorpus>& corpora,
                                            double alpha) {
  if (corpora.empty()) throw UsageError("token language model: no corpora");
  if (!(alpha >= 0.0)) throw UsageError("token language model: smoothing must be >= 0");
  TokenLanguageModel tlm;
  tlm.alpha = alpha;
  for (const auto& corpus : corpora) {
    std::size_t idx = tlm.types.size();
    for (std::size_t i = 0; i < tlm.types.size(); ++i) {
      if (tlm.types[i] == corpus.type) idx = i;
    }
    if (idx == tlm.types.size()) {
      tlm.types.push_back(corpus.type);
      tlm.counts.emplace_back(vocab_size, 0.0);
    }
    std::size_t seen = 0;
    for (const auto& doc : corpus.docs) {
      for (auto t : doc) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw UsageError("token language model: token outside vocabulary");
        tlm.counts[idx][static_cast<std::size_t>(t)] += 1.0;
        ++seen;
      }
    }
    if (seen == 0) throw UsageError(std::string("token language model: empty corpus for data type ") + to_string(corpus.type));
  }
  return tlm;
}

std::vector<double> token_language_posterior(const TokenLanguageModel& tlm, TokenId token) {
  const auto k = tlm.types.size();
  std::vector<double> post(k);
  double total = 0.0;
  for (std::size_t z = 0; z < k; ++z) {
    post[z] = tlm.likelihood(z, token);
    total += post[z];
  }
  for (auto& p : post) p = total > 0.0 ? p / total : 1.0 / static_cast<double>(k);
  return post;
}

std::vector<LayerCurve> layer_language_distribution(const std::vector<std::vector<TokenId>>& sequences,
                                                    const TokenLanguageModel& tlm, const Parameters& params,
                                                    const ModelConfig& config, std::uint64_t seed,
                                                    const std::string& experiment, bool apply_final_norm) {
  if (sequences.empty()) throw UsageError("layer_language_distribution: no sequences");
  const auto v = static_cast<std::size_t>(config.vocab_size);
  if (tlm.vocab_size() != v) throw UsageError("layer_language_distribution: token model vocabulary mismatch");
  const auto k = tlm.types.size();
  std::vector<std::vector<double>> posterior(v);
  for (std::size_t w = 0; w < v; ++w) posterior[w] = token_language_posterior(tlm, static_cast<TokenId>(w));

  const auto n_layers = static_cast<std::size_t>(config.n_layers);
  // values[layer][type] -> one entry per token position
  std::vector<std::vector<std::vector<double>>> values(n_layers + 1, std::vector<std::vector<double>>(k));
  for (const auto& seq : sequences) {
    const auto r = forward_with_trace(params, config, seq);
    for (std::size_t l = 0; l <= n_layers; ++l) {
      for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto lp = lens_log_probs(params, config, r.trace.state(l, t), apply_final_norm);
        std::vector<double> pz(k, 0.0);
        for (std::size_t w = 0; w < v; ++w) {
          const double pw = std::exp(lp[w]);
          for (std::size_t z = 0; z < k; ++z) pz[z] += posterior[w][z] * pw;
        }
        double total = 0.0;
        for (auto x : pz) total += x;
        for (std::size_t z = 0; z < k; ++z) values[l][z].push_back(pz[z] / total);
      }
    }
  }
  std::vector<LayerCurve> curves;
  for (std::size_t z = 0; z < k; ++z) {
    LayerCurve c{experiment, std::string("p_") + to_string(tlm.types[z]), {}};
    for (std::size_t l = 0; l <= n_layers; ++l) c.points.push_back(summarize(static_cast<int>(l), values[l][z], seed, c.series));
    curves.push_back(std::move(c));
  }
  return curves;
}

std::vector<std::size_t> comma_positions(const std::vector<TokenId>& tokens, const Lexicon& lex) {
  const auto comma = lex.surface(lex.comma(), DataType::A);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == comma) out.push_back(i);
  }
  return out;
}

ListAnchorResult list_comma_anchor_test(const std::vector<ListItem>& items, const Lexicon& lex, DataType language,
                                        DataType dominant, const Parameters& params, const ModelConfig& config,
                                        std::uint64_t seed, bool apply_final_norm) {
  if (items.empty()) throw UsageError("list_comma_anchor_test: no items");
  const auto n_layers = static_cast<std::size_t>(config.n_layers);
  const TokenId and_tok = lex.surface(lex.and_word(), dominant);
  const TokenId or_tok = lex.surface(lex.or_word(), dominant);
  const TokenId not_tok = lex.surface(lex.not_word(), dominant);
  const char* names[] = {"and", "next_element", "control_or", "control_not"};
  std::vector<std::vector<std::vector<double>>> values(4, std::vector<std::vector<double>>(n_layers + 1));
  for (const auto& item : items) {
    const auto seq = render_code_list(item, language, lex);
    const auto r = forward_with_trace(params, config, seq);
    for (auto pos : comma_positions(seq, lex)) {
      const TokenId next = seq[pos + 1];
      for (std::size_t l = 0; l <= n_layers; ++l) {
        const auto lp = lens_log_probs(params, config, r.trace.state(l, pos), apply_final_norm);
        const TokenId toks[] = {and_tok, next, or_tok, not_tok};
        for (std::size_t s = 0; s < 4; ++s) values[s][l].push_back(lp[static_cast<std::size_t>(toks[s])]);
      }
    }
  }
  ListAnchorResult out;
  out.uniform_baseline = -std::log(static_cast<double>(config.vocab_size));
  for (std::size_t s = 0; s < 4; ++s) {
    LayerCurve c{"lens-lists", names[s], {}};
    for (std::size_t l = 0; l <= n_layers; ++l) c.points.push_back(summarize(static_cast<int>(l), values[s][l], seed, names[s]));
    out.curves.push_back(std::move(c));
  }
  return out;
}

}  // namespace hublab
