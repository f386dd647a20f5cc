#include "hublab/intervene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace hublab {

int default_steering_layer(const ModelConfig& config) {
  const int l = static_cast<int>(std::lround(0.55 * config.n_layers));
  return std::clamp(l, 1, config.n_layers);
}

std::vector<float> contrast_vector_from_hidden(const Parameters& params, const ModelConfig& config,
                                               const std::vector<TokenId>& prompt_plus,
                                               const std::vector<TokenId>& prompt_minus, int layer) {
  if (layer < 0 || layer > config.n_layers) {
    throw UsageError("contrast vector: layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(config.n_layers) + "]");
  }
  if (prompt_plus.empty() || prompt_minus.empty()) throw UsageError("contrast vector: empty prompt");
  const auto l = static_cast<std::size_t>(layer);
  const auto rp = forward_with_trace(params, config, prompt_plus);
  const auto rm = forward_with_trace(params, config, prompt_minus);
  const auto hp = rp.trace.state(l, prompt_plus.size() - 1);
  const auto hm = rm.trace.state(l, prompt_minus.size() - 1);
  std::vector<float> out(hp.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = hp[i] - hm[i];
  return out;
}

std::vector<float> contrast_vector_from_unembedding(const Parameters& params, TokenId token_plus, TokenId token_minus) {
  const auto v = params.unembed.shape()[0];
  const auto d = params.unembed.shape()[1];
  if (token_plus < 0 || token_minus < 0 || static_cast<std::size_t>(token_plus) >= v ||
      static_cast<std::size_t>(token_minus) >= v) {
    throw UsageError("contrast vector: token outside the vocabulary");
  }
  const auto o = params.unembed.data();
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = o[static_cast<std::size_t>(token_plus) * d + i] - o[static_cast<std::size_t>(token_minus) * d + i];
  }
  return out;
}

TokenId sample_top_p(std::span<const float> logits, double temperature, double top_p, Rng& rng) {
  if (logits.empty()) throw UsageError("sample: empty logits");
  if (!(temperature > 0.0) || !(top_p > 0.0 && top_p <= 1.0)) throw UsageError("sample: bad temperature or top_p");
  double mx = logits[0];
  for (auto x : logits) mx = std::max(mx, static_cast<double>(x));
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp((logits[i] - mx) / temperature);
  for (auto& x : p) x /= z;
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += p[order[keep++]];
    if (mass >= top_p) break;
  }
  double u = uniform01(rng) * mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= p[order[i]];
    if (u < 0.0) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[keep - 1]);
}

std::vector<TokenId> generate_sampled(const Parameters& params, const ModelConfig& config,
                                      std::span<const TokenId> prompt, std::size_t max_new, const HookSet* hooks,
                                      double temperature, double top_p, std::uint64_t seed,
                                      std::optional<TokenId> stop) {
  if (prompt.empty()) throw UsageError("generate: empty prompt");
  if (prompt.size() + max_new > static_cast<std::size_t>(config.max_seq_len)) {
    throw UsageError("generate: prompt plus max_new exceeds max_seq_len");
  }
  auto rng = make_rng(seed, "intervene.sample");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  const auto v = static_cast<std::size_t>(config.vocab_size);
  HookSet clipped;
  for (std::size_t step = 0; step < max_new; ++step) {
    Tensor logits;
    if (hooks) {
      // Positions past the current length are not yet present.
      clipped.directives.clear();
      for (auto d : hooks->directives) {
        std::erase_if(d.positions, [&](std::size_t p) { return p >= seq.size(); });
        clipped.directives.push_back(std::move(d));
      }
      logits = forward_with_hooks(params, config, seq, clipped);
    } else {
      logits = forward_with_trace(params, config, seq).logits;
    }
    const auto tok = sample_top_p(logits.data().subspan((seq.size() - 1) * v, v), temperature, top_p, rng);
    seq.push_back(tok);
    if (stop && tok == *stop) break;
  }
  return seq;
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::SteeredCorrect: return "steered_correct";
    case Outcome::Unchanged: return "unchanged";
    case Outcome::Other: return "other";
  }
  return "?";
}

std::optional<Outcome> classify_outcome(TokenId baseline, TokenId steered, TokenId expected) {
  if (expected == baseline) return std::nullopt;
  if (steered == expected) return Outcome::SteeredCorrect;
  if (steered == baseline) return Outcome::Unchanged;
  return Outcome::Other;
}

double SteerOutcome::rate(Outcome o) const {
  if (outcomes.empty()) return 0.0;
  return static_cast<double>(std::count(outcomes.begin(), outcomes.end(), o)) / static_cast<double>(outcomes.size());
}

void write_steer_outcomes(const std::string& path, const std::vector<SteerOutcome>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path);
  os << kSteerOutcomeHeader << '\n' << std::setprecision(9);
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.setting << ',' << r.rate(Outcome::SteeredCorrect) << ','
       << r.rate(Outcome::Unchanged) << ',' << r.rate(Outcome::Other) << ',' << r.n() << ',';
    bool first = true;
    for (const auto& [k, v] : r.extras) {
      os << (first ? "" : ";") << k << '=' << v;
      first = false;
    }
    os << '\n';
  }
}

std::vector<std::vector<TokenId>> make_polarity_prefixes(const Lexicon& lex, DataType language, std::size_t n,
                                                         std::uint64_t seed) {
  const auto total = lex.agents().size() * lex.verbs().size();
  if (n > total) throw UsageError("polarity prefixes: only " + std::to_string(total) + " distinct openings exist");
  auto rng = make_rng(seed, "intervene.polarity.prefixes");
  std::set<std::pair<LexemeId, LexemeId>> seen;
  std::vector<std::vector<TokenId>> out;
  while (out.size() < n) {
    const auto s = lex.agents()[uniform_index(rng, lex.agents().size())];
    const auto v = lex.verbs()[uniform_index(rng, lex.verbs().size())];
    if (!seen.insert({s, v}).second) continue;
    out.push_back({lex.bos(), lex.surface(s, language), lex.surface(v, language)});
  }
  return out;
}

namespace {

int resolve_layer(int layer, const ModelConfig& config) {
  const int l = layer < 0 ? default_steering_layer(config) : layer;
  if (l < 1 || l > config.n_layers) {
    throw UsageError("steering layer " + std::to_string(l) + " outside [1, " + std::to_string(config.n_layers) + "]");
  }
  return l;
}

std::string transcript(const std::vector<TokenId>& seq, const Lexicon& lex) {
  std::string s;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) s += ' ';
    s += lex.token_text(seq[i]);
  }
  return s;
}

// Perplexity of seq[from:] given seq[:from].
std::pair<double, std::size_t> continuation_nll(const Parameters& params, const ModelConfig& config,
                                                const std::vector<TokenId>& seq, std::size_t from) {
  if (seq.size() <= from) return {0.0, 0};
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto logits = forward_with_trace(params, config, std::span(seq.data(), seq.size() - 1)).logits.data();
  double nll = 0.0;
  for (std::size_t t = from; t < seq.size(); ++t) {
    const auto row = logits.subspan((t - 1) * v, v);
    double mx = row[0];
    for (auto x : row) mx = std::max(mx, static_cast<double>(x));
    double z = 0.0;
    for (auto x : row) z += std::exp(static_cast<double>(x) - mx);
    nll += mx + std::log(z) - row[static_cast<std::size_t>(seq[t])];
  }
  return {nll, seq.size() - from};
}

}  // namespace

std::vector<float> polarity_vector(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                   DataType language, int layer) {
  const auto& pos = lex.adjectives(Polarity::Positive);
  const auto& neg = lex.adjectives(Polarity::Negative);
  const auto n = std::min(pos.size(), neg.size());
  std::vector<float> acc(static_cast<std::size_t>(config.d_model), 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = contrast_vector_from_hidden(params, config, {lex.bos(), lex.surface(pos[i], language)},
                                               {lex.bos(), lex.surface(neg[i], language)}, layer);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[j] / static_cast<float>(n);
  }
  return acc;
}

PolarityRun run_polarity_generations(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                     const std::vector<std::vector<TokenId>>& prefixes, const std::vector<float>& vector,
                                     const PolarityConfig& cfg, const Parameters* reference_params,
                                     const ModelConfig* reference_config) {
  if (prefixes.empty()) throw UsageError("polarity steering: no prefixes");
  const int layer = resolve_layer(cfg.layer, config);
  HookSet hooks;
  HookDirective d;
  d.layer = layer;
  for (std::size_t p = 0; p < cfg.span; ++p) d.positions.push_back(p);
  d.vector = vector;
  d.coefficient = cfg.coefficient * static_cast<float>(cfg.direction);
  hooks.directives.push_back(d);

  PolarityRun run;
  long balance = 0;
  std::size_t generated = 0, on_topic = 0, ref_tokens = 0;
  double ref_nll = 0.0;
  const auto language = lex.token_type(prefixes.front().back());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& prefix = prefixes[i];
    const auto seq = generate_sampled(params, config, prefix, cfg.max_new, &hooks, cfg.temperature, cfg.top_p,
                                      splitmix64(cfg.seed + i), lex.bos());
    for (std::size_t t = prefix.size(); t < seq.size(); ++t) {
      if (seq[t] == lex.bos()) continue;
      ++generated;
      if (lex.token_type(seq[t]) == language) ++on_topic;
      if (auto lx = lex.token_lexeme(seq[t])) {
        const auto role = lex.lexeme(*lx).role;
        if (role == Role::AdjPositive) ++balance, ++run.adjectives;
        if (role == Role::AdjNegative) --balance, ++run.adjectives;
      }
    }
    if (reference_params) {
      const auto [nll, n] = continuation_nll(*reference_params, *reference_config, seq, prefix.size());
      ref_nll += nll;
      ref_tokens += n;
    }
    run.generations.push_back(seq);
  }
  run.polarity_score = run.adjectives ? static_cast<double>(balance) / static_cast<double>(run.adjectives) : 0.0;
  run.on_topic_rate = generated ? static_cast<double>(on_topic) / static_cast<double>(generated) : 0.0;
  run.disfluency = ref_tokens ? std::exp(ref_nll / static_cast<double>(ref_tokens)) : 0.0;
  return run;
}

namespace {

TokenId polarity_label(const std::vector<TokenId>& seq, std::size_t from, const Lexicon& lex) {
  int bal = 0;
  for (std::size_t t = from; t < seq.size(); ++t) {
    if (auto lx = lex.token_lexeme(seq[t])) {
      const auto role = lex.lexeme(*lx).role;
      bal += role == Role::AdjPositive ? 1 : role == Role::AdjNegative ? -1 : 0;
    }
  }
  return bal > 0 ? 1 : bal < 0 ? -1 : 0;
}

}  // namespace

SteerOutcome polarity_steering_experiment(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                          const std::vector<std::vector<TokenId>>& prefixes, const PolarityConfig& cfg,
                                          const Parameters* reference_params, const ModelConfig* reference_config) {
  const int layer = resolve_layer(cfg.layer, config);
  const auto vec = polarity_vector(params, config, lex, cfg.steering_language, layer);
  PolarityConfig base_cfg = cfg;
  base_cfg.coefficient = 0.0f;
  const auto base = run_polarity_generations(params, config, lex, prefixes, vec, base_cfg, reference_params, reference_config);
  const auto steered = run_polarity_generations(params, config, lex, prefixes, vec, cfg, reference_params, reference_config);

  SteerOutcome out;
  out.experiment = "steer-polarity";
  std::ostringstream setting;
  setting << "coefficient=" << cfg.coefficient;
  out.setting = setting.str();
  const TokenId expected = cfg.direction > 0 ? 1 : -1;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto from = prefixes[i].size();
    const auto o = classify_outcome(polarity_label(base.generations[i], from, lex),
                                    polarity_label(steered.generations[i], from, lex), expected);
    if (o) out.outcomes.push_back(*o);
    out.transcripts.push_back(transcript(steered.generations[i], lex));
  }
  const double dir = cfg.direction > 0 ? 1.0 : -1.0;
  out.extras["direction"] = dir;
  out.extras["layer"] = layer;
  out.extras["baseline_polarity"] = base.polarity_score;
  out.extras["steered_polarity"] = steered.polarity_score;
  out.extras["polarity_shift"] = dir * (steered.polarity_score - base.polarity_score);
  out.extras["baseline_on_topic"] = base.on_topic_rate;
  out.extras["steered_on_topic"] = steered.on_topic_rate;
  out.extras["baseline_adjectives"] = static_cast<double>(base.adjectives);
  out.extras["steered_adjectives"] = static_cast<double>(steered.adjectives);
  if (reference_params) {
    out.extras["baseline_disfluency"] = base.disfluency;
    out.extras["steered_disfluency"] = steered.disfluency;
  }
  return out;
}

std::vector<TokenId> arithmetic_prefix(const ArithmeticItem& item, DataType form, const Lexicon& lex) {
  const auto op = item.op == ArithOp::Add ? lex.plus() : lex.times();
  if (form == DataType::Numeral) {
    return {lex.bos(), lex.numeral(item.a), lex.surface(lex.equals(), DataType::A), lex.numeral(item.b),
            lex.surface(op, DataType::A)};
  }
  return {lex.bos(), lex.word_for_number(item.a, form), lex.surface(lex.equals(), form),
          lex.word_for_number(item.b, form), lex.surface(op, form)};
}

std::vector<float> decrement_vector(const Parameters& params, const ModelConfig& config, const Lexicon& lex, int c,
                                    DataType language, int layer) {
  const int max = lex.sizes().max_number;
  if (c < 2 || c > 9) throw UsageError("decrement vector: c must lie in [2, 9]");
  std::vector<float> acc(static_cast<std::size_t>(config.d_model), 0.0f);
  int n = 0;
  for (int k = 0; k + c <= max; ++k) {
    const auto v = contrast_vector_from_hidden(
        params, config, arithmetic_prefix({k + c - 1, k, c - 1, ArithOp::Add}, language, lex),
        arithmetic_prefix({k + c, k, c, ArithOp::Add}, language, lex), layer);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[j];
    ++n;
  }
  for (auto& x : acc) x /= static_cast<float>(n);
  return acc;
}

std::vector<SteerOutcome> arithmetic_steering_experiment(const Parameters& params, const ModelConfig& config,
                                                         const Lexicon& lex, const std::vector<ArithmeticItem>& items,
                                                         const std::vector<float>& coefficients,
                                                         const ArithSteerConfig& cfg) {
  const int layer = resolve_layer(cfg.layer, config);
  for (const auto& it : items) {
    if (it.op != ArithOp::Add || it.c < 2 || it.a != it.b + it.c) {
      throw UsageError("arithmetic steering: items must be additions a = b + c with c >= 2");
    }
  }
  std::map<int, std::vector<float>> vectors;
  for (const auto& it : items) {
    if (!vectors.count(it.c)) vectors[it.c] = decrement_vector(params, config, lex, it.c, cfg.contrast_language, layer);
  }
  std::vector<SteerOutcome> out;
  std::vector<TokenId> baseline;
  for (const auto& it : items) {
    const auto prefix = arithmetic_prefix(it, cfg.prompt_form, lex);
    baseline.push_back(generate_greedy(params, config, prefix, 1).back());
  }
  for (float coef : coefficients) {
    SteerOutcome row;
    row.experiment = "steer-arith";
    std::ostringstream setting;
    setting << "coefficient=" << coef;
    row.setting = setting.str();
    std::size_t base_correct = 0, excluded = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      const auto prefix = arithmetic_prefix(it, cfg.prompt_form, lex);
      const TokenId target =
          cfg.prompt_form == DataType::Numeral ? lex.numeral(it.c - 1) : lex.word_for_number(it.c - 1, cfg.prompt_form);
      const TokenId original =
          cfg.prompt_form == DataType::Numeral ? lex.numeral(it.c) : lex.word_for_number(it.c, cfg.prompt_form);
      if (baseline[i] == original) ++base_correct;
      HookSet hooks;
      hooks.directives.push_back({layer, {prefix.size() - 1}, vectors.at(it.c), coef, HookMode::Add});
      const auto steered = generate_greedy(params, config, prefix, 1, &hooks).back();
      const auto o = classify_outcome(baseline[i], steered, target);
      if (!o) {
        ++excluded;
        continue;
      }
      row.outcomes.push_back(*o);
      row.transcripts.push_back(transcript(prefix, lex) + " -> " + lex.token_text(steered));
    }
    row.extras["layer"] = layer;
    row.extras["base_accuracy"] = items.empty() ? 0.0 : static_cast<double>(base_correct) / static_cast<double>(items.size());
    row.extras["excluded"] = static_cast<double>(excluded);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<ReplacementCase> make_replacement_cases(const Lexicon& lex, DataType language, std::size_t n,
                                                    std::uint64_t seed, bool self_target) {
  auto rng = make_rng(seed, "intervene.replacement.cases");
  const auto& agents = lex.agents();
  std::vector<ReplacementCase> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = agents[uniform_index(rng, agents.size())];
    const auto v = lex.verbs()[uniform_index(rng, lex.verbs().size())];
    const auto& objects = lex.nouns_of_class(lex.lexeme(v).object_class);
    const auto o = objects[uniform_index(rng, objects.size())];
    auto target = s;
    while (!self_target && target == s) target = agents[uniform_index(rng, agents.size())];
    out.push_back({render({s, v, o, lex.period()}, language, lex), 1, s, target});
  }
  return out;
}

namespace {

// First generated agent token, else the first generated token.
TokenId first_agent(const std::vector<TokenId>& seq, std::size_t from, const Lexicon& lex) {
  for (std::size_t t = from; t < seq.size(); ++t) {
    if (auto lx = lex.token_lexeme(seq[t])) {
      const auto& l = lex.lexeme(*lx);
      if (l.role == Role::Noun && l.noun_class == 0) return seq[t];
    }
    if (seq[t] == lex.bos()) return seq[t];
  }
  return seq.size() > from ? seq[from] : lex.bos();
}

}  // namespace

SteerOutcome replacement_experiment(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                    const std::vector<ReplacementCase>& cases, int start_layer,
                                    DataType input_language, DataType target_language, std::size_t max_new) {
  if (start_layer < 1 || start_layer > config.n_layers) {
    throw UsageError("replacement: start layer " + std::to_string(start_layer) + " outside [1, " +
                     std::to_string(config.n_layers) + "]");
  }
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto o = params.unembed.data();
  SteerOutcome out;
  out.experiment = "steer-replace";
  out.setting = "layer=" + std::to_string(start_layer);
  std::size_t excluded = 0;
  for (const auto& c : cases) {
    if (c.position >= c.prefix.size()) throw UsageError("replacement: designated position outside the prefix");
    const auto clean = forward_with_trace(params, config, c.prefix);
    const auto tok = lex.surface(c.target, target_language);
    std::span<const float> row = o.subspan(static_cast<std::size_t>(tok) * d, d);
    double row_norm = 0.0;
    for (auto x : row) row_norm += static_cast<double>(x) * x;
    row_norm = std::sqrt(row_norm);
    HookSet hooks;
    for (int l = start_layer; l <= config.n_layers; ++l) {
      const auto h = clean.trace.state(static_cast<std::size_t>(l), c.position);
      double hn = 0.0;
      for (auto x : h) hn += static_cast<double>(x) * x;
      hooks.directives.push_back({l, {c.position}, {row.begin(), row.end()},
                                  static_cast<float>(std::sqrt(hn) / row_norm), HookMode::Replace});
    }
    const auto base_seq = generate_greedy(params, config, c.prefix, max_new);
    const auto steered_seq = generate_greedy(params, config, c.prefix, max_new, &hooks);
    const auto expected = lex.surface(c.target, input_language);
    const auto res = classify_outcome(first_agent(base_seq, c.prefix.size(), lex),
                                      first_agent(steered_seq, c.prefix.size(), lex), expected);
    if (!res) {
      ++excluded;
      continue;
    }
    out.outcomes.push_back(*res);
    out.transcripts.push_back(transcript(steered_seq, lex));
  }
  out.extras["excluded"] = static_cast<double>(excluded);
  return out;
}

}  // namespace hublab
