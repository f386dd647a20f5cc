#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hublab/corpora.hpp"
#include "hublab/model.hpp"
#include "hublab/rng.hpp"

namespace hublab {

// round(0.55 L), clamped to [1, L].
int default_steering_layer(const ModelConfig& config);

// h_plus - h_minus at the last position of each prompt, at `layer` in [0, L].
std::vector<float> contrast_vector_from_hidden(const Parameters& params, const ModelConfig& config,
                                               const std::vector<TokenId>& prompt_plus,
                                               const std::vector<TokenId>& prompt_minus, int layer);

// O[token_plus] - O[token_minus].
std::vector<float> contrast_vector_from_unembedding(const Parameters& params, TokenId token_plus, TokenId token_minus);

// Index into `logits` drawn from the temperature-scaled distribution after
// keeping the smallest set of top tokens whose mass reaches top_p.
TokenId sample_top_p(std::span<const float> logits, double temperature, double top_p, Rng& rng);

// Sampled continuation; stops after `max_new` tokens or at the first
// generated `stop` token (kept). Hooks are re-applied every step.
std::vector<TokenId> generate_sampled(const Parameters& params, const ModelConfig& config,
                                      std::span<const TokenId> prompt, std::size_t max_new, const HookSet* hooks,
                                      double temperature, double top_p, std::uint64_t seed,
                                      std::optional<TokenId> stop = std::nullopt);

enum class Outcome { SteeredCorrect, Unchanged, Other };
const char* to_string(Outcome o);

// nullopt when expected == baseline (excluded upstream).
std::optional<Outcome> classify_outcome(TokenId baseline, TokenId steered, TokenId expected);

struct SteerOutcome {
  std::string experiment;
  std::string setting;  // e.g. "coefficient=4" or "layer=3"
  std::vector<Outcome> outcomes;
  std::map<std::string, double> extras;
  std::vector<std::string> transcripts;

  std::size_t n() const { return outcomes.size(); }
  double rate(Outcome o) const;
};

inline constexpr const char* kSteerOutcomeHeader =
    "experiment,setting,steered_correct_rate,unchanged_rate,other_rate,n,extras";
void write_steer_outcomes(const std::string& path, const std::vector<SteerOutcome>& rows);

// Neutral B openings "<s> AGENT VERB", distinct, drawn from the lexicon.
std::vector<std::vector<TokenId>> make_polarity_prefixes(const Lexicon& lex, DataType language, std::size_t n,
                                                         std::uint64_t seed);

struct PolarityConfig {
  int layer = -1;             // -1: default_steering_layer
  std::size_t span = 3;       // positions 0..span-1
  float coefficient = 5.0f;
  int direction = +1;         // +1 steers positive, -1 negative
  DataType steering_language = DataType::A;
  double temperature = 1.0;
  double top_p = 0.3;
  std::size_t max_new = 16;
  std::uint64_t seed = 0;
};

// Mean over index-matched adjective pairs of
// h("<s> positive_i") - h("<s> negative_i") at `layer`.
std::vector<float> polarity_vector(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                   DataType language, int layer);

struct PolarityRun {
  double polarity_score = 0.0;  // (positive - negative) / adjectives
  std::size_t adjectives = 0;
  double on_topic_rate = 0.0;   // generated tokens in the prefix language
  double disfluency = 0.0;      // reference-model perplexity; 0 without one
  std::vector<std::vector<TokenId>> generations;
};

// Generation stops at the document boundary (BOS). `coefficient` 0 or a null
// vector gives the baseline run under the same sampling seeds.
PolarityRun run_polarity_generations(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                     const std::vector<std::vector<TokenId>>& prefixes, const std::vector<float>& vector,
                                     const PolarityConfig& cfg, const Parameters* reference_params = nullptr,
                                     const ModelConfig* reference_config = nullptr);

// Steered versus baseline runs; per-item outcome over the sign of the
// item's adjective balance, extras carry the aggregate metrics.
SteerOutcome polarity_steering_experiment(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                          const std::vector<std::vector<TokenId>>& prefixes, const PolarityConfig& cfg,
                                          const Parameters* reference_params = nullptr,
                                          const ModelConfig* reference_config = nullptr);

struct ArithSteerConfig {
  int layer = -1;  // -1: default_steering_layer
  DataType prompt_form = DataType::Numeral;   // form of the steered "a = b +" prefixes
  DataType contrast_language = DataType::A;   // word form of the determiner prefixes
  std::uint64_t seed = 0;
};

// "<s> a = b +" in the given form.
std::vector<TokenId> arithmetic_prefix(const ArithmeticItem& item, DataType form, const Lexicon& lex);

// Mean over determiner prefixes "<s> w(k + c - 1) = w(k) +" minus
// "<s> w(k + c) = w(k) +" (k ranging over valid values) at `layer`.
std::vector<float> decrement_vector(const Parameters& params, const ModelConfig& config, const Lexicon& lex, int c,
                                    DataType language, int layer);

// One outcome row per coefficient. Items must be additions with c >= 2;
// UsageError otherwise. Success: greedy next token is the numeral c - 1.
std::vector<SteerOutcome> arithmetic_steering_experiment(const Parameters& params, const ModelConfig& config,
                                                         const Lexicon& lex, const std::vector<ArithmeticItem>& items,
                                                         const std::vector<float>& coefficients,
                                                         const ArithSteerConfig& cfg);

struct ReplacementCase {
  std::vector<TokenId> prefix;  // "<s> AGENT VERB OBJECT PERIOD" in the input language
  std::size_t position = 1;     // the agent
  LexemeId original = 0;
  LexemeId target = 0;
};

std::vector<ReplacementCase> make_replacement_cases(const Lexicon& lex, DataType language, std::size_t n,
                                                    std::uint64_t seed, bool self_target = false);

// Norm-matched replacement: at `position` for every layer >= start_layer the
// state becomes O[target in `target_language`] rescaled to the clean state's
// norm at that layer. Outcome over the first generated agent token.
SteerOutcome replacement_experiment(const Parameters& params, const ModelConfig& config, const Lexicon& lex,
                                    const std::vector<ReplacementCase>& cases, int start_layer,
                                    DataType input_language, DataType target_language, std::size_t max_new = 8);

}  // namespace hublab
