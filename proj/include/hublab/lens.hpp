#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hublab/corpora.hpp"
#include "hublab/model.hpp"
#include "hublab/stats.hpp"

namespace hublab {

struct LensDistribution {
  std::size_t layer = 0;
  std::size_t position = 0;
  std::vector<double> probs;  // over the vocabulary
};

// softmax(O * final_norm(h)); `apply_final_norm = false` gives the raw
// softmax(O * h) variant.
LensDistribution logit_lens(const HiddenTrace& trace, const Parameters& params, const ModelConfig& config,
                            std::size_t layer, std::size_t position, bool apply_final_norm = true);

// Log-softmax of the lens readout of one residual vector.
std::vector<double> lens_log_probs(const Parameters& params, const ModelConfig& config, std::span<const float> hidden,
                                   bool apply_final_norm = true);

// Argmax of the lens distribution, ties to the smallest token id.
TokenId nearest_token(const HiddenTrace& trace, const Parameters& params, const ModelConfig& config,
                      std::size_t layer, std::size_t position, bool apply_final_norm = true);

// The prefix ends at `position`; `input_token` is its true continuation and
// `anchor` the same lexeme in the dominant data type.
struct AnchorCase {
  std::vector<TokenId> prefix;
  TokenId anchor = 0;
  TokenId input_token = 0;
  std::size_t position = 0;

  // UsageError when anchor == input_token or the prefix is empty.
  static AnchorCase make(std::vector<TokenId> prefix, TokenId anchor, TokenId input_token);
};

// One case per pair at a uniformly drawn position t >= 1 of the `input`
// rendering (positions holding only BOS are skipped).
std::vector<AnchorCase> make_anchor_cases(const std::vector<ParallelPair>& pairs, const Lexicon& lex, DataType input,
                                          DataType dominant, std::uint64_t seed);

struct AnchorResult {
  LayerCurve anchor_logp;
  LayerCurve input_logp;
  LayerCurve win_rate;  // fraction of cases with p(anchor) > p(input)
  double uniform_baseline = 0.0;  // ln(1/V)
};

AnchorResult anchor_test(const std::vector<AnchorCase>& cases, const Parameters& params, const ModelConfig& config,
                         std::uint64_t seed, bool apply_final_norm = true);

// Per-data-type token counts over rendered corpora.
struct TokenLanguageModel {
  std::vector<DataType> types;
  std::vector<std::vector<double>> counts;  // [type][token]
  double alpha = 0.0;

  // p(w | z) = (count + alpha) / (total + alpha V)
  double likelihood(std::size_t type_index, TokenId token) const;
  std::size_t vocab_size() const { return counts.empty() ? 0 : counts.front().size(); }
};

struct TypedCorpus {
  DataType type;
  std::vector<std::vector<TokenId>> docs;
};

// UsageError on an empty corpus or a token outside the vocabulary.
TokenLanguageModel fit_token_language_model(std::size_t vocab_size, const std::vector<TypedCorpus>& corpora,
                                            double alpha = 0.0);

// p(z | w) under a uniform prior; uniform when every likelihood is zero.
std::vector<double> token_language_posterior(const TokenLanguageModel& tlm, TokenId token);

// p^l(z): mean over every position of every sequence of
// sum_w p(z | w) p_lens(w | h). One curve per data type of the model.
std::vector<LayerCurve> layer_language_distribution(const std::vector<std::vector<TokenId>>& sequences,
                                                    const TokenLanguageModel& tlm, const Parameters& params,
                                                    const ModelConfig& config, std::uint64_t seed,
                                                    const std::string& experiment = "lens-langdist",
                                                    bool apply_final_norm = true);

// Comma positions of a code-form list rendering; k elements give k - 1.
std::vector<std::size_t> comma_positions(const std::vector<TokenId>& tokens, const Lexicon& lex);

// Lens log-probabilities at each comma of code-form lists in `language`:
// the dominant "and", the actual next element, and the dominant "or" and
// "not" as controls. Series: and, next_element, control_or, control_not.
struct ListAnchorResult {
  std::vector<LayerCurve> curves;
  double uniform_baseline = 0.0;
};

ListAnchorResult list_comma_anchor_test(const std::vector<ListItem>& items, const Lexicon& lex, DataType language,
                                        DataType dominant, const Parameters& params, const ModelConfig& config,
                                        std::uint64_t seed, bool apply_final_norm = true);

}  // namespace hublab
