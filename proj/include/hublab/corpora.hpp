#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hublab/ops.hpp"

namespace hublab {

using LexemeId = std::int32_t;

enum class Role { Noun, Verb, AdjPositive, AdjNegative, Number, Operator, Punctuation };

// A and B are the two surface languages; Numeral is the digit data type of
// arithmetic; Shared holds BOS and the operator/bracket/comma symbols.
enum class DataType { A, B, Numeral, Shared };

const char* to_string(DataType t);
const char* to_string(Role r);
DataType parse_data_type(const std::string& s);

enum class Polarity { Neutral, Positive, Negative };
const char* to_string(Polarity p);

struct Lexeme {
  Role role = Role::Noun;
  std::string gloss;
  int value = -1;       // numbers only
  int noun_class = -1;  // nouns only; class 0 holds the agents
  int object_class = -1;  // verbs only
};

struct LexiconSizes {
  int nouns = 40;
  int verbs = 20;
  int adj_positive = 10;
  int adj_negative = 10;
  int max_number = 20;
  int noun_classes = 4;
};

class Lexicon {
 public:
  const std::vector<Lexeme>& lexemes() const { return lexemes_; }
  const Lexeme& lexeme(LexemeId id) const;
  const std::vector<std::string>& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const LexiconSizes& sizes() const { return sizes_; }

  // Surface token of a lexeme in language A or B; LexiconError otherwise.
  TokenId surface(LexemeId id, DataType type) const;
  TokenId numeral(int value) const;
  TokenId word_for_number(int value, DataType language) const;
  DataType token_type(TokenId tok) const;
  // Lexeme a token realizes (numerals map to their number lexeme); nullopt for BOS.
  std::optional<LexemeId> token_lexeme(TokenId tok) const;
  TokenId token_id(const std::string& text) const;
  const std::string& token_text(TokenId tok) const;

  TokenId bos() const { return bos_; }
  LexemeId equals() const { return equals_; }
  LexemeId plus() const { return plus_; }
  LexemeId times() const { return times_; }
  LexemeId lbracket() const { return lbracket_; }
  LexemeId rbracket() const { return rbracket_; }
  LexemeId comma() const { return comma_; }
  LexemeId and_word() const { return and_; }
  LexemeId or_word() const { return or_; }
  LexemeId not_word() const { return not_; }
  LexemeId period() const { return period_; }
  LexemeId number(int value) const;

  const std::vector<LexemeId>& nouns() const { return nouns_; }
  const std::vector<LexemeId>& agents() const { return agents_; }
  const std::vector<LexemeId>& nouns_of_class(int cls) const { return noun_classes_.at(static_cast<std::size_t>(cls)); }
  const std::vector<LexemeId>& verbs() const { return verbs_; }
  const std::vector<LexemeId>& adjectives(Polarity p) const;

  friend Lexicon build_lexicon(std::uint64_t seed, const LexiconSizes& sizes);

 private:
  LexemeId add_lexeme(Lexeme lx, const std::string& a, const std::string& b, DataType a_type, DataType b_type);
  TokenId add_token(const std::string& text, DataType type, std::optional<LexemeId> lexeme);

  LexiconSizes sizes_;
  std::vector<Lexeme> lexemes_;
  std::vector<std::string> vocab_;
  std::vector<DataType> token_types_;
  std::vector<std::optional<LexemeId>> token_lexemes_;
  std::unordered_map<std::string, TokenId> token_index_;
  std::vector<TokenId> surface_a_, surface_b_;
  std::vector<TokenId> numerals_;
  std::vector<LexemeId> numbers_;
  std::vector<LexemeId> nouns_, agents_, verbs_, adj_pos_, adj_neg_;
  std::vector<std::vector<LexemeId>> noun_classes_;
  TokenId bos_ = 0;
  LexemeId equals_ = -1, plus_ = -1, times_ = -1, lbracket_ = -1, rbracket_ = -1, comma_ = -1;
  LexemeId and_ = -1, or_ = -1, not_ = -1, period_ = -1;
};

Lexicon build_lexicon(std::uint64_t seed, const LexiconSizes& sizes = {});

struct Sentence {
  std::vector<LexemeId> lexemes;
  Polarity polarity = Polarity::Neutral;
};

// Sentence template probabilities. Polar sentences carry one or two
// adjectives of their polarity.
struct SentenceWeights {
  double neutral = 0.3;
  double positive = 0.35;
  double negative = 0.35;
};

// Independent templated sentences: [ADJ] AGENT VERB [ADJ] OBJECT PERIOD.
std::vector<Sentence> gen_sentences(const Lexicon& lex, std::uint64_t seed, std::size_t n,
                                    const SentenceWeights& weights = {});

// Re-parses a lexeme sequence against the sentence templates; returns the
// polarity when grammatical.
std::optional<Polarity> parse_sentence(const Lexicon& lex, const std::vector<LexemeId>& lexemes);

// BOS followed by one surface token per lexeme.
std::vector<TokenId> render(const std::vector<LexemeId>& lexemes, DataType type, const Lexicon& lex);
// Inverse of render; LexiconError on a token with no lexeme.
std::vector<LexemeId> invert(const std::vector<TokenId>& tokens, const Lexicon& lex);

struct ParallelPair {
  std::vector<LexemeId> lexemes;
  std::vector<TokenId> a;
  std::vector<TokenId> b;
  Polarity polarity = Polarity::Neutral;
};

ParallelPair make_pair(const Sentence& s, const Lexicon& lex);

enum class ArithOp { Add, Mul };

struct ArithmeticItem {
  int a = 0, b = 0, c = 0;
  ArithOp op = ArithOp::Add;

  int value() const { return a; }
};

// Every valid (a, b, c, op) with a = b op c, b in [0, max_number], c in [1, 9],
// a in [0, max_number].
std::vector<ArithmeticItem> enumerate_arithmetic(int max_number, bool with_add, bool with_mul);

// Uniform draws from the valid triples; duplicate-free while n does not
// exceed the number of distinct triples.
std::vector<ArithmeticItem> gen_arithmetic(std::size_t n, bool with_add, bool with_mul, std::uint64_t seed,
                                           int max_number = 20);

// "a = b op c" with numerals, and the same equation in number words.
std::vector<TokenId> render_numeral(const ArithmeticItem& item, const Lexicon& lex, bool with_bos = true);
std::vector<TokenId> render_words(const ArithmeticItem& item, DataType language, const Lexicon& lex,
                                  bool with_bos = true);

struct ListItem {
  std::vector<LexemeId> elements;  // 2 to 5 nouns
};

std::vector<ListItem> gen_lists(std::size_t n, std::uint64_t seed, const Lexicon& lex);
// "[ x , y , z ]"
std::vector<TokenId> render_code_list(const ListItem& item, DataType language, const Lexicon& lex,
                                      bool with_bos = true);
// "x and y and z ."
std::vector<TokenId> render_prose_list(const ListItem& item, DataType language, const Lexicon& lex,
                                       bool with_bos = true);

enum class Task { Sentences, Arithmetic, Lists };
const char* to_string(Task t);

struct MixtureConfig {
  double dominant_ratio = 0.9;
  double w_sentences = 0.7;
  double w_arithmetic = 0.2;
  double w_lists = 0.1;
  double numeral_share = 0.5;  // arithmetic documents written with numerals
  double code_share = 0.5;     // list documents written as code literals
  double mixed_ratio = 0.0;    // sentence documents with per-word language switching
  std::uint64_t seed = 0;

  void validate() const;
};

// Documents start with BOS; `language` is A, B, Numeral, or Shared for a
// code-switched document.
struct Document {
  Task task = Task::Sentences;
  DataType language = DataType::A;
  std::vector<TokenId> tokens;
  std::vector<Polarity> sentence_polarities;
};

// Multi-sentence document generator shared by training and evaluation.
// Sentences in a document share polarity and tend to share the agent.
struct DocumentParams {
  int min_sentences = 1;
  int max_sentences = 4;
  double topic_repeat = 0.6;
};

using LexemeHash = std::uint64_t;
LexemeHash hash_lexemes(const std::vector<LexemeId>& lexemes);

class DocumentGenerator {
 public:
  DocumentGenerator(const Lexicon& lex, const MixtureConfig& mixture, std::uint64_t seed,
                    const std::unordered_set<LexemeHash>* held_out = nullptr, DocumentParams params = {});

  Document next();
  Document next_of(Task task, DataType language);

 private:
  Document sentence_doc(DataType language, bool mixed);
  Document arithmetic_doc(DataType form);
  Document list_doc(DataType language, bool code);
  std::vector<LexemeId> draw_sentence(Polarity pol, std::optional<LexemeId> topic, bool first);

  const Lexicon& lex_;
  MixtureConfig mix_;
  DocumentParams params_;
  const std::unordered_set<LexemeHash>* held_out_;
  std::vector<ArithmeticItem> arithmetic_;
  std::uint64_t state_seed_;
  std::uint64_t counter_ = 0;
  SentenceWeights weights_;
};

struct StreamManifest {
  std::size_t n_tokens = 0;
  std::size_t n_documents = 0;
  // "task/language" -> token count
  std::map<std::string, std::size_t> token_counts;
  std::map<std::string, std::size_t> document_counts;
};

struct TrainingStream {
  std::vector<TokenId> tokens;
  StreamManifest manifest;
};

TrainingStream build_training_stream(const MixtureConfig& mixture, const Lexicon& lex, std::size_t n_tokens,
                                     const std::unordered_set<LexemeHash>& held_out);

// Held-out evaluation material, drawn from streams disjoint from training.
struct EvalSuite {
  std::vector<ParallelPair> pairs;
  std::unordered_set<LexemeHash> held_out;
};

EvalSuite build_eval_suite(const Lexicon& lex, std::uint64_t seed, std::size_t n_pairs);

// Exact entropy (nats) of one sentence document of the given generator and
// its expected number of predicted tokens (every token after the opening
// BOS, plus the closing BOS).
struct TemplateEntropy {
  double entropy_nats = 0.0;
  double expected_tokens = 0.0;
  double perplexity_bound() const;
};
TemplateEntropy sentence_document_entropy(const Lexicon& lex, const DocumentParams& params = {},
                                          const SentenceWeights& weights = {});

// Corpus text: one whitespace-separated token line per document.
void write_corpus(const std::string& path, const std::vector<std::vector<TokenId>>& docs, const Lexicon& lex);
std::vector<std::vector<TokenId>> read_corpus(const std::string& path, const Lexicon& lex);
// Vocabulary: token per line, line number (0-based) = token id.
void write_vocab(const std::string& path, const Lexicon& lex);
void write_manifest(const std::string& path, const StreamManifest& manifest, const MixtureConfig& mixture);

}  // namespace hublab
