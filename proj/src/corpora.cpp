#include "hublab/corpora.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>

#include "hublab/rng.hpp"

namespace hublab {

const char* to_string(DataType t) {
  switch (t) {
    case DataType::A: return "A";
    case DataType::B: return "B";
    case DataType::Numeral: return "numeral";
    case DataType::Shared: return "shared";
  }
  return "?";
}

DataType parse_data_type(const std::string& s) {
  if (s == "A" || s == "a") return DataType::A;
  if (s == "B" || s == "b") return DataType::B;
  if (s == "numeral") return DataType::Numeral;
  if (s == "shared" || s == "mixed") return DataType::Shared;
  throw UsageError("unknown data type '" + s + "'");
}

const char* to_string(Role r) {
  switch (r) {
    case Role::Noun: return "noun";
    case Role::Verb: return "verb";
    case Role::AdjPositive: return "adjective-positive";
    case Role::AdjNegative: return "adjective-negative";
    case Role::Number: return "number";
    case Role::Operator: return "operator";
    case Role::Punctuation: return "punctuation";
  }
  return "?";
}

const char* to_string(Polarity p) {
  switch (p) {
    case Polarity::Neutral: return "neutral";
    case Polarity::Positive: return "positive";
    case Polarity::Negative: return "negative";
  }
  return "?";
}

const char* to_string(Task t) {
  switch (t) {
    case Task::Sentences: return "sentences";
    case Task::Arithmetic: return "arithmetic";
    case Task::Lists: return "lists";
  }
  return "?";
}

// ---------------------------------------------------------------- lexicon

const Lexeme& Lexicon::lexeme(LexemeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= lexemes_.size()) {
    throw LexiconError("unknown lexeme id " + std::to_string(id));
  }
  return lexemes_[static_cast<std::size_t>(id)];
}

TokenId Lexicon::surface(LexemeId id, DataType type) const {
  lexeme(id);
  const auto i = static_cast<std::size_t>(id);
  if (type == DataType::A) return surface_a_[i];
  if (type == DataType::B) return surface_b_[i];
  if (type == DataType::Numeral && lexemes_[i].role == Role::Number) return numerals_[static_cast<std::size_t>(lexemes_[i].value)];
  throw LexiconError("lexeme '" + lexemes_[i].gloss + "' has no surface in data type " + to_string(type));
}

TokenId Lexicon::numeral(int value) const {
  if (value < 0 || value > sizes_.max_number) throw LexiconError("no numeral for " + std::to_string(value));
  return numerals_[static_cast<std::size_t>(value)];
}

LexemeId Lexicon::number(int value) const {
  if (value < 0 || value > sizes_.max_number) throw LexiconError("no number lexeme for " + std::to_string(value));
  return numbers_[static_cast<std::size_t>(value)];
}

TokenId Lexicon::word_for_number(int value, DataType language) const { return surface(number(value), language); }

DataType Lexicon::token_type(TokenId tok) const {
  if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_.size()) throw IndexError("token id out of range");
  return token_types_[static_cast<std::size_t>(tok)];
}

std::optional<LexemeId> Lexicon::token_lexeme(TokenId tok) const {
  if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_.size()) throw IndexError("token id out of range");
  return token_lexemes_[static_cast<std::size_t>(tok)];
}

TokenId Lexicon::token_id(const std::string& text) const {
  auto it = token_index_.find(text);
  if (it == token_index_.end()) throw LexiconError("unknown token '" + text + "'");
  return it->second;
}

const std::string& Lexicon::token_text(TokenId tok) const {
  if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_.size()) throw IndexError("token id out of range");
  return vocab_[static_cast<std::size_t>(tok)];
}

const std::vector<LexemeId>& Lexicon::adjectives(Polarity p) const {
  if (p == Polarity::Positive) return adj_pos_;
  if (p == Polarity::Negative) return adj_neg_;
  throw UsageError("neutral polarity has no adjectives");
}

TokenId Lexicon::add_token(const std::string& text, DataType type, std::optional<LexemeId> lexeme) {
  if (token_index_.count(text)) throw LexiconError("duplicate surface token '" + text + "'");
  const auto id = static_cast<TokenId>(vocab_.size());
  vocab_.push_back(text);
  token_types_.push_back(type);
  token_lexemes_.push_back(lexeme);
  token_index_.emplace(text, id);
  return id;
}

LexemeId Lexicon::add_lexeme(Lexeme lx, const std::string& a, const std::string& b, DataType a_type,
                             DataType b_type) {
  const auto id = static_cast<LexemeId>(lexemes_.size());
  lexemes_.push_back(std::move(lx));
  const TokenId ta = add_token(a, a_type, id);
  const TokenId tb = (a == b) ? ta : add_token(b, b_type, id);
  surface_a_.push_back(ta);
  surface_b_.push_back(tb);
  return id;
}

namespace {

// Pseudo-words built from consonant-vowel syllables.
class WordForge {
 public:
  explicit WordForge(std::uint64_t seed) : rng_(make_rng(seed, "lexicon.words")) {}

  std::string fresh(bool upper) {
    static constexpr std::string_view kCons = "bdfgklmnprstvz";
    static constexpr std::string_view kVow = "aeiou";
    for (;;) {
      const int syllables = 2 + static_cast<int>(uniform_index(rng_, 2));
      std::string w;
      for (int s = 0; s < syllables; ++s) {
        w += kCons[uniform_index(rng_, kCons.size())];
        w += kVow[uniform_index(rng_, kVow.size())];
      }
      if (upper) {
        for (auto& ch : w) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng rng_;
  std::unordered_set<std::string> used_;
};

std::string padded(const char* prefix, int i) {
  std::ostringstream os;
  os << prefix << (i < 10 ? "0" : "") << i;
  return os.str();
}

}  // namespace

Lexicon build_lexicon(std::uint64_t seed, const LexiconSizes& sizes) {
  if (sizes.nouns <= 0 || sizes.verbs <= 0 || sizes.adj_positive <= 0 || sizes.adj_negative <= 0 ||
      sizes.max_number < 9 || sizes.noun_classes < 2 || sizes.nouns % sizes.noun_classes != 0) {
    throw UsageError("lexicon sizes: need positive counts, max_number >= 9 and nouns divisible by noun_classes");
  }
  Lexicon lex;
  lex.sizes_ = sizes;
  WordForge forge(seed);

  lex.bos_ = lex.add_token("<s>", DataType::Shared, std::nullopt);
  auto shared = [&](Role role, const char* gloss, const char* sym) {
    return lex.add_lexeme({role, gloss}, sym, sym, DataType::Shared, DataType::Shared);
  };
  lex.equals_ = shared(Role::Operator, "equals", "=");
  lex.plus_ = shared(Role::Operator, "plus", "+");
  lex.times_ = shared(Role::Operator, "times", "*");
  lex.lbracket_ = shared(Role::Punctuation, "lbracket", "[");
  lex.rbracket_ = shared(Role::Punctuation, "rbracket", "]");
  lex.comma_ = shared(Role::Punctuation, "comma", ",");

  for (int v = 0; v <= sizes.max_number; ++v) {
    lex.numerals_.push_back(lex.add_token(std::to_string(v), DataType::Numeral, std::nullopt));
  }

  auto pair = [&](Lexeme lx) {
    const auto a = forge.fresh(false);
    const auto b = forge.fresh(true);
    return lex.add_lexeme(std::move(lx), a, b, DataType::A, DataType::B);
  };

  lex.period_ = lex.add_lexeme({Role::Punctuation, "period"}, ".", "\xE3\x80\x82", DataType::A, DataType::B);
  lex.and_ = pair({Role::Operator, "and"});
  lex.or_ = pair({Role::Operator, "or"});
  lex.not_ = pair({Role::Operator, "not"});

  const int per_class = sizes.nouns / sizes.noun_classes;
  lex.noun_classes_.resize(static_cast<std::size_t>(sizes.noun_classes));
  for (int i = 0; i < sizes.nouns; ++i) {
    Lexeme lx{Role::Noun, padded("noun", i)};
    lx.noun_class = i / per_class;
    const auto id = pair(lx);
    lex.nouns_.push_back(id);
    lex.noun_classes_[static_cast<std::size_t>(lx.noun_class)].push_back(id);
  }
  lex.agents_ = lex.noun_classes_[0];
  for (int i = 0; i < sizes.verbs; ++i) {
    Lexeme lx{Role::Verb, padded("verb", i)};
    lx.object_class = 1 + i % (sizes.noun_classes - 1);
    lex.verbs_.push_back(pair(lx));
  }
  for (int i = 0; i < sizes.adj_positive; ++i) lex.adj_pos_.push_back(pair({Role::AdjPositive, padded("good", i)}));
  for (int i = 0; i < sizes.adj_negative; ++i) lex.adj_neg_.push_back(pair({Role::AdjNegative, padded("bad", i)}));
  for (int v = 0; v <= sizes.max_number; ++v) {
    Lexeme lx{Role::Number, "num" + std::to_string(v)};
    lx.value = v;
    const auto id = pair(lx);
    lex.numbers_.push_back(id);
    // Numerals realize the same lexeme.
    lex.token_lexemes_[static_cast<std::size_t>(lex.numerals_[static_cast<std::size_t>(v)])] = id;
  }
  return lex;
}

// -------------------------------------------------------------- sentences

namespace {

struct SentenceDraw {
  Rng& rng;
  const Lexicon& lex;

  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[uniform_index(rng, v.size())];
  }

  Polarity polarity(const SentenceWeights& w) {
    const double total = w.neutral + w.positive + w.negative;
    const double u = uniform01(rng) * total;
    if (u < w.neutral) return Polarity::Neutral;
    if (u < w.neutral + w.positive) return Polarity::Positive;
    return Polarity::Negative;
  }

  std::vector<LexemeId> sentence(Polarity pol, LexemeId subject) {
    const LexemeId verb = pick(lex.verbs());
    const LexemeId object = pick(lex.nouns_of_class(lex.lexeme(verb).object_class));
    bool adj_subject = false, adj_object = false;
    if (pol != Polarity::Neutral) {
      const auto pattern = uniform_index(rng, 3);  // subject only, object only, both
      adj_subject = pattern != 1;
      adj_object = pattern != 0;
    }
    std::vector<LexemeId> out;
    if (adj_subject) out.push_back(pick(lex.adjectives(pol)));
    out.push_back(subject);
    out.push_back(verb);
    if (adj_object) out.push_back(pick(lex.adjectives(pol)));
    out.push_back(object);
    out.push_back(lex.period());
    return out;
  }
};

}  // namespace

std::vector<Sentence> gen_sentences(const Lexicon& lex, std::uint64_t seed, std::size_t n,
                                    const SentenceWeights& weights) {
  auto rng = make_rng(seed, "corpora.sentences");
  SentenceDraw draw{rng, lex};
  std::vector<Sentence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pol = draw.polarity(weights);
    const auto subject = draw.pick(lex.agents());
    out.push_back({draw.sentence(pol, subject), pol});
  }
  return out;
}

std::optional<Polarity> parse_sentence(const Lexicon& lex, const std::vector<LexemeId>& lx) {
  std::size_t i = 0;
  std::optional<Polarity> pol;
  auto adjective = [&](LexemeId id) -> std::optional<Polarity> {
    const auto role = lex.lexeme(id).role;
    if (role == Role::AdjPositive) return Polarity::Positive;
    if (role == Role::AdjNegative) return Polarity::Negative;
    return std::nullopt;
  };
  auto take_adj = [&]() -> bool {
    if (i >= lx.size()) return true;
    if (auto p = adjective(lx[i])) {
      if (pol && *pol != *p) return false;
      pol = p;
      ++i;
    }
    return true;
  };
  if (!take_adj()) return std::nullopt;
  if (i >= lx.size() || lex.lexeme(lx[i]).role != Role::Noun || lex.lexeme(lx[i]).noun_class != 0) return std::nullopt;
  ++i;
  if (i >= lx.size() || lex.lexeme(lx[i]).role != Role::Verb) return std::nullopt;
  const int object_class = lex.lexeme(lx[i]).object_class;
  ++i;
  if (!take_adj()) return std::nullopt;
  if (i >= lx.size() || lex.lexeme(lx[i]).role != Role::Noun || lex.lexeme(lx[i]).noun_class != object_class) {
    return std::nullopt;
  }
  ++i;
  if (i + 1 != lx.size() || lx[i] != lex.period()) return std::nullopt;
  return pol.value_or(Polarity::Neutral);
}

std::vector<TokenId> render(const std::vector<LexemeId>& lexemes, DataType type, const Lexicon& lex) {
  std::vector<TokenId> out;
  out.reserve(lexemes.size() + 1);
  out.push_back(lex.bos());
  for (auto id : lexemes) out.push_back(lex.surface(id, type));
  return out;
}

std::vector<LexemeId> invert(const std::vector<TokenId>& tokens, const Lexicon& lex) {
  std::vector<LexemeId> out;
  for (auto t : tokens) {
    if (t == lex.bos()) continue;
    auto lx = lex.token_lexeme(t);
    if (!lx) throw LexiconError("token '" + lex.token_text(t) + "' realizes no lexeme");
    out.push_back(*lx);
  }
  return out;
}

ParallelPair make_pair(const Sentence& s, const Lexicon& lex) {
  return {s.lexemes, render(s.lexemes, DataType::A, lex), render(s.lexemes, DataType::B, lex), s.polarity};
}

// ------------------------------------------------------------- arithmetic

std::vector<ArithmeticItem> enumerate_arithmetic(int max_number, bool with_add, bool with_mul) {
  std::vector<ArithmeticItem> out;
  if (with_add) {
    for (int b = 0; b <= max_number; ++b) {
      for (int c = 1; c <= 9; ++c) {
        if (b + c <= max_number) out.push_back({b + c, b, c, ArithOp::Add});
      }
    }
  }
  if (with_mul) {
    for (int b = 0; b <= max_number; ++b) {
      for (int c = 1; c <= 9; ++c) {
        if (b * c <= max_number) out.push_back({b * c, b, c, ArithOp::Mul});
      }
    }
  }
  return out;
}

std::vector<ArithmeticItem> gen_arithmetic(std::size_t n, bool with_add, bool with_mul, std::uint64_t seed,
                                           int max_number) {
  if (n == 0) return {};
  auto all = enumerate_arithmetic(max_number, with_add, with_mul);
  if (all.empty()) throw UsageError("gen_arithmetic: empty operator set");
  auto rng = make_rng(seed, "corpora.arithmetic");
  std::vector<ArithmeticItem> out;
  out.reserve(n);
  // Incremental Fisher-Yates; restarts a fresh permutation once every triple was used.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % all.size();
    const std::size_t j = k + uniform_index(rng, all.size() - k);
    std::swap(all[k], all[j]);
    out.push_back(all[k]);
  }
  return out;
}

std::vector<TokenId> render_numeral(const ArithmeticItem& item, const Lexicon& lex, bool with_bos) {
  std::vector<TokenId> out;
  if (with_bos) out.push_back(lex.bos());
  out.push_back(lex.numeral(item.a));
  out.push_back(lex.surface(lex.equals(), DataType::A));
  out.push_back(lex.numeral(item.b));
  out.push_back(lex.surface(item.op == ArithOp::Add ? lex.plus() : lex.times(), DataType::A));
  out.push_back(lex.numeral(item.c));
  return out;
}

std::vector<TokenId> render_words(const ArithmeticItem& item, DataType language, const Lexicon& lex, bool with_bos) {
  std::vector<TokenId> out;
  if (with_bos) out.push_back(lex.bos());
  out.push_back(lex.word_for_number(item.a, language));
  out.push_back(lex.surface(lex.equals(), language));
  out.push_back(lex.word_for_number(item.b, language));
  out.push_back(lex.surface(item.op == ArithOp::Add ? lex.plus() : lex.times(), language));
  out.push_back(lex.word_for_number(item.c, language));
  return out;
}

// ------------------------------------------------------------------ lists

std::vector<ListItem> gen_lists(std::size_t n, std::uint64_t seed, const Lexicon& lex) {
  auto rng = make_rng(seed, "corpora.lists");
  std::vector<ListItem> out;
  out.reserve(n);
  const int classes = lex.sizes().noun_classes;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = 2 + uniform_index(rng, 4);
    auto pool = lex.nouns_of_class(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes))));
    ListItem item;
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t j = k + uniform_index(rng, pool.size() - k);
      std::swap(pool[k], pool[j]);
      item.elements.push_back(pool[k]);
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<TokenId> render_code_list(const ListItem& item, DataType language, const Lexicon& lex, bool with_bos) {
  std::vector<TokenId> out;
  if (with_bos) out.push_back(lex.bos());
  out.push_back(lex.surface(lex.lbracket(), language));
  for (std::size_t i = 0; i < item.elements.size(); ++i) {
    if (i) out.push_back(lex.surface(lex.comma(), language));
    out.push_back(lex.surface(item.elements[i], language));
  }
  out.push_back(lex.surface(lex.rbracket(), language));
  return out;
}

std::vector<TokenId> render_prose_list(const ListItem& item, DataType language, const Lexicon& lex, bool with_bos) {
  std::vector<TokenId> out;
  if (with_bos) out.push_back(lex.bos());
  for (std::size_t i = 0; i < item.elements.size(); ++i) {
    if (i) out.push_back(lex.surface(lex.and_word(), language));
    out.push_back(lex.surface(item.elements[i], language));
  }
  out.push_back(lex.surface(lex.period(), language));
  return out;
}

// ------------------------------------------------------------- documents

void MixtureConfig::validate() const {
  auto unit = [](double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) throw UsageError(std::string("mixture: ") + name + " must lie in [0, 1]");
  };
  unit(dominant_ratio, "dominant_ratio");
  unit(w_sentences, "w_sentences");
  unit(w_arithmetic, "w_arithmetic");
  unit(w_lists, "w_lists");
  unit(numeral_share, "numeral_share");
  unit(code_share, "code_share");
  unit(mixed_ratio, "mixed_ratio");
  if (std::abs(w_sentences + w_arithmetic + w_lists - 1.0) > 1e-9) {
    throw UsageError("mixture: task weights must sum to 1");
  }
}

LexemeHash hash_lexemes(const std::vector<LexemeId>& lexemes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto id : lexemes) {
    auto v = static_cast<std::uint32_t>(id);
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

DocumentGenerator::DocumentGenerator(const Lexicon& lex, const MixtureConfig& mixture, std::uint64_t seed,
                                     const std::unordered_set<LexemeHash>* held_out, DocumentParams params)
    : lex_(lex),
      mix_(mixture),
      params_(params),
      held_out_(held_out),
      arithmetic_(enumerate_arithmetic(lex.sizes().max_number, true, true)),
      state_seed_(seed) {
  mix_.validate();
}

namespace {
Rng doc_rng(std::uint64_t seed, std::uint64_t counter) {
  return Rng(splitmix64(stream_seed(seed, "corpora.document") ^ splitmix64(counter)));
}
}  // namespace

std::vector<LexemeId> DocumentGenerator::draw_sentence(Polarity pol, std::optional<LexemeId> topic, bool first) {
  // Each draw uses its own counter-derived stream so rejection retries stay
  // reproducible.
  for (int attempt = 0;; ++attempt) {
    auto rng = doc_rng(state_seed_ ^ 0x5e47e4ceULL, counter_++);
    SentenceDraw draw{rng, lex_};
    LexemeId subject = *topic;
    if (!first && uniform01(rng) >= params_.topic_repeat) subject = draw.pick(lex_.agents());
    auto s = draw.sentence(pol, subject);
    if (!held_out_ || !held_out_->count(hash_lexemes(s))) return s;
    if (attempt > 1000) throw UsageError("held-out set excludes every sentence");
  }
}

Document DocumentGenerator::sentence_doc(DataType language, bool mixed) {
  auto rng = doc_rng(state_seed_, counter_++);
  SentenceDraw draw{rng, lex_};
  Document doc;
  doc.task = Task::Sentences;
  doc.language = mixed ? DataType::Shared : language;
  const int span = params_.max_sentences - params_.min_sentences + 1;
  const int k = params_.min_sentences + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
  const auto pol = draw.polarity(weights_);
  const LexemeId topic = draw.pick(lex_.agents());
  doc.tokens.push_back(lex_.bos());
  for (int i = 0; i < k; ++i) {
    const auto s = draw_sentence(pol, topic, i == 0);
    for (auto id : s) {
      DataType lang = language;
      if (mixed) lang = uniform01(rng) < mix_.dominant_ratio ? DataType::A : DataType::B;
      doc.tokens.push_back(lex_.surface(id, lang));
    }
    doc.sentence_polarities.push_back(pol);
  }
  return doc;
}

Document DocumentGenerator::arithmetic_doc(DataType form) {
  auto rng = doc_rng(state_seed_, counter_++);
  const auto& item = arithmetic_[uniform_index(rng, arithmetic_.size())];
  Document doc;
  doc.task = Task::Arithmetic;
  doc.language = form;
  doc.tokens = form == DataType::Numeral ? render_numeral(item, lex_) : render_words(item, form, lex_);
  return doc;
}

Document DocumentGenerator::list_doc(DataType language, bool code) {
  auto items = gen_lists(1, splitmix64(state_seed_ ^ splitmix64(counter_++)), lex_);
  Document doc;
  doc.task = Task::Lists;
  doc.language = language;
  doc.tokens = code ? render_code_list(items[0], language, lex_) : render_prose_list(items[0], language, lex_);
  return doc;
}

Document DocumentGenerator::next() {
  auto rng = doc_rng(state_seed_ ^ 0x7a5cULL, counter_++);
  const double u = uniform01(rng);
  const auto language = uniform01(rng) < mix_.dominant_ratio ? DataType::A : DataType::B;
  if (u < mix_.w_sentences) {
    return sentence_doc(language, uniform01(rng) < mix_.mixed_ratio);
  }
  if (u < mix_.w_sentences + mix_.w_arithmetic) {
    return arithmetic_doc(uniform01(rng) < mix_.numeral_share ? DataType::Numeral : language);
  }
  return list_doc(language, uniform01(rng) < mix_.code_share);
}

Document DocumentGenerator::next_of(Task task, DataType language) {
  switch (task) {
    case Task::Sentences: return sentence_doc(language, language == DataType::Shared);
    case Task::Arithmetic: return arithmetic_doc(language);
    case Task::Lists: {
      auto rng = doc_rng(state_seed_ ^ 0x11575ULL, counter_++);
      return list_doc(language, uniform01(rng) < mix_.code_share);
    }
  }
  throw UsageError("unknown task");
}

namespace {
std::string doc_label(const Document& d) {
  std::string lang = d.language == DataType::Shared ? "mixed" : to_string(d.language);
  return std::string(to_string(d.task)) + "/" + lang;
}
}  // namespace

TrainingStream build_training_stream(const MixtureConfig& mixture, const Lexicon& lex, std::size_t n_tokens,
                                     const std::unordered_set<LexemeHash>& held_out) {
  DocumentGenerator gen(lex, mixture, stream_seed(mixture.seed, "corpora.train"), &held_out);
  TrainingStream out;
  out.tokens.reserve(n_tokens + 64);
  while (out.tokens.size() < n_tokens) {
    const auto doc = gen.next();
    const auto take = std::min(doc.tokens.size(), n_tokens - out.tokens.size());
    out.tokens.insert(out.tokens.end(), doc.tokens.begin(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(take));
    const auto label = doc_label(doc);
    out.manifest.token_counts[label] += take;
    out.manifest.document_counts[label] += 1;
    out.manifest.n_documents += 1;
  }
  out.manifest.n_tokens = out.tokens.size();
  return out;
}

EvalSuite build_eval_suite(const Lexicon& lex, std::uint64_t seed, std::size_t n_pairs) {
  EvalSuite suite;
  auto rng_seed = stream_seed(seed, "corpora.eval.pairs");
  std::size_t round = 0;
  while (suite.pairs.size() < n_pairs) {
    auto batch = gen_sentences(lex, splitmix64(rng_seed + round++), n_pairs);
    for (const auto& s : batch) {
      if (suite.pairs.size() >= n_pairs) break;
      if (suite.held_out.insert(hash_lexemes(s.lexemes)).second) suite.pairs.push_back(make_pair(s, lex));
    }
    if (round > 1000) throw UsageError("eval suite: not enough distinct sentences");
  }
  return suite;
}

double TemplateEntropy::perplexity_bound() const { return std::exp(entropy_nats / expected_tokens); }

TemplateEntropy sentence_document_entropy(const Lexicon& lex, const DocumentParams& params,
                                          const SentenceWeights& w) {
  auto plogp = [](double p) { return p > 0.0 ? -p * std::log(p) : 0.0; };
  const double total = w.neutral + w.positive + w.negative;
  const double pn = w.neutral / total, pp = w.positive / total, pm = w.negative / total;
  const int span = params.max_sentences - params.min_sentences + 1;
  const double mean_k = 0.5 * (params.min_sentences + params.max_sentences);

  const double n_agents = static_cast<double>(lex.agents().size());
  const double h_first_subject = std::log(n_agents);
  const double q_topic = params.topic_repeat + (1.0 - params.topic_repeat) / n_agents;
  const double q_other = (1.0 - params.topic_repeat) / n_agents;
  const double h_later_subject = plogp(q_topic) + (n_agents - 1.0) * plogp(q_other);

  double h_object = 0.0;
  for (auto v : lex.verbs()) h_object += std::log(static_cast<double>(lex.nouns_of_class(lex.lexeme(v).object_class).size()));
  h_object /= static_cast<double>(lex.verbs().size());
  const double h_verb = std::log(static_cast<double>(lex.verbs().size()));
  const double mean_adjs = 4.0 / 3.0;
  const double h_adj_pos = std::log(3.0) + mean_adjs * std::log(static_cast<double>(lex.adjectives(Polarity::Positive).size()));
  const double h_adj_neg = std::log(3.0) + mean_adjs * std::log(static_cast<double>(lex.adjectives(Polarity::Negative).size()));

  const double h_sentence_core = h_verb + h_object + pp * h_adj_pos + pm * h_adj_neg;
  TemplateEntropy out;
  out.entropy_nats = std::log(static_cast<double>(span)) + plogp(pn) + plogp(pp) + plogp(pm) + mean_k * h_sentence_core +
                     h_first_subject + (mean_k - 1.0) * h_later_subject;
  const double mean_len = 4.0 + (pp + pm) * mean_adjs;
  out.expected_tokens = mean_k * mean_len + 1.0;
  return out;
}

// ------------------------------------------------------------------- files

void write_corpus(const std::string& path, const std::vector<std::vector<TokenId>>& docs, const Lexicon& lex) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write corpus file " + path);
  for (const auto& d : docs) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i) os << ' ';
      os << lex.token_text(d[i]);
    }
    os << '\n';
  }
}

std::vector<std::vector<TokenId>> read_corpus(const std::string& path, const Lexicon& lex) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot read corpus file " + path);
  std::vector<std::vector<TokenId>> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<TokenId> doc;
    std::string tok;
    while (ls >> tok) {
      try {
        doc.push_back(lex.token_id(tok));
      } catch (const LexiconError&) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": unknown token '" + tok + "'");
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

void write_vocab(const std::string& path, const Lexicon& lex) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write vocabulary file " + path);
  for (const auto& t : lex.vocab()) os << t << '\n';
}

void write_manifest(const std::string& path, const StreamManifest& m, const MixtureConfig& mix) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write manifest " + path);
  os << "n_tokens=" << m.n_tokens << '\n';
  os << "n_documents=" << m.n_documents << '\n';
  os << "dominant_ratio=" << mix.dominant_ratio << '\n';
  os << "seed=" << mix.seed << '\n';
  for (const auto& [k, v] : m.token_counts) os << "tokens." << k << '=' << v << '\n';
  for (const auto& [k, v] : m.document_counts) os << "documents." << k << '=' << v << '\n';
}

}  // namespace hublab
