#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "hublab/corpora.hpp"

using namespace hublab;

namespace {

LexiconSizes tiny_sizes() {
  LexiconSizes s;
  s.nouns = 8;
  s.verbs = 4;
  s.adj_positive = 2;
  s.adj_negative = 3;
  s.max_number = 9;
  s.noun_classes = 4;
  return s;
}

// Exact distribution over sentence documents by enumerating every choice of
// the generative process.
std::map<std::vector<TokenId>, double> enumerate_documents(const Lexicon& lex, const DocumentParams& params,
                                                           const SentenceWeights& w) {
  std::map<std::vector<TokenId>, double> dist;
  const double total = w.neutral + w.positive + w.negative;
  const std::vector<std::pair<Polarity, double>> pols = {
      {Polarity::Neutral, w.neutral / total}, {Polarity::Positive, w.positive / total},
      {Polarity::Negative, w.negative / total}};
  const auto& agents = lex.agents();
  const double n_agents = static_cast<double>(agents.size());

  // All sentences of a polarity and subject with their conditional probabilities.
  auto sentences = [&](Polarity pol, LexemeId subject) {
    std::vector<std::pair<std::vector<LexemeId>, double>> out;
    const double pv = 1.0 / static_cast<double>(lex.verbs().size());
    for (auto verb : lex.verbs()) {
      const auto& objects = lex.nouns_of_class(lex.lexeme(verb).object_class);
      const double po = pv / static_cast<double>(objects.size());
      for (auto obj : objects) {
        if (pol == Polarity::Neutral) {
          out.push_back({{subject, verb, obj, lex.period()}, po});
          continue;
        }
        const auto& adjs = lex.adjectives(pol);
        const double pa = 1.0 / static_cast<double>(adjs.size());
        for (auto a : adjs) {
          out.push_back({{a, subject, verb, obj, lex.period()}, po / 3.0 * pa});
          out.push_back({{subject, verb, a, obj, lex.period()}, po / 3.0 * pa});
          for (auto b : adjs) out.push_back({{a, subject, verb, b, obj, lex.period()}, po / 3.0 * pa * pa});
        }
      }
    }
    return out;
  };

  const int span = params.max_sentences - params.min_sentences + 1;
  for (int k = params.min_sentences; k <= params.max_sentences; ++k) {
    for (const auto& [pol, ppol] : pols) {
      for (auto topic : agents) {
        std::function<void(int, std::vector<LexemeId>, double)> rec = [&](int i, std::vector<LexemeId> acc, double p) {
          if (i == k) {
            auto toks = render(acc, DataType::A, lex);
            dist[toks] += p;
            return;
          }
          for (auto subj : agents) {
            double ps = 1.0;
            if (i > 0) ps = (subj == topic ? params.topic_repeat : 0.0) + (1.0 - params.topic_repeat) / n_agents;
            else if (subj != topic) continue;
            for (const auto& [s, q] : sentences(pol, subj)) {
              auto next = acc;
              next.insert(next.end(), s.begin(), s.end());
              rec(i + 1, next, p * ps * q);
            }
          }
        };
        rec(0, {}, ppol / span / n_agents);
      }
    }
  }
  return dist;
}

}  // namespace

TEST(LexiconTest, DefaultVocabularyLayout) {
  const auto lex = build_lexicon(1);
  EXPECT_EQ(lex.vocab_size(), 238u);
  EXPECT_EQ(lex.token_text(lex.bos()), "<s>");
  EXPECT_EQ(lex.agents().size(), 10u);
  EXPECT_EQ(lex.token_type(lex.numeral(7)), DataType::Numeral);
  EXPECT_EQ(lex.token_type(lex.surface(lex.plus(), DataType::A)), DataType::Shared);
  EXPECT_EQ(lex.surface(lex.plus(), DataType::A), lex.surface(lex.plus(), DataType::B));
  for (auto n : lex.nouns()) {
    const auto a = lex.surface(n, DataType::A), b = lex.surface(n, DataType::B);
    EXPECT_NE(a, b);
    EXPECT_EQ(lex.token_type(a), DataType::A);
    EXPECT_EQ(lex.token_type(b), DataType::B);
    EXPECT_EQ(*lex.token_lexeme(a), n);
    EXPECT_EQ(*lex.token_lexeme(b), n);
  }
  EXPECT_EQ(*lex.token_lexeme(lex.numeral(3)), lex.number(3));
}

TEST(LexiconTest, SurfacesAreUniqueAndSeeded) {
  const auto a = build_lexicon(1), b = build_lexicon(1), c = build_lexicon(2);
  EXPECT_EQ(a.vocab(), b.vocab());
  EXPECT_NE(a.vocab(), c.vocab());
  std::set<std::string> seen(a.vocab().begin(), a.vocab().end());
  EXPECT_EQ(seen.size(), a.vocab_size());
  for (std::size_t t = 0; t < a.vocab_size(); ++t) EXPECT_EQ(a.token_id(a.vocab()[t]), static_cast<TokenId>(t));
}

TEST(LexiconTest, RejectsBadSizes) {
  auto s = tiny_sizes();
  s.nouns = 7;
  EXPECT_THROW(build_lexicon(1, s), UsageError);
  const auto lex = build_lexicon(1);
  EXPECT_THROW(lex.token_id("no-such-token"), LexiconError);
  EXPECT_THROW(lex.surface(lex.nouns()[0], DataType::Numeral), LexiconError);
}

TEST(SentenceTest, GeneratedSentencesParseWithTheirPolarity) {
  const auto lex = build_lexicon(3);
  const auto ss = gen_sentences(lex, 11, 500);
  std::map<Polarity, int> counts;
  for (const auto& s : ss) {
    const auto p = parse_sentence(lex, s.lexemes);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(*p, s.polarity);
    ++counts[s.polarity];
    const auto pair = make_pair(s, lex);
    EXPECT_EQ(invert(pair.a, lex), s.lexemes);
    EXPECT_EQ(invert(pair.b, lex), s.lexemes);
    EXPECT_EQ(pair.a.size(), pair.b.size());
    EXPECT_EQ(pair.a[0], lex.bos());
  }
  EXPECT_NEAR(counts[Polarity::Neutral] / 500.0, 0.3, 0.07);
  EXPECT_NEAR(counts[Polarity::Positive] / 500.0, 0.35, 0.07);
}

TEST(SentenceTest, ParserRejectsBrokenTemplates) {
  const auto lex = build_lexicon(3);
  const auto s = gen_sentences(lex, 4, 1)[0].lexemes;
  auto swapped = s;
  std::swap(swapped[0], swapped[swapped.size() - 2]);
  EXPECT_FALSE(parse_sentence(lex, swapped).has_value());
  auto truncated = s;
  truncated.pop_back();
  EXPECT_FALSE(parse_sentence(lex, truncated).has_value());
  const auto good = lex.adjectives(Polarity::Positive)[0], bad = lex.adjectives(Polarity::Negative)[0];
  const auto agent = lex.agents()[0], verb = lex.verbs()[0];
  const auto obj = lex.nouns_of_class(lex.lexeme(verb).object_class)[0];
  EXPECT_EQ(parse_sentence(lex, {good, agent, verb, obj, lex.period()}), Polarity::Positive);
  EXPECT_FALSE(parse_sentence(lex, {good, agent, verb, bad, obj, lex.period()}).has_value());
  const auto wrong_obj = lex.nouns_of_class(lex.lexeme(verb).object_class == 1 ? 2 : 1)[0];
  EXPECT_FALSE(parse_sentence(lex, {agent, verb, wrong_obj, lex.period()}).has_value());
}

TEST(ArithmeticTest, EnumerationMatchesBruteForce) {
  std::size_t adds = 0, muls = 0;
  for (int a = 0; a <= 20; ++a) {
    for (int b = 0; b <= 20; ++b) {
      for (int c = 1; c <= 9; ++c) {
        adds += a == b + c;
        muls += a == b * c;
      }
    }
  }
  EXPECT_EQ(enumerate_arithmetic(20, true, false).size(), adds);
  EXPECT_EQ(enumerate_arithmetic(20, false, true).size(), muls);
  EXPECT_EQ(adds, 144u);
  EXPECT_EQ(muls, 63u);
}

TEST(ArithmeticTest, DrawsAreValidAndDistinct) {
  const auto items = gen_arithmetic(144, true, false, 5);
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& it : items) {
    EXPECT_EQ(it.a, it.b + it.c);
    EXPECT_TRUE(seen.insert({it.a, it.b, it.c}).second);
  }
  EXPECT_EQ(gen_arithmetic(30, true, true, 5).size(), 30u);
  EXPECT_THROW(gen_arithmetic(3, false, false, 5), UsageError);
}

TEST(ArithmeticTest, RenderingsShareOperatorsAndDiffer) {
  const auto lex = build_lexicon(2);
  const ArithmeticItem it{7, 3, 4, ArithOp::Add};
  const auto n = render_numeral(it, lex), a = render_words(it, DataType::A, lex), b = render_words(it, DataType::B, lex);
  ASSERT_EQ(n.size(), 6u);
  EXPECT_EQ(n[1], lex.numeral(7));
  EXPECT_EQ(n[2], a[2]);
  EXPECT_EQ(a[4], b[4]);
  EXPECT_EQ(invert(n, lex), invert(a, lex));
  EXPECT_EQ(invert(a, lex), invert(b, lex));
  EXPECT_EQ(lex.token_type(a[1]), DataType::A);
  EXPECT_EQ(lex.token_type(b[1]), DataType::B);
}

TEST(ListTest, ElementsAreDistinctNounsOfOneClass) {
  const auto lex = build_lexicon(2);
  for (const auto& item : gen_lists(300, 8, lex)) {
    ASSERT_GE(item.elements.size(), 2u);
    ASSERT_LE(item.elements.size(), 5u);
    std::set<LexemeId> distinct(item.elements.begin(), item.elements.end());
    EXPECT_EQ(distinct.size(), item.elements.size());
    const int cls = lex.lexeme(item.elements[0]).noun_class;
    for (auto e : item.elements) EXPECT_EQ(lex.lexeme(e).noun_class, cls);
    const auto code = render_code_list(item, DataType::B, lex);
    EXPECT_EQ(code.size(), 2 * item.elements.size() + 2);
    EXPECT_EQ(code[1], lex.surface(lex.lbracket(), DataType::B));
    const auto prose = render_prose_list(item, DataType::A, lex);
    EXPECT_EQ(prose.back(), lex.surface(lex.period(), DataType::A));
  }
}

TEST(EntropyTest, MatchesExhaustiveEnumeration) {
  const auto lex = build_lexicon(5, tiny_sizes());
  DocumentParams params;
  params.min_sentences = 1;
  params.max_sentences = 2;
  params.topic_repeat = 0.6;
  const SentenceWeights w{0.2, 0.5, 0.3};
  const auto dist = enumerate_documents(lex, params, w);
  double mass = 0.0, h = 0.0, len = 0.0;
  for (const auto& [toks, p] : dist) {
    mass += p;
    h -= p * std::log(p);
    len += p * static_cast<double>(toks.size());  // predicted tokens: all after BOS plus the closing BOS
  }
  ASSERT_NEAR(mass, 1.0, 1e-12);
  const auto e = sentence_document_entropy(lex, params, w);
  EXPECT_NEAR(e.entropy_nats, h, 1e-9);
  EXPECT_NEAR(e.expected_tokens, len, 1e-9);
  EXPECT_NEAR(e.perplexity_bound(), std::exp(h / len), 1e-9);
}

TEST(EntropyTest, GeneratorFollowsTheEnumeratedDistribution) {
  const auto lex = build_lexicon(5, tiny_sizes());
  DocumentParams params;
  params.min_sentences = 1;
  params.max_sentences = 2;
  const auto dist = enumerate_documents(lex, params, {});
  MixtureConfig mix;
  DocumentGenerator gen(lex, mix, 77, nullptr, params);
  const int n = 40000;
  std::map<std::vector<TokenId>, int> counts;
  for (int i = 0; i < n; ++i) {
    auto d = gen.next_of(Task::Sentences, DataType::A);
    ASSERT_TRUE(dist.count(d.tokens)) << "generator produced a document outside the enumerated support";
    ++counts[d.tokens];
  }
  // Total variation between empirical and exact document frequencies, on a
  // coarse partition (sentence count x polarity x first subject) where every
  // cell has enough mass to estimate.
  auto cell = [&](const std::vector<TokenId>& t) {
    int periods = 0, polar = 0;
    for (auto tok : t) {
      const auto lx = lex.token_lexeme(tok);
      if (!lx) continue;
      periods += *lx == lex.period();
      const auto role = lex.lexeme(*lx).role;
      if (role == Role::AdjPositive) polar = 1;
      if (role == Role::AdjNegative) polar = 2;
    }
    return std::tuple(periods, polar);
  };
  std::map<std::tuple<int, int>, double> exact, seen;
  for (const auto& [t, p] : dist) exact[cell(t)] += p;
  for (const auto& [t, c] : counts) seen[cell(t)] += static_cast<double>(c) / n;
  double tv = 0.0;
  for (const auto& [k, p] : exact) tv += std::abs(p - seen[k]);
  EXPECT_LT(0.5 * tv, 0.02);
}

TEST(EntropyTest, DefaultPerplexityBound) {
  const auto lex = build_lexicon(1);
  const auto e = sentence_document_entropy(lex);
  EXPECT_NEAR(e.perplexity_bound(), 7.86, 0.01);
}

TEST(MixtureTest, ValidationRejectsOutOfRangeValues) {
  MixtureConfig m;
  m.dominant_ratio = 1.2;
  EXPECT_THROW(m.validate(), UsageError);
  m = {};
  m.w_lists = 0.3;
  EXPECT_THROW(m.validate(), UsageError);
}

TEST(StreamTest, DeterministicAndRespectsRatio) {
  const auto lex = build_lexicon(1);
  MixtureConfig mix;
  mix.seed = 9;
  mix.dominant_ratio = 0.8;
  const auto suite = build_eval_suite(lex, 9, 100);
  const auto s1 = build_training_stream(mix, lex, 60000, suite.held_out);
  const auto s2 = build_training_stream(mix, lex, 60000, suite.held_out);
  EXPECT_EQ(s1.tokens, s2.tokens);
  EXPECT_EQ(s1.tokens.size(), 60000u);
  std::size_t a = 0, b = 0;
  for (auto t : s1.tokens) {
    a += lex.token_type(t) == DataType::A;
    b += lex.token_type(t) == DataType::B;
  }
  EXPECT_NEAR(static_cast<double>(a) / static_cast<double>(a + b), 0.8, 0.03);
  std::size_t counted = 0;
  for (const auto& [k, v] : s1.manifest.token_counts) counted += v;
  EXPECT_EQ(counted, s1.manifest.n_tokens);
  mix.seed = 10;
  EXPECT_NE(build_training_stream(mix, lex, 1000, suite.held_out).tokens, std::vector(s1.tokens.begin(), s1.tokens.begin() + 1000));
}

TEST(StreamTest, HeldOutSentencesNeverAppearInTraining) {
  const auto lex = build_lexicon(1);
  MixtureConfig mix;
  mix.seed = 3;
  const auto suite = build_eval_suite(lex, 3, 600);
  ASSERT_EQ(suite.pairs.size(), 600u);
  ASSERT_EQ(suite.held_out.size(), 600u);
  const auto stream = build_training_stream(mix, lex, 200000, suite.held_out);
  // Re-segment sentence documents into sentences and hash each.
  std::vector<LexemeId> cur;
  std::size_t sentences = 0;
  bool in_sentence_doc = false;
  for (auto t : stream.tokens) {
    if (t == lex.bos()) {
      cur.clear();
      in_sentence_doc = true;
      continue;
    }
    const auto lx = lex.token_lexeme(t);
    if (!lx) {
      in_sentence_doc = false;
      continue;
    }
    const auto role = lex.lexeme(*lx).role;
    if (role == Role::Number || *lx == lex.lbracket() || *lx == lex.and_word()) in_sentence_doc = false;
    if (!in_sentence_doc) continue;
    cur.push_back(*lx);
    if (*lx == lex.period()) {
      if (parse_sentence(lex, cur)) {
        ++sentences;
        EXPECT_FALSE(suite.held_out.count(hash_lexemes(cur))) << "held-out sentence leaked into training";
      }
      cur.clear();
    }
  }
  EXPECT_GT(sentences, 10000u);
}

TEST(StreamTest, EvalSuitePairsAreDistinct) {
  const auto lex = build_lexicon(1);
  const auto suite = build_eval_suite(lex, 4, 200);
  std::set<std::vector<LexemeId>> seen;
  for (const auto& p : suite.pairs) EXPECT_TRUE(seen.insert(p.lexemes).second);
}

TEST(CorpusFileTest, RoundTripAndLineNumberedErrors) {
  const auto lex = build_lexicon(1);
  MixtureConfig mix;
  DocumentGenerator gen(lex, mix, 5);
  std::vector<std::vector<TokenId>> docs;
  for (int i = 0; i < 50; ++i) docs.push_back(gen.next().tokens);
  const auto path = (std::filesystem::temp_directory_path() / "hublab_test_corpus.txt").string();
  write_corpus(path, docs, lex);
  EXPECT_EQ(read_corpus(path, lex), docs);
  {
    std::ofstream out(path, std::ios::app);
    out << "<s> bogus\n";
  }
  try {
    read_corpus(path, lex);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":51:"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}
