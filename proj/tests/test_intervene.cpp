#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "hublab/intervene.hpp"
#include "test_util.hpp"

using namespace hublab;
using hublab::testing::spread_parameters;
using hublab::testing::tiny_config;

namespace {

struct Fixture {
  Lexicon lex = build_lexicon(0);
  ModelConfig config = tiny_config(static_cast<int>(lex.vocab_size()), 2, 16, 2, 40);
  Parameters params = spread_parameters(config, 5, 4.0f);
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

std::vector<float> random_vector(std::size_t d, std::uint64_t seed) {
  auto rng = make_rng(seed, "test.vector");
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(normal01(rng));
  return v;
}

}  // namespace

TEST(SteeringLayerTest, RoundsFractionOfDepth) {
  ModelConfig c;
  c.n_layers = 8;
  EXPECT_EQ(default_steering_layer(c), 4);
  c.n_layers = 32;
  EXPECT_EQ(default_steering_layer(c), 18);
  c.n_layers = 1;
  EXPECT_EQ(default_steering_layer(c), 1);
}

TEST(ContrastVectorTest, HiddenContrastIsAntisymmetricAndZeroOnIdentity) {
  const auto& f = fx();
  const auto plus = f.lex.bos();
  const std::vector<TokenId> a = {plus, f.lex.surface(f.lex.agents()[0], DataType::B)};
  const std::vector<TokenId> b = {plus, f.lex.surface(f.lex.agents()[1], DataType::B), f.lex.period()};
  for (int layer = 0; layer <= f.config.n_layers; ++layer) {
    const auto ab = contrast_vector_from_hidden(f.params, f.config, a, b, layer);
    const auto ba = contrast_vector_from_hidden(f.params, f.config, b, a, layer);
    const auto aa = contrast_vector_from_hidden(f.params, f.config, a, a, layer);
    const auto ta = forward_with_trace(f.params, f.config, a).trace.state(layer, a.size() - 1);
    const auto tb = forward_with_trace(f.params, f.config, b).trace.state(layer, b.size() - 1);
    for (std::size_t i = 0; i < ab.size(); ++i) {
      EXPECT_EQ(ab[i], -ba[i]);
      EXPECT_EQ(aa[i], 0.0f);
      EXPECT_EQ(ab[i], ta[i] - tb[i]);
    }
  }
  EXPECT_THROW(contrast_vector_from_hidden(f.params, f.config, a, b, 3), UsageError);
  EXPECT_THROW(contrast_vector_from_hidden(f.params, f.config, a, b, -1), UsageError);
  EXPECT_THROW(contrast_vector_from_hidden(f.params, f.config, {}, b, 1), UsageError);
}

TEST(ContrastVectorTest, UnembeddingDifferenceIsRowSubtraction) {
  const auto& f = fx();
  const auto d = static_cast<std::size_t>(f.config.d_model);
  const auto o = f.params.unembed.data();
  const auto v = contrast_vector_from_unembedding(f.params, 7, 19);
  const auto w = contrast_vector_from_unembedding(f.params, 19, 7);
  const auto z = contrast_vector_from_unembedding(f.params, 7, 7);
  for (std::size_t i = 0; i < d; ++i) {
    EXPECT_EQ(v[i], o[7 * d + i] - o[19 * d + i]);
    EXPECT_EQ(v[i], -w[i]);
    EXPECT_EQ(z[i], 0.0f);
  }
  EXPECT_THROW(contrast_vector_from_unembedding(f.params, -1, 0), UsageError);
  EXPECT_THROW(contrast_vector_from_unembedding(f.params, 0, f.config.vocab_size), UsageError);
}

TEST(SamplingTest, TopPKeepsSmallestNucleus) {
  const std::vector<float> logits = {std::log(0.1f), std::log(0.5f), std::log(0.15f), std::log(0.25f)};
  Rng rng = make_rng(1, "test.sample");
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_top_p(logits, 1.0, 0.3, rng), 1);
  // Nucleus at 0.8 is {1, 3, 2}; frequencies follow the renormalised mass.
  std::map<TokenId, int> counts;
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[sample_top_p(logits, 1.0, 0.8, rng)];
  EXPECT_EQ(counts.count(0), 0u);
  EXPECT_NEAR(counts[1] / static_cast<double>(n), 0.5 / 0.9, 0.01);
  EXPECT_NEAR(counts[3] / static_cast<double>(n), 0.25 / 0.9, 0.01);
  EXPECT_NEAR(counts[2] / static_cast<double>(n), 0.15 / 0.9, 0.01);
  EXPECT_THROW(sample_top_p(logits, 0.0, 0.3, rng), UsageError);
  EXPECT_THROW(sample_top_p(logits, 1.0, 1.5, rng), UsageError);
}

TEST(SamplingTest, SeededGenerationIsReproducibleAndStops) {
  const auto& f = fx();
  const std::vector<TokenId> prompt = {f.lex.bos(), f.lex.surface(f.lex.agents()[2], DataType::A)};
  const auto a = generate_sampled(f.params, f.config, prompt, 20, nullptr, 1.0, 0.9, 11);
  const auto b = generate_sampled(f.params, f.config, prompt, 20, nullptr, 1.0, 0.9, 11);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), prompt.size() + 20);
  const auto s = generate_sampled(f.params, f.config, prompt, 20, nullptr, 1.0, 0.9, 11, a[prompt.size()]);
  EXPECT_EQ(s.size(), prompt.size() + 1);
  EXPECT_THROW(generate_sampled(f.params, f.config, prompt, 39, nullptr, 1.0, 0.9, 11), UsageError);
}

TEST(ClassifyOutcomeTest, PartitionsEveryCaseOverFourTokens) {
  std::map<Outcome, int> seen;
  int excluded = 0;
  for (TokenId base = 0; base < 4; ++base) {
    for (TokenId steered = 0; steered < 4; ++steered) {
      for (TokenId expected = 0; expected < 4; ++expected) {
        const auto o = classify_outcome(base, steered, expected);
        if (expected == base) {
          EXPECT_FALSE(o.has_value());
          ++excluded;
          continue;
        }
        ASSERT_TRUE(o.has_value());
        const bool correct = steered == expected, unchanged = steered == base;
        EXPECT_EQ(correct + unchanged + (!correct && !unchanged), 1);
        EXPECT_EQ(*o, correct ? Outcome::SteeredCorrect : unchanged ? Outcome::Unchanged : Outcome::Other);
        ++seen[*o];
      }
    }
  }
  EXPECT_EQ(excluded, 16);
  EXPECT_EQ(seen[Outcome::SteeredCorrect], 12);
  EXPECT_EQ(seen[Outcome::Unchanged], 12);
  EXPECT_EQ(seen[Outcome::Other], 24);
}

TEST(SteerOutcomeTest, RatesSumToOneAndCsvHasSchema) {
  SteerOutcome o;
  o.experiment = "steer-arith";
  o.setting = "coefficient=2";
  o.outcomes = {Outcome::SteeredCorrect, Outcome::Other, Outcome::Other, Outcome::Unchanged, Outcome::Other};
  o.extras["layer"] = 4;
  EXPECT_DOUBLE_EQ(o.rate(Outcome::SteeredCorrect) + o.rate(Outcome::Unchanged) + o.rate(Outcome::Other), 1.0);
  EXPECT_DOUBLE_EQ(o.rate(Outcome::Other), 0.6);
  const auto path = (std::filesystem::temp_directory_path() / "hublab_test_steer.csv").string();
  write_steer_outcomes(path, {o});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, kSteerOutcomeHeader);
  EXPECT_EQ(row, "steer-arith,coefficient=2,0.2,0.2,0.6,5,layer=4");
  std::filesystem::remove(path);
}

TEST(HookAlgebraTest, AdditionsComposeLinearlyAtTheHookedSite) {
  const auto& f = fx();
  const std::vector<TokenId> tokens = {0, 12, 40, 7, 99, 3};
  const auto v = random_vector(16, 4);
  const int layer = 1;
  HookSet split, joined;
  split.directives.push_back({layer, {0, 2, 4}, v, 1.5f, HookMode::Add});
  split.directives.push_back({layer, {0, 2, 4}, v, -0.25f, HookMode::Add});
  joined.directives.push_back({layer, {0, 2, 4}, v, 1.25f, HookMode::Add});
  const auto a = forward_with_trace(f.params, f.config, tokens, &split).trace;
  const auto b = forward_with_trace(f.params, f.config, tokens, &joined).trace;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto x = a.state(layer, t), y = b.state(layer, t);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-6);
  }
}

TEST(NeutralityTest, ZeroCoefficientKeepsGreedyAndSampledOutputs) {
  const auto& f = fx();
  const auto prefixes = make_polarity_prefixes(f.lex, DataType::B, 25, 2);
  const auto hidden = polarity_vector(f.params, f.config, f.lex, DataType::A, 1);
  const auto unemb =
      contrast_vector_from_unembedding(f.params, f.lex.surface(f.lex.adjectives(Polarity::Positive)[0], DataType::B),
                                       f.lex.surface(f.lex.adjectives(Polarity::Negative)[0], DataType::B));
  for (const auto& p : prefixes) {
    for (const auto* vec : {&hidden, &unemb}) {
      HookSet hooks;
      hooks.directives.push_back({1, {0, 1, 2}, *vec, 0.0f, HookMode::Add});
      EXPECT_EQ(generate_greedy(f.params, f.config, p, 10, &hooks), generate_greedy(f.params, f.config, p, 10));
      EXPECT_EQ(generate_sampled(f.params, f.config, p, 10, &hooks, 1.0, 0.3, 9),
                generate_sampled(f.params, f.config, p, 10, nullptr, 1.0, 0.3, 9));
    }
  }
}

TEST(NeutralityTest, SelfReplacementKeepsGreedyOutputs) {
  const auto& f = fx();
  for (const auto& c : make_replacement_cases(f.lex, DataType::B, 20, 3)) {
    const auto clean = forward_with_trace(f.params, f.config, c.prefix).trace;
    HookSet hooks;
    for (int l = 1; l <= f.config.n_layers; ++l) {
      const auto h = clean.state(l, c.position);
      hooks.directives.push_back({l, {c.position}, {h.begin(), h.end()}, 1.0f, HookMode::Replace});
    }
    EXPECT_EQ(generate_greedy(f.params, f.config, c.prefix, 8, &hooks), generate_greedy(f.params, f.config, c.prefix, 8));
  }
}

TEST(PolarityTest, PrefixesAreDistinctNeutralOpenings) {
  const auto& f = fx();
  const auto p = make_polarity_prefixes(f.lex, DataType::B, 100, 0);
  EXPECT_EQ(std::set<std::vector<TokenId>>(p.begin(), p.end()).size(), 100u);
  for (const auto& x : p) {
    ASSERT_EQ(x.size(), 3u);
    EXPECT_EQ(x[0], f.lex.bos());
    EXPECT_EQ(f.lex.token_type(x[1]), DataType::B);
    EXPECT_EQ(f.lex.lexeme(*f.lex.token_lexeme(x[2])).role, Role::Verb);
  }
  EXPECT_EQ(p, make_polarity_prefixes(f.lex, DataType::B, 100, 0));
  EXPECT_THROW(make_polarity_prefixes(f.lex, DataType::B, 100000, 0), UsageError);
}

TEST(PolarityTest, ZeroCoefficientMatchesBaselineExactly) {
  const auto& f = fx();
  const auto prefixes = make_polarity_prefixes(f.lex, DataType::B, 30, 1);
  PolarityConfig cfg;
  cfg.layer = 1;
  cfg.coefficient = 0.0f;
  const auto out = polarity_steering_experiment(f.params, f.config, f.lex, prefixes, cfg, &f.params, &f.config);
  EXPECT_EQ(out.extras.at("baseline_polarity"), out.extras.at("steered_polarity"));
  EXPECT_EQ(out.extras.at("baseline_on_topic"), out.extras.at("steered_on_topic"));
  EXPECT_EQ(out.extras.at("baseline_disfluency"), out.extras.at("steered_disfluency"));
  EXPECT_EQ(out.extras.at("polarity_shift"), 0.0);
  for (auto o : out.outcomes) EXPECT_EQ(o, Outcome::Unchanged);
  EXPECT_EQ(out.transcripts.size(), prefixes.size());
}

TEST(PolarityTest, DirectionFlipNegatesTheVector) {
  const auto& f = fx();
  const auto prefixes = make_polarity_prefixes(f.lex, DataType::B, 10, 1);
  const auto v = polarity_vector(f.params, f.config, f.lex, DataType::B, 1);
  PolarityConfig up, down;
  up.layer = down.layer = 1;
  down.direction = -1;
  auto neg = v;
  for (auto& x : neg) x = -x;
  const auto a = run_polarity_generations(f.params, f.config, f.lex, prefixes, v, down);
  const auto b = run_polarity_generations(f.params, f.config, f.lex, prefixes, neg, up);
  EXPECT_EQ(a.generations, b.generations);
  double norm = 0.0;
  for (auto x : v) norm += static_cast<double>(x) * x;
  EXPECT_GT(norm, 0.0);
}

TEST(ArithmeticSteeringTest, CoefficientZeroHasNoShiftedTargets) {
  const auto& f = fx();
  std::vector<ArithmeticItem> items;
  for (int b = 0; b < 4; ++b)
    for (int c = 2; c <= 5; ++c) items.push_back({b + c, b, c, ArithOp::Add});
  ArithSteerConfig cfg;
  cfg.layer = 1;
  const auto rows = arithmetic_steering_experiment(f.params, f.config, f.lex, items, {0.0f, 1.0f, 4.0f}, cfg);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rate(Outcome::SteeredCorrect), 0.0);
  for (const auto& r : rows) {
    EXPECT_EQ(r.n() + static_cast<std::size_t>(r.extras.at("excluded")), items.size());
    if (r.n()) {
      EXPECT_NEAR(r.rate(Outcome::SteeredCorrect) + r.rate(Outcome::Unchanged) + r.rate(Outcome::Other), 1.0, 1e-12);
    }
  }
  items.push_back({3, 2, 1, ArithOp::Add});
  EXPECT_THROW(arithmetic_steering_experiment(f.params, f.config, f.lex, items, {0.0f}, cfg), UsageError);
  EXPECT_THROW(decrement_vector(f.params, f.config, f.lex, 1, DataType::A, 1), UsageError);
}

TEST(ArithmeticSteeringTest, PrefixRenderingsShareTheLayout) {
  const auto& f = fx();
  const ArithmeticItem it{7, 3, 4, ArithOp::Add};
  const auto num = arithmetic_prefix(it, DataType::Numeral, f.lex);
  const auto a = arithmetic_prefix(it, DataType::A, f.lex);
  ASSERT_EQ(num.size(), 5u);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(num[1], f.lex.numeral(7));
  EXPECT_EQ(num[3], f.lex.numeral(3));
  EXPECT_EQ(a[1], f.lex.word_for_number(7, DataType::A));
  EXPECT_EQ(a[4], num[4]);
  EXPECT_EQ(f.lex.token_type(a[4]), DataType::Shared);
}

TEST(ReplacementTest, LeavesEarlierPositionsAndValidatesLayer) {
  const auto& f = fx();
  const auto cases = make_replacement_cases(f.lex, DataType::B, 30, 4);
  for (const auto& c : cases) {
    EXPECT_NE(c.original, c.target);
    EXPECT_EQ(f.lex.surface(c.original, DataType::B), c.prefix[c.position]);
  }
  for (const auto& c : make_replacement_cases(f.lex, DataType::B, 10, 4, true)) EXPECT_EQ(c.original, c.target);

  const auto& c = cases.front();
  const auto v = random_vector(16, 8);
  HookSet hooks;
  hooks.directives.push_back({1, {c.position}, v, 2.0f, HookMode::Replace});
  const auto clean = forward_with_trace(f.params, f.config, c.prefix).trace;
  const auto hooked = forward_with_trace(f.params, f.config, c.prefix, &hooks).trace;
  for (std::size_t t = 0; t < c.prefix.size(); ++t) {
    const auto x = clean.state(1, t), y = hooked.state(1, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (t == c.position) EXPECT_EQ(y[i], 2.0f * v[i]);
      else EXPECT_EQ(x[i], y[i]);
    }
  }
  EXPECT_THROW(replacement_experiment(f.params, f.config, f.lex, cases, 0, DataType::B, DataType::A), UsageError);
  EXPECT_THROW(replacement_experiment(f.params, f.config, f.lex, cases, 3, DataType::B, DataType::A), UsageError);
  const auto out = replacement_experiment(f.params, f.config, f.lex, cases, 1, DataType::B, DataType::A);
  EXPECT_EQ(out.n() + static_cast<std::size_t>(out.extras.at("excluded")), cases.size());
}
