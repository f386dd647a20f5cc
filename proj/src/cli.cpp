#include "hublab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "hublab/checkpoint.hpp"
#include "hublab/corpora.hpp"
#include "hublab/intervene.hpp"
#include "hublab/lens.hpp"
#include "hublab/report.hpp"
#include "hublab/rng.hpp"
#include "hublab/similarity.hpp"
#include "hublab/trainer.hpp"

namespace hublab {

ExperimentConfig::ExperimentConfig(std::string subcommand, std::map<std::string, std::string> defaults)
    : subcommand_(std::move(subcommand)), values_(std::move(defaults)) {}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "' for " + subcommand_);
  it->second = value;
}

namespace {
bool declared_by_any_subcommand(const std::string& key) {
  for (const auto& sub : subcommands()) {
    if (subcommand_defaults(sub).count(key)) return true;
  }
  return false;
}
}  // namespace

void ExperimentConfig::merge_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) value.erase(value.begin());
    // Shared config files may carry keys of other subcommands, never unknown ones.
    if (values_.count(key)) {
      values_[key] = value;
    } else if (!declared_by_any_subcommand(key)) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    }
  }
}

std::string ExperimentConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("config key '" + key + "' is not declared for " + subcommand_);
  return it->second;
}

namespace {
template <class T, class F>
T parse_field(const ExperimentConfig& c, const std::string& key, F f) {
  const auto s = c.str(key);
  try {
    std::size_t used = 0;
    T v = f(s, &used);
    if (used != s.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError("config field '" + key + "' has malformed value '" + s + "'");
  }
}
}  // namespace

int ExperimentConfig::integer(const std::string& key) const {
  return parse_field<int>(*this, key, [](const std::string& s, std::size_t* u) { return std::stoi(s, u); });
}

std::uint64_t ExperimentConfig::u64(const std::string& key) const {
  const auto s = str(key);
  if (!s.empty() && s[0] == '-') throw FormatError("config field '" + key + "' must be non-negative");
  return parse_field<std::uint64_t>(*this, key, [](const std::string& v, std::size_t* u) { return std::stoull(v, u); });
}

double ExperimentConfig::real(const std::string& key) const {
  return parse_field<double>(*this, key, [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
}

bool ExperimentConfig::flag(const std::string& key) const {
  const auto s = str(key);
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw FormatError("config field '" + key + "' must be 0/1/true/false, got '" + s + "'");
}

std::vector<double> ExperimentConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_csv_line(str(key))) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw FormatError("config field '" + key + "' has malformed list entry '" + part + "'");
    }
  }
  return out;
}

void ExperimentConfig::write_snapshot(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write config snapshot " + path);
  os << "subcommand=" << subcommand_ << '\n';
  for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"gen-corpus",   "train",       "lens-anchor",    "lens-langdist",
                                                 "lens-lists",   "sim-parallel", "sim-arith",     "pca-traj",
                                                 "steer-polarity", "steer-arith", "steer-replace", "report"};
  return names;
}

std::map<std::string, std::string> subcommand_defaults(const std::string& sub) {
  std::map<std::string, std::string> d = {{"seed", "0"}, {"out", "results"}, {"deterministic", "0"}};
  const std::map<std::string, std::string> mixture = {
      {"dominant_ratio", "0.9"}, {"mixed_ratio", "0.1"}, {"w_sentences", "0.7"}, {"w_arithmetic", "0.2"},
      {"w_lists", "0.1"},        {"numeral_share", "0.5"}, {"code_share", "0.5"},  {"held_out_pairs", "600"}};
  auto add = [&](const std::map<std::string, std::string>& m) { d.insert(m.begin(), m.end()); };
  if (sub == "gen-corpus") {
    add(mixture);
    add({{"n_tokens", "200000"}});
  } else if (sub == "train") {
    add(mixture);
    add({{"n_layers", "8"},       {"d_model", "128"},      {"n_heads", "4"},         {"max_seq_len", "64"},
         {"ff_mult", "4"},        {"steps", "4000"},       {"batch_size", "16"},     {"seq_len", "64"},
         {"lr", "0.001"},         {"warmup_steps", "200"}, {"weight_decay", "0"},    {"grad_clip", "1"},
         {"train_seed", "0"},     {"eval_interval", "500"}, {"eval_docs", "100"},    {"checkpoint", ""}});
  } else if (sub == "report") {
  } else if (std::find(subcommands().begin(), subcommands().end(), sub) != subcommands().end()) {
    add({{"checkpoint", ""}});
    if (sub == "lens-anchor") add({{"n_cases", "500"}, {"input", "B"}, {"dominant", "A"}, {"final_norm", "1"}});
    if (sub == "lens-langdist") add({{"n_sequences", "200"}, {"input", "B"}, {"tlm_docs", "500"}, {"alpha", "0"}, {"final_norm", "1"}});
    if (sub == "lens-lists") add({{"n_items", "200"}, {"language", "A"}, {"dominant", "A"}, {"final_norm", "1"}});
    if (sub == "sim-parallel") add({{"n_pairs", "500"}, {"final_norm", "0"}});
    if (sub == "sim-arith") add({{"word_language", "A"}, {"ops", "add"}, {"final_norm", "0"}});
    if (sub == "pca-traj") add({{"k", "2"}, {"n_prefixes", "20"}, {"prefix_form", "B"}});
    if (sub == "steer-polarity") {
      add({{"n_prefixes", "100"}, {"coefficient", "5"}, {"layer", "-1"}, {"span", "3"}, {"steering_language", "both"},
           {"direction", "1"}, {"temperature", "1"}, {"top_p", "0.3"}, {"max_new", "16"}, {"reference", ""},
           {"prefix_language", "B"}});
    }
    if (sub == "steer-arith") {
      add({{"coefficients", "0,1,2,4,8,16"}, {"layer", "-1"}, {"n_items", "0"}, {"prompt_form", "numeral"},
           {"contrast_language", "A"}});
    }
    if (sub == "steer-replace") {
      add({{"n_cases", "200"}, {"layers", ""}, {"input", "B"}, {"target_language", "A"}, {"max_new", "8"}});
    }
  } else {
    throw UsageError("unknown subcommand '" + sub + "'");
  }
  return d;
}

namespace {

namespace fs = std::filesystem;

struct Context {
  ExperimentConfig& cfg;
  std::ostream& out;
  fs::path dir;

  std::string path(const std::string& name) const { return (dir / name).string(); }
};

MixtureConfig mixture_from(const ExperimentConfig& c) {
  MixtureConfig m;
  m.dominant_ratio = c.real("dominant_ratio");
  m.mixed_ratio = c.real("mixed_ratio");
  m.w_sentences = c.real("w_sentences");
  m.w_arithmetic = c.real("w_arithmetic");
  m.w_lists = c.real("w_lists");
  m.numeral_share = c.real("numeral_share");
  m.code_share = c.real("code_share");
  m.seed = c.u64("seed");
  m.validate();
  return m;
}

std::string checkpoint_path(const Context& ctx) {
  auto p = ctx.cfg.str("checkpoint");
  return p.empty() ? ctx.path("model.ckpt") : p;
}

struct Loaded {
  Checkpoint ck;
  Lexicon lex;
  EvalSuite suite;
};

Loaded load(const Context& ctx) {
  const auto path = checkpoint_path(ctx);
  if (!fs::exists(path)) throw UsageError("checkpoint '" + path + "' does not exist (set checkpoint=...)");
  Loaded l{load_checkpoint(path), {}, {}};
  l.lex = checkpoint_lexicon(l.ck);
  l.suite = checkpoint_eval_suite(l.ck, l.lex);
  return l;
}

std::vector<ParallelPair> take_pairs(const EvalSuite& suite, std::size_t n, const std::string& field) {
  if (n > suite.pairs.size()) {
    throw UsageError("config field '" + field + "' asks for " + std::to_string(n) + " pairs, the held-out suite has " +
                     std::to_string(suite.pairs.size()));
  }
  return {suite.pairs.begin(), suite.pairs.begin() + static_cast<std::ptrdiff_t>(n)};
}

DataType language_field(const ExperimentConfig& c, const std::string& key) {
  try {
    return parse_data_type(c.str(key));
  } catch (const UsageError&) {
    throw FormatError("config field '" + key + "' must name a data type, got '" + c.str(key) + "'");
  }
}

void cmd_gen_corpus(Context& ctx) {
  const auto mix = mixture_from(ctx.cfg);
  const auto lex = build_lexicon(mix.seed);
  const auto suite = build_eval_suite(lex, mix.seed, ctx.cfg.u64("held_out_pairs"));
  DocumentGenerator gen(lex, mix, stream_seed(mix.seed, "corpora.train"), &suite.held_out);
  const auto n_tokens = ctx.cfg.u64("n_tokens");
  std::vector<std::vector<TokenId>> docs;
  StreamManifest manifest;
  while (manifest.n_tokens < n_tokens) {
    auto doc = gen.next();
    const auto label = std::string(to_string(doc.task)) + "/" +
                       (doc.language == DataType::Shared ? std::string("mixed") : to_string(doc.language));
    manifest.n_tokens += doc.tokens.size();
    manifest.token_counts[label] += doc.tokens.size();
    manifest.document_counts[label] += 1;
    manifest.n_documents += 1;
    docs.push_back(std::move(doc.tokens));
  }
  write_corpus(ctx.path("corpus.txt"), docs, lex);
  write_vocab(ctx.path("vocab.txt"), lex);
  write_manifest(ctx.path("manifest.txt"), manifest, mix);
  std::vector<std::vector<TokenId>> a, b;
  for (const auto& p : suite.pairs) a.push_back(p.a), b.push_back(p.b);
  write_corpus(ctx.path("heldout_a.txt"), a, lex);
  write_corpus(ctx.path("heldout_b.txt"), b, lex);
  ctx.out << "wrote " << docs.size() << " documents (" << manifest.n_tokens << " tokens), vocabulary of "
          << lex.vocab_size() << " to " << ctx.dir.string() << '\n';
}

void cmd_train(Context& ctx) {
  const auto mix = mixture_from(ctx.cfg);
  ModelConfig mc;
  mc.n_layers = ctx.cfg.integer("n_layers");
  mc.d_model = ctx.cfg.integer("d_model");
  mc.n_heads = ctx.cfg.integer("n_heads");
  mc.max_seq_len = ctx.cfg.integer("max_seq_len");
  mc.ff_mult = ctx.cfg.integer("ff_mult");
  TrainConfig tc;
  tc.steps = ctx.cfg.integer("steps");
  tc.batch_size = ctx.cfg.integer("batch_size");
  tc.seq_len = ctx.cfg.integer("seq_len");
  tc.lr = static_cast<float>(ctx.cfg.real("lr"));
  tc.warmup_steps = ctx.cfg.integer("warmup_steps");
  tc.weight_decay = static_cast<float>(ctx.cfg.real("weight_decay"));
  tc.grad_clip = static_cast<float>(ctx.cfg.real("grad_clip"));
  tc.seed = ctx.cfg.u64("train_seed");
  tc.eval_interval = ctx.cfg.integer("eval_interval");
  tc.eval_docs = ctx.cfg.integer("eval_docs");
  tc.held_out_pairs = ctx.cfg.u64("held_out_pairs");
  tc.checkpoint_path = checkpoint_path(ctx);
  tc.log_path = ctx.path("loss.csv");
  auto& out = ctx.out;
  train(mc, mix, tc, [&out](const LossRecord& r) {
    if (r.split == "train" && r.step % 500 != 0 && r.step != 1) return;
    out << "step " << r.step << ' ' << r.split << ' ' << r.data_type << ' ' << r.metric << ' ' << r.value << '\n';
  });
  out << "checkpoint written to " << tc.checkpoint_path << '\n';
}

void cmd_lens_anchor(Context& ctx) {
  const auto l = load(ctx);
  const auto seed = ctx.cfg.u64("seed");
  const auto pairs = take_pairs(l.suite, ctx.cfg.u64("n_cases"), "n_cases");
  const auto cases = make_anchor_cases(pairs, l.lex, language_field(ctx.cfg, "input"),
                                       language_field(ctx.cfg, "dominant"), seed);
  const auto r = anchor_test(cases, l.ck.params, l.ck.config, seed, ctx.cfg.flag("final_norm"));
  LayerCurve uniform{"lens-anchor", "uniform_baseline", {}};
  for (const auto& p : r.anchor_logp.points) uniform.points.push_back({p.layer, r.uniform_baseline, r.uniform_baseline, r.uniform_baseline, 1});
  write_layer_curves(ctx.path("lens_anchor.csv"), {r.anchor_logp, r.input_logp, uniform});
  write_layer_curves(ctx.path("lens_anchor_winrate.csv"), {r.win_rate});
  ctx.out << "win rate by layer:";
  for (const auto& p : r.win_rate.points) ctx.out << ' ' << std::fixed << std::setprecision(3) << p.mean;
  ctx.out << '\n';
}

TokenLanguageModel fit_tlm(const Loaded& l, std::size_t n_docs, double alpha) {
  MixtureConfig mix;
  mix.seed = std::stoull(l.ck.meta.at("lexicon_seed"));
  DocumentGenerator gen(l.lex, mix, stream_seed(mix.seed, "lens.tlm.docs"));
  std::vector<TypedCorpus> corpora{{DataType::A, {}}, {DataType::B, {}}};
  for (std::size_t i = 0; i < n_docs; ++i) {
    for (auto& c : corpora) {
      const Task task = i % 10 < 7 ? Task::Sentences : i % 10 < 9 ? Task::Arithmetic : Task::Lists;
      c.docs.push_back(gen.next_of(task, c.type).tokens);
    }
  }
  return fit_token_language_model(l.lex.vocab_size(), corpora, alpha);
}

void cmd_lens_langdist(Context& ctx) {
  const auto l = load(ctx);
  const auto pairs = take_pairs(l.suite, ctx.cfg.u64("n_sequences"), "n_sequences");
  const auto input = language_field(ctx.cfg, "input");
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& p : pairs) seqs.push_back(render(p.lexemes, input, l.lex));
  const auto tlm = fit_tlm(l, ctx.cfg.u64("tlm_docs"), ctx.cfg.real("alpha"));
  const auto curves = layer_language_distribution(seqs, tlm, l.ck.params, l.ck.config, ctx.cfg.u64("seed"),
                                                  "lens-langdist", ctx.cfg.flag("final_norm"));
  write_layer_curves(ctx.path("lens_langdist.csv"), curves);
  for (const auto& c : curves) {
    ctx.out << c.series << ':';
    for (const auto& p : c.points) ctx.out << ' ' << std::fixed << std::setprecision(3) << p.mean;
    ctx.out << '\n';
  }
}

void cmd_lens_lists(Context& ctx) {
  const auto l = load(ctx);
  const auto seed = ctx.cfg.u64("seed");
  const auto items = gen_lists(ctx.cfg.u64("n_items"), stream_seed(seed, "cli.lens.lists"), l.lex);
  const auto r = list_comma_anchor_test(items, l.lex, language_field(ctx.cfg, "language"),
                                        language_field(ctx.cfg, "dominant"), l.ck.params, l.ck.config, seed,
                                        ctx.cfg.flag("final_norm"));
  write_layer_curves(ctx.path("lens_lists.csv"), r.curves);
  ctx.out << "wrote " << r.curves.size() << " curves, uniform baseline " << r.uniform_baseline << '\n';
}

void cmd_sim_parallel(Context& ctx) {
  const auto l = load(ctx);
  const auto pairs = take_pairs(l.suite, ctx.cfg.u64("n_pairs"), "n_pairs");
  const auto r = parallel_similarity_curve(pairs, l.ck.params, l.ck.config, ctx.cfg.u64("seed"), nullptr,
                                           ctx.cfg.flag("final_norm"));
  write_layer_curves(ctx.path("sim_parallel.csv"), {r.matched, r.baseline});
  write_layer_curves(ctx.path("sim_parallel_delta.csv"), {r.delta});
  write_layer_curves(ctx.path("sim_parallel_winrate.csv"), {r.win_rate});
  ctx.out << "delta by layer:";
  for (const auto& p : r.delta.points) ctx.out << ' ' << std::fixed << std::setprecision(4) << p.mean;
  ctx.out << '\n';
}

void cmd_sim_arith(Context& ctx) {
  const auto l = load(ctx);
  const auto ops = ctx.cfg.str("ops");
  if (ops != "add" && ops != "mul" && ops != "both") throw FormatError("config field 'ops' must be add, mul or both");
  const auto items = enumerate_arithmetic(l.lex.sizes().max_number, ops != "mul", ops != "add");
  const auto r = arithmetic_similarity_buckets(items, l.lex, language_field(ctx.cfg, "word_language"), l.ck.params,
                                               l.ck.config, ctx.cfg.u64("seed"), ctx.cfg.flag("final_norm"));
  write_layer_curves(ctx.path("sim_arith.csv"), r.buckets);
  auto deltas = r.deltas;
  for (auto& c : deltas) c.experiment = "sim-arith-delta";
  write_layer_curves(ctx.path("sim_arith_delta.csv"), deltas);
  ctx.out << "wrote " << items.size() << " items' bucket curves\n";
}

void cmd_pca_traj(Context& ctx) {
  const auto l = load(ctx);
  const auto seed = ctx.cfg.u64("seed");
  const auto form = language_field(ctx.cfg, "prefix_form");
  std::vector<std::pair<std::string, TokenId>> anchors;
  std::vector<TokenId> tokens;
  for (int v = 0; v <= l.lex.sizes().max_number; ++v) {
    anchors.push_back({"num" + std::to_string(v), l.lex.numeral(v)});
    anchors.push_back({"A" + std::to_string(v), l.lex.word_for_number(v, DataType::A)});
    anchors.push_back({"B" + std::to_string(v), l.lex.word_for_number(v, DataType::B)});
  }
  for (const auto& a : anchors) tokens.push_back(a.second);
  const auto basis = unembedding_basis(l.ck.params, tokens, ctx.cfg.u64("k"), seed);
  auto items = enumerate_arithmetic(l.lex.sizes().max_number, true, false);
  auto rng = make_rng(seed, "cli.pca.prefixes");
  std::vector<std::vector<TokenId>> prefixes;
  const auto n = std::min<std::size_t>(ctx.cfg.u64("n_prefixes"), items.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(items[i], items[i + uniform_index(rng, items.size() - i)]);
    prefixes.push_back(arithmetic_prefix(items[i], form, l.lex));
  }
  const auto traj = trajectory_export(prefixes, l.ck.params, l.ck.config, basis, anchors);
  write_trajectory(ctx.path("trajectory.csv"), traj);
  ctx.out << "projected " << prefixes.size() << " prefixes onto " << basis.components.size() << " components"
          << (basis.reduced_rank ? " (reduced rank)" : "") << '\n';
}

void cmd_steer_polarity(Context& ctx) {
  const auto l = load(ctx);
  const auto seed = ctx.cfg.u64("seed");
  PolarityConfig pc;
  pc.layer = ctx.cfg.integer("layer");
  pc.span = ctx.cfg.u64("span");
  pc.coefficient = static_cast<float>(ctx.cfg.real("coefficient"));
  pc.direction = ctx.cfg.integer("direction") >= 0 ? 1 : -1;
  pc.temperature = ctx.cfg.real("temperature");
  pc.top_p = ctx.cfg.real("top_p");
  pc.max_new = ctx.cfg.u64("max_new");
  pc.seed = stream_seed(seed, "cli.steer.polarity.sampling");
  const auto prefixes = make_polarity_prefixes(l.lex, language_field(ctx.cfg, "prefix_language"),
                                               ctx.cfg.u64("n_prefixes"), seed);
  std::optional<Checkpoint> reference;
  if (!ctx.cfg.str("reference").empty()) reference = load_checkpoint(ctx.cfg.str("reference"));
  std::vector<DataType> langs;
  const auto which = ctx.cfg.str("steering_language");
  if (which == "both") {
    langs = {DataType::A, DataType::B};
  } else {
    langs = {language_field(ctx.cfg, "steering_language")};
  }
  std::vector<SteerOutcome> rows;
  for (auto lang : langs) {
    pc.steering_language = lang;
    auto row = polarity_steering_experiment(l.ck.params, l.ck.config, l.lex, prefixes, pc,
                                            reference ? &reference->params : nullptr,
                                            reference ? &reference->config : nullptr);
    row.setting += std::string(";steering_language=") + to_string(lang);
    ctx.out << "steering in " << to_string(lang) << ": polarity shift " << row.extras["polarity_shift"]
            << ", on-topic " << row.extras["baseline_on_topic"] << " -> " << row.extras["steered_on_topic"] << '\n';
    rows.push_back(std::move(row));
  }
  write_steer_outcomes(ctx.path("steer_polarity.csv"), rows);
}

void cmd_steer_arith(Context& ctx) {
  const auto l = load(ctx);
  const auto seed = ctx.cfg.u64("seed");
  std::vector<ArithmeticItem> items;
  for (const auto& it : enumerate_arithmetic(l.lex.sizes().max_number, true, false)) {
    if (it.c >= 2) items.push_back(it);
  }
  const auto n = ctx.cfg.u64("n_items");
  if (n > 0 && n < items.size()) {
    auto rng = make_rng(seed, "cli.steer.arith.items");
    for (std::size_t i = 0; i < n; ++i) std::swap(items[i], items[i + uniform_index(rng, items.size() - i)]);
    items.resize(n);
  }
  ArithSteerConfig ac;
  ac.layer = ctx.cfg.integer("layer");
  ac.prompt_form = language_field(ctx.cfg, "prompt_form");
  ac.contrast_language = language_field(ctx.cfg, "contrast_language");
  ac.seed = seed;
  std::vector<float> coefs;
  for (double c : ctx.cfg.reals("coefficients")) coefs.push_back(static_cast<float>(c));
  const auto rows = arithmetic_steering_experiment(l.ck.params, l.ck.config, l.lex, items, coefs, ac);
  write_steer_outcomes(ctx.path("steer_arith.csv"), rows);
  for (const auto& r : rows) ctx.out << r.setting << ": steered-correct " << r.rate(Outcome::SteeredCorrect) << '\n';
}

void cmd_steer_replace(Context& ctx) {
  const auto l = load(ctx);
  const auto input = language_field(ctx.cfg, "input");
  const auto cases = make_replacement_cases(l.lex, input, ctx.cfg.u64("n_cases"), ctx.cfg.u64("seed"));
  std::vector<int> layers;
  if (ctx.cfg.str("layers").empty()) {
    for (int i = 1; i <= l.ck.config.n_layers; ++i) layers.push_back(i);
  } else {
    for (double x : ctx.cfg.reals("layers")) layers.push_back(static_cast<int>(x));
  }
  std::vector<SteerOutcome> rows;
  for (int layer : layers) {
    rows.push_back(replacement_experiment(l.ck.params, l.ck.config, l.lex, cases, layer, input,
                                          language_field(ctx.cfg, "target_language"), ctx.cfg.u64("max_new")));
    ctx.out << rows.back().setting << ": steered-correct " << rows.back().rate(Outcome::SteeredCorrect) << '\n';
  }
  write_steer_outcomes(ctx.path("steer_replace.csv"), rows);
}

void cmd_report(Context& ctx) {
  const auto s = build_report(ctx.dir.string());
  ctx.out << "read " << s.curve_files << " curve files and " << s.steer_files << " steering files; wrote "
          << s.plots.size() << " charts and " << s.table_path << '\n';
}

std::string usage() {
  std::ostringstream os;
  os << "usage: hublab <subcommand> [--config FILE] [--out DIR] [--deterministic] [key=value ...]\n"
     << "subcommands:";
  for (const auto& s : subcommands()) os << ' ' << s;
  os << '\n';
  return os.str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || args[0] == "-h" || args[0] == "--help") {
    (args.empty() ? err : out) << usage();
    return args.empty() ? 2 : 0;
  }
  const auto& sub = args[0];
  if (std::find(subcommands().begin(), subcommands().end(), sub) == subcommands().end()) {
    err << "error: unknown subcommand '" << sub << "'\n" << usage();
    return 2;
  }
  try {
    CLI::App app("hublab " + sub);
    std::string config_file, out_dir;
    bool deterministic = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_file, "key=value config file");
    app.add_option("--out", out_dir, "output directory");
    app.add_flag("--deterministic", deterministic, "single-threaded, bit-reproducible execution");
    app.add_option("overrides", overrides, "key=value overrides");
    std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
    try {
      app.parse(rest);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {
        out << app.help() << "keys:";
        for (const auto& [k, v] : subcommand_defaults(sub)) out << ' ' << k << '=' << v;
        out << '\n';
        return 0;
      }
      err << "error: " << e.what() << '\n';
      return 2;
    }
    ExperimentConfig cfg(sub, subcommand_defaults(sub));
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("override '" + kv + "' is not key=value");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!out_dir.empty()) cfg.set("out", out_dir);
    // Every module already runs single-threaded; the flag is recorded.
    if (deterministic) cfg.set("deterministic", "1");
    Context ctx{cfg, out, fs::path(cfg.str("out"))};
    fs::create_directories(ctx.dir);
    cfg.write_snapshot(ctx.path(sub + ".config"));
    if (sub == "gen-corpus") cmd_gen_corpus(ctx);
    else if (sub == "train") cmd_train(ctx);
    else if (sub == "lens-anchor") cmd_lens_anchor(ctx);
    else if (sub == "lens-langdist") cmd_lens_langdist(ctx);
    else if (sub == "lens-lists") cmd_lens_lists(ctx);
    else if (sub == "sim-parallel") cmd_sim_parallel(ctx);
    else if (sub == "sim-arith") cmd_sim_arith(ctx);
    else if (sub == "pca-traj") cmd_pca_traj(ctx);
    else if (sub == "steer-polarity") cmd_steer_polarity(ctx);
    else if (sub == "steer-arith") cmd_steer_arith(ctx);
    else if (sub == "steer-replace") cmd_steer_replace(ctx);
    else cmd_report(ctx);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace hublab
