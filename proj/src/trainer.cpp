#include "hublab/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "hublab/optim.hpp"
#include "hublab/rng.hpp"

namespace hublab {

void TrainConfig::validate() const {
  if (steps < 1) throw UsageError("train config: steps must be >= 1");
  if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (seq_len < 2) throw UsageError("train config: seq_len must be >= 2");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw UsageError("train config: lr must be finite and >= 0");
  if (warmup_steps < 0) throw UsageError("train config: warmup_steps must be >= 0");
  if (!(weight_decay >= 0.0f)) throw UsageError("train config: weight_decay must be >= 0");
  if (!(grad_clip >= 0.0f)) throw UsageError("train config: grad_clip must be >= 0");
  if (eval_interval < 0) throw UsageError("train config: eval_interval must be >= 0");
  if (eval_docs < 1) throw UsageError("train config: eval_docs must be >= 1");
}

void write_loss_log(const std::string& path, const std::vector<LossRecord>& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write loss log " + path);
  os << "step,split,data_type,metric,value\n";
  os << std::setprecision(9);
  for (const auto& r : log) os << r.step << ',' << r.split << ',' << r.data_type << ',' << r.metric << ',' << r.value << '\n';
}

EvalSet build_eval_set(const Lexicon& lex, const MixtureConfig& mixture, int docs_per_type) {
  DocumentGenerator gen(lex, mixture, stream_seed(mixture.seed, "corpora.eval.docs"));
  EvalSet set;
  const std::pair<Task, DataType> kinds[] = {
      {Task::Sentences, DataType::A},  {Task::Sentences, DataType::B},    {Task::Arithmetic, DataType::Numeral},
      {Task::Arithmetic, DataType::A}, {Task::Arithmetic, DataType::B},   {Task::Lists, DataType::A},
      {Task::Lists, DataType::B}};
  for (const auto& [task, lang] : kinds) {
    auto& bucket = set.docs[std::string(to_string(task)) + "/" + to_string(lang)];
    for (int i = 0; i < docs_per_type; ++i) bucket.push_back(gen.next_of(task, lang).tokens);
  }
  return set;
}

double eval_perplexity(const Parameters& params, const ModelConfig& config,
                       const std::vector<std::vector<TokenId>>& docs, TokenId bos) {
  if (docs.empty()) throw UsageError("eval_perplexity: empty evaluation set");
  const auto v = static_cast<std::size_t>(config.vocab_size);
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& doc : docs) {
    std::vector<TokenId> seq(doc);
    seq.push_back(bos);
    if (seq.size() > static_cast<std::size_t>(config.max_seq_len) + 1) {
      throw UsageError("eval_perplexity: document longer than max_seq_len");
    }
    const std::span<const TokenId> inputs(seq.data(), seq.size() - 1);
    const auto r = forward_with_trace(params, config, inputs);
    const auto logits = r.logits.data();
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const auto row = logits.subspan(t * v, v);
      double mx = row[0];
      for (auto x : row) mx = std::max(mx, static_cast<double>(x));
      double z = 0.0;
      for (auto x : row) z += std::exp(static_cast<double>(x) - mx);
      nll += mx + std::log(z) - row[static_cast<std::size_t>(seq[t + 1])];
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

double eval_perplexity(const Checkpoint& ckpt, const EvalSet& set, const std::string& filter, TokenId bos) {
  std::vector<std::vector<TokenId>> docs;
  for (const auto& [key, bucket] : set.docs) {
    if (key.rfind(filter, 0) == 0) docs.insert(docs.end(), bucket.begin(), bucket.end());
  }
  if (docs.empty()) throw UsageError("eval_perplexity: no documents match filter '" + filter + "'");
  return eval_perplexity(ckpt.params, ckpt.config, docs, bos);
}

std::vector<TokenId> pack_rows(DocumentGenerator& gen, std::size_t n_rows, std::size_t row_len) {
  std::vector<TokenId> out;
  out.reserve(n_rows * row_len);
  for (std::size_t r = 0; r < n_rows; ++r) {
    std::size_t filled = 0;
    while (filled < row_len) {
      const auto doc = gen.next();
      const auto take = std::min(doc.tokens.size(), row_len - filled);
      out.insert(out.end(), doc.tokens.begin(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(take));
      filled += take;
    }
  }
  return out;
}

namespace {

void tune_allocator() {
#ifdef __GLIBC__
  // Keep large activation buffers on the heap instead of fresh mmaps per step.
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

float clip_gradients(const std::vector<AdamW::Group>& groups, float max_norm) {
  double sq = 0.0;
  for (const auto& g : groups) {
    if (!g.param.has_grad()) continue;
    for (auto x : g.param.grad()) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0f && norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (const auto& g : groups) {
      if (!g.param.has_grad()) continue;
      Tensor p = g.param;
      for (auto& x : p.mutable_grad()) x *= f;
    }
  }
  return static_cast<float>(norm);
}

std::string meta_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace

Lexicon checkpoint_lexicon(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("lexicon_seed");
  if (it == ckpt.meta.end()) throw FormatError("checkpoint: missing meta field 'lexicon_seed'");
  auto lex = build_lexicon(std::stoull(it->second));
  if (static_cast<int>(lex.vocab_size()) != ckpt.config.vocab_size) {
    throw FormatError("checkpoint: vocab_size does not match the lexicon rebuilt from 'lexicon_seed'");
  }
  return lex;
}

EvalSuite checkpoint_eval_suite(const Checkpoint& ckpt, const Lexicon& lex) {
  auto seed = ckpt.meta.find("lexicon_seed");
  auto n = ckpt.meta.find("held_out_pairs");
  if (seed == ckpt.meta.end() || n == ckpt.meta.end()) {
    throw FormatError("checkpoint: missing meta fields for the held-out suite");
  }
  return build_eval_suite(lex, std::stoull(seed->second), std::stoull(n->second));
}

TrainResult train(const ModelConfig& model, const MixtureConfig& mixture, const TrainConfig& tc,
                  const TrainObserver& observer) {
  tc.validate();
  mixture.validate();
  tune_allocator();
  const auto lex = build_lexicon(mixture.seed);
  ModelConfig mc = model;
  mc.vocab_size = static_cast<int>(lex.vocab_size());
  if (tc.seq_len > mc.max_seq_len) throw UsageError("train config: seq_len exceeds model max_seq_len");
  mc.validate();

  const auto suite = build_eval_suite(lex, mixture.seed, tc.held_out_pairs);
  const auto eval_set = build_eval_set(lex, mixture, tc.eval_docs);
  DocumentGenerator gen(lex, mixture, stream_seed(mixture.seed, "corpora.train"), &suite.held_out);

  TrainResult result;
  auto& ck = result.checkpoint;
  ck.config = mc;
  ck.params = init_parameters(mc, tc.seed);
  std::vector<AdamW::Group> groups;
  for (auto& [name, t] : ck.params.named()) {
    const bool decay = t.rank() == 2 && name != "pos_emb";
    groups.push_back({t, decay});
  }
  AdamW opt(groups);

  auto emit = [&](LossRecord r) {
    if (observer) observer(r);
    result.log.push_back(std::move(r));
  };
  auto evaluate = [&](int step) {
    for (const auto& [key, docs] : eval_set.docs) {
      emit({step, "eval", key, "perplexity", eval_perplexity(ck.params, mc, docs, lex.bos())});
    }
  };

  const auto b = static_cast<std::size_t>(tc.batch_size);
  const auto t = static_cast<std::size_t>(tc.seq_len);
  std::vector<TokenId> inputs(b * t), targets(b * t);
  AdamWHyper hp;
  hp.weight_decay = tc.weight_decay;
  for (int step = 1; step <= tc.steps; ++step) {
    const auto rows = pack_rows(gen, b, t + 1);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t i = 0; i < t; ++i) {
        inputs[r * t + i] = rows[r * (t + 1) + i];
        targets[r * t + i] = rows[r * (t + 1) + i + 1];
      }
    }
    auto loss = lm_loss(ck.params, mc, inputs, targets, b);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("training diverged: loss is " + std::to_string(value) + " at step " + std::to_string(step));
    }
    loss.backward();
    clip_gradients(groups, tc.grad_clip);
    hp.lr = tc.warmup_steps > 0 && step <= tc.warmup_steps
                ? tc.lr * static_cast<float>(step) / static_cast<float>(tc.warmup_steps)
                : tc.lr;
    opt.step(hp);
    opt.zero_grad();
    if (step == 1 || step % 50 == 0 || step == tc.steps) emit({step, "train", "all", "loss", value});
    if ((tc.eval_interval > 0 && step % tc.eval_interval == 0) || step == tc.steps) evaluate(step);
  }

  ck.meta["lexicon_seed"] = std::to_string(mixture.seed);
  ck.meta["held_out_pairs"] = std::to_string(tc.held_out_pairs);
  ck.meta["dominant_ratio"] = meta_double(mixture.dominant_ratio);
  ck.meta["mixed_ratio"] = meta_double(mixture.mixed_ratio);
  ck.meta["train_seed"] = std::to_string(tc.seed);
  ck.meta["steps"] = std::to_string(tc.steps);
  if (!tc.checkpoint_path.empty()) save_checkpoint(ck, tc.checkpoint_path);
  if (!tc.log_path.empty()) write_loss_log(tc.log_path, result.log);
  return result;
}

}  // namespace hublab
