#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hublab/checkpoint.hpp"
#include "hublab/corpora.hpp"
#include "hublab/model.hpp"

namespace hublab {

struct TrainConfig {
  int steps = 4000;
  int batch_size = 16;
  int seq_len = 64;
  float lr = 1e-3f;
  int warmup_steps = 200;
  float weight_decay = 0.0f;
  float grad_clip = 1.0f;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  int eval_interval = 500;  // 0 evaluates only after the last step
  int eval_docs = 100;      // per data type
  std::size_t held_out_pairs = 600;
  std::string checkpoint_path;  // empty: not written
  std::string log_path;         // empty: not written

  void validate() const;
};

// One row of the loss log.
struct LossRecord {
  int step = 0;
  std::string split;      // "train" or "eval"
  std::string data_type;  // "all" or "<task>/<language>"
  std::string metric;     // "loss" or "perplexity"
  double value = 0.0;
};

void write_loss_log(const std::string& path, const std::vector<LossRecord>& log);

// Standalone evaluation documents keyed by "<task>/<language>".
struct EvalSet {
  std::map<std::string, std::vector<std::vector<TokenId>>> docs;
};

EvalSet build_eval_set(const Lexicon& lex, const MixtureConfig& mixture, int docs_per_type);

// exp(mean NLL) over every token after the first of each document plus a
// closing BOS. UsageError on an empty set.
double eval_perplexity(const Parameters& params, const ModelConfig& config,
                       const std::vector<std::vector<TokenId>>& docs, TokenId bos);

// Filter keeps the entries whose key starts with `filter` ("" keeps all).
double eval_perplexity(const Checkpoint& ckpt, const EvalSet& set, const std::string& filter, TokenId bos);

// Fills `n_rows` rows of `row_len` tokens; each row starts at a document
// boundary and the document cut at the row end is dropped.
std::vector<TokenId> pack_rows(DocumentGenerator& gen, std::size_t n_rows, std::size_t row_len);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;
};

using TrainObserver = std::function<void(const LossRecord&)>;

// Lexicon and held-out pairs are derived from mixture.seed; the model
// initialization from train.seed. Throws NumericError on a non-finite loss.
TrainResult train(const ModelConfig& model, const MixtureConfig& mixture, const TrainConfig& train,
                  const TrainObserver& observer = {});

// Lexicon and held-out suite a checkpoint's analyses must use.
Lexicon checkpoint_lexicon(const Checkpoint& ckpt);
EvalSuite checkpoint_eval_suite(const Checkpoint& ckpt, const Lexicon& lex);

}  // namespace hublab
