#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmlm/checkpoint.hpp"
#include "cmlm/corpus.hpp"
#include "cmlm/encoder.hpp"
#include "cmlm/objectives.hpp"
#include "cmlm/optim.hpp"
#include "cmlm/rng.hpp"

namespace cmlm {

// cmlm_only: one CMLM stage. s1: CMLM + bitext jointly from the start.
// s2: CMLM, then bitext alone. s3: CMLM, then CMLM + bitext jointly.
enum class Strategy { cmlm_only, s1, s2, s3 };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

enum class Task { cmlm, bitext, joint, nli };
std::string to_string(Task t);

struct TrainPlan {
  Strategy strategy = Strategy::cmlm_only;
  std::uint64_t stage1_steps = 2000;
  std::uint64_t stage2_steps = 0;
  double alpha = 0.2;
  double margin = 0.3;
  // warmup_steps applies per stage; total_steps is replaced by the stage
  // length so each stage decays to zero at its end.
  OptimizerConfig optimizer{OptimizerKind::lamb, 1e-3, 0.9, 0.999, 1e-6, 0.0, 100, 0};
  std::size_t batch_size = 32;
  std::size_t num_mask = 0;  // 0 = round(0.3125 * max_len)
  std::uint64_t seed = 1;
  CmlmVariant variant = CmlmVariant::standard;
  bool nli_finetune = false;
  std::uint64_t nli_steps = 0;
  std::uint64_t log_every = 50;
  std::uint64_t checkpoint_every = 0;  // 0 = only at the end

  // Throws ConfigError on an inconsistent plan.
  void validate() const;
};

struct Stage {
  Task task;
  std::uint64_t steps;
};

// Stages in execution order, including the optional NLI finetuning stage.
// Zero-length stages are kept so stage indices stay stable.
std::vector<Stage> plan_stages(const TrainPlan& plan);

struct NliPair {
  std::vector<TokenId> premise;
  std::vector<TokenId> hypothesis;
  std::int64_t label = 0;
};

struct BitextTokens {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
};

// Tokenized training material.
struct TrainData {
  std::vector<SentencePair> pairs;
  std::vector<BitextTokens> bitext;
  std::vector<NliPair> nli;
};

// Vocabulary over every sentence the run will see.
Vocab build_training_vocab(const std::vector<Document>& docs, const std::vector<BitextPair>& bitext,
                           const std::vector<NliExample>& nli, std::size_t target_size);

// Tokenizes and pairs the raw data. Pair order swaps draw from `rng`.
TrainData prepare_data(const std::vector<Document>& docs, const std::vector<BitextPair>& bitext,
                       const std::vector<NliExample>& nli, const Vocab& vocab, const EncoderConfig& config, Rng& rng);

std::vector<BitextTokens> tokenize_bitext(const std::vector<BitextPair>& bitext, const Vocab& vocab,
                                          const EncoderConfig& config);

struct MetricRecord {
  std::uint64_t step = 0;  // 1-based global update index
  std::size_t stage = 0;
  Task task = Task::cmlm;
  double learning_rate = 0;
  double loss = 0;
  std::optional<double> cmlm_loss;
  std::optional<double> masked_accuracy;
  std::optional<double> bitext_loss;
  std::optional<double> retrieval_accuracy;
  std::optional<double> nli_loss;
  std::optional<double> nli_accuracy;

  std::string to_json() const;
};

// Live state of a run: what a checkpoint stores.
struct TrainState {
  EncoderConfig config;
  Vocab vocab;
  ParamStore<float> params;
  OptimizerState<float> optimizer;
  std::uint64_t step = 0;
  std::size_t stage = 0;
  std::string strategy;  // empty until the first step of a plan
  Rng rng;

  static TrainState fresh(const TrainPlan& plan, const EncoderConfig& config, const Vocab& vocab);
  // Warm start from existing weights; the step counter continues from
  // `step` and the rng is re-seeded from the plan.
  static TrainState from_params(const TrainPlan& plan, const EncoderConfig& config, const Vocab& vocab,
                                ParamStore<float> params, std::uint64_t step = 0);
  static TrainState from_checkpoint(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint(const TrainPlan& plan) const;
};

struct RunOptions {
  std::optional<std::filesystem::path> metrics;     // JSON lines, appended
  std::optional<std::filesystem::path> checkpoint;  // written atomically
  std::optional<std::uint64_t> stop_at;             // halt after this global step
};

// Executes the remaining stages of `plan` from state.step onwards. On a
// non-finite loss the last good state is checkpointed (when a path is
// given) and the NonFiniteError propagates.
std::vector<MetricRecord> run_plan(const TrainPlan& plan, const TrainData& data, TrainState& state,
                                   const RunOptions& options = {});

// Inference-mode evaluation helpers (no dropout, no parameter updates).

// Masked accuracy and mean loss over `batches` fresh masked batches.
struct CmlmEval {
  double accuracy = 0;
  double loss = 0;
};
CmlmEval evaluate_cmlm(const ParamStore<float>& params, const EncoderConfig& config,
                       const std::vector<SentencePair>& pairs, CmlmVariant variant, std::size_t num_mask,
                       std::size_t batch_size, std::size_t batches, std::uint64_t seed);

// In-batch retrieval accuracy averaged over consecutive full batches, and
// the mean bitext loss over the same batches.
struct BitextEval {
  double accuracy = 0;
  double loss = 0;
};
BitextEval evaluate_bitext(const ParamStore<float>& params, const EncoderConfig& config,
                           const std::vector<BitextTokens>& pairs, std::size_t batch_size, double margin);

}  // namespace cmlm
