#include "cmlm/trainer.hpp"

#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "json.hpp"

namespace cmlm {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::cmlm_only:
      return "cmlm";
    case Strategy::s1:
      return "s1";
    case Strategy::s2:
      return "s2";
    case Strategy::s3:
      return "s3";
  }
  return "?";
}

Strategy parse_strategy(const std::string& text) {
  if (text == "cmlm" || text == "cmlm_only") return Strategy::cmlm_only;
  if (text == "s1" || text == "S1") return Strategy::s1;
  if (text == "s2" || text == "S2") return Strategy::s2;
  if (text == "s3" || text == "S3") return Strategy::s3;
  throw ConfigError("unknown strategy '" + text + "' (expected cmlm, s1, s2 or s3)");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::cmlm:
      return "cmlm";
    case Task::bitext:
      return "bitext";
    case Task::joint:
      return "joint";
    case Task::nli:
      return "nli";
  }
  return "?";
}

void TrainPlan::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train plan: " + msg); };
  if (stage1_steps == 0) fail("stage 1 needs at least one step");
  if ((strategy == Strategy::cmlm_only || strategy == Strategy::s1) && stage2_steps != 0) {
    fail("strategy " + to_string(strategy) + " has a single stage; stage2_steps must be 0");
  }
  if (!(alpha >= 0)) fail("alpha must be non-negative");
  if (!(margin >= 0)) fail("margin must be non-negative");
  if (batch_size < 2) fail("batch size must be at least 2");
  if (!(optimizer.learning_rate > 0)) fail("learning rate must be positive");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1)) {
    fail("betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0)) fail("epsilon must be positive");
  if (nli_finetune && nli_steps == 0) fail("NLI finetuning needs nli_steps > 0");
  if (log_every == 0) fail("log_every must be positive");
}

std::vector<Stage> plan_stages(const TrainPlan& plan) {
  std::vector<Stage> stages;
  switch (plan.strategy) {
    case Strategy::cmlm_only:
      stages = {{Task::cmlm, plan.stage1_steps}};
      break;
    case Strategy::s1:
      stages = {{Task::joint, plan.stage1_steps}};
      break;
    case Strategy::s2:
      stages = {{Task::cmlm, plan.stage1_steps}, {Task::bitext, plan.stage2_steps}};
      break;
    case Strategy::s3:
      stages = {{Task::cmlm, plan.stage1_steps}, {Task::joint, plan.stage2_steps}};
      break;
  }
  if (plan.nli_finetune) stages.push_back({Task::nli, plan.nli_steps});
  return stages;
}

namespace {

std::size_t token_limit(const EncoderConfig& config) {
  return config.max_len - (config.pooling == Pooling::cls ? 1 : 0);
}

OptimizerConfig stage_optimizer(const TrainPlan& plan, const Stage& stage) {
  OptimizerConfig c = plan.optimizer;
  c.total_steps = stage.steps;
  return c;
}

template <typename F>
std::vector<std::vector<TokenId>> pick(const std::vector<std::size_t>& idx, F&& field) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(field(i));
  return out;
}

}  // namespace

Vocab build_training_vocab(const std::vector<Document>& docs, const std::vector<BitextPair>& bitext,
                           const std::vector<NliExample>& nli, std::size_t target_size) {
  std::vector<std::string> lines;
  for (const auto& d : docs) lines.insert(lines.end(), d.sentences.begin(), d.sentences.end());
  for (const auto& b : bitext) {
    lines.push_back(b.source);
    lines.push_back(b.target);
  }
  for (const auto& e : nli) {
    lines.push_back(e.premise);
    lines.push_back(e.hypothesis);
  }
  return Vocab::build(lines, target_size);
}

std::vector<BitextTokens> tokenize_bitext(const std::vector<BitextPair>& bitext, const Vocab& vocab,
                                          const EncoderConfig& config) {
  std::vector<BitextTokens> out;
  for (const auto& b : bitext) {
    BitextTokens t{encode_text(b.source, vocab, config), encode_text(b.target, vocab, config)};
    if (!t.source.empty() && !t.target.empty()) out.push_back(std::move(t));
  }
  return out;
}

TrainData prepare_data(const std::vector<Document>& docs, const std::vector<BitextPair>& bitext,
                       const std::vector<NliExample>& nli, const Vocab& vocab, const EncoderConfig& config, Rng& rng) {
  TrainData data;
  for (const auto& doc : docs) {
    std::vector<std::vector<TokenId>> sentences;
    for (const auto& s : doc.sentences) sentences.push_back(tokenize(s, vocab));
    auto pairs = make_pairs(sentences, token_limit(config), doc.language, rng);
    std::move(pairs.begin(), pairs.end(), std::back_inserter(data.pairs));
  }
  data.bitext = tokenize_bitext(bitext, vocab, config);
  for (const auto& e : nli) {
    NliPair p{encode_text(e.premise, vocab, config), encode_text(e.hypothesis, vocab, config),
              static_cast<std::int64_t>(e.label)};
    if (!p.premise.empty() && !p.hypothesis.empty()) data.nli.push_back(std::move(p));
  }
  return data;
}

std::string MetricRecord::to_json() const {
  nlohmann::json j{{"step", step}, {"stage", stage}, {"task", to_string(task)}, {"lr", learning_rate}, {"loss", loss}};
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("cmlm_loss", cmlm_loss);
  put("masked_accuracy", masked_accuracy);
  put("bitext_loss", bitext_loss);
  put("retrieval_accuracy", retrieval_accuracy);
  put("nli_loss", nli_loss);
  put("nli_accuracy", nli_accuracy);
  return j.dump();
}

TrainState TrainState::fresh(const TrainPlan& plan, const EncoderConfig& config, const Vocab& vocab) {
  Rng rng(plan.seed);
  auto params = init_params<float>(config, rng);
  TrainState s = from_params(plan, config, vocab, std::move(params));
  s.rng = rng;
  return s;
}

TrainState TrainState::from_params(const TrainPlan& plan, const EncoderConfig& config, const Vocab& vocab,
                                   ParamStore<float> params, std::uint64_t step) {
  plan.validate();
  check_params(config, params);
  if (vocab.size() != config.vocab_size) throw ConfigError("vocabulary size does not match the encoder config");
  TrainState s;
  s.config = config;
  s.vocab = vocab;
  s.params = std::move(params);
  s.step = step;
  s.stage = 0;
  s.rng = Rng(plan.seed);
  s.optimizer = OptimizerState<float>::fresh(stage_optimizer(plan, plan_stages(plan)[0]), s.params);
  return s;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ck) {
  TrainState s;
  s.config = ck.config;
  s.vocab = ck.vocab;
  s.params = ck.params;
  s.optimizer = ck.optimizer;
  s.step = ck.step;
  s.stage = ck.stage;
  s.strategy = ck.strategy;
  s.rng.set_state(ck.rng_state);
  return s;
}

Checkpoint TrainState::to_checkpoint(const TrainPlan& plan) const {
  Checkpoint ck;
  ck.config = config;
  ck.vocab = vocab;
  ck.params = params;
  ck.optimizer = optimizer;
  ck.step = step;
  ck.stage = stage;
  ck.strategy = strategy.empty() ? to_string(plan.strategy) : strategy;
  ck.rng_state = rng.state();
  return ck;
}

std::vector<MetricRecord> run_plan(const TrainPlan& plan, const TrainData& data, TrainState& state,
                                   const RunOptions& options) {
  plan.validate();
  check_params(state.config, state.params);
  if (!state.strategy.empty() && state.strategy != to_string(plan.strategy)) {
    throw ConfigError("state was trained with strategy " + state.strategy + ", plan uses " + to_string(plan.strategy));
  }
  state.strategy = to_string(plan.strategy);
  const auto stages = plan_stages(plan);
  std::uint64_t total = 0;
  for (const auto& s : stages) total += s.steps;
  if (state.step > total) {
    throw ConfigError("state is at step " + std::to_string(state.step) + ", past the plan's " + std::to_string(total));
  }

  const std::size_t B = plan.batch_size;
  for (const auto& s : stages) {
    if (s.steps == 0) continue;
    const bool needs_pairs = s.task == Task::cmlm || s.task == Task::joint;
    const bool needs_bitext = s.task == Task::bitext || s.task == Task::joint;
    if (needs_pairs && data.pairs.size() < B) throw ContractError("fewer sentence pairs than the batch size");
    if (needs_bitext && data.bitext.size() < B) throw ContractError("fewer bitext pairs than the batch size");
    if (s.task == Task::nli && data.nli.size() < B) throw ContractError("fewer NLI examples than the batch size");
  }
  const std::size_t num_mask = plan.num_mask ? plan.num_mask : default_mask_count(state.config.max_len);
  const std::size_t V = state.config.vocab_size;

  std::ofstream metrics;
  if (options.metrics) {
    if (options.metrics->has_parent_path()) std::filesystem::create_directories(options.metrics->parent_path());
    metrics.open(*options.metrics, state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IntegrityError("cannot write metrics '" + options.metrics->string() + "'");
  }
  auto save = [&] {
    if (options.checkpoint) save_checkpoint(state.to_checkpoint(plan), *options.checkpoint);
  };

  std::vector<MetricRecord> history;
  const std::uint64_t end = options.stop_at ? std::min(total, *options.stop_at) : total;
  while (state.step < end) {
    std::size_t si = 0;
    std::uint64_t begin = 0;
    while (state.step >= begin + stages[si].steps) begin += stages[si++].steps;
    const Stage& stage = stages[si];
    if (si != state.stage) {
      spdlog::info("stage {} ({}) begins at step {}", si + 1, to_string(stage.task), state.step);
      state.optimizer = OptimizerState<float>::fresh(stage_optimizer(plan, stage), state.params);
      state.stage = si;
    }

    const std::string rng_before = state.rng.state();
    MetricRecord rec;
    rec.step = state.step + 1;
    rec.stage = si;
    rec.task = stage.task;
    rec.learning_rate = learning_rate_at(state.optimizer.config, state.optimizer.step);
    try {
      Tape<float> tape;
      Encoder<float> enc(tape, state.params, state.config, &state.rng);
      Var<float> loss, cmlm, bitext;
      if (stage.task == Task::cmlm || stage.task == Task::joint) {
        const auto idx = state.rng.sample_distinct(data.pairs.size(), B);
        std::vector<SentencePair> chosen;
        for (std::size_t i : idx) chosen.push_back(data.pairs[i]);
        const auto batch = make_batch(std::span<const SentencePair>(chosen), V, num_mask, state.rng);
        auto r = cmlm_loss(enc, batch, plan.variant);
        cmlm = r.loss;
        rec.cmlm_loss = r.loss.value().item();
        rec.masked_accuracy = r.accuracy;
      }
      if (stage.task == Task::bitext || stage.task == Task::joint) {
        const auto idx = state.rng.sample_distinct(data.bitext.size(), B);
        const auto src = pick(idx, [&](std::size_t i) { return data.bitext[i].source; });
        const auto tgt = pick(idx, [&](std::size_t i) { return data.bitext[i].target; });
        Var<float> S = enc.sentence_vectors(make_sentence_batch(src));
        Var<float> T = enc.sentence_vectors(make_sentence_batch(tgt));
        bitext = bitext_loss(S, T, plan.margin);
        rec.bitext_loss = bitext.value().item();
        rec.retrieval_accuracy = in_batch_retrieval_accuracy(S.value(), T.value());
      }
      if (stage.task == Task::nli) {
        const auto idx = state.rng.sample_distinct(data.nli.size(), B);
        const auto prem = pick(idx, [&](std::size_t i) { return data.nli[i].premise; });
        const auto hyp = pick(idx, [&](std::size_t i) { return data.nli[i].hypothesis; });
        std::vector<std::int64_t> labels;
        for (std::size_t i : idx) labels.push_back(data.nli[i].label);
        Var<float> u = enc.sentence_vectors(make_sentence_batch(prem));
        Var<float> v = enc.sentence_vectors(make_sentence_batch(hyp));
        auto r = nli_loss(enc, u, v, std::span<const std::int64_t>(labels));
        loss = r.loss;
        rec.nli_loss = r.loss.value().item();
        rec.nli_accuracy = r.accuracy;
      } else if (stage.task == Task::joint) {
        loss = combined_loss(cmlm, bitext, plan.alpha);
      } else {
        loss = stage.task == Task::cmlm ? cmlm : bitext;
      }
      rec.loss = loss.value().item();
      tape.backward(loss);
      const auto grads = tape.param_grads(state.params);
      optimizer_step(state.params, std::span<const Tensor<float>>(grads), state.optimizer);
    } catch (const NonFiniteError& e) {
      state.rng.set_state(rng_before);
      spdlog::error("non-finite value at step {}: {}", rec.step, e.what());
      save();
      throw;
    }
    ++state.step;
    history.push_back(rec);

    if (state.step % plan.log_every == 0 || state.step == end) {
      spdlog::info("step {} {} loss {:.4f}", state.step, to_string(stage.task), rec.loss);
      if (metrics) metrics << rec.to_json() << '\n' << std::flush;
    }
    if (plan.checkpoint_every && state.step % plan.checkpoint_every == 0 && state.step != end) save();
  }
  save();
  return history;
}

CmlmEval evaluate_cmlm(const ParamStore<float>& params, const EncoderConfig& config,
                       const std::vector<SentencePair>& pairs, CmlmVariant variant, std::size_t num_mask,
                       std::size_t batch_size, std::size_t batches, std::uint64_t seed) {
  if (pairs.size() < batch_size) throw ContractError("evaluate_cmlm: fewer pairs than the batch size");
  Rng rng(seed);
  double hits = 0, loss = 0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<SentencePair> chosen;
    for (std::size_t i : rng.sample_distinct(pairs.size(), batch_size)) chosen.push_back(pairs[i]);
    const auto batch = make_batch(std::span<const SentencePair>(chosen), config.vocab_size, num_mask, rng);
    Tape<float> tape(false);
    Encoder<float> enc(tape, params, config);
    auto r = cmlm_loss(enc, batch, variant);
    hits += r.accuracy * static_cast<double>(r.count);
    loss += r.loss.value().item() * static_cast<double>(r.count);
    count += r.count;
  }
  return {hits / static_cast<double>(count), loss / static_cast<double>(count)};
}

BitextEval evaluate_bitext(const ParamStore<float>& params, const EncoderConfig& config,
                           const std::vector<BitextTokens>& pairs, std::size_t batch_size, double margin) {
  if (pairs.size() < batch_size || batch_size < 2) throw ContractError("evaluate_bitext: not enough pairs for one batch");
  BitextEval out;
  std::size_t n = 0;
  for (std::size_t start = 0; start + batch_size <= pairs.size(); start += batch_size, ++n) {
    std::vector<std::vector<TokenId>> src, tgt;
    for (std::size_t i = start; i < start + batch_size; ++i) {
      src.push_back(pairs[i].source);
      tgt.push_back(pairs[i].target);
    }
    Tape<float> tape(false);
    Encoder<float> enc(tape, params, config);
    Var<float> S = enc.sentence_vectors(make_sentence_batch(src));
    Var<float> T = enc.sentence_vectors(make_sentence_batch(tgt));
    out.loss += bitext_loss(S, T, margin).value().item();
    out.accuracy += in_batch_retrieval_accuracy(S.value(), T.value());
  }
  out.accuracy /= static_cast<double>(n);
  out.loss /= static_cast<double>(n);
  return out;
}

}  // namespace cmlm
