#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmlm/checkpoint.hpp"
#include "cmlm/config.hpp"
#include "cmlm/synth.hpp"
#include "cmlm/trainer.hpp"

using namespace cmlm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cmlm_trainer_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Fixture {
  EncoderConfig config;
  Vocab vocab;
  TrainData data;
};

const Fixture& tiny() {
  static const Fixture f = [] {
    SynthConfig sc;
    sc.languages = 2;
    sc.base_words = 40;
    sc.documents = 30;
    sc.bitext_pairs = 60;
    sc.heldout_pairs = 16;
    sc.nli_examples = 40;
    const auto synth = generate_synthetic(sc);
    Fixture fx;
    fx.vocab = build_training_vocab(synth.corpus, synth.bitext, synth.nli, 256);
    fx.config.layers = 1;
    fx.config.heads = 2;
    fx.config.hidden = 16;
    fx.config.ff = 32;
    fx.config.max_len = 12;
    fx.config.projections = 3;
    fx.config.vocab_size = fx.vocab.size();
    Rng rng(5);
    fx.data = prepare_data(synth.corpus, synth.bitext, synth.nli, fx.vocab, fx.config, rng);
    return fx;
  }();
  return f;
}

TrainPlan tiny_plan(Strategy s, std::uint64_t stage1, std::uint64_t stage2) {
  TrainPlan p;
  p.strategy = s;
  p.stage1_steps = stage1;
  p.stage2_steps = stage2;
  p.batch_size = 8;
  p.log_every = 2;
  p.optimizer.warmup_steps = 2;
  p.optimizer.learning_rate = 1e-2;
  return p;
}

void expect_same_params(const ParamStore<float>& a, const ParamStore<float>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << a.name(i);
}

}  // namespace

TEST(Plan, StagesPerStrategy) {
  auto p = tiny_plan(Strategy::s3, 5, 7);
  auto st = plan_stages(p);
  ASSERT_EQ(st.size(), 2u);
  EXPECT_EQ(st[0].task, Task::cmlm);
  EXPECT_EQ(st[1].task, Task::joint);
  EXPECT_EQ(st[1].steps, 7u);
  EXPECT_EQ(plan_stages(tiny_plan(Strategy::s2, 5, 7))[1].task, Task::bitext);
  EXPECT_EQ(plan_stages(tiny_plan(Strategy::s1, 5, 0))[0].task, Task::joint);
  p.nli_finetune = true;
  p.nli_steps = 3;
  EXPECT_EQ(plan_stages(p).back().task, Task::nli);
  EXPECT_THROW(tiny_plan(Strategy::s1, 5, 5).validate(), ConfigError);
  EXPECT_THROW(tiny_plan(Strategy::cmlm_only, 0, 0).validate(), ConfigError);
  EXPECT_EQ(parse_strategy("S3"), Strategy::s3);
  EXPECT_THROW(parse_strategy("s4"), ConfigError);
}

TEST(Training, TwoRunsAreIdentical) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::s3, 3, 3);
  auto a = TrainState::fresh(plan, fx.config, fx.vocab);
  auto b = TrainState::fresh(plan, fx.config, fx.vocab);
  const auto ha = run_plan(plan, fx.data, a, {scratch("a.jsonl"), scratch("a.ckpt"), std::nullopt});
  const auto hb = run_plan(plan, fx.data, b, {scratch("b.jsonl"), scratch("b.ckpt"), std::nullopt});
  ASSERT_EQ(ha.size(), 6u);
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i].to_json(), hb[i].to_json());
  EXPECT_EQ(slurp(scratch("a.jsonl")), slurp(scratch("b.jsonl")));
  EXPECT_EQ(slurp(scratch("a.ckpt")), slurp(scratch("b.ckpt")));
  EXPECT_TRUE(ha.back().bitext_loss.has_value());
  EXPECT_TRUE(ha.back().cmlm_loss.has_value());
  EXPECT_FALSE(ha.front().bitext_loss.has_value());
}

TEST(Training, EmptySecondStageMatchesCmlmOnly) {
  const auto& fx = tiny();
  auto p3 = tiny_plan(Strategy::s3, 4, 0);
  auto p0 = tiny_plan(Strategy::cmlm_only, 4, 0);
  auto a = TrainState::fresh(p3, fx.config, fx.vocab);
  auto b = TrainState::fresh(p0, fx.config, fx.vocab);
  const auto ha = run_plan(p3, fx.data, a);
  const auto hb = run_plan(p0, fx.data, b);
  EXPECT_EQ(ha.back().loss, hb.back().loss);
  expect_same_params(a.params, b.params);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::s3, 3, 3);
  auto full = TrainState::fresh(plan, fx.config, fx.vocab);
  run_plan(plan, fx.data, full);

  for (std::uint64_t k : {2u, 3u, 4u}) {
    auto part = TrainState::fresh(plan, fx.config, fx.vocab);
    run_plan(plan, fx.data, part, {std::nullopt, scratch("resume.ckpt"), k});
    EXPECT_EQ(part.step, k);
    auto resumed = TrainState::from_checkpoint(load_checkpoint(scratch("resume.ckpt"), fx.config));
    run_plan(plan, fx.data, resumed);
    EXPECT_EQ(resumed.step, 6u);
    expect_same_params(resumed.params, full.params);
    for (std::size_t i = 0; i < full.optimizer.first_moment.size(); ++i) {
      EXPECT_EQ(resumed.optimizer.first_moment[i], full.optimizer.first_moment[i]);
    }
  }
}

TEST(Training, WarmStartContinuesTheStepCounter) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::cmlm_only, 5, 0);
  auto first = TrainState::fresh(plan, fx.config, fx.vocab);
  run_plan(plan, fx.data, first, {std::nullopt, std::nullopt, 2});
  auto warm = TrainState::from_params(plan, fx.config, fx.vocab, first.params, first.step);
  const auto h = run_plan(plan, fx.data, warm);
  ASSERT_EQ(h.size(), 3u);
  EXPECT_EQ(h.front().step, 3u);
  EXPECT_THROW(run_plan(tiny_plan(Strategy::s2, 1, 1), fx.data, warm), ConfigError);
}

TEST(Training, NonFiniteLossKeepsLastGoodCheckpoint) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::cmlm_only, 4, 0);
  auto state = TrainState::fresh(plan, fx.config, fx.vocab);
  run_plan(plan, fx.data, state, {std::nullopt, std::nullopt, 1});
  state.params.get("layer0.ffn.in.weight")[0] = std::numeric_limits<float>::infinity();
  fs::remove(scratch("nan.ckpt"));
  EXPECT_THROW(run_plan(plan, fx.data, state, {std::nullopt, scratch("nan.ckpt"), std::nullopt}), NonFiniteError);
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(load_checkpoint(scratch("nan.ckpt")).step, 1u);
}

TEST(Training, JointGradientIsTheWeightedSumOfTaskGradients) {
  const auto& fx = tiny();
  Rng rng(9);
  auto params = init_params<double>(fx.config, rng, 0.1);
  std::vector<SentencePair> pairs(fx.data.pairs.begin(), fx.data.pairs.begin() + 4);
  const auto batch = make_batch(std::span<const SentencePair>(pairs), fx.config.vocab_size, 2, rng);
  std::vector<std::vector<TokenId>> src, tgt;
  for (std::size_t i = 0; i < 4; ++i) {
    src.push_back(fx.data.bitext[i].source);
    tgt.push_back(fx.data.bitext[i].target);
  }
  auto grads = [&](int which) {
    Tape<double> tape;
    Encoder<double> enc(tape, params, fx.config);
    auto c = cmlm_loss(enc, batch, CmlmVariant::standard).loss;
    auto b = bitext_loss(enc.sentence_vectors(make_sentence_batch(src)), enc.sentence_vectors(make_sentence_batch(tgt)), 0.3);
    tape.backward(which == 0 ? combined_loss(c, b, 0.2) : which == 1 ? c : b);
    return tape.param_grads(params);
  };
  const auto joint = grads(0), gc = grads(1), gb = grads(2);
  for (std::size_t p = 0; p < joint.size(); ++p) {
    for (std::size_t i = 0; i < joint[p].size(); ++i) {
      EXPECT_NEAR(joint[p][i], gc[p][i] + 0.2 * gb[p][i], 1e-12) << params.name(p);
    }
  }
}

TEST(Training, EvaluationHelpers) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::cmlm_only, 1, 0);
  auto state = TrainState::fresh(plan, fx.config, fx.vocab);
  auto e1 = evaluate_cmlm(state.params, fx.config, fx.data.pairs, CmlmVariant::standard, 3, 8, 2, 11);
  auto e2 = evaluate_cmlm(state.params, fx.config, fx.data.pairs, CmlmVariant::standard, 3, 8, 2, 11);
  EXPECT_EQ(e1.loss, e2.loss);
  EXPECT_GE(e1.accuracy, 0.0);
  auto b = evaluate_bitext(state.params, fx.config, fx.data.bitext, 8, 0.3);
  EXPECT_GT(b.loss, 0.0);
  EXPECT_THROW(evaluate_bitext(state.params, fx.config, fx.data.bitext, 1, 0.3), ContractError);
}

// ---------------------------------------------------------------------------
// checkpoints

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::s3, 2, 1);
  auto state = TrainState::fresh(plan, fx.config, fx.vocab);
  run_plan(plan, fx.data, state);
  const auto ck = state.to_checkpoint(plan);
  save_checkpoint(ck, scratch("rt1.ckpt"));
  const auto back = load_checkpoint(scratch("rt1.ckpt"));
  expect_same_params(back.params, ck.params);
  EXPECT_EQ(back.vocab, ck.vocab);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(back.stage, 1u);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  save_checkpoint(back, scratch("rt2.ckpt"));
  EXPECT_EQ(slurp(scratch("rt1.ckpt")), slurp(scratch("rt2.ckpt")));
}

TEST(Checkpoint, MismatchesAndCorruption) {
  const auto& fx = tiny();
  auto plan = tiny_plan(Strategy::cmlm_only, 1, 0);
  auto state = TrainState::fresh(plan, fx.config, fx.vocab);
  save_checkpoint(state.to_checkpoint(plan), scratch("m.ckpt"));
  auto other = fx.config;
  other.hidden = 32;
  other.ff = 64;
  EXPECT_THROW(load_checkpoint(scratch("m.ckpt"), other), ConfigError);
  other = fx.config;
  other.dropout = 0.3;  // not architectural
  EXPECT_NO_THROW(load_checkpoint(scratch("m.ckpt"), other));

  const std::string bytes = slurp(scratch("m.ckpt"));
  std::ofstream(scratch("magic.ckpt"), std::ios::binary) << "XXXX" << bytes.substr(4);
  EXPECT_THROW(load_checkpoint(scratch("magic.ckpt")), IntegrityError);
  std::ofstream(scratch("short.ckpt"), std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  try {
    load_checkpoint(scratch("short.ckpt"));
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------
// configuration

TEST(Config, DefaultsSerializeAndParseBack) {
  RunConfig a;
  a.set("hidden", "32");
  a.set("strategy", "s2");
  a.set("learning_rate", "0.005");
  a.set("synth.languages", "5");
  RunConfig b;
  b.merge(a.serialize());
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_EQ(b.encoder.hidden, 32u);
  EXPECT_EQ(b.plan.strategy, Strategy::s2);
  EXPECT_DOUBLE_EQ(b.plan.optimizer.learning_rate, 0.005);
  for (const auto& k : RunConfig::keys()) EXPECT_NO_THROW(a.get(k)) << k;
}

TEST(Config, CommentsBlankLinesAndErrors) {
  RunConfig c;
  c.merge("# comment\n\nalpha = 0.5  # trailing\n", "t.cfg");
  EXPECT_DOUBLE_EQ(c.plan.alpha, 0.5);
  try {
    c.merge("alpha = 0.1\nalhpa = 0.2\n", "t.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("t.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.merge("layers = two"), ConfigError);
  EXPECT_THROW(c.merge("just text"), ConfigError);
  EXPECT_THROW(c.merge("nli_finetune = perhaps"), ConfigError);
  EXPECT_THROW(c.merge_file(scratch("missing.cfg")), ConfigError);
}
