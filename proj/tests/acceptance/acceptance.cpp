// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset (e.g. `acceptance 1 3 10`).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <fmt/format.h>
#include <omp.h>
#include <spdlog/spdlog.h>

#include "cmlm/checkpoint.hpp"
#include "cmlm/cli.hpp"
#include "cmlm/evalkit.hpp"
#include "cmlm/synth.hpp"
#include "cmlm/trainer.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace cmlm;
namespace fs = std::filesystem;
using cmlm::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("cmlm_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. gradient suite

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t checks = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    auto ops = cmlm::testing::op_gradient_suite(seed);
    auto model = cmlm::testing::model_gradient_suite(seed, 2);
    ops.insert(ops.end(), model.begin(), model.end());
    for (const auto& r : ops) {
      ++checks;
      if (r.error > worst || !std::isfinite(r.error)) {
        worst = r.error;
        worst_name = fmt::format("{} (seed {})", r.name, seed);
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 120,
          fmt::format("{} checks over 100 seeds, worst relative error {:.2e} at {}, {:.1f} s", checks, worst, worst_name, secs)};
}

// ---------------------------------------------------------------------------
// 2. masking statistics

Outcome masking_statistics() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  bool exact = true;
  MaskStats stats;
  std::size_t positions = 0;
  while (positions < 100000) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(1, 24));
    const auto num = static_cast<std::size_t>(rng.uniform_int(1, 12));
    std::vector<TokenId> toks(len);
    for (auto& t : toks) t = static_cast<TokenId>(rng.uniform_int(Vocab::kNumReserved, 999));
    const auto m = mask_tokens(toks, num, 1000, rng, &stats);
    exact = exact && m.positions.size() == std::min(num, len);
    positions += m.positions.size();
  }
  const double n = static_cast<double>(positions);
  const double fm = stats.masked / n, fr = stats.random / n, fu = stats.unchanged / n;
  const bool split = std::abs(fm - 0.8) <= 0.01 && std::abs(fr - 0.1) <= 0.01 && std::abs(fu - 0.1) <= 0.01;

  std::vector<std::vector<TokenId>> doc(10001, std::vector<TokenId>{7, 8});
  const auto pairs = make_pairs(doc, 16, "en", rng);
  std::size_t swaps = 0;
  for (const auto& p : pairs) swaps += p.swapped;
  const double swap_rate = static_cast<double>(swaps) / static_cast<double>(pairs.size());
  const double secs = seconds_since(t0);
  return {exact && split && std::abs(swap_rate - 0.5) <= 0.02 && secs < 30,
          fmt::format("exact counts {}, split {:.4f}/{:.4f}/{:.4f} over {} positions, swap rate {:.4f} over {} pairs, {:.1f} s",
                      exact ? "yes" : "no", fm, fr, fu, positions, swap_rate, pairs.size(), secs)};
}

// ---------------------------------------------------------------------------
// 3. bitext loss oracles

Outcome bitext_oracles() {
  const auto t0 = Clock::now();
  auto value = [](const Tensor<double>& s, const Tensor<double>& t, double m) {
    Tape<double> tape(false);
    return bitext_loss(tape.constant(s), tape.constant(t), m).value().item();
  };
  const double equal = value(Tensor<double>::matrix({{1, 0}, {1, 0}}), Tensor<double>::matrix({{1, 0}, {1, 0}}), 0.0);
  const auto eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const double margin = value(eye, eye, 0.3);
  const bool hand = std::abs(equal - 1.3863) < 1e-4 && std::abs(equal - 2 * std::log(2.0)) < 1e-6 &&
                    std::abs(margin - 2 * std::log1p(std::exp(-0.7))) < 1e-6;

  Rng rng(3);
  std::size_t symmetric = 0, monotone = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto B = static_cast<std::size_t>(rng.uniform_int(2, 8));
    const auto d = static_cast<std::size_t>(rng.uniform_int(1, 6));
    auto s = random_tensor(rng, {B, d});
    auto t = random_tensor(rng, {B, d});
    const double m = rng.uniform() * 0.5;
    symmetric += std::abs(value(s, t, m) - value(t, s, m)) <= 1e-12;
    // Raise one diagonal phi by adding a component orthogonal to every other
    // row: extend both sides with a fresh axis used only by pair i.
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(B) - 1));
    Tensor<double> s2(Shape{B, d + 1}), t2(Shape{B, d + 1});
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t c = 0; c < d; ++c) s2.at(r, c) = s.at(r, c), t2.at(r, c) = t.at(r, c);
    s2.at(i, d) = 1.0;
    t2.at(i, d) = 0.5 + rng.uniform();
    monotone += value(s2, t2, m) < value(s, t, m);
  }
  const double secs = seconds_since(t0);
  return {hand && symmetric == 1000 && monotone == 1000 && secs < 30,
          fmt::format("2 ln 2 case {:.7f}, margin case {:.7f}; symmetric {}/1000, monotone {}/1000, {:.1f} s", equal,
                      margin, symmetric, monotone, secs)};
}

// ---------------------------------------------------------------------------
// Shared desk configuration for the training criteria.

EncoderConfig desk_encoder() {
  EncoderConfig c;  // d = 64, 2 layers, 4 heads, N = 15
  c.max_len = 16;
  return c;
}

TrainPlan desk_plan() {
  TrainPlan p;
  p.optimizer.learning_rate = 1e-2;
  p.optimizer.warmup_steps = 100;
  p.batch_size = 32;
  p.log_every = 500;
  return p;
}

// ---------------------------------------------------------------------------
// 4. conditioning efficacy

Outcome conditioning_efficacy() {
  const auto t0 = Clock::now();
  const SynthData synth = generate_synthetic(SynthConfig{});
  const Vocab vocab = build_training_vocab(synth.corpus, {}, {}, 512);
  EncoderConfig enc = desk_encoder();
  enc.vocab_size = vocab.size();
  enc.dropout = 0.0;
  // Every tenth document is held out for evaluation.
  std::vector<Document> train_docs, eval_docs;
  for (std::size_t i = 0; i < synth.corpus.size(); ++i) (i % 10 == 9 ? eval_docs : train_docs).push_back(synth.corpus[i]);
  Rng data_rng(99);
  const TrainData train = prepare_data(train_docs, {}, {}, vocab, enc, data_rng);
  const TrainData held = prepare_data(eval_docs, {}, {}, vocab, enc, data_rng);
  const std::size_t num_mask = default_mask_count(enc.max_len);

  double standard = 0, unconditioned = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    double acc[2];
    int slot = 0;
    for (auto variant : {CmlmVariant::standard, CmlmVariant::unconditioned}) {
      TrainPlan plan = desk_plan();
      plan.stage1_steps = 2000;
      plan.seed = seed;
      plan.variant = variant;
      TrainState state = TrainState::fresh(plan, enc, vocab);
      run_plan(plan, train, state);
      acc[slot++] = evaluate_cmlm(state.params, enc, held.pairs, variant, num_mask, 32, 20, 1000 + seed).accuracy;
    }
    standard += acc[0] / 3;
    unconditioned += acc[1] / 3;
    per_seed += fmt::format(" seed{} {:.3f}/{:.3f}", seed, acc[0], acc[1]);
    spdlog::info("conditioning seed {}: standard {:.3f}, unconditioned {:.3f}", seed, acc[0], acc[1]);
  }
  const double secs = seconds_since(t0);
  const double gap = standard - unconditioned;
  return {gap >= 0.20 && secs < 900,
          fmt::format("held-out masked accuracy standard {:.3f} vs unconditioned {:.3f} (gap {:.1f} points;{}), {:.0f} s",
                      standard, unconditioned, 100 * gap, per_seed, secs)};
}

// ---------------------------------------------------------------------------
// 5. multitask S3

Outcome multitask_s3() {
  const auto t0 = Clock::now();
  const SynthData synth = generate_synthetic(SynthConfig{});
  const Vocab vocab = build_training_vocab(synth.corpus, synth.bitext, {}, 512);
  EncoderConfig enc = desk_encoder();
  enc.vocab_size = vocab.size();
  Rng data_rng(99);
  const TrainData train = prepare_data(synth.corpus, synth.bitext, {}, vocab, enc, data_rng);
  const auto held_bitext = tokenize_bitext(synth.heldout_bitext, vocab, enc);
  std::vector<Document> eval_docs(synth.corpus.begin(), synth.corpus.begin() + 60);
  const TrainData held_pairs = prepare_data(eval_docs, {}, {}, vocab, enc, data_rng);

  TrainPlan plan = desk_plan();
  plan.strategy = Strategy::s3;
  plan.stage1_steps = 500;
  plan.stage2_steps = 1000;
  const std::size_t num_mask = default_mask_count(enc.max_len);
  auto combined = [&](const ParamStore<float>& params) {
    const auto c = evaluate_cmlm(params, enc, held_pairs.pairs, CmlmVariant::standard, num_mask, 32, 10, 7);
    const auto b = evaluate_bitext(params, enc, held_bitext, 32, plan.margin);
    return std::pair{c.loss + plan.alpha * b.loss, b};
  };
  TrainState state = TrainState::fresh(plan, enc, vocab);
  const auto [loss0, bitext0] = combined(state.params);
  run_plan(plan, train, state);
  const auto [loss1, bitext1] = combined(state.params);
  const double secs = seconds_since(t0);
  return {bitext1.accuracy >= 0.95 && std::isfinite(loss1) && loss1 < loss0 && secs < 1200,
          fmt::format("held-out in-batch retrieval {:.3f} -> {:.3f} at B=32; combined loss {:.3f} -> {:.3f}, {:.0f} s",
                      bitext0.accuracy, bitext1.accuracy, loss0, loss1, secs)};
}

// ---------------------------------------------------------------------------
// 6. identity projection

Outcome identity_projection() {
  const SynthData synth = generate_synthetic(SynthConfig{});
  const Vocab vocab = build_training_vocab(synth.corpus, {}, {}, 512);
  std::vector<std::vector<TokenId>> sentences;
  for (std::size_t i = 0; i < 16; ++i) {
    sentences.push_back(tokenize(synth.corpus[i * 7].sentences[0], vocab));
  }
  const SentenceBatch batch = make_sentence_batch(sentences);
  std::size_t compared = 0;
  bool ok = true;
  for (std::size_t n : {1, 5, 10, 15, 20}) {
    EncoderConfig enc = desk_encoder();
    enc.vocab_size = vocab.size();
    enc.projections = n;
    Rng rng(n);
    const auto params = init_params<float>(enc, rng);
    Tape<float> tape(false);
    Encoder<float> e(tape, params, enc);
    const auto v = e.sentence_vectors(batch);
    const auto proj = e.project(v);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      ok = ok && std::memcmp(&proj.value().at(b * n, 0), &v.value().at(b, 0), enc.hidden * sizeof(float)) == 0;
      ++compared;
    }
  }
  return {ok, fmt::format("vector 0 bitwise equal to the pooled vector in {} of {} examples over N in {{1,5,10,15,20}}",
                          ok ? compared : 0, compared)};
}

// ---------------------------------------------------------------------------
// 7/8. PCR on the rank-1 language-offset construction

struct OffsetData {
  EmbeddingSet set;
};

EmbeddingSet offset_construction() {
  Rng rng(77);
  const std::size_t n = 300, d = 32;
  const auto base = random_tensor(rng, {n, d});
  EmbeddingSet set;
  const std::vector<std::string> langs{"l0", "l1", "l2"};
  std::vector<Tensor<double>> offsets;
  for (std::size_t l = 0; l < langs.size(); ++l) offsets.push_back(random_tensor(rng, {d}, 4.0));
  for (std::size_t l = 0; l < langs.size(); ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = base.at(i, j) + offsets[l][j];
      set.add(langs[l], v, static_cast<std::uint32_t>(i));
    }
  }
  return set;
}

double mean_cross_retrieval(const EmbeddingSet& set) {
  double total = 0;
  std::size_t pairs = 0;
  for (const auto& a : set.languages()) {
    for (const auto& b : set.languages()) {
      if (a == b) continue;
      const auto q = set.filter(a), c = set.filter(b);
      total += retrieval_accuracy(q, c, gold_by_text_id(q, c));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

Outcome pcr_efficacy() {
  const auto t0 = Clock::now();
  const auto set = offset_construction();
  const double before = mean_cross_retrieval(set);
  const double mass_before = language_bias_histogram(set, set, 10).same_language_mass;
  const auto debiased = pcr_debias(set).set;
  const double after = mean_cross_retrieval(debiased);
  const double mass_after = language_bias_histogram(debiased, debiased, 10).same_language_mass;
  const double secs = seconds_since(t0);
  return {before < 0.5 && after >= 0.95 && mass_before > 0.9 && mass_after < 0.6 && secs < 60,
          fmt::format("cross-language retrieval {:.3f} -> {:.3f}; same-language mass {:.3f} -> {:.3f} (k=10), {:.1f} s",
                      before, after, mass_before, mass_after, secs)};
}

Outcome debiased_orthogonality() {
  const auto result = pcr_debias(offset_construction());
  double worst = 0;
  for (std::size_t r = 0; r < result.set.size(); ++r) {
    const auto& c = result.directions.at(result.set.language(r));
    double dot = 0;
    for (std::size_t j = 0; j < result.set.dim(); ++j) dot += result.set.row(r)[j] * c[j];
    worst = std::max(worst, std::abs(dot));
  }
  return {worst <= 1e-6, fmt::format("max |row . c_lang| = {:.2e} over {} rows", worst, result.set.size())};
}

// ---------------------------------------------------------------------------
// 9. checkpoint round trip and resume equivalence

Outcome checkpoint_resume() {
  omp_set_num_threads(1);
  SynthConfig sc;
  sc.documents = 100;
  sc.bitext_pairs = 200;
  const SynthData synth = generate_synthetic(sc);
  const Vocab vocab = build_training_vocab(synth.corpus, synth.bitext, {}, 512);
  EncoderConfig enc = desk_encoder();
  enc.vocab_size = vocab.size();
  Rng data_rng(5);
  const TrainData data = prepare_data(synth.corpus, synth.bitext, {}, vocab, enc, data_rng);
  TrainPlan plan = desk_plan();
  plan.strategy = Strategy::s3;
  plan.stage1_steps = 10;
  plan.stage2_steps = 10;
  plan.optimizer.warmup_steps = 5;

  TrainState full = TrainState::fresh(plan, enc, vocab);
  run_plan(plan, data, full);

  const auto ck1 = workdir() / "rt1.ckpt", ck2 = workdir() / "rt2.ckpt", part = workdir() / "part.ckpt";
  save_checkpoint(full.to_checkpoint(plan), ck1);
  save_checkpoint(load_checkpoint(ck1), ck2);
  const bool round_trip = slurp(ck1) == slurp(ck2);

  bool resume_equal = true;
  for (std::uint64_t k : {7, 10, 13}) {
    TrainState first = TrainState::fresh(plan, enc, vocab);
    run_plan(plan, data, first, {std::nullopt, part, k});
    TrainState resumed = TrainState::from_checkpoint(load_checkpoint(part, enc));
    run_plan(plan, data, resumed);
    for (std::size_t i = 0; i < full.params.size(); ++i) resume_equal = resume_equal && resumed.params[i] == full.params[i];
    resume_equal = resume_equal && resumed.rng.state() == full.rng.state();
  }
  omp_set_num_threads(omp_get_num_procs());
  return {round_trip && resume_equal,
          fmt::format("save/load/save byte-identical: {}; resume after 7, 10, 13 of 20 steps matches uninterrupted: {}",
                      round_trip ? "yes" : "no", resume_equal ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10. Spearman against the brute-force oracle

Outcome spearman_oracle() {
  Rng rng(10);
  double worst = 0;
  std::size_t done = 0;
  while (done < 1000) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 60));
    std::vector<double> a(n), b(n);
    const bool ties = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = ties ? static_cast<double>(rng.uniform_int(0, 5)) : rng.normal(0, 1);
      b[i] = ties ? static_cast<double>(rng.uniform_int(0, 5)) : rng.normal(0, 1);
    }
    auto constant = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; }); };
    if (constant(a) || constant(b)) continue;
    worst = std::max(worst, std::abs(spearman_correlation(a, b) - cmlm::testing::brute_spearman(a, b)));
    ++done;
  }
  return {worst <= 1e-12, fmt::format("max deviation {:.2e} over 1000 random inputs (half with ties)", worst)};
}

// ---------------------------------------------------------------------------
// 11. ablation harness

Outcome ablation_harness() {
  const auto t0 = Clock::now();
  const auto cfg = workdir() / "ablate.cfg";
  std::ofstream(cfg) << "max_len = 16\nlearning_rate = 0.01\nwarmup_steps = 20\nlog_every = 100\n";
  std::ostringstream out, err;
  const int code = dispatch({"ablate-n", "--config", cfg.string(), "--values", "1,5,10,15,20", "--variants",
                             "standard,skip,proj-mean", "--steps", "100", "--out", (workdir() / "ablate.md").string()},
                            out, err);
  std::istringstream lines(out.str());
  std::string line;
  std::vector<std::string> table;
  while (std::getline(lines, line)) table.push_back(line);
  bool well_formed = code == 0 && table.size() == 17 && table[0] == "| N | variant | masked_acc | probe_acc |";
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 2; well_formed && i < table.size(); ++i) {
    std::vector<std::string> cells;
    std::istringstream row(table[i]);
    std::string cell;
    while (std::getline(row, cell, '|')) {
      const auto b = cell.find_first_not_of(' '), e = cell.find_last_not_of(' ');
      if (b != std::string::npos) cells.push_back(cell.substr(b, e - b + 1));
    }
    if (cells.size() != 4) {
      well_formed = false;
      break;
    }
    seen.insert({cells[0], cells[1]});
    for (int c : {2, 3}) {
      const double v = std::stod(cells[static_cast<std::size_t>(c)]);
      well_formed = well_formed && v >= 0 && v <= 1;
    }
  }
  well_formed = well_formed && seen.size() == 15;
  return {well_formed, fmt::format("exit {}, {} table rows, {} distinct (N, variant) cells, {:.0f} s{}", code,
                                   table.size() >= 2 ? table.size() - 2 : 0, seen.size(), seconds_since(t0),
                                   err.str().empty() ? "" : "; stderr: " + err.str())};
}

// ---------------------------------------------------------------------------
// 12. end-to-end determinism of `train`

Outcome train_determinism() {
  const auto t0 = Clock::now();
  const auto dir = workdir() / "det";
  const auto cfg = workdir() / "det.cfg";
  std::ofstream(cfg) << "synth.documents = 60\nsynth.bitext_pairs = 100\nmax_len = 16\nstage1_steps = 15\n"
                        "stage2_steps = 15\nlog_every = 5\nwarmup_steps = 5\n";
  std::ostringstream sink, err;
  bool ok = dispatch({"gen-synth", "--config", cfg.string(), "--out", (dir / "data").string()}, sink, err) == 0;
  for (const char* run : {"a", "b"}) {
    ok = ok && dispatch({"train", "--config", cfg.string(), "--data", (dir / "data").string(), "--out", (dir / run).string(),
                         "--strategy", "s3", "--seed", "7"},
                        sink, err) == 0;
  }
  const bool metrics = ok && slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl") &&
                       !slurp(dir / "a" / "metrics.jsonl").empty();
  const bool ckpt = ok && slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt");
  return {metrics && ckpt, fmt::format("commands ok: {}; metric logs identical: {}; checkpoints identical: {}, {:.0f} s",
                                       ok ? "yes" : "no", metrics ? "yes" : "no", ckpt ? "yes" : "no", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  spdlog::set_level(spdlog::level::warn);
  configure_logging();
  if (!std::getenv("CMLM_LOG")) spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"masking statistics", masking_statistics},
      {"bitext loss oracles", bitext_oracles},
      {"conditioning efficacy", conditioning_efficacy},
      {"multitask S3", multitask_s3},
      {"identity projection", identity_projection},
      {"PCR efficacy", pcr_efficacy},
      {"debiased orthogonality", debiased_orthogonality},
      {"checkpoint round trip and resume", checkpoint_resume},
      {"Spearman oracle", spearman_oracle},
      {"ablation harness", ablation_harness},
      {"train determinism", train_determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << fmt::format("[{}] {:>2}. {}: {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail)
              << std::endl;
  }
  fs::remove_all(workdir());
  return failures == 0 ? 0 : 1;
}
