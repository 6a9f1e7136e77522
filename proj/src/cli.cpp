#include "cmlm/cli.hpp"

#include <cstdlib>
#include <deque>
#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "cmlm/config.hpp"
#include "cmlm/evalkit.hpp"
#include "cmlm/synth.hpp"
#include "cmlm/trainer.hpp"

namespace cmlm {

void configure_logging() {
  const char* env = std::getenv("CMLM_LOG");
  const std::string level = env ? env : "info";
  if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("CMLM_LOG='{}' not recognised; using info", level);
  }
}

namespace {

namespace fs = std::filesystem;

// Flag -> config key bindings collected while building a subcommand.
class Overrides {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    values_.emplace_back();
    bound_.push_back({app->add_option(flag, values_.back(), help), key});
  }
  void apply(RunConfig& cfg) const {
    for (const auto& [opt, key] : bound_) {
      if (opt->count()) cfg.set(key, opt->as<std::string>());
    }
  }

 private:
  std::deque<std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> bound_;
};

void add_model_overrides(CLI::App* app, Overrides& o) {
  o.add(app, "--strategy", "strategy", "Training schedule: cmlm, s1, s2 or s3");
  o.add(app, "--alpha", "alpha", "Bitext loss weight in joint stages");
  o.add(app, "--margin", "margin", "Additive margin for the bitext loss");
  o.add(app, "--n-proj", "projections", "Number of projections N (including the identity)");
  o.add(app, "--pooling", "pooling", "Sentence pooling: mean, max or cls");
  o.add(app, "--mask-count", "mask_count", "Masked tokens per s2 (0 = 31.25% of max_len)");
  o.add(app, "--variant", "variant", "CMLM variant: standard, skip or unconditioned");
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError("cannot write '" + p.string() + "'");
  out << text;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

EmbeddingSet embed_tagged(const Checkpoint& ck, const std::vector<TaggedSentence>& rows, Representation rep) {
  std::vector<std::string> texts;
  for (const auto& r : rows) texts.push_back(r.text);
  const Tensor<double> v = embed_sentences<float>(ck.params, ck.config, ck.vocab, texts, rep).cast<double>();
  std::vector<std::string> langs;
  std::vector<std::uint32_t> ids;
  std::vector<std::int32_t> labels;
  for (const auto& r : rows) {
    langs.push_back(r.language);
    ids.push_back(r.text_id);
    labels.push_back(r.label);
  }
  return EmbeddingSet::from_rows(v, langs, ids, labels);
}

std::string format_histogram(const BiasHistogram& h) {
  std::string out = fmt::format("{:<8}", "query");
  for (const auto& l : h.languages) out += fmt::format(" {:>8}", l);
  out += "\n";
  for (const auto& [lang, row] : h.by_query_language) {
    out += fmt::format("{:<8}", lang);
    for (double x : row) out += fmt::format(" {:>8.4f}", x);
    out += "\n";
  }
  out += fmt::format("{:<8}", "all");
  for (double x : h.overall) out += fmt::format(" {:>8.4f}", x);
  out += fmt::format("\nsame-language mass {:.4f}\n", h.same_language_mass);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct GenSynth {
  std::string config, out;
  Overrides o;
  void run(std::ostream& os) const {
    RunConfig cfg;
    if (!config.empty()) cfg.merge_file(config);
    o.apply(cfg);
    const SynthData data = generate_synthetic(cfg.synth);
    write_synthetic(out, data);
    os << fmt::format("wrote {} documents, {} bitext pairs, {} NLI examples to {}\n", data.corpus.size(),
                      data.bitext.size(), data.nli.size(), out);
  }
};

struct Train {
  std::string config, out, data, init;
  bool resume = false;
  std::uint64_t stop_at = 0;
  Overrides o;

  void run(std::ostream& os) const {
    RunConfig cfg;
    if (!config.empty()) cfg.merge_file(config);
    if (!data.empty()) {
      cfg.corpus = fs::path(data) / "corpus.txt";
      if (fs::exists(fs::path(data) / "bitext.tsv")) cfg.bitext = fs::path(data) / "bitext.tsv";
      if (fs::exists(fs::path(data) / "nli.tsv")) cfg.nli = fs::path(data) / "nli.tsv";
    }
    o.apply(cfg);
    cfg.plan.validate();
    if (cfg.corpus.empty()) throw UsageError("train needs a corpus (config key 'corpus' or --data)");

    const auto docs = read_corpus(cfg.corpus);
    const auto bitext = cfg.bitext.empty() ? std::vector<BitextPair>{} : read_bitext(cfg.bitext);
    const auto nli = cfg.nli.empty() ? std::vector<NliExample>{} : read_nli(cfg.nli);

    const fs::path dir(out);
    const fs::path ckpt = dir / "model.ckpt";
    const bool resuming = resume && fs::exists(ckpt);
    const fs::path source = resuming ? ckpt : fs::path(init);
    std::optional<Checkpoint> prior;
    if (!source.empty()) prior = load_checkpoint(source);
    const Vocab vocab = prior ? prior->vocab : build_training_vocab(docs, bitext, nli, cfg.vocab_target);
    EncoderConfig enc = cfg.encoder;
    enc.vocab_size = vocab.size();
    if (prior) prior = load_checkpoint(source, enc);

    Rng data_rng(cfg.plan.seed ^ 0x9e3779b97f4a7c15ULL);
    const TrainData td = prepare_data(docs, bitext, nli, vocab, enc, data_rng);

    TrainState state = resuming ? TrainState::from_checkpoint(*prior)
                       : prior  ? TrainState::from_params(cfg.plan, enc, vocab, prior->params)
                                : TrainState::fresh(cfg.plan, enc, vocab);
    fs::create_directories(dir);
    write_text(dir / "run.cfg", cfg.serialize());
    RunOptions options;
    options.metrics = dir / "metrics.jsonl";
    options.checkpoint = ckpt;
    if (stop_at) options.stop_at = stop_at;
    const auto history = run_plan(cfg.plan, td, state, options);
    os << fmt::format("trained to step {} ({} pairs, {} bitext, {} NLI, vocab {})\n", state.step, td.pairs.size(),
                      td.bitext.size(), td.nli.size(), vocab.size());
    if (!history.empty()) os << "last: " << history.back().to_json() << "\n";
    os << "checkpoint: " << ckpt.string() << "\n";
  }
};

struct Embed {
  std::string model, in, out, representation = "pooled";
  void run(std::ostream& os) const {
    const Checkpoint ck = load_checkpoint(model);
    const auto rows = read_tagged(in);
    if (rows.empty()) throw IntegrityError("'" + in + "' has no sentences");
    const EmbeddingSet set = embed_tagged(ck, rows, parse_representation(representation));
    write_embeddings(out, set);
    os << fmt::format("wrote {} x {} embeddings to {}\n", set.size(), set.dim(), out);
  }
};

struct EvalRetrieval {
  std::string in, source, target;
  void run(std::ostream& os) const {
    const EmbeddingSet set = read_embeddings(in);
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!source.empty() || !target.empty()) {
      if (source.empty() || target.empty()) throw UsageError("--source and --target go together");
      pairs.emplace_back(source, target);
    } else {
      for (const auto& a : set.languages()) {
        for (const auto& b : set.languages()) {
          if (a != b) pairs.emplace_back(a, b);
        }
      }
      if (pairs.empty()) throw ContractError("retrieval needs at least two languages");
    }
    double total = 0;
    for (const auto& [a, b] : pairs) {
      const auto q = set.filter(a);
      const auto c = set.filter(b);
      const auto gold = gold_by_text_id(q, c);
      const double acc = retrieval_accuracy(q, c, gold);
      total += acc;
      os << fmt::format("{} -> {}: {:.4f}\n", a, b, acc);
    }
    if (pairs.size() > 1) os << fmt::format("mean: {:.4f}\n", total / static_cast<double>(pairs.size()));
  }
};

struct Probe {
  std::string train, test;
  std::size_t classes = 0;
  void run(std::ostream& os) const {
    const EmbeddingSet tr = read_embeddings(train);
    const EmbeddingSet te = read_embeddings(test);
    std::size_t c = classes;
    if (c == 0) {
      for (auto y : tr.label) c = std::max<std::size_t>(c, static_cast<std::size_t>(std::max(y, 0)) + 1);
    }
    const auto r = linear_probe(tr, te, c);
    os << fmt::format("train accuracy {:.4f}\ntest accuracy {:.4f}\n", r.train_accuracy, r.test_accuracy);
  }
};

struct Sts {
  std::string model, in, representation = "pooled";
  void run(std::ostream& os) const {
    const Checkpoint ck = load_checkpoint(model);
    const auto pairs = read_sts(in);
    std::vector<std::string> first, second;
    std::vector<double> gold;
    for (const auto& p : pairs) {
      first.push_back(p.first);
      second.push_back(p.second);
      gold.push_back(p.score);
    }
    const auto rep = parse_representation(representation);
    const auto a = embed_sentences<float>(ck.params, ck.config, ck.vocab, first, rep).cast<double>();
    const auto b = embed_sentences<float>(ck.params, ck.config, ck.vocab, second, rep).cast<double>();
    const std::size_t d = a.cols();
    std::vector<double> pred;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      pred.push_back(cosine_similarity(a.data().subspan(i * d, d), b.data().subspan(i * d, d)));
    }
    os << fmt::format("spearman {:.4f} over {} pairs\n", spearman_correlation(pred, gold), pairs.size());
  }
};

struct Pcr {
  std::string in, out;
  void run(std::ostream& os) const {
    const auto result = pcr_debias(read_embeddings(in));
    write_embeddings(out, result.set);
    os << fmt::format("removed one principal direction from each of {} languages; wrote {}\n",
                      result.directions.size(), out);
  }
};

struct BiasHist {
  std::string in, json;
  std::size_t k = 10;
  void run(std::ostream& os) const {
    const EmbeddingSet set = read_embeddings(in);
    const auto h = language_bias_histogram(set, set, k);
    os << format_histogram(h);
    if (!json.empty()) {
      std::string text = "{\"k\":" + std::to_string(k) + ",\"languages\":[";
      for (std::size_t i = 0; i < h.languages.size(); ++i) text += (i ? ",\"" : "\"") + h.languages[i] + "\"";
      text += "],\"overall\":[";
      for (std::size_t i = 0; i < h.overall.size(); ++i) text += fmt::format("{}{}", i ? "," : "", h.overall[i]);
      text += fmt::format("],\"same_language_mass\":{}}}\n", h.same_language_mass);
      write_text(json, text);
    }
  }
};

struct Plot2d {
  std::string in, out;
  void run(std::ostream& os) const {
    const EmbeddingSet set = read_embeddings(in);
    export_2d(set, out + ".csv", out + ".svg");
    os << fmt::format("wrote {0}.csv and {0}.svg\n", out);
  }
};

struct AblateN {
  std::string config, values = "1,5,10,15,20", variants = "standard,skip,proj-mean", out;
  std::uint64_t steps = 0;
  Overrides o;

  void run(std::ostream& os) const {
    RunConfig cfg;
    if (!config.empty()) cfg.merge_file(config);
    o.apply(cfg);
    if (steps) cfg.plan.stage1_steps = steps;
    cfg.plan.strategy = Strategy::cmlm_only;
    cfg.plan.stage2_steps = 0;
    cfg.plan.nli_finetune = false;

    const auto ns = parse_list(values);
    std::vector<std::string> wanted;
    {
      std::stringstream ss(variants);
      std::string v;
      while (std::getline(ss, v, ',')) {
        if (v != "standard" && v != "skip" && v != "proj-mean") throw UsageError("unknown ablation variant '" + v + "'");
        wanted.push_back(v);
      }
    }
    const SynthData data = generate_synthetic(cfg.synth);
    const Vocab vocab = build_training_vocab(data.corpus, {}, {}, cfg.vocab_target);
    const std::size_t classes = cfg.synth.topics;

    std::string table = "| N | variant | masked_acc | probe_acc |\n|---|---|---|---|\n";
    for (std::size_t n : ns) {
      EncoderConfig enc = cfg.encoder;
      enc.vocab_size = vocab.size();
      enc.projections = n;
      Rng data_rng(cfg.plan.seed ^ 0x9e3779b97f4a7c15ULL);
      const TrainData td = prepare_data(data.corpus, {}, {}, vocab, enc, data_rng);
      const std::size_t num_mask = cfg.plan.num_mask ? cfg.plan.num_mask : default_mask_count(enc.max_len);

      std::optional<ParamStore<float>> standard_params;
      for (const auto& v : wanted) {
        const CmlmVariant variant = v == "skip" ? CmlmVariant::skip : CmlmVariant::standard;
        ParamStore<float> params;
        if (variant == CmlmVariant::standard && standard_params) {
          params = *standard_params;
        } else {
          TrainPlan plan = cfg.plan;
          plan.variant = variant;
          TrainState state = TrainState::fresh(plan, enc, vocab);
          run_plan(plan, td, state);
          params = state.params;
          if (variant == CmlmVariant::standard) standard_params = params;
        }
        const auto eval = evaluate_cmlm(params, enc, td.pairs, variant, num_mask, cfg.plan.batch_size, 10, cfg.plan.seed);
        Checkpoint ck;
        ck.config = enc;
        ck.vocab = vocab;
        ck.params = params;
        const auto rep = v == "proj-mean" ? Representation::proj_mean : Representation::pooled;
        const auto probe = linear_probe(embed_tagged(ck, data.probe_train, rep), embed_tagged(ck, data.probe_test, rep), classes);
        const std::string row = fmt::format("| {} | {} | {:.4f} | {:.4f} |\n", n, v, eval.accuracy, probe.test_accuracy);
        table += row;
        spdlog::info("ablation N={} {}: masked {:.4f} probe {:.4f}", n, v, eval.accuracy, probe.test_accuracy);
      }
    }
    os << table;
    if (!out.empty()) write_text(out, table);
  }
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sentence embeddings with conditional masked language modeling", "cmlm"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenSynth gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Generate a synthetic multilingual corpus, bitext and NLI data");
  gen_cmd->add_option("--config", gen.config, "Config file (synth.* keys)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen.o.add(gen_cmd, "--seed", "synth.seed", "Generator seed");
  gen.o.add(gen_cmd, "--languages", "synth.languages", "Number of synthetic languages (1-7)");

  Train train;
  auto* train_cmd = app.add_subcommand("train", "Train an encoder according to a plan");
  train_cmd->add_option("--config", train.config, "Config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "Run directory (model.ckpt, metrics.jsonl, run.cfg)")->required();
  train_cmd->add_option("--data", train.data, "Directory with corpus.txt and optional bitext.tsv, nli.tsv");
  train_cmd->add_option("--init", train.init, "Warm-start weights from this checkpoint");
  train_cmd->add_flag("--resume", train.resume, "Continue from <out>/model.ckpt when present");
  train_cmd->add_option("--stop-at", train.stop_at, "Stop after this global step");
  train.o.add(train_cmd, "--seed", "seed", "Training seed");
  add_model_overrides(train_cmd, train.o);

  Embed embed;
  auto* embed_cmd = app.add_subcommand("embed", "Embed tagged sentences into an embedding file");
  embed_cmd->add_option("--model", embed.model, "Checkpoint")->required();
  embed_cmd->add_option("--in", embed.in, "Sentences: lang<TAB>text[<TAB>label] per line")->required();
  embed_cmd->add_option("--out", embed.out, "Embedding file")->required();
  embed_cmd->add_option("--representation", embed.representation, "pooled or proj-mean")
      ->check(CLI::IsMember({"pooled", "proj-mean"}));

  EvalRetrieval retrieval;
  auto* retrieval_cmd = app.add_subcommand("eval-retrieval", "Cross-language nearest-neighbour retrieval accuracy");
  retrieval_cmd->add_option("--in", retrieval.in, "Embedding file")->required();
  retrieval_cmd->add_option("--source", retrieval.source, "Query language");
  retrieval_cmd->add_option("--target", retrieval.target, "Candidate language");

  Probe probe;
  auto* probe_cmd = app.add_subcommand("probe", "Logistic-regression probe on frozen embeddings");
  probe_cmd->add_option("--train", probe.train, "Labelled training embeddings")->required();
  probe_cmd->add_option("--test", probe.test, "Labelled test embeddings")->required();
  probe_cmd->add_option("--classes", probe.classes, "Number of classes (default: largest train label + 1)");

  Sts sts;
  auto* sts_cmd = app.add_subcommand("sts", "Spearman correlation of cosine scores with gold similarity");
  sts_cmd->add_option("--model", sts.model, "Checkpoint")->required();
  sts_cmd->add_option("--in", sts.in, "sentence1<TAB>sentence2<TAB>score file")->required();
  sts_cmd->add_option("--representation", sts.representation, "pooled or proj-mean")
      ->check(CLI::IsMember({"pooled", "proj-mean"}));

  Pcr pcr;
  auto* pcr_cmd = app.add_subcommand("pcr", "Remove each language's first principal direction");
  pcr_cmd->add_option("--in", pcr.in, "Embedding file")->required();
  pcr_cmd->add_option("--out", pcr.out, "Debiased embedding file")->required();

  BiasHist bias;
  auto* bias_cmd = app.add_subcommand("bias-hist", "Language distribution of each row's nearest neighbours");
  bias_cmd->add_option("--in", bias.in, "Embedding file (queries and pool)")->required();
  bias_cmd->add_option("--k", bias.k, "Neighbours per query")->check(CLI::PositiveNumber);
  bias_cmd->add_option("--json", bias.json, "Also write the histogram as JSON");

  Plot2d plot;
  auto* plot_cmd = app.add_subcommand("plot2d", "PCA projection to 2D as CSV and SVG");
  plot_cmd->add_option("--in", plot.in, "Embedding file")->required();
  plot_cmd->add_option("--out", plot.out, "Output prefix (.csv and .svg are appended)")->required();

  AblateN ablate;
  auto* ablate_cmd = app.add_subcommand("ablate-n", "Sweep the projection count N on the synthetic copy task");
  ablate_cmd->add_option("--config", ablate.config, "Config file")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--values", ablate.values, "Comma-separated N values");
  ablate_cmd->add_option("--variants", ablate.variants, "Comma-separated: standard, skip, proj-mean");
  ablate_cmd->add_option("--steps", ablate.steps, "Training steps per run (overrides stage1_steps)");
  ablate_cmd->add_option("--out", ablate.out, "Also write the markdown table here");
  ablate.o.add(ablate_cmd, "--seed", "seed", "Training seed");
  add_model_overrides(ablate_cmd, ablate.o);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) gen.run(out);
    if (train_cmd->parsed()) train.run(out);
    if (embed_cmd->parsed()) embed.run(out);
    if (retrieval_cmd->parsed()) retrieval.run(out);
    if (probe_cmd->parsed()) probe.run(out);
    if (sts_cmd->parsed()) sts.run(out);
    if (pcr_cmd->parsed()) pcr.run(out);
    if (bias_cmd->parsed()) bias.run(out);
    if (plot_cmd->parsed()) plot.run(out);
    if (ablate_cmd->parsed()) ablate.run(out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace cmlm
