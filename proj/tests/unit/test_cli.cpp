#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cmlm/cli.hpp"
#include "cmlm/evalkit.hpp"

using namespace cmlm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cmlm_cli_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// A config that trains in well under a second on small synthetic data.
std::string small_cfg() {
  static const fs::path cfg = [] {
    const auto p = scratch("small.cfg");
    std::ofstream(p) << "synth.languages = 2\nsynth.documents = 20\nsynth.bitext_pairs = 40\n"
                        "synth.heldout_pairs = 8\nsynth.parallel_sentences = 20\n"
                        "synth.probe_sentences = 40\nsynth.nli_examples = 20\nsynth.sts_pairs = 20\n"
                        "layers = 1\nhidden = 16\nff = 32\nheads = 2\nmax_len = 12\nprojections = 3\n"
                        "batch_size = 8\nstage1_steps = 3\nlog_every = 1\nwarmup_steps = 1\n";
    return p;
  }();
  return cfg.string();
}

const fs::path& prepared() {
  static const fs::path dir = [] {
    const auto d = scratch("data");
    EXPECT_EQ(cli({"gen-synth", "--config", small_cfg(), "--out", d.string()}).code, 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, HelpOnEverySubcommand) {
  const std::vector<std::pair<std::string, std::string>> cmds{
      {"gen-synth", "--seed"},  {"train", "--strategy"}, {"embed", "--representation"}, {"eval-retrieval", "--in"},
      {"probe", "--train"},     {"sts", "--model"},      {"pcr", "--out"},              {"bias-hist", "--k"},
      {"plot2d", "--out"},      {"ablate-n", "--values"}};
  for (const auto& [cmd, flag] : cmds) {
    auto r = cli({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find(flag), std::string::npos) << cmd << " help lacks " << flag;
  }
  auto train = cli({"train", "--help"});
  for (const char* f : {"--config", "--seed", "--out", "--alpha", "--margin", "--n-proj", "--pooling", "--mask-count",
                        "--variant"}) {
    EXPECT_NE(train.out.find(f), std::string::npos) << f;
  }
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
  auto unknown = cli({"frobnicate"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_FALSE(unknown.err.empty());
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"pcr", "--in", "x", "--out", "y", "--bogus"}).code, 1);
  EXPECT_EQ(cli({"pcr", "--in", "x"}).code, 1);
  EXPECT_EQ(cli({"embed", "--model", "m", "--in", "i", "--out", "o", "--representation", "cls"}).code, 1);
  EXPECT_EQ(cli({"train", "--out", scratch("bad").string(), "--data", prepared().string(), "--alpha", "x"}).code, 1);
  EXPECT_EQ(cli({"ablate-n", "--values", "1,zero"}).code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
  auto r = cli({"pcr", "--in", scratch("nope.emb").string(), "--out", scratch("x.emb").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.emb"), std::string::npos);
  std::ofstream(scratch("garbage.emb")) << "garbage";
  EXPECT_EQ(cli({"bias-hist", "--in", scratch("garbage.emb").string()}).code, 2);
}

TEST(Cli, GenSynthIsIdempotent) {
  const auto again = scratch("data2");
  ASSERT_EQ(cli({"gen-synth", "--config", small_cfg(), "--out", again.string()}).code, 0);
  for (const auto& entry : fs::directory_iterator(prepared())) {
    EXPECT_EQ(slurp(entry.path()), slurp(again / entry.path().filename())) << entry.path();
  }
}

TEST(Cli, TrainTwiceGivesIdenticalOutputs) {
  const auto cfg = small_cfg();
  prepared();
  for (const char* run : {"run1", "run2"}) {
    auto r = cli({"train", "--config", cfg, "--data", prepared().string(), "--out", scratch(run).string(), "--seed", "7",
                  "--strategy", "s3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(scratch("run1") / "model.ckpt"), slurp(scratch("run2") / "model.ckpt"));
  EXPECT_EQ(slurp(scratch("run1") / "metrics.jsonl"), slurp(scratch("run2") / "metrics.jsonl"));
  EXPECT_NE(slurp(scratch("run1") / "run.cfg").find("seed = 7"), std::string::npos);
}

TEST(Cli, EmbedPcrBiasHistPipeline) {
  const auto cfg = small_cfg();
  ASSERT_EQ(cli({"train", "--config", cfg, "--data", prepared().string(), "--out", scratch("pipe").string()}).code, 0);
  const auto model = (scratch("pipe") / "model.ckpt").string();
  const auto emb = scratch("par.emb").string(), deb = scratch("deb.emb").string();
  ASSERT_EQ(cli({"embed", "--model", model, "--in", (prepared() / "parallel.txt").string(), "--out", emb}).code, 0);
  auto ret = cli({"eval-retrieval", "--in", emb});
  EXPECT_EQ(ret.code, 0);
  EXPECT_NE(ret.out.find("->"), std::string::npos);
  ASSERT_EQ(cli({"pcr", "--in", emb, "--out", deb}).code, 0);
  const auto before = language_bias_histogram(read_embeddings(emb), read_embeddings(emb), 5).same_language_mass;
  const auto after = language_bias_histogram(read_embeddings(deb), read_embeddings(deb), 5).same_language_mass;
  EXPECT_LE(after, before);
  auto hist = cli({"bias-hist", "--in", deb, "--k", "5", "--json", scratch("h.json").string()});
  EXPECT_EQ(hist.code, 0);
  EXPECT_NE(hist.out.find("same-language mass"), std::string::npos);
  EXPECT_NE(slurp(scratch("h.json")).find("\"k\":5"), std::string::npos);
  ASSERT_EQ(cli({"plot2d", "--in", emb, "--out", scratch("plot").string()}).code, 0);
  EXPECT_TRUE(fs::exists(scratch("plot.svg")));

  const auto tr = scratch("tr.emb").string(), te = scratch("te.emb").string();
  ASSERT_EQ(cli({"embed", "--model", model, "--in", (prepared() / "probe_train.txt").string(), "--out", tr}).code, 0);
  ASSERT_EQ(cli({"embed", "--model", model, "--in", (prepared() / "probe_test.txt").string(), "--out", te}).code, 0);
  auto probe = cli({"probe", "--train", tr, "--test", te});
  EXPECT_EQ(probe.code, 0);
  EXPECT_NE(probe.out.find("test accuracy"), std::string::npos);
  auto sts = cli({"sts", "--model", model, "--in", (prepared() / "sts.tsv").string()});
  EXPECT_EQ(sts.code, 0) << sts.err;
  EXPECT_NE(sts.out.find("spearman"), std::string::npos);
  // Same inputs, same bytes.
  ASSERT_EQ(cli({"pcr", "--in", emb, "--out", scratch("deb2.emb").string()}).code, 0);
  EXPECT_EQ(slurp(deb), slurp(scratch("deb2.emb")));
}

TEST(Cli, AblationEmitsOneRowPerNAndVariant) {
  auto r = cli({"ablate-n", "--config", small_cfg(), "--values", "1,5,10,15,20", "--steps", "2",
                "--out", scratch("ablate.md").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("| ", 0) == 0 && line.find("variant") == std::string::npos) ++rows;
  }
  EXPECT_EQ(rows, 15u);
  EXPECT_EQ(slurp(scratch("ablate.md")), r.out);
}
