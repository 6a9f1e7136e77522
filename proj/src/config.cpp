#include "cmlm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

namespace cmlm {

namespace {

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  U value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + key + "': cannot parse '" + text + "' as a number");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + text + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

// Accessor helpers bind a key to a member reached through `access`.
template <typename U, typename Access>
Field num(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return fmt::format("{}", access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& k, const std::string& v) { access(c) = parse_number<U>(k, v); }};
}

template <typename Access>
Field flag(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [access](RunConfig& c, const std::string& k, const std::string& v) { access(c) = parse_bool(k, v); }};
}

template <typename Access>
Field path(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).string(); },
          [access](RunConfig& c, const std::string&, const std::string& v) { access(c) = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = RunConfig;
    std::vector<Field> f;
    // Encoder.
    f.push_back(num<std::size_t>("layers", [](C& c) -> auto& { return c.encoder.layers; }));
    f.push_back(num<std::size_t>("heads", [](C& c) -> auto& { return c.encoder.heads; }));
    f.push_back(num<std::size_t>("hidden", [](C& c) -> auto& { return c.encoder.hidden; }));
    f.push_back(num<std::size_t>("ff", [](C& c) -> auto& { return c.encoder.ff; }));
    f.push_back(num<std::size_t>("max_len", [](C& c) -> auto& { return c.encoder.max_len; }));
    f.push_back(num<std::size_t>("projections", [](C& c) -> auto& { return c.encoder.projections; }));
    f.push_back({"pooling", [](const C& c) { return to_string(c.encoder.pooling); },
                 [](C& c, const std::string&, const std::string& v) { c.encoder.pooling = parse_pooling(v); }});
    f.push_back(num<double>("dropout", [](C& c) -> auto& { return c.encoder.dropout; }));
    f.push_back(num<std::size_t>("vocab_target", [](C& c) -> auto& { return c.vocab_target; }));
    // Plan.
    f.push_back({"strategy", [](const C& c) { return to_string(c.plan.strategy); },
                 [](C& c, const std::string&, const std::string& v) { c.plan.strategy = parse_strategy(v); }});
    f.push_back(num<std::uint64_t>("stage1_steps", [](C& c) -> auto& { return c.plan.stage1_steps; }));
    f.push_back(num<std::uint64_t>("stage2_steps", [](C& c) -> auto& { return c.plan.stage2_steps; }));
    f.push_back(num<double>("alpha", [](C& c) -> auto& { return c.plan.alpha; }));
    f.push_back(num<double>("margin", [](C& c) -> auto& { return c.plan.margin; }));
    f.push_back({"optimizer", [](const C& c) { return to_string(c.plan.optimizer.kind); },
                 [](C& c, const std::string&, const std::string& v) { c.plan.optimizer.kind = parse_optimizer_kind(v); }});
    f.push_back(num<double>("learning_rate", [](C& c) -> auto& { return c.plan.optimizer.learning_rate; }));
    f.push_back(num<double>("beta1", [](C& c) -> auto& { return c.plan.optimizer.beta1; }));
    f.push_back(num<double>("beta2", [](C& c) -> auto& { return c.plan.optimizer.beta2; }));
    f.push_back(num<double>("epsilon", [](C& c) -> auto& { return c.plan.optimizer.epsilon; }));
    f.push_back(num<double>("weight_decay", [](C& c) -> auto& { return c.plan.optimizer.weight_decay; }));
    f.push_back(num<std::uint64_t>("warmup_steps", [](C& c) -> auto& { return c.plan.optimizer.warmup_steps; }));
    f.push_back(num<std::size_t>("batch_size", [](C& c) -> auto& { return c.plan.batch_size; }));
    f.push_back(num<std::size_t>("mask_count", [](C& c) -> auto& { return c.plan.num_mask; }));
    f.push_back(num<std::uint64_t>("seed", [](C& c) -> auto& { return c.plan.seed; }));
    f.push_back({"variant", [](const C& c) { return to_string(c.plan.variant); },
                 [](C& c, const std::string&, const std::string& v) { c.plan.variant = parse_variant(v); }});
    f.push_back(flag("nli_finetune", [](C& c) -> auto& { return c.plan.nli_finetune; }));
    f.push_back(num<std::uint64_t>("nli_steps", [](C& c) -> auto& { return c.plan.nli_steps; }));
    f.push_back(num<std::uint64_t>("log_every", [](C& c) -> auto& { return c.plan.log_every; }));
    f.push_back(num<std::uint64_t>("checkpoint_every", [](C& c) -> auto& { return c.plan.checkpoint_every; }));
    // Data.
    f.push_back(path("corpus", [](C& c) -> auto& { return c.corpus; }));
    f.push_back(path("bitext", [](C& c) -> auto& { return c.bitext; }));
    f.push_back(path("nli", [](C& c) -> auto& { return c.nli; }));
    // Synthetic generator.
    f.push_back(num<std::size_t>("synth.languages", [](C& c) -> auto& { return c.synth.languages; }));
    f.push_back(num<std::size_t>("synth.base_words", [](C& c) -> auto& { return c.synth.base_words; }));
    f.push_back(num<std::size_t>("synth.topics", [](C& c) -> auto& { return c.synth.topics; }));
    f.push_back(num<std::size_t>("synth.documents", [](C& c) -> auto& { return c.synth.documents; }));
    f.push_back(num<std::size_t>("synth.sentences_per_doc", [](C& c) -> auto& { return c.synth.sentences_per_doc; }));
    f.push_back(num<std::size_t>("synth.min_words", [](C& c) -> auto& { return c.synth.min_words; }));
    f.push_back(num<std::size_t>("synth.max_words", [](C& c) -> auto& { return c.synth.max_words; }));
    f.push_back(num<std::size_t>("synth.bitext_pairs", [](C& c) -> auto& { return c.synth.bitext_pairs; }));
    f.push_back(num<std::size_t>("synth.heldout_pairs", [](C& c) -> auto& { return c.synth.heldout_pairs; }));
    f.push_back(num<std::size_t>("synth.parallel_sentences", [](C& c) -> auto& { return c.synth.parallel_sentences; }));
    f.push_back(num<std::size_t>("synth.probe_sentences", [](C& c) -> auto& { return c.synth.probe_sentences; }));
    f.push_back(num<std::size_t>("synth.nli_examples", [](C& c) -> auto& { return c.synth.nli_examples; }));
    f.push_back(num<std::size_t>("synth.sts_pairs", [](C& c) -> auto& { return c.synth.sts_pairs; }));
    f.push_back(num<std::uint64_t>("synth.seed", [](C& c) -> auto& { return c.synth.seed; }));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() = default;

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return out;
}

void RunConfig::merge(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  merge(text.str(), path.string());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

}  // namespace cmlm
