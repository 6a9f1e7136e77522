#include "cmlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace cmlm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'M', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

json config_json(const EncoderConfig& c) {
  return json{{"layers", c.layers},         {"heads", c.heads},
              {"hidden", c.hidden},         {"ff", c.ff},
              {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
              {"projections", c.projections}, {"pooling", to_string(c.pooling)},
              {"dropout", c.dropout}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.ff = j.at("ff").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.projections = j.at("projections").get<std::size_t>();
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  return c;
}

json optimizer_json(const OptimizerState<float>& s) {
  const auto& c = s.config;
  return json{{"kind", to_string(c.kind)},   {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
              {"beta2", c.beta2},            {"epsilon", c.epsilon},             {"weight_decay", c.weight_decay},
              {"warmup_steps", c.warmup_steps}, {"total_steps", c.total_steps},   {"step", s.step}};
}

class Writer {
 public:
  template <typename U>
  void pod(U value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    pod(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    pod(std::uint8_t{0});
    pod(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) pod(static_cast<std::uint64_t>(e));
    raw(t.data().data(), t.size() * sizeof(float));
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IntegrityError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  template <typename U>
  U pod(const char* what) {
    need(sizeof(U), what);
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }
  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    const std::size_t start = pos_;
    const auto name_len = pod<std::uint32_t>("tensor name length");
    std::string name = string(name_len, "tensor name");
    const auto dtype = pod<std::uint8_t>("tensor dtype");
    if (dtype != 0) {
      throw IntegrityError("checkpoint tensor '" + name + "' at offset " + std::to_string(start) +
                           " has dtype " + std::to_string(dtype) + ", expected f32");
    }
    const auto rank = pod<std::uint32_t>("tensor rank");
    if (rank > 8) throw IntegrityError("checkpoint tensor '" + name + "' has implausible rank at offset " + std::to_string(start));
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = pod<std::uint64_t>("tensor extent");
      if (e == 0 || e > (std::uint64_t{1} << 40)) {
        throw IntegrityError("checkpoint tensor '" + name + "' has invalid extent at offset " + std::to_string(pos_ - 8));
      }
      shape.push_back(static_cast<std::size_t>(e));
      count *= static_cast<std::size_t>(e);
    }
    need(count * sizeof(float), "tensor payload");
    std::vector<float> values(count);
    std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
    return {std::move(name), Tensor<float>(std::move(shape), std::move(values))};
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string describe(const EncoderConfig& config) { return config_json(config).dump(); }

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto& p = ck.params;
  if (ck.optimizer.first_moment.size() != p.size() || ck.optimizer.second_moment.size() != p.size()) {
    throw ContractError("save_checkpoint: optimizer moments do not match the parameter list");
  }
  json manifest{{"config", config_json(ck.config)},
                {"step", ck.step},
                {"stage", ck.stage},
                {"strategy", ck.strategy},
                {"rng", ck.rng_state},
                {"optimizer", optimizer_json(ck.optimizer)},
                {"vocab", ck.vocab.tokens()},
                {"tensors", 3 * p.size()}};
  const std::string text = manifest.dump();

  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod(static_cast<std::uint64_t>(text.size()));
  w.raw(text.data(), text.size());
  for (std::size_t i = 0; i < p.size(); ++i) w.tensor("p/" + p.name(i), p[i]);
  for (std::size_t i = 0; i < p.size(); ++i) w.tensor("m/" + p.name(i), ck.optimizer.first_moment[i]);
  for (std::size_t i = 0; i < p.size(); ++i) w.tensor("v/" + p.name(i), ck.optimizer.second_moment[i]);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IntegrityError("write failed for checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint '" + path.string() + "'");
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  if (r.string(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw IntegrityError("'" + path.string() + "' is not a checkpoint (bad magic at offset 0)");
  }
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kVersion) throw IntegrityError("unsupported checkpoint version " + std::to_string(version) + " at offset 8");
  const auto manifest_len = r.pod<std::uint64_t>("manifest length");
  const std::size_t manifest_at = r.pos();
  const std::string text = r.string(static_cast<std::size_t>(manifest_len), "manifest");

  Checkpoint ck;
  std::size_t tensors = 0;
  try {
    const json m = json::parse(text);
    ck.config = config_from_json(m.at("config"));
    ck.step = m.at("step").get<std::uint64_t>();
    ck.stage = m.at("stage").get<std::size_t>();
    ck.strategy = m.at("strategy").get<std::string>();
    ck.rng_state = m.at("rng").get<std::string>();
    const json& o = m.at("optimizer");
    auto& c = ck.optimizer.config;
    c.kind = parse_optimizer_kind(o.at("kind").get<std::string>());
    c.learning_rate = o.at("learning_rate").get<double>();
    c.beta1 = o.at("beta1").get<double>();
    c.beta2 = o.at("beta2").get<double>();
    c.epsilon = o.at("epsilon").get<double>();
    c.weight_decay = o.at("weight_decay").get<double>();
    c.warmup_steps = o.at("warmup_steps").get<std::uint64_t>();
    c.total_steps = o.at("total_steps").get<std::uint64_t>();
    ck.optimizer.step = o.at("step").get<std::uint64_t>();
    ck.vocab = Vocab::from_tokens(m.at("vocab").get<std::vector<std::string>>());
    tensors = m.at("tensors").get<std::size_t>();
  } catch (const json::exception& e) {
    throw IntegrityError("malformed checkpoint manifest at offset " + std::to_string(manifest_at) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError("malformed checkpoint manifest at offset " + std::to_string(manifest_at) + ": " + e.what());
  }
  if (tensors % 3 != 0) throw IntegrityError("checkpoint manifest lists a tensor count not divisible by 3");

  const std::size_t n = tensors / 3;
  std::vector<std::pair<std::string, Tensor<float>>> records;
  for (std::size_t i = 0; i < tensors; ++i) records.push_back(r.tensor());
  if (!r.done()) throw IntegrityError("trailing bytes after the last checkpoint tensor at offset " + std::to_string(r.pos()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [name, value] = records[i];
    if (name.rfind("p/", 0) != 0) throw IntegrityError("checkpoint record '" + name + "' out of order");
    const std::string base = name.substr(2);
    if (records[n + i].first != "m/" + base || records[2 * n + i].first != "v/" + base) {
      throw IntegrityError("checkpoint moments for '" + base + "' missing or out of order");
    }
    ck.params.add(base, value);
    ck.optimizer.first_moment.push_back(records[n + i].second);
    ck.optimizer.second_moment.push_back(records[2 * n + i].second);
  }
  check_params(ck.config, ck.params);
  if (ck.vocab.size() != ck.config.vocab_size) throw IntegrityError("checkpoint vocabulary size does not match its config");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  EncoderConfig stored = ck.config;
  stored.dropout = expected.dropout;
  if (!(stored == expected)) {
    throw ConfigError("checkpoint '" + path.string() + "' was trained with " + describe(ck.config) +
                      ", requested " + describe(expected));
  }
  return ck;
}

}  // namespace cmlm
