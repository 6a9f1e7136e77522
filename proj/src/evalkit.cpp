#include "cmlm/evalkit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "cmlm/kernels.hpp"
#include "cmlm/spectral.hpp"

namespace cmlm {

static_assert(std::endian::native == std::endian::little, "embedding I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// EmbeddingSet

void EmbeddingSet::validate() const {
  const std::size_t n = size();
  if (n == 0) throw ContractError("embedding set is empty");
  if (vectors.rank() != 2 || vectors.rows() != n) {
    throw DimensionError("embedding matrix " + shape_str(vectors.shape()) + " does not match " + std::to_string(n) +
                         " rows");
  }
  if (text_id.size() != n || label.size() != n) throw DimensionError("embedding metadata length mismatch");
  for (auto t : tag_of) {
    if (t >= tags.size()) throw ContractError("embedding row refers to undeclared tag " + std::to_string(t));
  }
  if (!vectors.all_finite()) throw NonFiniteError("embedding set contains non-finite values");
}

void EmbeddingSet::add(const std::string& lang, std::span<const double> v, std::uint32_t id, std::int32_t lab) {
  if (size() > 0 && v.size() != dim()) throw DimensionError("embedding row has the wrong dimension");
  auto it = std::find(tags.begin(), tags.end(), lang);
  if (it == tags.end()) {
    tags.push_back(lang);
    it = tags.end() - 1;
  }
  std::vector<double> data(vectors.storage().begin(), vectors.storage().end());
  if (size() == 0) data.clear();
  data.insert(data.end(), v.begin(), v.end());
  vectors = Tensor<double>(Shape{size() + 1, v.size()}, std::move(data));
  tag_of.push_back(static_cast<std::uint32_t>(it - tags.begin()));
  text_id.push_back(id);
  label.push_back(lab);
}

EmbeddingSet EmbeddingSet::filter(const std::string& lang) const {
  EmbeddingSet out;
  out.tags = {lang};
  std::vector<double> data;
  for (std::size_t r = 0; r < size(); ++r) {
    if (language(r) != lang) continue;
    auto v = row(r);
    data.insert(data.end(), v.begin(), v.end());
    out.tag_of.push_back(0);
    out.text_id.push_back(text_id[r]);
    out.label.push_back(label[r]);
  }
  if (out.tag_of.empty()) throw ContractError("no rows with language '" + lang + "'");
  out.vectors = Tensor<double>(Shape{out.tag_of.size(), dim()}, std::move(data));
  return out;
}

std::vector<std::string> EmbeddingSet::languages() const {
  std::vector<bool> seen(tags.size(), false);
  for (auto t : tag_of) seen[t] = true;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (seen[i]) out.push_back(tags[i]);
  }
  return out;
}

EmbeddingSet EmbeddingSet::from_rows(const Tensor<double>& vectors, const std::vector<std::string>& languages,
                                     const std::vector<std::uint32_t>& text_ids,
                                     const std::vector<std::int32_t>& labels) {
  const std::size_t n = vectors.rows();
  if (languages.size() != n || text_ids.size() != n || (!labels.empty() && labels.size() != n)) {
    throw DimensionError("from_rows: metadata does not match " + std::to_string(n) + " rows");
  }
  EmbeddingSet out;
  out.vectors = vectors;
  for (std::size_t r = 0; r < n; ++r) {
    auto it = std::find(out.tags.begin(), out.tags.end(), languages[r]);
    if (it == out.tags.end()) {
      out.tags.push_back(languages[r]);
      it = out.tags.end() - 1;
    }
    out.tag_of.push_back(static_cast<std::uint32_t>(it - out.tags.begin()));
  }
  out.text_id = text_ids;
  out.label = labels.empty() ? std::vector<std::int32_t>(n, -1) : labels;
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Embedding file

namespace {

constexpr char kEmbMagic[8] = {'C', 'M', 'L', 'M', 'E', 'M', 'B', '1'};
constexpr std::uint32_t kEmbVersion = 1;

template <typename U>
void put(std::vector<char>& out, U value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(U));
}

struct Cursor {
  const std::vector<char>& bytes;
  const std::filesystem::path& path;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw IntegrityError("'" + path.string() + "' truncated at offset " + std::to_string(pos) + " while reading " +
                           what);
    }
  }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
  }
};

void require_nonzero_rows(const EmbeddingSet& set, const char* what) {
  for (std::size_t r = 0; r < set.size(); ++r) {
    auto v = set.row(r);
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
      throw DegenerateInputError(std::string(what) + " row " + std::to_string(r) + " is a zero vector");
    }
  }
}

std::vector<double> cosines(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim()) throw DimensionError("embedding dimensions differ");
  require_nonzero_rows(a, "query");
  require_nonzero_rows(b, "candidate");
  std::vector<double> out(a.size() * b.size());
  kernels::cosine_matrix<double>(kernels::default_exec(), a.size(), b.size(), a.dim(), a.vectors.data().data(),
                                 b.vectors.data().data(), out.data());
  return out;
}

}  // namespace

void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  set.validate();
  std::vector<char> out(kEmbMagic, kEmbMagic + sizeof(kEmbMagic));
  put(out, kEmbVersion);
  put(out, static_cast<std::uint32_t>(set.size()));
  put(out, static_cast<std::uint32_t>(set.dim()));
  put(out, static_cast<std::uint32_t>(set.tags.size()));
  for (const auto& t : set.tags) {
    put(out, static_cast<std::uint32_t>(t.size()));
    out.insert(out.end(), t.begin(), t.end());
  }
  for (std::size_t r = 0; r < set.size(); ++r) {
    put(out, set.tag_of[r]);
    put(out, set.text_id[r]);
    put(out, set.label[r]);
    for (double x : set.row(r)) put(out, static_cast<float>(x));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IntegrityError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot open '" + path.string() + "'");
  const std::vector<char> bytes(std::istreambuf_iterator<char>(f), {});
  Cursor c{bytes, path};
  c.need(sizeof(kEmbMagic), "magic");
  if (std::memcmp(bytes.data(), kEmbMagic, sizeof(kEmbMagic)) != 0) {
    throw IntegrityError("'" + path.string() + "' is not an embedding file (bad magic at offset 0)");
  }
  c.pos = sizeof(kEmbMagic);
  const auto version = c.get<std::uint32_t>("version");
  if (version != kEmbVersion) throw IntegrityError("unsupported embedding file version " + std::to_string(version));
  const auto count = c.get<std::uint32_t>("count");
  const auto dim = c.get<std::uint32_t>("dim");
  const auto ntags = c.get<std::uint32_t>("tag count");
  if (count == 0 || dim == 0) throw IntegrityError("'" + path.string() + "' declares an empty embedding matrix");
  EmbeddingSet set;
  for (std::uint32_t i = 0; i < ntags; ++i) {
    const auto len = c.get<std::uint32_t>("tag length");
    c.need(len, "tag");
    set.tags.emplace_back(bytes.data() + c.pos, len);
    c.pos += len;
  }
  std::vector<double> data;
  data.reserve(std::size_t{count} * dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::size_t at = c.pos;
    const auto tag = c.get<std::uint32_t>("row tag");
    if (tag >= ntags) throw IntegrityError("row at offset " + std::to_string(at) + " has undeclared tag " + std::to_string(tag));
    set.tag_of.push_back(tag);
    set.text_id.push_back(c.get<std::uint32_t>("text id"));
    set.label.push_back(c.get<std::int32_t>("label"));
    for (std::uint32_t j = 0; j < dim; ++j) data.push_back(c.get<float>("row values"));
  }
  if (c.pos != bytes.size()) throw IntegrityError("trailing bytes at offset " + std::to_string(c.pos));
  set.vectors = Tensor<double>(Shape{count, dim}, std::move(data));
  set.validate();
  return set;
}

// ---------------------------------------------------------------------------
// Retrieval and debiasing

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: lengths differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw DegenerateInputError("cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double retrieval_accuracy(const EmbeddingSet& queries, const EmbeddingSet& candidates,
                          std::span<const std::size_t> gold) {
  if (candidates.size() == 0) throw ContractError("retrieval_accuracy: empty candidate set");
  if (queries.size() == 0) throw ContractError("retrieval_accuracy: empty query set");
  if (gold.size() != queries.size()) throw DimensionError("retrieval_accuracy: gold map does not cover every query");
  for (auto g : gold) {
    if (g >= candidates.size()) throw ContractError("retrieval_accuracy: gold index out of range");
  }
  const auto sim = cosines(queries, candidates);
  const std::size_t m = candidates.size();
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double* row = sim.data() + q * m;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + m) - row);
    hits += best == gold[q] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

std::vector<std::size_t> gold_by_text_id(const EmbeddingSet& queries, const EmbeddingSet& candidates) {
  std::map<std::uint32_t, std::vector<std::size_t>> where;
  for (std::size_t c = 0; c < candidates.size(); ++c) where[candidates.text_id[c]].push_back(c);
  std::vector<std::size_t> gold;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto it = where.find(queries.text_id[q]);
    if (it == where.end() || it->second.size() != 1) {
      throw ContractError("query " + std::to_string(q) + " (text id " + std::to_string(queries.text_id[q]) +
                          ") does not match exactly one candidate");
    }
    gold.push_back(it->second.front());
  }
  return gold;
}

PcrResult pcr_debias(const EmbeddingSet& set) {
  set.validate();
  PcrResult out;
  out.set = set;
  const std::size_t d = set.dim();
  for (const auto& lang : set.languages()) {
    const EmbeddingSet group = set.filter(lang);
    std::vector<double> c;
    try {
      c = first_principal_direction(group.vectors);
    } catch (const DegenerateInputError&) {
      throw DegenerateInputError("language '" + lang + "' has only zero vectors; no principal direction");
    }
    auto values = out.set.vectors.data();
    for (std::size_t r = 0; r < set.size(); ++r) {
      if (set.language(r) != lang) continue;
      double* v = values.data() + r * d;
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += v[j] * c[j];
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * c[j];
    }
    out.directions.emplace(lang, std::move(c));
  }
  return out;
}

BiasHistogram language_bias_histogram(const EmbeddingSet& queries, const EmbeddingSet& pool, std::size_t k) {
  if (k == 0) throw ContractError("language_bias_histogram: k must be at least 1");
  if (pool.size() < 2 || k > pool.size() - 1) {
    throw ContractError("language_bias_histogram: k = " + std::to_string(k) + " exceeds pool size - 1");
  }
  BiasHistogram h;
  h.languages = pool.languages();
  if (h.languages.size() < 2) throw ContractError("language_bias_histogram: pool spans fewer than 2 languages");
  auto lang_index = [&h](const std::string& l) {
    return static_cast<std::size_t>(std::find(h.languages.begin(), h.languages.end(), l) - h.languages.begin());
  };
  const auto sim = cosines(queries, pool);
  const std::size_t m = pool.size();
  h.overall.assign(h.languages.size(), 0.0);
  std::map<std::string, std::size_t> queries_per_lang;
  std::size_t same = 0, total = 0;
  std::vector<std::size_t> order(m);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double* row = sim.data() + q * m;
    order.clear();
    for (std::size_t j = 0; j < m; ++j) {
      const bool self = pool.language(j) == queries.language(q) && pool.text_id[j] == queries.text_id[q];
      if (!self) order.push_back(j);
    }
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    auto& per = h.by_query_language[queries.language(q)];
    per.resize(h.languages.size(), 0.0);
    ++queries_per_lang[queries.language(q)];
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t li = lang_index(pool.language(order[i]));
      h.overall[li] += 1;
      per[li] += 1;
      same += pool.language(order[i]) == queries.language(q) ? 1 : 0;
      ++total;
    }
  }
  for (auto& x : h.overall) x /= static_cast<double>(total);
  for (auto& [lang, per] : h.by_query_language) {
    const double denom = std::accumulate(per.begin(), per.end(), 0.0);
    for (auto& x : per) x /= denom;
  }
  h.same_language_mass = static_cast<double>(same) / static_cast<double>(total);
  return h;
}

// ---------------------------------------------------------------------------
// Probe

ProbeResult linear_probe(const EmbeddingSet& train, const EmbeddingSet& test, std::size_t classes,
                         const ProbeOptions& options) {
  train.validate();
  test.validate();
  if (train.dim() != test.dim()) throw DimensionError("linear_probe: train and test dimensions differ");
  if (classes < 2) throw ContractError("linear_probe: need at least 2 classes");
  std::vector<bool> present(classes, false);
  auto check_label = [classes](std::int32_t y, const char* split) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ContractError(std::string("linear_probe: ") + split + " label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
  };
  for (auto y : train.label) {
    check_label(y, "train");
    present[static_cast<std::size_t>(y)] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) throw ContractError("linear_probe: fewer than 2 classes in train");
  for (auto y : test.label) {
    check_label(y, "test");
    if (!present[static_cast<std::size_t>(y)]) {
      throw ContractError("linear_probe: test class " + std::to_string(y) + " never appears in train");
    }
  }

  const std::size_t n = train.size(), d = train.dim(), C = classes;
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += train.row(r)[j];
  }
  for (auto& m : mu) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(train.row(r)[j] - mu[j], 2);
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n));
  for (auto& s : sd) s = s > 1e-12 ? s : 1.0;
  auto standardize = [&](const EmbeddingSet& set) {
    std::vector<double> x(set.size() * d);
    for (std::size_t r = 0; r < set.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) x[r * d + j] = (set.row(r)[j] - mu[j]) / sd[j];
    }
    return x;
  };
  const auto xtr = standardize(train);
  const auto xte = standardize(test);

  std::vector<double> w(d * C, 0.0), b(C, 0.0), gw(d * C), gb(C), p(C);
  auto logits = [&](const double* x, std::vector<double>& out) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += x[j] * w[j * C + c];
      out[c] = s;
    }
  };
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double* x = xtr.data() + r * d;
      logits(x, p);
      const double mx = *std::max_element(p.begin(), p.end());
      double z = 0;
      for (auto& v : p) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < C; ++c) {
        const double g = p[c] / z - (static_cast<std::int32_t>(c) == train.label[r] ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t j = 0; j < d; ++j) gw[j * C + c] += g * x[j];
      }
    }
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.learning_rate * (gw[i] * scale + options.l2 * w[i]);
    for (std::size_t c = 0; c < C; ++c) b[c] -= options.learning_rate * gb[c] * scale;
  }
  auto accuracy = [&](const std::vector<double>& x, const EmbeddingSet& set) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < set.size(); ++r) {
      logits(x.data() + r * d, p);
      const auto pred = static_cast<std::int32_t>(std::max_element(p.begin(), p.end()) - p.begin());
      hits += pred == set.label[r] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(set.size());
  };
  return {accuracy(xtr, train), accuracy(xte, test)};
}

// ---------------------------------------------------------------------------
// Rank correlation

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman_correlation(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) throw DimensionError("spearman_correlation: lengths differ");
  if (pred.size() < 2) throw ContractError("spearman_correlation: need at least 2 values");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i]) || !std::isfinite(gold[i])) throw NonFiniteError("spearman_correlation: non-finite input");
  }
  const auto a = fractional_ranks(pred);
  const auto b = fractional_ranks(gold);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw DegenerateInputError("spearman_correlation: constant input, correlation undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// 2D export

Tensor<double> project_2d(const EmbeddingSet& set) {
  set.validate();
  const std::size_t n = set.size(), d = set.dim();
  if (n < 3 || d < 2) throw ContractError("project_2d: need at least 3 rows of dimension >= 2");
  Tensor<double> centered = set.vectors;
  auto x = centered.data();
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0;
    for (std::size_t r = 0; r < n; ++r) m += x[r * d + j];
    m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) x[r * d + j] -= m;
  }
  std::vector<std::vector<double>> dirs;
  try {
    dirs = principal_directions(centered, 2);
  } catch (const DegenerateInputError&) {
    throw DegenerateInputError("project_2d: data has rank < 2 after centering");
  }
  Tensor<double> out(Shape{n, 2});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * dirs[c][j];
      out.at(r, c) = s;
    }
  }
  return out;
}

Tensor<double> export_2d(const EmbeddingSet& set, const std::filesystem::path& csv_path,
                         const std::filesystem::path& svg_path) {
  Tensor<double> xy = project_2d(set);
  const std::size_t n = set.size();
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IntegrityError("cannot write '" + csv_path.string() + "'");
    csv << "id,lang,x,y\n";
    for (std::size_t r = 0; r < n; ++r) {
      csv << fmt::format("{},{},{:.9g},{:.9g}\n", set.text_id[r], set.language(r), xy.at(r, 0), xy.at(r, 1));
    }
  }
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  double x0 = xy.at(0, 0), x1 = x0, y0 = xy.at(0, 1), y1 = y0;
  for (std::size_t r = 0; r < n; ++r) {
    x0 = std::min(x0, xy.at(r, 0));
    x1 = std::max(x1, xy.at(r, 0));
    y0 = std::min(y0, xy.at(r, 1));
    y1 = std::max(y1, xy.at(r, 1));
  }
  const double size = 600, pad = 30;
  const double sx = (size - 2 * pad) / std::max(x1 - x0, 1e-12), sy = (size - 2 * pad) / std::max(y1 - y0, 1e-12);
  std::ofstream svg(svg_path);
  if (!svg) throw IntegrityError("cannot write '" + svg_path.string() + "'");
  svg << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
                     size + 120);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t r = 0; r < n; ++r) {
    const double px = pad + (xy.at(r, 0) - x0) * sx;
    const double py = size - pad - (xy.at(r, 1) - y0) * sy;
    svg << fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.7\"/>\n", px, py,
                       palette[set.tag_of[r] % std::size(palette)]);
  }
  for (std::size_t t = 0; t < set.tags.size(); ++t) {
    const double ly = pad + 20.0 * static_cast<double>(t);
    svg << fmt::format("<circle cx=\"{:.0f}\" cy=\"{:.0f}\" r=\"5\" fill=\"{}\"/>", size + 10, ly, palette[t % std::size(palette)]);
    svg << fmt::format("<text x=\"{:.0f}\" y=\"{:.0f}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                       size + 20, ly + 4, set.tags[t]);
  }
  svg << "</svg>\n";
  return xy;
}

}  // namespace cmlm
