#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cmlm/tensor.hpp"

namespace cmlm {

// Sentence vectors with per-row language tag, source text id and optional
// class label (-1 when absent).
struct EmbeddingSet {
  Tensor<double> vectors;              // [n x d]
  std::vector<std::string> tags;       // declared tag table
  std::vector<std::uint32_t> tag_of;   // per row, index into tags
  std::vector<std::uint32_t> text_id;  // per row
  std::vector<std::int32_t> label;     // per row, -1 = unlabelled

  std::size_t size() const { return tag_of.size(); }
  std::size_t dim() const { return vectors.cols(); }
  const std::string& language(std::size_t row) const { return tags[tag_of[row]]; }
  std::span<const double> row(std::size_t r) const { return vectors.data().subspan(r * dim(), dim()); }

  // Throws ContractError/NonFiniteError when the invariants do not hold.
  void validate() const;

  // Appends a row, registering its tag when new.
  void add(const std::string& language, std::span<const double> v, std::uint32_t text_id, std::int32_t label = -1);
  // Rows whose tag is `language`, in order.
  EmbeddingSet filter(const std::string& language) const;
  // Languages that actually occur, in tag-table order.
  std::vector<std::string> languages() const;

  static EmbeddingSet from_rows(const Tensor<double>& vectors, const std::vector<std::string>& languages,
                                const std::vector<std::uint32_t>& text_ids, const std::vector<std::int32_t>& labels);
};

// "CMLMEMB1", u32 version, u32 count, u32 dim, u32 tag count, tags as
// (u32 length, bytes), then per row: u32 tag index, u32 text id, i32 label,
// dim little-endian f32 values.
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

// Throws DegenerateInputError for a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Fraction of queries whose highest-cosine candidate is gold[q]; ties go to
// the lowest candidate index.
double retrieval_accuracy(const EmbeddingSet& queries, const EmbeddingSet& candidates,
                          std::span<const std::size_t> gold);

// Gold map pairing each query with the candidate of equal text id. Throws
// ContractError unless exactly one candidate matches.
std::vector<std::size_t> gold_by_text_id(const EmbeddingSet& queries, const EmbeddingSet& candidates);

// Removes each row's projection onto the first principal direction of its
// language group: v - (v . c) c with unit c.
struct PcrResult {
  EmbeddingSet set;
  std::map<std::string, std::vector<double>> directions;
};
PcrResult pcr_debias(const EmbeddingSet& set);

// For every query, the k nearest pool rows by cosine (excluding the pool row
// with the query's own language and text id), tallied by language.
struct BiasHistogram {
  std::vector<std::string> languages;              // pool languages
  std::vector<double> overall;                     // sums to 1
  std::map<std::string, std::vector<double>> by_query_language;
  double same_language_mass = 0;                   // retrieved rows sharing the query's language
};
BiasHistogram language_bias_histogram(const EmbeddingSet& queries, const EmbeddingSet& pool, std::size_t k);

struct ProbeOptions {
  std::size_t epochs = 500;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};
struct ProbeResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
};
// Multinomial logistic regression on standardized frozen features, full-batch
// gradient descent from zero weights. Labels must lie in [0, classes).
ProbeResult linear_probe(const EmbeddingSet& train, const EmbeddingSet& test, std::size_t classes,
                         const ProbeOptions& options = {});

// Pearson correlation of fractional ranks (ties share their average rank).
// Throws DegenerateInputError when either side is constant.
double spearman_correlation(std::span<const double> pred, std::span<const double> gold);

// Average ranks, 1-based.
std::vector<double> fractional_ranks(std::span<const double> values);

// Projects the mean-centered rows onto their top two principal directions.
// Throws DegenerateInputError for rank < 2 data.
Tensor<double> project_2d(const EmbeddingSet& set);

// Writes "id,lang,x,y" CSV and an SVG scatter coloured by language.
Tensor<double> export_2d(const EmbeddingSet& set, const std::filesystem::path& csv_path,
                         const std::filesystem::path& svg_path);

}  // namespace cmlm
