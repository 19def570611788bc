#pragma once

// Utterance vectors for segmentation: a seeded TF-IDF random-projection
// embedder, plus loading of externally computed sentence vectors.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvsum/corpus.hpp"

namespace mvsum::embed {

// n x d row-major utterance vectors. Rows are unit length or all zero.
struct EmbeddingMatrix {
  std::string id;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

using EmbeddingTable = std::map<std::string, EmbeddingMatrix>;

double cosine(std::span<const double> a, std::span<const double> b);

// Scales v to unit L2 norm; the zero vector is left untouched.
void normalize(std::span<double> v);

struct TfidfModel {
  std::unordered_map<std::string, std::size_t> token_index;
  std::vector<std::size_t> doc_freq;
  std::vector<double> idf;
  std::size_t num_docs = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> projection;  // token_index.size() x dim
};

// Documents are individual utterance texts; idf = ln((1+N)/(1+df)) + 1.
TfidfModel fit_tfidf(std::span<const corpus::Conversation> corpus, std::size_t dim, std::uint64_t seed);

EmbeddingMatrix embed_conversation(const TfidfModel& model, const corpus::Conversation& conv);

EmbeddingTable embed_corpus(const TfidfModel& model, std::span<const corpus::Conversation> convs);

// Embedding JSONL: {"id", "dim", "vectors": [[...], ...]} per line.
EmbeddingTable read_embeddings(std::istream& is);
void write_embeddings(std::ostream& os, const EmbeddingTable& table);

// Reads an embedding file, re-normalizes rows, and checks it against the
// corpus: one record per conversation with matching row count and one shared
// dimension.
EmbeddingTable load_external(const std::string& path, std::span<const corpus::Conversation> convs);

void validate(const EmbeddingTable& table, std::span<const corpus::Conversation> convs);

}  // namespace mvsum::embed
