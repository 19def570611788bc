#include "mvsum/embed.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>

#include "json.hpp"
#include "mvsum/error.hpp"
#include "mvsum/kernels.hpp"

namespace mvsum::embed {

using nlohmann::json;

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: dimension mismatch");
  const double na = std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(kernels::dot(b.data(), b.data(), b.size()));
  if (na == 0 || nb == 0) return 0.0;
  return kernels::dot(a.data(), b.data(), a.size()) / (na * nb);
}

void normalize(std::span<double> v) {
  double ss = 0;
  for (double x : v) ss += x * x;
  if (ss == 0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

TfidfModel fit_tfidf(std::span<const corpus::Conversation> corpus, std::size_t dim, std::uint64_t seed) {
  if (corpus.empty()) throw Error("fit_tfidf: empty corpus");
  if (dim < 8) throw Error("fit_tfidf: dimension must be >= 8");

  TfidfModel m;
  m.dim = dim;
  m.seed = seed;
  // Sorted token order gives a seed-stable projection independent of hash order.
  std::map<std::string, std::size_t> df;
  for (const corpus::Conversation& c : corpus) {
    for (const corpus::Utterance& u : c.utterances) {
      ++m.num_docs;
      auto toks = corpus::tokenize(u.text);
      for (const std::string& t : std::set<std::string>(toks.begin(), toks.end())) ++df[t];
    }
  }
  const double n = static_cast<double>(m.num_docs);
  for (const auto& [tok, count] : df) {
    m.token_index.emplace(tok, m.doc_freq.size());
    m.doc_freq.push_back(count);
    m.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  m.projection.resize(m.doc_freq.size() * dim);
  for (double& x : m.projection) x = normal(rng) * scale;
  return m;
}

EmbeddingMatrix embed_conversation(const TfidfModel& model, const corpus::Conversation& conv) {
  EmbeddingMatrix e{conv.id, conv.size(), model.dim, std::vector<double>(conv.size() * model.dim, 0.0)};
  for (std::size_t i = 0; i < conv.size(); ++i) {
    std::map<std::size_t, double> counts;
    for (const std::string& t : corpus::tokenize(conv.utterances[i].text)) {
      auto it = model.token_index.find(t);
      if (it != model.token_index.end()) counts[it->second] += 1.0;
    }
    std::span<double> row = e.row(i);
    for (const auto& [idx, tf] : counts)
      kernels::axpy(tf * model.idf[idx], model.projection.data() + idx * model.dim, row.data(), model.dim);
    normalize(row);
  }
  return e;
}

EmbeddingTable embed_corpus(const TfidfModel& model, std::span<const corpus::Conversation> convs) {
  EmbeddingTable out;
  for (const corpus::Conversation& c : convs) out.emplace(c.id, embed_conversation(model, c));
  return out;
}

EmbeddingTable read_embeddings(std::istream& is) {
  EmbeddingTable out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t shared_dim = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "embedding line " + std::to_string(line_no);
    EmbeddingMatrix e;
    try {
      json j = json::parse(line);
      e.id = j.at("id").get<std::string>();
      e.dim = j.at("dim").get<std::size_t>();
      const json& vecs = j.at("vectors");
      e.rows = vecs.size();
      e.data.reserve(e.rows * e.dim);
      for (const json& v : vecs) {
        if (v.size() != e.dim)
          throw FormatError(where + " (id '" + e.id + "'): vector length " + std::to_string(v.size()) +
                            " != dim " + std::to_string(e.dim));
        for (const json& x : v) e.data.push_back(x.get<double>());
      }
    } catch (const json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    for (double x : e.data)
      if (!std::isfinite(x)) throw FormatError(where + " (id '" + e.id + "'): non-finite value");
    if (shared_dim == 0) shared_dim = e.dim;
    if (e.dim != shared_dim)
      throw FormatError("inconsistent embedding dimension: id '" + e.id + "' has " + std::to_string(e.dim) +
                        ", expected " + std::to_string(shared_dim));
    std::string id = e.id;
    if (!out.emplace(id, std::move(e)).second) throw FormatError("duplicate embedding id '" + id + "'");
  }
  return out;
}

void write_embeddings(std::ostream& os, const EmbeddingTable& table) {
  for (const auto& [id, e] : table) {
    json vecs = json::array();
    for (std::size_t i = 0; i < e.rows; ++i) {
      auto r = e.row(i);
      vecs.push_back(std::vector<double>(r.begin(), r.end()));
    }
    os << json{{"id", id}, {"dim", e.dim}, {"vectors", std::move(vecs)}}.dump() << '\n';
  }
}

void validate(const EmbeddingTable& table, std::span<const corpus::Conversation> convs) {
  std::size_t dim = 0;
  for (const corpus::Conversation& c : convs) {
    auto it = table.find(c.id);
    if (it == table.end()) throw FormatError("no embeddings for conversation '" + c.id + "'");
    const EmbeddingMatrix& e = it->second;
    if (e.rows != c.size())
      throw FormatError("row count mismatch for '" + c.id + "': " + std::to_string(e.rows) + " vectors for " +
                        std::to_string(c.size()) + " utterances");
    if (dim == 0) dim = e.dim;
    if (e.dim != dim) throw FormatError("inconsistent embedding dimension at '" + c.id + "'");
  }
}

EmbeddingTable load_external(const std::string& path, std::span<const corpus::Conversation> convs) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  EmbeddingTable table = read_embeddings(in);
  validate(table, convs);
  for (auto& [id, e] : table)
    for (std::size_t i = 0; i < e.rows; ++i) normalize(e.row(i));
  return table;
}

}  // namespace mvsum::embed
