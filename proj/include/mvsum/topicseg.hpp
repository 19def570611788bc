#pragma once

// Topic view: C99 divisive segmentation over a rank-transformed
// utterance-similarity matrix.

#include <cstddef>
#include <vector>

#include "mvsum/embed.hpp"
#include "mvsum/segmentation.hpp"

namespace mvsum::topicseg {

// Row-major real matrix; similarity and rank matrices are square.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct C99Config {
  int window = 4;
  double std_coeff = 1.0;
  std::size_t max_segments = 0;  // 0 = no cap (m)
};

// Cosine similarities between utterance vectors; zero rows give 0.
Matrix similarity_matrix(const embed::EmbeddingMatrix& e);

// R[i,j] = fraction of in-bounds neighbours within radius floor(w/2)
// (excluding (i,j) itself) whose similarity is strictly below S[i,j].
Matrix rank_transform(const Matrix& s, int window);

// Sum of R over the diagonal squares of seg, divided by their total area.
double inside_density(const Matrix& r, const Segmentation& seg);

struct TraceEntry {
  std::size_t segments = 0;
  double density = 0;
  Segmentation segmentation;
};

// Greedy divisive clustering: one boundary per step, chosen to maximise
// inside density (ties: smallest boundary index). Entries for n = 1..cap.
std::vector<TraceEntry> divisive_segment(const Matrix& r, std::size_t max_segments = 0);

// Picks the largest n whose density gain exceeds mean + c * std of gains.
Segmentation choose_segment_count(const std::vector<TraceEntry>& trace, double std_coeff);

Segmentation topic_view(const corpus::Conversation& conv, const embed::EmbeddingMatrix& e,
                        const C99Config& cfg = {});

}  // namespace mvsum::topicseg
