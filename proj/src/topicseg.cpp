#include "mvsum/topicseg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvsum/error.hpp"

namespace mvsum::topicseg {

Matrix similarity_matrix(const embed::EmbeddingMatrix& e) {
  Matrix s(e.rows, e.rows);
  for (std::size_t i = 0; i < e.rows; ++i)
    for (std::size_t j = i; j < e.rows; ++j) s(i, j) = s(j, i) = embed::cosine(e.row(i), e.row(j));
  return s;
}

Matrix rank_transform(const Matrix& s, int window) {
  if (s.rows != s.cols)
    throw ShapeError("rank_transform: similarity matrix is " + std::to_string(s.rows) + "x" +
                     std::to_string(s.cols) + ", expected square");
  if (window < 1) throw Error("rank_transform: window must be positive");
  const std::size_t m = s.rows;
  const std::size_t radius = static_cast<std::size_t>(window) / 2;
  Matrix r(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t i0 = i >= radius ? i - radius : 0;
    const std::size_t i1 = std::min(m - 1, i + radius);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t j0 = j >= radius ? j - radius : 0;
      const std::size_t j1 = std::min(m - 1, j + radius);
      const double centre = s(i, j);
      std::size_t lower = 0;
      for (std::size_t a = i0; a <= i1; ++a)
        for (std::size_t b = j0; b <= j1; ++b)
          if (s(a, b) < centre) ++lower;
      // The centre itself is never strictly below itself, so only the
      // denominator needs the exclusion.
      const std::size_t neighbours = (i1 - i0 + 1) * (j1 - j0 + 1) - 1;
      r(i, j) = neighbours == 0 ? 0.0 : static_cast<double>(lower) / static_cast<double>(neighbours);
    }
  }
  return r;
}

namespace {

// Inclusive-prefix sums for O(1) square-region sums.
class RegionSums {
 public:
  explicit RegionSums(const Matrix& r) : n_(r.rows), p_((r.rows + 1) * (r.rows + 1), 0.0) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        at(i + 1, j + 1) = r(i, j) + at(i, j + 1) + at(i + 1, j) - at(i, j);
  }

  double square(const Block& b) const {
    return at(b.end + 1, b.end + 1) - at(b.start, b.end + 1) - at(b.end + 1, b.start) + at(b.start, b.start);
  }

 private:
  double& at(std::size_t i, std::size_t j) { return p_[i * (n_ + 1) + j]; }
  double at(std::size_t i, std::size_t j) const { return p_[i * (n_ + 1) + j]; }

  std::size_t n_;
  std::vector<double> p_;
};

double density(const RegionSums& sums, const Segmentation& seg) {
  double inside = 0, area = 0;
  for (const Block& b : seg) {
    inside += sums.square(b);
    area += static_cast<double>(b.size() * b.size());
  }
  return inside / area;
}

}  // namespace

double inside_density(const Matrix& r, const Segmentation& seg) {
  if (r.rows != r.cols || !is_partition(seg, r.rows)) throw Error("inside_density: segmentation does not fit matrix");
  return density(RegionSums(r), seg);
}

constexpr double kTieTolerance = 1e-12;

std::vector<TraceEntry> divisive_segment(const Matrix& r, std::size_t max_segments) {
  if (r.rows != r.cols || r.rows == 0) throw ShapeError("divisive_segment: rank matrix must be square and non-empty");
  const std::size_t m = r.rows;
  const std::size_t cap = max_segments == 0 ? m : std::min(m, max_segments);
  const RegionSums sums(r);

  std::vector<std::size_t> cuts;
  std::vector<TraceEntry> trace;
  Segmentation seg = from_boundaries(cuts, m);
  trace.push_back({1, density(sums, seg), seg});

  while (trace.size() < cap) {
    double best = -1.0;
    std::size_t best_cut = 0;
    for (std::size_t c = 1; c < m; ++c) {
      if (std::binary_search(cuts.begin(), cuts.end(), c)) continue;
      std::vector<std::size_t> trial = cuts;
      trial.insert(std::upper_bound(trial.begin(), trial.end(), c), c);
      const double d = density(sums, from_boundaries(trial, m));
      // Prefix-sum rounding can split exact ties; treat near-equal as equal
      // so the smallest boundary wins.
      if (d > best + kTieTolerance) {
        best = d;
        best_cut = c;
      }
    }
    cuts.insert(std::upper_bound(cuts.begin(), cuts.end(), best_cut), best_cut);
    seg = from_boundaries(cuts, m);
    trace.push_back({seg.size(), best, seg});
  }
  return trace;
}

Segmentation choose_segment_count(const std::vector<TraceEntry>& trace, double std_coeff) {
  if (trace.empty()) throw Error("choose_segment_count: empty trace");
  if (trace.size() == 1) return trace.front().segmentation;

  std::vector<double> gains;
  for (std::size_t n = 1; n < trace.size(); ++n) gains.push_back(trace[n].density - trace[n - 1].density);
  double mean = 0;
  for (double g : gains) mean += g;
  mean /= static_cast<double>(gains.size());
  double var = 0;
  for (double g : gains) var += (g - mean) * (g - mean);
  const double threshold = mean + std_coeff * std::sqrt(var / static_cast<double>(gains.size()));

  std::size_t chosen = 0;  // index into trace
  for (std::size_t n = 1; n < trace.size(); ++n)
    if (gains[n - 1] > threshold) chosen = n;
  return trace[chosen].segmentation;
}

Segmentation topic_view(const corpus::Conversation& conv, const embed::EmbeddingMatrix& e, const C99Config& cfg) {
  if (e.rows != conv.size())
    throw ShapeError("topic_view: " + std::to_string(e.rows) + " embedding rows for " + std::to_string(conv.size()) +
                     " utterances in '" + conv.id + "'");
  if (cfg.window < 2) throw Error("topic_view: window must be >= 2");
  if (!std::isfinite(cfg.std_coeff)) throw Error("topic_view: std coefficient must be finite");
  const Matrix r = rank_transform(similarity_matrix(e), cfg.window);
  return choose_segment_count(divisive_segment(r, cfg.max_segments), cfg.std_coeff);
}

}  // namespace mvsum::topicseg
