#pragma once

#include <cstddef>
#include <vector>

namespace mvsum {

// Contiguous utterance range, 0-based, inclusive on both ends. File formats
// use 1-based ranges; convert at the I/O boundary.
struct Block {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start + 1; }
  friend bool operator==(const Block&, const Block&) = default;
};

// Ordered partition of utterances 0..m-1 into contiguous blocks.
using Segmentation = std::vector<Block>;

// True when blocks cover 0..m-1 in order with no gaps or overlaps.
inline bool is_partition(const Segmentation& seg, std::size_t m) {
  if (m == 0 || seg.empty()) return false;
  std::size_t next = 0;
  for (const Block& b : seg) {
    if (b.start != next || b.end < b.start) return false;
    next = b.end + 1;
  }
  return next == m;
}

// Blocks from cut points: each cut c (1 <= c < m) starts a new block at c.
inline Segmentation from_boundaries(const std::vector<std::size_t>& sorted_cuts, std::size_t m) {
  Segmentation seg;
  std::size_t start = 0;
  for (std::size_t c : sorted_cuts) {
    seg.push_back({start, c - 1});
    start = c;
  }
  seg.push_back({start, m - 1});
  return seg;
}

}  // namespace mvsum
