#pragma once

#include <cstddef>
#include <vector>

namespace rfspmd {

// Static near-equal division of `total` work items over k workers.
// The first (total mod k) chunks get one extra item.
struct ChunkPlan {
  std::size_t total = 0;
  std::size_t k = 0;
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> offsets;
};

// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

ChunkPlan chunk_sizes(std::size_t total, std::size_t k);

// Contiguous block `rank` of chunk_sizes(n, size).
IndexRange block_indices(std::size_t n, std::size_t size, std::size_t rank);

}  // namespace rfspmd
