#include "rfspmd/partition.hpp"

#include <string>

#include "rfspmd/error.hpp"

namespace rfspmd {

ChunkPlan chunk_sizes(std::size_t total, std::size_t k) {
  if (k == 0) throw InvalidArgument("chunk_sizes: worker count must be >= 1");
  ChunkPlan plan{total, k, std::vector<std::size_t>(k), std::vector<std::size_t>(k)};
  const std::size_t base = total / k;
  const std::size_t extra = total % k;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < k; ++i) {
    plan.sizes[i] = base + (i < extra ? 1 : 0);
    plan.offsets[i] = offset;
    offset += plan.sizes[i];
  }
  return plan;
}

IndexRange block_indices(std::size_t n, std::size_t size, std::size_t rank) {
  if (size == 0 || rank >= size) {
    throw InvalidArgument("block_indices: rank " + std::to_string(rank) +
                          " out of range for size " + std::to_string(size));
  }
  const std::size_t base = n / size;
  const std::size_t extra = n % size;
  const std::size_t begin = rank * base + (rank < extra ? rank : extra);
  return {begin, begin + base + (rank < extra ? 1 : 0)};
}

}  // namespace rfspmd
