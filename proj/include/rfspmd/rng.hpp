#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace rfspmd {

enum class StreamPurpose : std::uint8_t { kSplit = 0, kTree = 1, kSynth = 2, kFuzz = 3 };

// Identifies one logical random decision, e.g. (kTree, global tree index).
struct StreamKey {
  StreamPurpose purpose = StreamPurpose::kSplit;
  std::uint64_t index = 0;

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

// Philox4x32-10 block function. Exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// Counter-based random stream. The output at position `counter` is a pure
// function of (seed, key, counter): the seed is the Philox key, and the
// 128-bit Philox counter packs (block, purpose, index), so distinct keys
// under one seed never share a counter value.
//
// Each next_u64 consumes exactly one position; uniform consumes one;
// rand_below consumes one per rejection-sampling attempt.
class RngStream {
 public:
  // Positions per stream are limited to 2^57 (56-bit block counter).
  static constexpr std::uint64_t kMaxPosition = (std::uint64_t{1} << 57) - 1;

  RngStream(std::uint64_t seed, StreamKey key, std::uint64_t counter = 0);

  std::uint64_t seed() const { return seed_; }
  const StreamKey& key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Top 53 bits of next_u64 scaled by 2^-53; always in [0, 1).
  double uniform();
  // Unbiased draw in [0, m) by rejection; m must be >= 1.
  std::uint64_t rand_below(std::uint64_t m);

 private:
  void refill(std::uint64_t block);

  std::uint64_t seed_;
  StreamKey key_;
  std::uint64_t counter_;
  std::uint64_t cached_block_;
  bool has_block_ = false;
  std::array<std::uint32_t, 4> block_{};
};

RngStream make_stream(std::uint64_t seed, StreamKey key);

// k indices drawn uniformly from [0, m) with replacement.
std::vector<std::size_t> sample_with_replacement(RngStream& stream, std::size_t m,
                                                 std::size_t k);

// k distinct indices from [0, m) via a partial Fisher-Yates shuffle of
// 0..m-1; the result is in draw order. Throws InvalidArgument when k > m.
std::vector<std::size_t> sample_without_replacement(RngStream& stream, std::size_t m,
                                                    std::size_t k);

}  // namespace rfspmd
