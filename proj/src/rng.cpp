#include "rfspmd/rng.hpp"

#include <numeric>
#include <string>

#include "rfspmd/error.hpp"

namespace rfspmd {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53;
constexpr std::uint32_t kMul1 = 0xCD9E8D57;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = std::uint64_t{a} * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

RngStream::RngStream(std::uint64_t seed, StreamKey key, std::uint64_t counter)
    : seed_(seed), key_(key), counter_(counter), cached_block_(0) {}

RngStream make_stream(std::uint64_t seed, StreamKey key) { return RngStream(seed, key); }

void RngStream::refill(std::uint64_t block) {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block),
      (static_cast<std::uint32_t>(key_.purpose) << 24) |
          static_cast<std::uint32_t>((block >> 32) & 0xFFFFFF),
      static_cast<std::uint32_t>(key_.index),
      static_cast<std::uint32_t>(key_.index >> 32),
  };
  block_ = philox4x32(ctr, {static_cast<std::uint32_t>(seed_),
                            static_cast<std::uint32_t>(seed_ >> 32)});
  cached_block_ = block;
  has_block_ = true;
}

std::uint64_t RngStream::next_u64() {
  if (counter_ > kMaxPosition) throw Error("RngStream: counter space exhausted");
  const std::uint64_t block = counter_ >> 1;
  if (!has_block_ || cached_block_ != block) refill(block);
  const std::size_t lane = (counter_ & 1) * 2;
  ++counter_;
  return std::uint64_t{block_[lane]} | (std::uint64_t{block_[lane + 1]} << 32);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::rand_below(std::uint64_t m) {
  if (m == 0) throw InvalidArgument("rand_below: m must be >= 1");
  // Reject the low (2^64 mod m) values so the kept range is a multiple of m.
  const std::uint64_t threshold = (0 - m) % m;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % m;
  }
}

std::vector<std::size_t> sample_with_replacement(RngStream& stream, std::size_t m,
                                                 std::size_t k) {
  std::vector<std::size_t> out;
  if (k == 0) return out;
  if (m == 0) throw InvalidArgument("sample_with_replacement: empty population");
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(stream.rand_below(m));
  return out;
}

std::vector<std::size_t> sample_without_replacement(RngStream& stream, std::size_t m,
                                                    std::size_t k) {
  if (k > m) {
    throw InvalidArgument("sample_without_replacement: k=" + std::to_string(k) +
                          " exceeds population m=" + std::to_string(m));
  }
  std::vector<std::size_t> pool(m);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + stream.rand_below(m - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace rfspmd
