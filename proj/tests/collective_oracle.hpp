#pragma once

// Sequential reference for the collectives plus a fuzz driver that runs the
// same randomized call script on a real group. Shared by the comm unit
// tests and the acceptance suite.

#include <chrono>
#include <cstring>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "rfspmd/comm.hpp"
#include "rfspmd/rng.hpp"

namespace oracle {

enum class Op { kAllgather, kReduceInt, kReduceReal, kAllreduceInt, kAllreduceReal, kBroadcast, kBarrier };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kAllgather: return "allgather";
    case Op::kReduceInt: return "reduce_sum(int)";
    case Op::kReduceReal: return "reduce_sum(real)";
    case Op::kAllreduceInt: return "allreduce_sum(int)";
    case Op::kAllreduceReal: return "allreduce_sum(real)";
    case Op::kBroadcast: return "broadcast";
    case Op::kBarrier: return "barrier";
  }
  return "?";
}

// One fuzz case: per-rank inputs drawn from a keyed stream.
struct Case {
  Op op;
  std::size_t size;
  std::size_t root;
  std::vector<rfspmd::Bytes> payloads;         // allgather/broadcast
  std::vector<std::vector<std::int64_t>> ints;  // int reductions
  std::vector<std::vector<double>> reals;       // real reductions
};

inline Case make_case(Op op, std::size_t size, std::uint64_t id) {
  auto s = rfspmd::make_stream(id, {rfspmd::StreamPurpose::kFuzz, static_cast<std::uint64_t>(op)});
  Case c{op, size, s.rand_below(size), {}, {}, {}};
  const std::size_t width = s.rand_below(6);
  for (std::size_t r = 0; r < size; ++r) {
    rfspmd::Bytes p(s.rand_below(40));
    for (auto& b : p) b = static_cast<std::uint8_t>(s.rand_below(256));
    c.payloads.push_back(std::move(p));
    std::vector<std::int64_t> iv(width);
    for (auto& v : iv) v = static_cast<std::int64_t>(s.next_u64() >> 4) - (std::int64_t{1} << 59);
    c.ints.push_back(std::move(iv));
    std::vector<double> rv(width);
    for (auto& v : rv) v = (s.uniform() - 0.5) * 1e6;
    c.reals.push_back(std::move(rv));
  }
  return c;
}

// What rank r should observe, as a byte string, for case c.
inline std::string expected(const Case& c, std::size_t r) {
  std::string out;
  auto put_ints = [&](const std::vector<std::int64_t>& v) {
    for (auto x : v) out += std::to_string(x) + ",";
  };
  auto put_reals = [&](const std::vector<double>& v) {
    for (auto x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, 8);
      out += std::to_string(bits) + ",";
    }
  };
  auto int_sum = [&] {
    std::vector<std::int64_t> sum(c.ints[0].size(), 0);
    for (const auto& v : c.ints)
      for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
    return sum;
  };
  auto real_sum = [&] {
    std::vector<double> sum = c.reals[0];
    for (std::size_t k = 1; k < c.reals.size(); ++k)
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += c.reals[k][i];
    return sum;
  };
  switch (c.op) {
    case Op::kAllgather:
      for (const auto& p : c.payloads) out += std::string(p.begin(), p.end()) + "|";
      break;
    case Op::kBroadcast:
      out = std::string(c.payloads[c.root].begin(), c.payloads[c.root].end());
      break;
    case Op::kReduceInt:
      if (r == c.root) put_ints(int_sum()); else out = "none";
      break;
    case Op::kReduceReal:
      if (r == c.root) put_reals(real_sum()); else out = "none";
      break;
    case Op::kAllreduceInt: put_ints(int_sum()); break;
    case Op::kAllreduceReal: put_reals(real_sum()); break;
    case Op::kBarrier: out = "ok"; break;
  }
  return out;
}

// Runs case c on this rank and renders the observation like expected().
inline std::string observe(rfspmd::Communicator& comm, const Case& c) {
  const std::size_t r = comm.rank();
  std::string out;
  auto put_ints = [&](const std::vector<std::int64_t>& v) {
    for (auto x : v) out += std::to_string(x) + ",";
  };
  auto put_reals = [&](const std::vector<double>& v) {
    for (auto x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, 8);
      out += std::to_string(bits) + ",";
    }
  };
  switch (c.op) {
    case Op::kAllgather:
      for (const auto& p : comm.allgather(c.payloads[r])) out += std::string(p.begin(), p.end()) + "|";
      break;
    case Op::kBroadcast: {
      auto got = comm.broadcast(r == c.root ? c.payloads[r] : rfspmd::Bytes{}, c.root);
      out = std::string(got.begin(), got.end());
      break;
    }
    case Op::kReduceInt: {
      auto got = comm.reduce_sum(std::span<const std::int64_t>(c.ints[r]), c.root);
      if (got) put_ints(*got); else out = "none";
      break;
    }
    case Op::kReduceReal: {
      auto got = comm.reduce_sum(std::span<const double>(c.reals[r]), c.root);
      if (got) put_reals(*got); else out = "none";
      break;
    }
    case Op::kAllreduceInt: put_ints(comm.allreduce_sum(std::span<const std::int64_t>(c.ints[r]))); break;
    case Op::kAllreduceReal: put_reals(comm.allreduce_sum(std::span<const double>(c.reals[r]))); break;
    case Op::kBarrier:
      comm.barrier();
      out = "ok";
      break;
  }
  return out;
}

// Runs `cases` consecutive fuzz cases of `op` on one group of `size`
// ranks. Returns the number of (case, rank) observations that differ from
// the reference, and records every observation into `trace` (rank-major)
// for transport comparisons.
inline std::size_t run_fuzz(rfspmd::TransportKind kind, Op op, std::size_t size, std::size_t cases,
                            std::uint64_t first_id, std::vector<std::string>* trace = nullptr) {
  std::vector<Case> script;
  for (std::size_t i = 0; i < cases; ++i) script.push_back(make_case(op, size, first_id + i));
  std::vector<std::vector<std::string>> seen(size);
  rfspmd::run_group(size, kind, [&](rfspmd::Communicator& comm) {
    for (const auto& c : script) seen[comm.rank()].push_back(observe(comm, c));
    comm.finalize();
  });
  std::size_t mismatches = 0;
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t i = 0; i < cases; ++i) {
      if (seen[r][i] != expected(script[i], r)) ++mismatches;
      if (trace) trace->push_back(seen[r][i]);
    }
  }
  return mismatches;
}

}  // namespace oracle
