#include "rfspmd/comm.hpp"

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <thread>

#include "rfspmd/error.hpp"

namespace rfspmd {
namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{in[at + i]} << (8 * i);
  return v;
}

// Sum payload: kind u8 (0 = int64, 1 = f64) | count u32 | values LE.
template <typename T>
constexpr std::uint8_t kSumKind = std::is_same_v<T, double> ? 1 : 0;

template <typename T>
Bytes encode_values(std::span<const T> values) {
  Bytes out;
  out.reserve(5 + values.size() * 8);
  out.push_back(kSumKind<T>);
  put_u32(out, static_cast<std::uint32_t>(values.size()));
  for (T v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

template <typename T>
std::vector<T> decode_values(std::span<const std::uint8_t> in, std::size_t from_rank) {
  if (in.size() < 5 || in[0] != kSumKind<T>) {
    throw ProtocolError("reduce: rank " + std::to_string(from_rank) +
                        " contributed a different element type");
  }
  const std::uint32_t count = get_u32(in, 1);
  if (in.size() != 5 + std::size_t{count} * 8) {
    throw ProtocolError("reduce: malformed payload from rank " + std::to_string(from_rank));
  }
  std::vector<T> out(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{in[5 + 8 * k + i]} << (8 * i);
    std::memcpy(&out[k], &bits, 8);
  }
  return out;
}

// Elementwise sum of every rank's vector, accumulated in rank order.
template <typename T>
Bytes sum_contributions(const std::vector<Bytes>& contributions) {
  std::vector<T> total = decode_values<T>(contributions[0], 0);
  for (std::size_t r = 1; r < contributions.size(); ++r) {
    const std::vector<T> part = decode_values<T>(contributions[r], r);
    if (part.size() != total.size()) {
      throw ProtocolError("reduce: shape mismatch, rank 0 has " + std::to_string(total.size()) +
                          " elements, rank " + std::to_string(r) + " has " +
                          std::to_string(part.size()));
    }
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += part[i];
  }
  return encode_values<T>(std::span<const T>(total));
}

// Self transport: the only peer is this rank, so no frame ever moves.
class SelfTransport final : public Transport {
 public:
  std::size_t rank() const override { return 0; }
  std::size_t size() const override { return 1; }
  void send(std::size_t, const Frame&) override {
    throw ProtocolError("single-rank group has no peers");
  }
  Frame recv(std::size_t, std::chrono::milliseconds) override {
    throw ProtocolError("single-rank group has no peers");
  }
  void abort(const std::string&) noexcept override {}
  void close() override {}
};

}  // namespace

std::string_view tag_name(Tag tag) {
  switch (tag) {
    case Tag::kHello: return "hello";
    case Tag::kBarrier: return "barrier";
    case Tag::kBroadcast: return "broadcast";
    case Tag::kAllgather: return "allgather";
    case Tag::kReduce: return "reduce";
    case Tag::kAllreduce: return "allreduce";
    case Tag::kBye: return "bye";
  }
  return "unknown";
}

Bytes encode_frame(const Frame& frame) {
  Bytes out;
  out.reserve(kFrameHeaderSize + frame.payload.size());
  put_u32(out, static_cast<std::uint32_t>(frame.payload.size()));
  out.push_back(static_cast<std::uint8_t>(frame.tag));
  put_u32(out, frame.sequence);
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) throw ProtocolError("frame shorter than its header");
  const std::uint32_t length = get_u32(bytes, 0);
  const std::uint8_t tag = bytes[4];
  if (tag < 1 || tag > 7) throw ProtocolError("unknown frame tag " + std::to_string(tag));
  if (bytes.size() != kFrameHeaderSize + length) {
    throw ProtocolError("frame length field does not match payload size");
  }
  return {static_cast<Tag>(tag), get_u32(bytes, 5),
          Bytes(bytes.begin() + kFrameHeaderSize, bytes.end())};
}

// ---------------------------------------------------------------------------

Communicator::Communicator(std::unique_ptr<Transport> transport, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout), out_(&std::cout) {
  if (!transport_) throw InvalidArgument("Communicator: null transport");
  rank_ = transport_->rank();
  size_ = transport_->size();
}

Communicator::Communicator(Communicator&&) noexcept = default;
Communicator& Communicator::operator=(Communicator&&) noexcept = default;

Communicator::~Communicator() {
  if (transport_ && !finalized_) {
    transport_->abort("rank " + std::to_string(rank_) + " left the group without finalize");
    try {
      transport_->close();
    } catch (...) {
    }
  }
}

Communicator Communicator::self() { return Communicator(std::make_unique<SelfTransport>()); }

void Communicator::check_live(std::string_view what) const {
  if (finalized_) throw ProtocolError(std::string(what) + " called after finalize");
}

void Communicator::check_root(std::size_t root) const {
  if (root >= size_) {
    throw InvalidArgument("root " + std::to_string(root) + " out of range for size " +
                          std::to_string(size_));
  }
}

Bytes Communicator::exchange(Tag tag, Bytes contribution, const Combine& combine) {
  check_live(tag_name(tag));
  const std::uint32_t seq = ++sequence_;
  if (size_ == 1) {
    std::vector<Bytes> all{std::move(contribution)};
    return std::move(combine(all)[0]);
  }

  if (rank_ != 0) {
    transport_->send(0, Frame{tag, seq, std::move(contribution)});
    Frame reply = transport_->recv(0, timeout_);
    if (reply.tag == Tag::kBye && !reply.payload.empty()) {
      throw ProtocolError("group aborted by rank 0: " +
                          std::string(reply.payload.begin(), reply.payload.end()));
    }
    if (reply.tag != tag || reply.sequence != seq) {
      const std::string why = "rank " + std::to_string(rank_) + " expected " +
                              std::string(tag_name(tag)) + "#" + std::to_string(seq) +
                              " but rank 0 answered " + std::string(tag_name(reply.tag)) + "#" +
                              std::to_string(reply.sequence);
      transport_->abort(why);
      throw ProtocolError(why);
    }
    return std::move(reply.payload);
  }

  try {
    std::vector<Bytes> all(size_);
    all[0] = std::move(contribution);
    for (std::size_t r = 1; r < size_; ++r) {
      Frame frame = transport_->recv(r, timeout_);
      if (frame.tag == Tag::kBye && !frame.payload.empty()) {
        throw ProtocolError("rank " + std::to_string(r) + " aborted: " +
                            std::string(frame.payload.begin(), frame.payload.end()));
      }
      if (frame.tag != tag || frame.sequence != seq) {
        throw ProtocolError("mismatched collective: rank 0 is in " + std::string(tag_name(tag)) +
                            "#" + std::to_string(seq) + " but rank " + std::to_string(r) +
                            " sent " + std::string(tag_name(frame.tag)) + "#" +
                            std::to_string(frame.sequence));
      }
      all[r] = std::move(frame.payload);
    }
    std::vector<Bytes> replies = combine(all);
    for (std::size_t r = 1; r < size_; ++r) {
      transport_->send(r, Frame{tag, seq, std::move(replies[r])});
    }
    return std::move(replies[0]);
  } catch (const Error& e) {
    transport_->abort(e.what());
    throw;
  }
}

void Communicator::barrier() {
  exchange(Tag::kBarrier, {}, [](std::vector<Bytes>& all) { return std::vector<Bytes>(all.size()); });
}

Bytes Communicator::broadcast(Bytes payload, std::size_t root) {
  check_root(root);
  Bytes contribution = rank_ == root ? std::move(payload) : Bytes{};
  return exchange(Tag::kBroadcast, std::move(contribution), [root](std::vector<Bytes>& all) {
    return std::vector<Bytes>(all.size(), all[root]);
  });
}

std::vector<Bytes> Communicator::allgather(Bytes payload) {
  // Rank 0 sends one blob: count u32 | (len u32 | bytes) per rank.
  Bytes blob = exchange(Tag::kAllgather, std::move(payload), [](std::vector<Bytes>& all) {
    Bytes packed;
    std::size_t total = 4;
    for (const auto& b : all) total += 4 + b.size();
    packed.reserve(total);
    put_u32(packed, static_cast<std::uint32_t>(all.size()));
    for (const auto& b : all) {
      put_u32(packed, static_cast<std::uint32_t>(b.size()));
      packed.insert(packed.end(), b.begin(), b.end());
    }
    return std::vector<Bytes>(all.size(), packed);
  });
  std::vector<Bytes> out;
  if (blob.size() < 4) throw ProtocolError("allgather: malformed reply");
  const std::uint32_t count = get_u32(blob, 0);
  if (count != size_) throw ProtocolError("allgather: reply has wrong entry count");
  std::size_t at = 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (blob.size() - at < 4) throw ProtocolError("allgather: truncated reply");
    const std::uint32_t len = get_u32(blob, at);
    at += 4;
    if (blob.size() - at < len) throw ProtocolError("allgather: truncated reply");
    out.emplace_back(blob.begin() + at, blob.begin() + at + len);
    at += len;
  }
  return out;
}

namespace {

template <typename T>
std::optional<std::vector<T>> do_reduce(Communicator& comm, std::span<const T> value,
                                        std::size_t root,
                                        const std::function<Bytes(Bytes)>& exchange) {
  Bytes reply = exchange(encode_values<T>(value));
  if (comm.rank() != root) return std::nullopt;
  return decode_values<T>(reply, 0);
}

}  // namespace

std::optional<std::vector<std::int64_t>> Communicator::reduce_sum(std::span<const std::int64_t> value,
                                                                  std::size_t root) {
  check_root(root);
  return do_reduce<std::int64_t>(*this, value, root, [&](Bytes mine) {
    return exchange(Tag::kReduce, std::move(mine), [root](std::vector<Bytes>& all) {
      std::vector<Bytes> replies(all.size());
      replies[root] = sum_contributions<std::int64_t>(all);
      return replies;
    });
  });
}

std::optional<std::vector<double>> Communicator::reduce_sum(std::span<const double> value,
                                                            std::size_t root) {
  check_root(root);
  return do_reduce<double>(*this, value, root, [&](Bytes mine) {
    return exchange(Tag::kReduce, std::move(mine), [root](std::vector<Bytes>& all) {
      std::vector<Bytes> replies(all.size());
      replies[root] = sum_contributions<double>(all);
      return replies;
    });
  });
}

std::vector<std::int64_t> Communicator::allreduce_sum(std::span<const std::int64_t> value) {
  Bytes reply = exchange(Tag::kAllreduce, encode_values(value), [](std::vector<Bytes>& all) {
    return std::vector<Bytes>(all.size(), sum_contributions<std::int64_t>(all));
  });
  return decode_values<std::int64_t>(reply, 0);
}

std::vector<double> Communicator::allreduce_sum(std::span<const double> value) {
  Bytes reply = exchange(Tag::kAllreduce, encode_values(value), [](std::vector<Bytes>& all) {
    return std::vector<Bytes>(all.size(), sum_contributions<double>(all));
  });
  return decode_values<double>(reply, 0);
}

bool Communicator::root_print(std::string_view text) {
  if (rank_ != 0) return false;
  *out_ << text;
  out_->flush();
  return true;
}

void Communicator::finalize() {
  if (finalized_) throw ProtocolError("finalize called twice on rank " + std::to_string(rank_));
  const std::uint32_t seq = ++sequence_;
  out_->flush();
  if (size_ > 1) {
    try {
      if (rank_ != 0) {
        transport_->send(0, Frame{Tag::kBye, seq, {}});
        Frame ack = transport_->recv(0, timeout_);
        if (ack.tag != Tag::kBye || !ack.payload.empty() || ack.sequence != seq) {
          throw ProtocolError("finalize: rank 0 did not acknowledge bye#" + std::to_string(seq));
        }
      } else {
        for (std::size_t r = 1; r < size_; ++r) {
          Frame bye = transport_->recv(r, timeout_);
          if (bye.tag != Tag::kBye || !bye.payload.empty() || bye.sequence != seq) {
            throw ProtocolError("finalize: rank " + std::to_string(r) + " sent " +
                                std::string(tag_name(bye.tag)) + "#" +
                                std::to_string(bye.sequence) + " instead of bye#" +
                                std::to_string(seq));
          }
        }
        for (std::size_t r = 1; r < size_; ++r) transport_->send(r, Frame{Tag::kBye, seq, {}});
      }
    } catch (const Error& e) {
      transport_->abort(e.what());
      finalized_ = true;
      transport_->close();
      throw;
    }
  }
  finalized_ = true;
  transport_->close();
}

// ---------------------------------------------------------------------------

void run_group(std::size_t size, TransportKind kind, const std::function<void(Communicator&)>& body,
               std::chrono::milliseconds timeout) {
  if (size == 0) throw InvalidArgument("run_group: size must be >= 1");
  std::vector<std::exception_ptr> errors(size);
  std::vector<std::thread> threads;
  threads.reserve(size);

  auto run_rank = [&](std::size_t r, auto make_comm) {
    try {
      Communicator comm = make_comm();
      try {
        body(comm);
      } catch (...) {
        errors[r] = std::current_exception();
        // The destructor aborts the group so peers stop waiting.
      }
    } catch (...) {
      if (!errors[r]) errors[r] = std::current_exception();
    }
  };

  // Both outlive the threads below.
  std::vector<Communicator> comms;
  std::uint16_t port = 0;
  if (kind == TransportKind::kInProcess) {
    comms = make_in_process_group(size, timeout);
    for (std::size_t r = 0; r < size; ++r) {
      threads.emplace_back([&, r] {
        run_rank(r, [&] { return std::move(comms[r]); });
      });
    }
  } else {
    Listener listener("127.0.0.1", 0);
    port = listener.port();
    threads.emplace_back([&, l = std::move(listener)]() mutable {
      run_rank(0, [&] { return Communicator(accept_socket_group(std::move(l), size, timeout), timeout); });
    });
    for (std::size_t r = 1; r < size; ++r) {
      threads.emplace_back([&, r] {
        run_rank(r, [&] {
          return Communicator(connect_socket_group("127.0.0.1", port, r, size, timeout), timeout);
        });
      });
    }
  }
  for (auto& t : threads) t.join();

  // Prefer the originating failure over the aborts it caused on other ranks.
  std::exception_ptr first;
  for (auto& e : errors) {
    if (!e) continue;
    if (!first) first = e;
    try {
      std::rethrow_exception(e);
    } catch (const ProtocolError& pe) {
      const std::string what = pe.what();
      if (what.find("aborted") == std::string::npos && what.find("left the group") == std::string::npos) {
        std::rethrow_exception(e);
      }
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace rfspmd
