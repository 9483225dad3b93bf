#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rfspmd {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::chrono::milliseconds kDefaultCommTimeout{30000};

// Collective opcodes; the numeric values are the wire tags.
enum class Tag : std::uint8_t {
  kHello = 1,
  kBarrier = 2,
  kBroadcast = 3,
  kAllgather = 4,
  kReduce = 5,
  kAllreduce = 6,
  kBye = 7,
};

std::string_view tag_name(Tag tag);

// Wire layout: length u32 | tag u8 | sequence u32 | payload, little-endian.
struct Frame {
  Tag tag = Tag::kHello;
  std::uint32_t sequence = 0;
  Bytes payload;
};

inline constexpr std::size_t kFrameHeaderSize = 9;

Bytes encode_frame(const Frame& frame);
// Parses a complete frame; throws ProtocolError on bad length or tag.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Point-to-point links used by the communicator. Collectives run as a
// star through rank 0, so only rank 0 <-> rank r links are exercised.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::size_t rank() const = 0;
  virtual std::size_t size() const = 0;
  virtual void send(std::size_t peer, const Frame& frame) = 0;
  // Blocks until a frame from `peer` arrives; throws ProtocolError on
  // timeout or group abort, TransportError on a broken link.
  virtual Frame recv(std::size_t peer, std::chrono::milliseconds timeout) = 0;
  // Wakes every blocked participant with a ProtocolError carrying `reason`.
  virtual void abort(const std::string& reason) noexcept = 0;
  virtual void close() = 0;
};

// SPMD endpoint. Every rank must issue the same collectives in the same
// order; each call carries a sequence number and tag that rank 0 checks,
// so divergent call sequences fail fast instead of hanging.
class Communicator {
 public:
  explicit Communicator(std::unique_ptr<Transport> transport,
                        std::chrono::milliseconds timeout = kDefaultCommTimeout);
  Communicator(Communicator&&) noexcept;
  Communicator& operator=(Communicator&&) noexcept;
  ~Communicator();

  // Single-rank group.
  static Communicator self();
  // Socket endpoint configured by `rf launch` (RF_SPMD_* variables); a
  // single-rank group when the variables are absent.
  static Communicator from_environment();

  std::size_t rank() const { return rank_; }
  std::size_t size() const { return size_; }
  bool is_root() const { return rank_ == 0; }
  std::chrono::milliseconds timeout() const { return timeout_; }

  void barrier();
  Bytes broadcast(Bytes payload, std::size_t root = 0);
  // Rank-ordered contributions, identical on every rank.
  std::vector<Bytes> allgather(Bytes payload);

  // Elementwise sums in rank order. reduce_sum returns nullopt off-root.
  std::optional<std::vector<std::int64_t>> reduce_sum(std::span<const std::int64_t> value,
                                                      std::size_t root = 0);
  std::optional<std::vector<double>> reduce_sum(std::span<const double> value, std::size_t root = 0);
  std::vector<std::int64_t> allreduce_sum(std::span<const std::int64_t> value);
  std::vector<double> allreduce_sum(std::span<const double> value);

  // Writes `text` on rank 0 only; returns whether this rank wrote.
  bool root_print(std::string_view text);
  void set_output(std::ostream* out) { out_ = out; }

  // Closing handshake; must be the last call. A second call or any
  // collective afterwards throws ProtocolError.
  void finalize();
  bool finalized() const { return finalized_; }

 private:
  using Combine = std::function<std::vector<Bytes>(std::vector<Bytes>&)>;
  Bytes exchange(Tag tag, Bytes contribution, const Combine& combine);
  void check_root(std::size_t root) const;
  void check_live(std::string_view what) const;

  std::unique_ptr<Transport> transport_;
  std::chrono::milliseconds timeout_;
  std::size_t rank_ = 0;
  std::size_t size_ = 1;
  std::uint32_t sequence_ = 0;
  bool finalized_ = false;
  std::ostream* out_;
};

// ---------------------------------------------------------------------------
// Transports

// All ranks of a group as concurrent workers inside one process.
std::vector<Communicator> make_in_process_group(
    std::size_t size, std::chrono::milliseconds timeout = kDefaultCommTimeout);

// Listening TCP socket on an ephemeral port.
class Listener {
 public:
  explicit Listener(const std::string& host = "127.0.0.1", std::uint16_t port = 0);
  // Adopts an already-listening descriptor (inherited from the launcher).
  static Listener adopt(int fd);
  Listener(Listener&&) noexcept;
  Listener& operator=(Listener&&) noexcept;
  ~Listener();

  int fd() const { return fd_; }
  std::uint16_t port() const { return port_; }
  int release();

 private:
  struct Adopted {};
  explicit Listener(Adopted) {}
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// Rank 0 side: accepts size-1 peers, each identified by its hello frame.
std::unique_ptr<Transport> accept_socket_group(Listener listener, std::size_t size,
                                               std::chrono::milliseconds timeout);
// Rank r > 0: connects to rank 0 (retrying until timeout) and says hello.
std::unique_ptr<Transport> connect_socket_group(const std::string& host, std::uint16_t port,
                                                std::size_t rank, std::size_t size,
                                                std::chrono::milliseconds timeout);

// Runs `body` once per rank on concurrent threads. Any rank that throws
// aborts the group; the first error that is not a secondary abort is
// rethrown after all threads join.
enum class TransportKind { kInProcess, kSocket };
void run_group(std::size_t size, TransportKind kind, const std::function<void(Communicator&)>& body,
               std::chrono::milliseconds timeout = kDefaultCommTimeout);

// ---------------------------------------------------------------------------
// Launcher

// Environment handed to every launched rank.
inline constexpr const char* kEnvSize = "RF_SPMD_SIZE";
inline constexpr const char* kEnvRank = "RF_SPMD_RANK";
inline constexpr const char* kEnvAddr = "RF_SPMD_ADDR";  // host:port of the rendezvous
inline constexpr const char* kEnvListenFd = "RF_SPMD_LISTEN_FD";  // rank 0 only
inline constexpr const char* kEnvTimeoutMs = "RF_SPMD_TIMEOUT_MS";

struct LaunchOptions {
  std::string host = "127.0.0.1";
  std::chrono::milliseconds timeout = kDefaultCommTimeout;
  std::ostream* log = nullptr;  // failure reports; std::cerr when null
  bool discard_stdout = false;  // children write stdout to /dev/null
};

// Spawns n copies of argv (argv[0] resolved through PATH), waits for all,
// and returns per-rank exit codes (128 + signal for crashed ranks). Once a
// rank fails the others are terminated.
std::vector<int> launch(std::size_t n, const std::vector<std::string>& argv,
                        const LaunchOptions& options = {});

}  // namespace rfspmd
