#include <condition_variable>
#include <deque>
#include <mutex>

#include "rfspmd/comm.hpp"
#include "rfspmd/error.hpp"

namespace rfspmd {
namespace {

// Shared state of one in-process group: a mailbox per destination rank,
// holding a FIFO per source rank. One mutex guards the whole group.
struct GroupState {
  explicit GroupState(std::size_t size) : queues(size, std::vector<std::deque<Frame>>(size)) {}

  std::mutex mutex;
  std::condition_variable changed;
  std::vector<std::vector<std::deque<Frame>>> queues;  // [dst][src]
  bool aborted = false;
  std::string reason;
};

class InProcessTransport final : public Transport {
 public:
  InProcessTransport(std::shared_ptr<GroupState> state, std::size_t rank)
      : state_(std::move(state)), rank_(rank) {}

  std::size_t rank() const override { return rank_; }
  std::size_t size() const override { return state_->queues.size(); }

  void send(std::size_t peer, const Frame& frame) override {
    if (peer >= size() || peer == rank_) throw InvalidArgument("in-process send: bad peer");
    {
      std::lock_guard lock(state_->mutex);
      if (closed_) throw ProtocolError("in-process send after close");
      if (state_->aborted) throw ProtocolError("group aborted: " + state_->reason);
      state_->queues[peer][rank_].push_back(frame);
    }
    state_->changed.notify_all();
  }

  Frame recv(std::size_t peer, std::chrono::milliseconds timeout) override {
    if (peer >= size() || peer == rank_) throw InvalidArgument("in-process recv: bad peer");
    std::unique_lock lock(state_->mutex);
    auto& queue = state_->queues[rank_][peer];
    const bool ready = state_->changed.wait_for(
        lock, timeout, [&] { return !queue.empty() || state_->aborted; });
    // Frames already delivered win over a later abort.
    if (!queue.empty()) {
      Frame frame = std::move(queue.front());
      queue.pop_front();
      return frame;
    }
    if (state_->aborted) throw ProtocolError("group aborted: " + state_->reason);
    if (!ready || queue.empty()) {
      throw ProtocolError("rank " + std::to_string(rank_) + " timed out after " +
                          std::to_string(timeout.count()) + " ms waiting for rank " +
                          std::to_string(peer));
    }
    return {};
  }

  void abort(const std::string& reason) noexcept override {
    {
      std::lock_guard lock(state_->mutex);
      if (state_->aborted) return;
      state_->aborted = true;
      state_->reason = reason;
    }
    state_->changed.notify_all();
  }

  void close() override {
    std::lock_guard lock(state_->mutex);
    closed_ = true;
  }

 private:
  std::shared_ptr<GroupState> state_;
  std::size_t rank_;
  bool closed_ = false;
};

}  // namespace

std::vector<Communicator> make_in_process_group(std::size_t size, std::chrono::milliseconds timeout) {
  if (size == 0) throw InvalidArgument("make_in_process_group: size must be >= 1");
  auto state = std::make_shared<GroupState>(size);
  std::vector<Communicator> group;
  group.reserve(size);
  for (std::size_t r = 0; r < size; ++r) {
    group.emplace_back(std::make_unique<InProcessTransport>(state, r), timeout);
  }
  return group;
}

}  // namespace rfspmd
