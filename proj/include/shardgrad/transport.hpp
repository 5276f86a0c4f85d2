// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "shardgrad/core.hpp"

namespace shardgrad {

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

enum class Tag : std::uint8_t {
    InitData = 0,
    ActivationBroadcast,
    PartialActivation,
    ErrorBroadcast,
    PartialError,
    GradPush,
    ParamPull,
    ParamState,
    Shutdown,
};

inline constexpr std::size_t kTagCount = 9;

inline std::string to_string(Tag t) {
    static const char* names[] = {"InitData",   "ActivationBroadcast", "PartialActivation",
                                  "ErrorBroadcast", "PartialError",    "GradPush",
                                  "ParamPull",  "ParamState",          "Shutdown"};
    return names[static_cast<std::size_t>(t)];
}

struct Message {
    Tag tag = Tag::Shutdown;
    std::uint16_t layer = 0;
    std::uint16_t sender = 0;
    Vector payload;
};

/// Cumulative transport traffic. A message's size is the element count of its
/// payload; bytes on the wire are 9 + 8 * data_units per frame.
struct MessageStats {
    std::uint64_t messages = 0;
    std::uint64_t data_units = 0;
    std::array<std::uint64_t, kTagCount> messages_by_tag{};
    std::array<std::uint64_t, kTagCount> units_by_tag{};

    std::uint64_t messages_of(Tag t) const { return messages_by_tag[std::size_t(t)]; }
    std::uint64_t units_of(Tag t) const { return units_by_tag[std::size_t(t)]; }
};

// ---------------------------------------------------------------------------
// Wire format: u32 element count (big endian), u8 tag, u16 layer (BE),
// u16 sender (BE), then element-count doubles, each little endian.
// ---------------------------------------------------------------------------

inline std::size_t frame_size(std::size_t payload_elements) {
    return 9 + 8 * payload_elements;
}

inline std::vector<std::uint8_t> encode_frame(const Message& m) {
    std::vector<std::uint8_t> out;
    out.reserve(frame_size(m.payload.size()));
    const std::uint32_t n = static_cast<std::uint32_t>(m.payload.size());
    if (std::uint64_t(n) != m.payload.size()) throw FormatError("frame: payload too large");
    out.push_back(std::uint8_t(n >> 24));
    out.push_back(std::uint8_t(n >> 16));
    out.push_back(std::uint8_t(n >> 8));
    out.push_back(std::uint8_t(n));
    out.push_back(static_cast<std::uint8_t>(m.tag));
    out.push_back(std::uint8_t(m.layer >> 8));
    out.push_back(std::uint8_t(m.layer));
    out.push_back(std::uint8_t(m.sender >> 8));
    out.push_back(std::uint8_t(m.sender));
    for (double d : m.payload) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(bits >> (8 * i)));
    }
    return out;
}

inline Message decode_frame(const std::uint8_t* p, std::size_t len) {
    if (len < 9) throw FormatError("frame: shorter than header");
    const std::uint32_t n = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
                            (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
    if (p[4] >= kTagCount) throw FormatError("frame: unknown tag " + std::to_string(p[4]));
    if (len != frame_size(n))
        throw FormatError("frame: length " + std::to_string(len) + " does not match header count " +
                          std::to_string(n));
    Message m;
    m.tag = static_cast<Tag>(p[4]);
    m.layer = std::uint16_t((std::uint16_t(p[5]) << 8) | p[6]);
    m.sender = std::uint16_t((std::uint16_t(p[7]) << 8) | p[8]);
    m.payload.resize(n);
    const std::uint8_t* q = p + 9;
    for (std::uint32_t i = 0; i < n; ++i, q += 8) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | q[b];
        m.payload[i] = std::bit_cast<double>(bits);
    }
    return m;
}

inline Message decode_frame(const std::vector<std::uint8_t>& bytes) {
    return decode_frame(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Fabric: in-process endpoints connected by per-pair FIFO channels.
//
// Two execution modes. The threaded mode runs every endpoint task on its own
// thread with blocking receives and a wall-clock timeout. The deterministic
// mode also uses one thread per endpoint but hands a single run token around:
// exactly one endpoint executes at a time, an endpoint keeps the token until
// it blocks on an empty channel or returns, and the next runnable endpoint is
// picked by a seeded generator. Two runs with the same seed interleave
// identically. A state where every live endpoint is blocked is reported as a
// deadlock naming the blocked endpoints.
// ---------------------------------------------------------------------------

struct FabricOptions {
    bool deterministic = false;
    std::uint64_t seed = 0;
    std::chrono::milliseconds timeout{5000};
};

class Fabric {
  public:
    explicit Fabric(std::size_t endpoints, FabricOptions opts = {})
        : n_(endpoints), opts_(opts), rng_(opts.seed), chan_(endpoints * endpoints),
          state_(endpoints, State::Idle) {
        if (endpoints == 0) throw TopologyError("fabric: need at least one endpoint");
        if (endpoints > 0xFFFF) throw TopologyError("fabric: endpoint id does not fit the wire format");
    }

    std::size_t size() const { return n_; }
    bool deterministic() const { return opts_.deterministic; }

    void send(std::size_t from, std::size_t to, Message m) {
        check_id(from), check_id(to);
        if (from == to) throw TopologyError("fabric: endpoint sending to itself");
        m.sender = static_cast<std::uint16_t>(from);
        std::unique_lock<std::mutex> lk(mu_);
        stats_.messages += 1;
        stats_.data_units += m.payload.size();
        stats_.messages_by_tag[std::size_t(m.tag)] += 1;
        stats_.units_by_tag[std::size_t(m.tag)] += m.payload.size();
        chan_[from * n_ + to].push_back(std::move(m));
        if (opts_.deterministic) {
            if (state_[to] == State::Blocked && (blocked_on_[to] == from)) state_[to] = State::Ready;
        } else {
            cv_.notify_all();
        }
    }

    Message recv(std::size_t self, std::size_t from) {
        check_id(self), check_id(from);
        auto& q = chan_[from * n_ + self];
        std::unique_lock<std::mutex> lk(mu_);
        if (opts_.deterministic) {
            if (current_ != self)
                throw TransportError("fabric: endpoint " + std::to_string(self) +
                                     " receive outside its scheduled turn");
            if (q.empty()) {
                state_[self] = State::Blocked;
                blocked_on_[self] = from;
                schedule_next(lk);
                cv_.wait(lk, [&] { return current_ == self || poisoned_; });
                if (poisoned_ && q.empty()) throw TransportError(poison_msg_);
                state_[self] = State::Running;
            }
        } else {
            if (!cv_.wait_for(lk, opts_.timeout, [&] { return !q.empty(); }))
                throw TransportError("fabric: receive timeout at endpoint " + std::to_string(self) +
                                     " waiting for endpoint " + std::to_string(from));
        }
        Message m = std::move(q.front());
        q.pop_front();
        return m;
    }

    std::optional<Message> try_recv(std::size_t self, std::size_t from) {
        check_id(self), check_id(from);
        std::unique_lock<std::mutex> lk(mu_);
        auto& q = chan_[from * n_ + self];
        if (q.empty()) return std::nullopt;
        Message m = std::move(q.front());
        q.pop_front();
        return m;
    }

    MessageStats stats() const {
        std::unique_lock<std::mutex> lk(mu_);
        return stats_;
    }

    void reset_stats() {
        std::unique_lock<std::mutex> lk(mu_);
        stats_ = MessageStats{};
    }

    /// Run one task per endpoint to completion. Returns once all have
    /// finished; if any threw, the earliest failure is rethrown.
    void run(std::vector<std::function<void()>> tasks) {
        if (tasks.size() != n_) throw TopologyError("fabric: need one task per endpoint");
        {
            std::unique_lock<std::mutex> lk(mu_);
            poisoned_ = false;
            poison_msg_.clear();
            blocked_on_.assign(n_, 0);
            errors_.assign(n_, nullptr);
            error_seq_.assign(n_, 0);
            next_seq_ = 1;
            for (auto& s : state_) s = State::Ready;
            if (opts_.deterministic) pick_current();
        }
        std::vector<std::thread> threads;
        threads.reserve(n_);
        for (std::size_t e = 0; e < n_; ++e)
            threads.emplace_back([this, e, task = std::move(tasks[e])] { thread_main(e, task); });
        for (auto& t : threads) t.join();
        std::exception_ptr first = nullptr;
        std::uint64_t best = 0;
        for (std::size_t e = 0; e < n_; ++e)
            if (errors_[e] && (first == nullptr || error_seq_[e] < best)) {
                first = errors_[e];
                best = error_seq_[e];
            }
        if (first) std::rethrow_exception(first);
    }

  private:
    enum class State { Idle, Ready, Running, Blocked, Done };

    void check_id(std::size_t id) const {
        if (id >= n_) throw TopologyError("fabric: endpoint id out of range");
    }

    void thread_main(std::size_t self, const std::function<void()>& task) {
        if (opts_.deterministic) {
            std::unique_lock<std::mutex> lk(mu_);
            cv_.wait(lk, [&] { return current_ == self || poisoned_; });
            if (poisoned_) {
                finish(self, std::make_exception_ptr(TransportError(poison_msg_)), lk);
                return;
            }
            state_[self] = State::Running;
        }
        std::exception_ptr err = nullptr;
        try {
            task();
        } catch (...) {
            err = std::current_exception();
        }
        std::unique_lock<std::mutex> lk(mu_);
        finish(self, err, lk);
    }

    void finish(std::size_t self, std::exception_ptr err, std::unique_lock<std::mutex>& lk) {
        if (err) {
            errors_[self] = err;
            error_seq_[self] = next_seq_++;
        }
        state_[self] = State::Done;
        if (opts_.deterministic && current_ == self) schedule_next(lk);
        cv_.notify_all();
    }

    // Deterministic mode only; caller holds mu_.
    void schedule_next(std::unique_lock<std::mutex>&) {
        pick_current();
        cv_.notify_all();
    }

    void pick_current() {
        std::vector<std::size_t> ready;
        bool any_blocked = false, any_running = false;
        for (std::size_t e = 0; e < n_; ++e) {
            if (state_[e] == State::Ready) ready.push_back(e);
            if (state_[e] == State::Blocked) any_blocked = true;
            if (state_[e] == State::Running) any_running = true;
        }
        if (!ready.empty()) {
            current_ = ready[ready.size() == 1 ? 0 : std::size_t(rng_.next_below(ready.size()))];
            return;
        }
        current_ = npos;
        if (any_blocked && !any_running) {
            std::ostringstream os;
            os << "fabric: deadlock, blocked endpoints:";
            for (std::size_t e = 0; e < n_; ++e)
                if (state_[e] == State::Blocked)
                    os << " " << e << "<-" << blocked_on_[e];
            poisoned_ = true;
            poison_msg_ = os.str();
        }
    }

    static constexpr std::size_t npos = std::size_t(-1);

    std::size_t n_;
    FabricOptions opts_;
    Rng rng_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::deque<Message>> chan_; // index from * n_ + to
    std::vector<State> state_;
    std::vector<std::size_t> blocked_on_;
    std::size_t current_ = npos;
    bool poisoned_ = false;
    std::string poison_msg_;
    MessageStats stats_;
    std::vector<std::exception_ptr> errors_;
    std::vector<std::uint64_t> error_seq_;
    std::uint64_t next_seq_ = 1;
};

// ---------------------------------------------------------------------------
// Collective helpers, built on point-to-point send/recv
// ---------------------------------------------------------------------------

/// Root sends a copy of `m` to every endpoint in `targets`, ascending order.
inline void broadcast_from(Fabric& fab, std::size_t root, const std::vector<std::size_t>& targets,
                           const Message& m) {
    for (std::size_t t : targets) {
        if (t == root) continue;
        fab.send(root, t, m);
    }
}

/// Root receives one message from each sender, returned in ascending sender
/// order. A timeout or deadlock is reported naming the senders still missing.
inline std::vector<Message> gather_to(Fabric& fab, std::size_t root,
                                      const std::vector<std::size_t>& senders) {
    std::vector<std::size_t> order = senders;
    std::sort(order.begin(), order.end());
    std::vector<Message> out;
    out.reserve(order.size());
    for (std::size_t idx = 0; idx < order.size(); ++idx) {
        try {
            out.push_back(fab.recv(root, order[idx]));
        } catch (const TransportError& e) {
            std::ostringstream os;
            os << "gather_to at endpoint " << root << ": missing senders";
            for (std::size_t j = idx; j < order.size(); ++j) {
                auto m = fab.try_recv(root, order[j]);
                if (m.has_value())
                    out.push_back(std::move(*m));
                else
                    os << " " << order[j];
            }
            os << " (" << e.what() << ")";
            throw TransportError(os.str());
        }
    }
    return out;
}

/// Recursive-doubling allgather over `group` (ascending endpoint ids, self
/// included). Rank r contributes `own`, whose size must match chunk_sizes[r];
/// returns the concatenation of all chunks in rank order. Group size must be
/// a power of two. Each endpoint sends log2(F) messages and receives
/// total - chunk_sizes[r] data units.
inline Vector allgather_hypercube(Fabric& fab, std::size_t self,
                                  const std::vector<std::size_t>& group,
                                  const std::vector<std::size_t>& chunk_sizes, const Vector& own,
                                  Tag tag, std::uint16_t layer) {
    const std::size_t f = group.size();
    if (f == 0 || (f & (f - 1)) != 0)
        throw TopologyError("allgather: group size " + std::to_string(f) +
                            " is not a power of two");
    if (chunk_sizes.size() != f) throw TopologyError("allgather: chunk size per rank required");
    std::size_t r = f;
    for (std::size_t i = 0; i < f; ++i)
        if (group[i] == self) r = i;
    if (r == f) throw TopologyError("allgather: self not in group");
    if (own.size() != chunk_sizes[r]) throw ShapeError("allgather: own chunk size mismatch");

    std::vector<std::size_t> off(f + 1, 0);
    for (std::size_t i = 0; i < f; ++i) off[i + 1] = off[i] + chunk_sizes[i];
    Vector full(off[f], 0.0);
    std::copy(own.begin(), own.end(), full.begin() + std::ptrdiff_t(off[r]));

    std::size_t steps = 0;
    while ((std::size_t(1) << steps) < f) ++steps;
    for (std::size_t d = 0; d < steps; ++d) {
        const std::size_t span = std::size_t(1) << d;
        const std::size_t partner = r ^ span;
        const std::size_t mine_lo = r & ~(span - 1);
        const std::size_t theirs_lo = partner & ~(span - 1);
        Message m;
        m.tag = tag;
        m.layer = layer;
        m.payload.assign(full.begin() + std::ptrdiff_t(off[mine_lo]),
                         full.begin() + std::ptrdiff_t(off[mine_lo + span]));
        fab.send(self, group[partner], std::move(m));
        Message got = fab.recv(self, group[partner]);
        if (got.tag != tag || got.layer != layer)
            throw TransportError("allgather: unexpected " + to_string(got.tag) + "/layer " +
                                 std::to_string(got.layer) + " from endpoint " +
                                 std::to_string(group[partner]));
        const std::size_t want = off[theirs_lo + span] - off[theirs_lo];
        if (got.payload.size() != want) throw ShapeError("allgather: block size mismatch");
        std::copy(got.payload.begin(), got.payload.end(),
                  full.begin() + std::ptrdiff_t(off[theirs_lo]));
    }
    return full;
}

} // namespace shardgrad
