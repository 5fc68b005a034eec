// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "v2g/core/time.hpp"

namespace v2g {

/// Source of time and deferred execution for components that emulate delays
/// (links, retries, timers). The discrete-event engine and the wall-clock pacer
/// both implement it, so protocol logic never reads a clock directly.
class Scheduler {
public:
    using Task = std::function<void()>;

    virtual ~Scheduler() = default;

    virtual TimeMs now() const = 0;

    /// Runs `task` at `at` (clamped to now). Tasks due at the same instant run in
    /// submission order.
    virtual void schedule_at(TimeMs at, Task task) = 0;

    /// Runs `task` after `delay`. Real-time implementations measure the delay from
    /// the precise current instant rather than from the millisecond-truncated now().
    virtual void schedule_after(TimeMs delay, Task task) { schedule_at(now() + delay, std::move(task)); }
};

/// Deterministic discrete-event queue ordered by (time, submission sequence).
class EventQueue final : public Scheduler {
public:
    TimeMs now() const override { return now_; }

    void schedule_at(TimeMs at, Task task) override;

    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }

    /// Time of the next pending task; only valid when !empty().
    TimeMs next_time() const { return heap_.top().at; }

    /// Pops and runs the next task, advancing the clock. Returns false when empty.
    bool run_one();

    /// Runs every task due at or before `until`, then sets the clock to `until`.
    void run_until(TimeMs until);

    /// Moves the clock forward without running anything. Never moves backwards.
    void advance_to(TimeMs t) {
        if (t > now_) {
            now_ = t;
        }
    }

private:
    struct Entry {
        TimeMs at;
        std::uint64_t seq;
        Task task;
    };
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const {
            return a.at != b.at ? a.at > b.at : a.seq > b.seq;
        }
    };

    TimeMs now_ = 0;
    std::uint64_t next_seq_ = 0;
    std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
};

} // namespace v2g
