// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

#include "v2g/core/scheduler.hpp"

namespace v2g {

/// Wall-clock scheduler: one worker thread runs tasks at their deadlines.
/// Time zero is the construction instant. This is the only component that
/// reads the system clock.
class RealTimeScheduler final : public Scheduler {
public:
    RealTimeScheduler();
    ~RealTimeScheduler() override;

    RealTimeScheduler(const RealTimeScheduler&) = delete;
    RealTimeScheduler& operator=(const RealTimeScheduler&) = delete;

    TimeMs now() const override;
    void schedule_at(TimeMs at, Task task) override;
    void schedule_after(TimeMs delay, Task task) override;

    /// Microseconds since time zero; used for measurements only.
    std::int64_t now_us() const;

    /// Stops the worker; pending tasks are discarded.
    void stop();

private:
    using Clock = std::chrono::steady_clock;
    struct Entry {
        Clock::time_point at;
        std::uint64_t seq;
        Task task;
    };
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const { return a.at != b.at ? a.at > b.at : a.seq > b.seq; }
    };

    void push(Clock::time_point at, Task task);
    void loop();

    const Clock::time_point epoch_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
    std::uint64_t next_seq_ = 0;
    bool stopping_ = false;
    std::thread worker_;
};

} // namespace v2g
