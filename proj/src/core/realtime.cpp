// SPDX-License-Identifier: Apache-2.0
#include "v2g/core/realtime.hpp"

namespace v2g {

RealTimeScheduler::RealTimeScheduler() : epoch_(Clock::now()), worker_([this] { loop(); }) {}

RealTimeScheduler::~RealTimeScheduler() { stop(); }

TimeMs RealTimeScheduler::now() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - epoch_).count();
}

std::int64_t RealTimeScheduler::now_us() const {
    return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - epoch_).count();
}

void RealTimeScheduler::schedule_at(TimeMs at, Task task) { push(epoch_ + std::chrono::milliseconds(at), std::move(task)); }

void RealTimeScheduler::schedule_after(TimeMs delay, Task task) {
    push(Clock::now() + std::chrono::milliseconds(delay), std::move(task));
}

void RealTimeScheduler::push(Clock::time_point at, Task task) {
    {
        std::lock_guard lock(mu_);
        if (stopping_) {
            return;
        }
        heap_.push(Entry{at, next_seq_++, std::move(task)});
    }
    cv_.notify_one();
}

void RealTimeScheduler::stop() {
    {
        std::lock_guard lock(mu_);
        if (stopping_) {
            return;
        }
        stopping_ = true;
    }
    cv_.notify_one();
    if (worker_.joinable()) {
        worker_.join();
    }
}

void RealTimeScheduler::loop() {
    std::unique_lock lock(mu_);
    while (!stopping_) {
        if (heap_.empty()) {
            cv_.wait(lock);
            continue;
        }
        const auto due = heap_.top().at;
        if (Clock::now() < due) {
            cv_.wait_until(lock, due);
            continue;
        }
        Entry entry = heap_.top();
        heap_.pop();
        lock.unlock();
        entry.task();
        lock.lock();
    }
}

} // namespace v2g
