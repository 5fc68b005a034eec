// SPDX-License-Identifier: Apache-2.0
#include "v2g/core/scheduler.hpp"

#include <utility>

namespace v2g {

void EventQueue::schedule_at(TimeMs at, Task task) {
    heap_.push(Entry{at < now_ ? now_ : at, next_seq_++, std::move(task)});
}

bool EventQueue::run_one() {
    if (heap_.empty()) {
        return false;
    }
    // priority_queue::top is const; the task is moved out via a copy of the entry.
    Entry entry = heap_.top();
    heap_.pop();
    now_ = entry.at;
    entry.task();
    return true;
}

void EventQueue::run_until(TimeMs until) {
    while (!heap_.empty() && heap_.top().at <= until) {
        run_one();
    }
    advance_to(until);
}

} // namespace v2g
