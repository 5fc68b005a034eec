// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "v2g/core/time.hpp"

namespace v2g::svc {

struct EventRecord {
    std::uint64_t seq = 0;
    TimeMs sim_time_ms = 0;
    std::string kind;
    nlohmann::json payload = nlohmann::json::object();

    /// One NDJSON line without the newline; keys sorted, compact.
    std::string line() const;
    static EventRecord parse(const std::string& line);

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

/// Input record kinds. Everything else in a log is regenerated on replay.
bool is_input_kind(const std::string& kind);

/// Append-only NDJSON file. Lines are buffered until commit(), which writes
/// them and fsyncs once per batch.
class EventLogWriter {
public:
    explicit EventLogWriter(const std::string& path);
    ~EventLogWriter();

    EventLogWriter(const EventLogWriter&) = delete;
    EventLogWriter& operator=(const EventLogWriter&) = delete;

    void append(const std::string& line);
    void commit();
    const std::string& path() const { return path_; }

private:
    std::string path_;
    int fd_ = -1;
    std::string pending_;
};

/// Reads a whole log. Throws SvcError(LogInvalid) with the line number on a
/// malformed line.
std::vector<EventRecord> read_log(const std::string& path);
std::vector<std::string> read_lines(const std::string& path);

} // namespace v2g::svc
