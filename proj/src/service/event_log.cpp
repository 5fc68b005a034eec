// SPDX-License-Identifier: Apache-2.0
#include "v2g/service/event_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "v2g/service/scenario.hpp"

namespace v2g::svc {

using nlohmann::json;

std::string EventRecord::line() const {
    const json j = {{"seq", seq}, {"sim_time_ms", sim_time_ms}, {"kind", kind}, {"payload", payload}};
    return j.dump();
}

EventRecord EventRecord::parse(const std::string& line) {
    const json j = json::parse(line);
    EventRecord r;
    r.seq = j.at("seq").get<std::uint64_t>();
    r.sim_time_ms = j.at("sim_time_ms").get<TimeMs>();
    r.kind = j.at("kind").get<std::string>();
    r.payload = j.at("payload");
    return r;
}

bool is_input_kind(const std::string& kind) { return kind.rfind("api.", 0) == 0; }

EventLogWriter::EventLogWriter(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        throw std::runtime_error("cannot open event log " + path + ": " + std::strerror(errno));
    }
}

EventLogWriter::~EventLogWriter() {
    try {
        commit();
    } catch (...) {
    }
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

void EventLogWriter::append(const std::string& line) {
    pending_ += line;
    pending_ += '\n';
}

void EventLogWriter::commit() {
    if (pending_.empty()) {
        return;
    }
    const char* p = pending_.data();
    std::size_t left = pending_.size();
    while (left > 0) {
        const ssize_t n = ::write(fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw std::runtime_error("event log write failed: " + std::string(std::strerror(errno)));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd_);
    pending_.clear();
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw SvcError(SvcErrc::LogInvalid, "cannot open " + path);
    }
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(line);
        }
    }
    return out;
}

std::vector<EventRecord> read_log(const std::string& path) {
    std::vector<EventRecord> out;
    std::size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        try {
            out.push_back(EventRecord::parse(line));
        } catch (const std::exception& e) {
            throw SvcError(SvcErrc::LogInvalid, "line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

} // namespace v2g::svc
