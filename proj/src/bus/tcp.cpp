// SPDX-License-Identifier: Apache-2.0
#include "v2g/bus/tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace v2g::bus {

using nlohmann::json;

namespace {

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

bool write_all(int fd, const std::string& bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
        const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            return false;
        }
        off += static_cast<std::size_t>(n);
    }
    return true;
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    const std::string h = host == "localhost" ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) {
        throw std::runtime_error("not an IPv4 address: " + host);
    }
    return addr;
}

} // namespace

struct TcpBrokerServer::Connection final : SessionSink {
    int fd = -1;
    Broker::SessionId session = 0;
    std::mutex write_mu;

    void send(const json& object) override {
        const std::string frame = encode_frame(object);
        std::lock_guard lock(write_mu);
        if (fd >= 0) {
            write_all(fd, frame);
        }
    }
};

TcpBrokerServer::TcpBrokerServer(Broker& broker, TcpServerConfig config) : broker_(broker), config_(std::move(config)) {}

TcpBrokerServer::~TcpBrokerServer() { stop(); }

void TcpBrokerServer::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) {
        throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = make_addr(config_.host, config_.port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
        const std::string why = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("cannot listen on " + config_.host + ":" + std::to_string(config_.port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpBrokerServer::stop() {
    if (!running_.exchange(false)) {
        return;
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    std::vector<std::thread> readers;
    {
        std::lock_guard lock(mu_);
        for (auto& c : connections_) {
            ::shutdown(c->fd, SHUT_RDWR);
        }
        readers.swap(readers_);
    }
    for (auto& t : readers) {
        t.join();
    }
    std::lock_guard lock(mu_);
    connections_.clear();
}

void TcpBrokerServer::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) {
                continue;
            }
            return;
        }
        set_nodelay(fd);
        auto conn = std::make_shared<Connection>();
        conn->fd = fd;
        conn->session = broker_.attach(conn, config_.default_link);
        std::lock_guard lock(mu_);
        connections_.push_back(conn);
        readers_.emplace_back([this, conn] { serve(conn); });
    }
}

void TcpBrokerServer::serve(std::shared_ptr<Connection> conn) {
    FrameDecoder decoder;
    char buf[16384];
    bool ok = true;
    while (ok) {
        const ssize_t n = ::recv(conn->fd, buf, sizeof buf, 0);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            break;
        }
        try {
            decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
            while (auto object = decoder.next()) {
                if (object->value("op", std::string{}) == "CONNECT") {
                    auto link = config_.links.find(object->value("client_id", std::string{}));
                    if (link != config_.links.end()) {
                        broker_.set_link(conn->session, link->second);
                    }
                }
                broker_.receive(conn->session, std::move(*object));
            }
        } catch (const WireError&) {
            // unrecoverable framing error: drop the connection
            ok = false;
        }
    }
    broker_.detach(conn->session);
    std::lock_guard lock(conn->write_mu);
    ::close(conn->fd);
    conn->fd = -1;
}

// ---------------------------------------------------------------------------

class TcpClient::LockedScheduler final : public Scheduler {
public:
    LockedScheduler(Scheduler& inner, std::shared_ptr<std::recursive_mutex> mu) : inner_(inner), mu_(std::move(mu)) {}
    TimeMs now() const override { return inner_.now(); }
    void schedule_at(TimeMs at, Task task) override { inner_.schedule_at(at, wrap(std::move(task))); }
    void schedule_after(TimeMs delay, Task task) override { inner_.schedule_after(delay, wrap(std::move(task))); }

private:
    Task wrap(Task task) {
        return [mu = mu_, task = std::move(task)] {
            std::lock_guard lock(*mu);
            task();
        };
    }
    Scheduler& inner_;
    std::shared_ptr<std::recursive_mutex> mu_;
};

TcpClient::TcpClient(Scheduler& scheduler, const std::string& host, std::uint16_t port, std::string client_id,
                     ClientConfig config, TimeMs timeout_ms) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) {
        throw BusError(BusErrc::NotConnected, std::string("socket: ") + std::strerror(errno));
    }
    sockaddr_in addr = make_addr(host, port);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        const std::string why = std::strerror(errno);
        ::close(fd_);
        throw BusError(BusErrc::NotConnected, "connect " + host + ":" + std::to_string(port) + ": " + why);
    }
    set_nodelay(fd_);
    timers_ = std::make_unique<LockedScheduler>(scheduler, mu_);
    protocol_ = std::make_unique<ClientProtocol>(
        *timers_, std::move(client_id), [this](json object) { write(object); }, std::move(config));
    open_ = true;
    reader_ = std::thread([this] { read_loop(); });

    std::unique_lock lock(*mu_);
    protocol_->connect();
    const bool answered = cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                                       [&] { return protocol_->connected() || subacks_.count("#connack") != 0; });
    if (!protocol_->connected()) {
        lock.unlock();
        close();
        throw BusError(answered ? BusErrc::AuthenticationFailed : BusErrc::NotConnected, "no CONNACK from broker");
    }
}

TcpClient::~TcpClient() {
    close();
    std::lock_guard lock(*mu_);
    protocol_.reset();
}

void TcpClient::write(const json& object) {
    const std::string frame = encode_frame(object);
    std::lock_guard lock(write_mu_);
    if (open_) {
        write_all(fd_, frame);
    }
}

void TcpClient::read_loop() {
    FrameDecoder decoder;
    char buf[16384];
    while (open_) {
        const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            break;
        }
        try {
            decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
            while (auto object = decoder.next()) {
                std::lock_guard lock(*mu_);
                const auto op = object->value("op", std::string{});
                if (op == "SUBACK") {
                    subacks_[object->value("filter", std::string{})] = object->value("ok", false);
                } else if (op == "CONNACK") {
                    subacks_["#connack"] = object->value("ok", false);
                }
                protocol_->on_frame(*object);
                cv_.notify_all();
            }
        } catch (const WireError&) {
            break;
        }
    }
    std::lock_guard lock(*mu_);
    cv_.notify_all();
}

void TcpClient::subscribe(const std::string& filter, ClientProtocol::Handler handler, Qos max_qos) {
    std::lock_guard lock(*mu_);
    protocol_->subscribe(filter, std::move(handler), max_qos);
}

void TcpClient::subscribe_and_wait(const std::string& filter, ClientProtocol::Handler handler, Qos max_qos,
                                   TimeMs timeout_ms) {
    std::unique_lock lock(*mu_);
    subacks_.erase(filter);
    protocol_->subscribe(filter, std::move(handler), max_qos);
    if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return subacks_.count(filter) != 0; }) ||
        !subacks_[filter]) {
        throw BusError(BusErrc::ProtocolViolation, "subscription to '" + filter + "' not acknowledged");
    }
}

std::uint64_t TcpClient::publish(const std::string& topic, std::string payload, Qos qos) {
    std::lock_guard lock(*mu_);
    return protocol_->publish(topic, std::move(payload), qos);
}

ClientStats TcpClient::stats() {
    std::lock_guard lock(*mu_);
    return protocol_->stats();
}

void TcpClient::close() {
    if (open_) {
        {
            std::lock_guard lock(*mu_);
            protocol_->disconnect();
        }
        open_ = false;
        ::shutdown(fd_, SHUT_RDWR);
    }
    if (reader_.joinable() && reader_.get_id() != std::this_thread::get_id()) {
        reader_.join();
        ::close(fd_);
    }
}

} // namespace v2g::bus
