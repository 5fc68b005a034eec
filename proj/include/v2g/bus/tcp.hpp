// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "v2g/bus/broker.hpp"

namespace v2g::bus {

struct TcpServerConfig {
    std::string host = "127.0.0.1";
    /// 0 picks an ephemeral port; see TcpBrokerServer::port().
    std::uint16_t port = 0;
    LinkProfile default_link;
    /// Link profiles by client id, applied when the CONNECT arrives.
    std::map<std::string, LinkProfile> links;
};

/// Serves a Broker over the length-prefixed stream transport. One reader thread
/// per connection; writes are serialized per connection.
class TcpBrokerServer {
public:
    TcpBrokerServer(Broker& broker, TcpServerConfig config);
    ~TcpBrokerServer();

    TcpBrokerServer(const TcpBrokerServer&) = delete;
    TcpBrokerServer& operator=(const TcpBrokerServer&) = delete;

    /// Binds and starts accepting. Throws std::runtime_error on socket failure.
    void start();
    void stop();

    std::uint16_t port() const { return port_; }

private:
    struct Connection;

    void accept_loop();
    void serve(std::shared_ptr<Connection> conn);

    Broker& broker_;
    TcpServerConfig config_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::mutex mu_;
    std::vector<std::shared_ptr<Connection>> connections_;
    std::vector<std::thread> readers_;
};

/// Client over the stream transport. Handlers run on the reader thread; all
/// protocol state is guarded by one (recursive) lock so handlers may publish.
class TcpClient {
public:
    /// Connects and waits up to `timeout_ms` for CONNACK; throws BusError
    /// (NotConnected / AuthenticationFailed) otherwise.
    TcpClient(Scheduler& scheduler, const std::string& host, std::uint16_t port, std::string client_id,
              ClientConfig config = {}, TimeMs timeout_ms = 5000);
    ~TcpClient();

    TcpClient(const TcpClient&) = delete;
    TcpClient& operator=(const TcpClient&) = delete;

    void subscribe(const std::string& filter, ClientProtocol::Handler handler, Qos max_qos = Qos::AtLeastOnce);
    /// Blocks until the broker acknowledges the subscription.
    void subscribe_and_wait(const std::string& filter, ClientProtocol::Handler handler,
                            Qos max_qos = Qos::AtLeastOnce, TimeMs timeout_ms = 5000);
    std::uint64_t publish(const std::string& topic, std::string payload, Qos qos);
    void close();

    ClientStats stats();

private:
    void write(const nlohmann::json& object);
    void read_loop();

    // Runs protocol timers under the client lock.
    class LockedScheduler;

    int fd_ = -1;
    std::shared_ptr<std::recursive_mutex> mu_ = std::make_shared<std::recursive_mutex>();
    std::unique_ptr<LockedScheduler> timers_;
    std::mutex write_mu_;
    std::condition_variable_any cv_;
    std::map<std::string, bool> subacks_;
    std::unique_ptr<ClientProtocol> protocol_;
    std::atomic<bool> open_{false};
    std::thread reader_;
};

} // namespace v2g::bus
