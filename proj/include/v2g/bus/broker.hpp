// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "v2g/bus/link.hpp"
#include "v2g/bus/topic.hpp"
#include "v2g/bus/wire.hpp"
#include "v2g/core/error.hpp"
#include "v2g/core/scheduler.hpp"

namespace v2g::bus {

enum class BusErrc { NotConnected, PayloadTooLarge, ProtocolViolation, AuthenticationFailed };
using BusError = Error<BusErrc>;

std::string_view to_string(BusErrc code);

/// Transport-facing end of one session: receives control objects from the broker.
class SessionSink {
public:
    virtual ~SessionSink() = default;
    virtual void send(const nlohmann::json& object) = 0;
};

struct DeliveryReceipt {
    std::size_t matched = 0;
    std::uint64_t message_id = 0;
};

struct BrokerConfig {
    /// Shared scenario token required in CONNECT; empty disables the check.
    std::string token;
    /// Redelivery period for unacknowledged AtLeastOnce messages.
    TimeMs retry_interval_ms = 100;
};

struct BrokerStats {
    std::uint64_t published = 0;       // PUBLISH objects accepted from sessions
    std::uint64_t routed = 0;          // (message, subscriber) pairs enqueued
    std::uint64_t transmissions = 0;   // lossy transmissions attempted in either direction
    std::uint64_t dropped = 0;         // lossy transmissions lost on a link
    std::uint64_t retransmissions = 0; // AtLeastOnce redeliveries
    std::uint64_t acknowledged = 0;    // subscriber PUBACKs that cleared an in-flight entry
    std::uint64_t rejected = 0;        // malformed or unauthorised objects

    nlohmann::json to_json() const;
};

/// MQTT-semantics broker with per-session link emulation.
///
/// Every session has a LinkProfile. PUBLISH and PUBACK objects crossing the link,
/// in either direction, are subject to its seeded latency and loss; arrivals on
/// one direction of a link never overtake each other. Session control objects
/// (CONNECT, SUBSCRIBE, UNSUBSCRIBE, DISCONNECT) are processed immediately.
///
/// Thread-safe. Sinks are always invoked without the internal lock held, so a
/// sink may call back into the broker.
class Broker {
public:
    using SessionId = std::uint64_t;

    Broker(Scheduler& scheduler, BrokerConfig config = {});

    SessionId attach(std::shared_ptr<SessionSink> sink, LinkProfile link);
    void detach(SessionId session);
    /// Replaces the link profile of a session (e.g. once its client id is known).
    void set_link(SessionId session, LinkProfile link);

    /// An object arriving from the session's transport.
    void receive(SessionId session, nlohmann::json object);

    /// Routes a message that has reached the broker. Throws BusError(NotConnected)
    /// for an unknown or unconnected session.
    DeliveryReceipt publish(SessionId from, BusMessage msg);

    /// Sessions currently subscribed to a filter matching `topic`.
    std::size_t match_count(std::string_view topic) const;

    BrokerStats stats() const;
    std::size_t in_flight() const;

private:
    struct Session {
        std::shared_ptr<SessionSink> sink;
        LinkSampler link;
        std::string client_id;
        bool connected = false;
        std::map<std::string, Qos> subscriptions;
        TimeMs last_up_arrival = 0;
        TimeMs last_down_arrival = 0;
        std::set<std::uint64_t> routed_ids;
        // Objects in transit, in send order. Each scheduled arrival releases the
        // oldest one, which keeps each direction FIFO even if timers jitter.
        std::deque<nlohmann::json> up_queue;
        std::deque<nlohmann::json> down_queue;
    };
    // (subscriber session, publisher client id, message id)
    using InFlightKey = std::tuple<SessionId, std::string, std::uint64_t>;
    struct Outbound {
        SessionId session;
        std::shared_ptr<SessionSink> sink;
        nlohmann::json object;
    };

    void process(SessionId session, const nlohmann::json& object, std::vector<Outbound>& out);
    void handle_control(SessionId session, const nlohmann::json& object, std::vector<Outbound>& out);
    DeliveryReceipt route_locked(Session& from, BusMessage msg, std::vector<Outbound>& out);
    void transmit_down_locked(SessionId session, nlohmann::json object, bool lossy);
    void schedule_link_locked(TimeMs& last_arrival, TimeMs delay, Scheduler::Task task);
    void arm_retry_locked(const InFlightKey& key);
    void flush(std::vector<Outbound>& out);

    Scheduler& scheduler_;
    BrokerConfig config_;
    mutable std::mutex mu_;
    std::map<SessionId, Session> sessions_;
    SessionId next_session_ = 1;
    std::map<InFlightKey, nlohmann::json> in_flight_;
    BrokerStats stats_;
    // Guards scheduled tasks that outlive the broker.
    std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

struct ClientConfig {
    std::string token;
    TimeMs retry_interval_ms = 100;
};

struct ClientStats {
    std::uint64_t processed = 0;
    std::uint64_t duplicates = 0;
    std::uint64_t retransmissions = 0;
};

/// Client half of the protocol: session setup, publisher-side AtLeastOnce retries,
/// subscriber-side acknowledgement and de-duplication by (publisher, message id).
/// Transport-agnostic; frames go out through `send`.
class ClientProtocol {
public:
    using SendFn = std::function<void(nlohmann::json)>;
    using Handler = std::function<void(const BusMessage&)>;

    ClientProtocol(Scheduler& scheduler, std::string client_id, SendFn send, ClientConfig config = {});

    void connect();
    void disconnect();
    void subscribe(const std::string& filter, Handler handler, Qos max_qos = Qos::AtLeastOnce);

    /// Returns the assigned message id. Throws BusError(NotConnected / PayloadTooLarge)
    /// or TopicError(InvalidTopic).
    std::uint64_t publish(const std::string& topic, std::string payload, Qos qos);

    void on_frame(const nlohmann::json& object);

    bool connected() const { return connected_; }
    const std::string& client_id() const { return client_id_; }
    const ClientStats& stats() const { return stats_; }
    std::size_t unacknowledged() const { return pending_.size(); }

private:
    void resend(std::uint64_t id);

    Scheduler& scheduler_;
    std::string client_id_;
    SendFn send_;
    ClientConfig config_;
    bool connected_ = false;
    std::uint64_t next_id_ = 1;
    std::vector<std::pair<std::string, Handler>> handlers_;
    std::map<std::uint64_t, nlohmann::json> pending_;
    std::map<std::string, std::set<std::uint64_t>> seen_;
    ClientStats stats_;
    std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

/// In-process client bound to a broker session; used by the discrete-event engine.
class LocalClient {
public:
    LocalClient(Broker& broker, Scheduler& scheduler, std::string client_id, LinkProfile link,
                ClientConfig config = {});
    ~LocalClient();

    LocalClient(const LocalClient&) = delete;
    LocalClient& operator=(const LocalClient&) = delete;

    void subscribe(const std::string& filter, ClientProtocol::Handler handler, Qos max_qos = Qos::AtLeastOnce) {
        protocol_->subscribe(filter, std::move(handler), max_qos);
    }

    /// Receipt counts subscribers matched at enqueue time.
    DeliveryReceipt publish(const std::string& topic, std::string payload, Qos qos);

    ClientProtocol& protocol() { return *protocol_; }
    Broker::SessionId session() const { return session_; }

private:
    struct Sink;

    Broker& broker_;
    Broker::SessionId session_ = 0;
    std::shared_ptr<Sink> sink_;
    std::unique_ptr<ClientProtocol> protocol_;
};

} // namespace v2g::bus
