// SPDX-License-Identifier: Apache-2.0
#include "v2g/bus/broker.hpp"

#include <algorithm>

namespace v2g::bus {

using nlohmann::json;

std::string_view to_string(BusErrc code) {
    switch (code) {
    case BusErrc::NotConnected:
        return "NotConnected";
    case BusErrc::PayloadTooLarge:
        return "PayloadTooLarge";
    case BusErrc::ProtocolViolation:
        return "ProtocolViolation";
    case BusErrc::AuthenticationFailed:
        return "AuthenticationFailed";
    }
    return "?";
}

json BrokerStats::to_json() const {
    return {{"published", published},         {"routed", routed},
            {"transmissions", transmissions}, {"dropped", dropped},
            {"retransmissions", retransmissions}, {"acknowledged", acknowledged},
            {"rejected", rejected}};
}

namespace {

bool is_lossy(const json& object) {
    const auto op = object.value("op", std::string{});
    return op == "PUBLISH" || op == "PUBACK";
}

} // namespace

Broker::Broker(Scheduler& scheduler, BrokerConfig config) : scheduler_(scheduler), config_(std::move(config)) {}

Broker::SessionId Broker::attach(std::shared_ptr<SessionSink> sink, LinkProfile link) {
    std::lock_guard lock(mu_);
    const SessionId id = next_session_++;
    sessions_.emplace(id, Session{std::move(sink), LinkSampler(std::move(link)), {}, false, {}, 0, 0, {}, {}, {}});
    return id;
}

void Broker::detach(SessionId session) {
    std::lock_guard lock(mu_);
    sessions_.erase(session);
    std::erase_if(in_flight_, [&](const auto& entry) { return std::get<0>(entry.first) == session; });
}

void Broker::set_link(SessionId session, LinkProfile link) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session);
    if (it != sessions_.end()) {
        it->second.link = LinkSampler(std::move(link));
    }
}

void Broker::receive(SessionId session, json object) {
    std::vector<Outbound> out;
    {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(session);
        if (it == sessions_.end()) {
            ++stats_.rejected;
            return;
        }
        Session& s = it->second;
        if (!is_lossy(object)) {
            process(session, object, out);
        } else {
            ++stats_.transmissions;
            if (s.link.sample_drop()) {
                ++stats_.dropped;
                return;
            }
            s.up_queue.push_back(std::move(object));
            schedule_link_locked(s.last_up_arrival, s.link.sample_delay(),
                                 [this, alive = std::weak_ptr<bool>(alive_), session] {
                                     if (alive.expired()) {
                                         return;
                                     }
                                     std::vector<Outbound> later;
                                     {
                                         std::lock_guard inner(mu_);
                                         auto found = sessions_.find(session);
                                         if (found == sessions_.end() || found->second.up_queue.empty()) {
                                             return;
                                         }
                                         json arrived = std::move(found->second.up_queue.front());
                                         found->second.up_queue.pop_front();
                                         process(session, arrived, later);
                                     }
                                     flush(later);
                                 });
        }
    }
    flush(out);
}

DeliveryReceipt Broker::publish(SessionId from, BusMessage msg) {
    std::vector<Outbound> out;
    DeliveryReceipt receipt;
    {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(from);
        if (it == sessions_.end() || !it->second.connected) {
            throw BusError(BusErrc::NotConnected, "publish on a session without an established connection");
        }
        validate_topic(msg.topic);
        if (msg.payload.size() > kMaxPayloadBytes) {
            throw BusError(BusErrc::PayloadTooLarge, "payload exceeds 256 KiB");
        }
        ++stats_.published;
        receipt = route_locked(it->second, std::move(msg), out);
    }
    flush(out);
    return receipt;
}

std::size_t Broker::match_count(std::string_view topic) const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [id, s] : sessions_) {
        if (!s.connected) {
            continue;
        }
        for (const auto& [filter, qos] : s.subscriptions) {
            if (topic_matches(filter, topic)) {
                ++n;
                break;
            }
        }
    }
    return n;
}

BrokerStats Broker::stats() const {
    std::lock_guard lock(mu_);
    return stats_;
}

std::size_t Broker::in_flight() const {
    std::lock_guard lock(mu_);
    return in_flight_.size();
}

void Broker::process(SessionId session, const json& object, std::vector<Outbound>& out) {
    Session& s = sessions_.at(session);
    const auto op = object.value("op", std::string{});
    if (op == "PUBLISH") {
        if (!s.connected) {
            ++stats_.rejected;
            out.push_back({session, s.sink, {{"op", "ERROR"}, {"reason", "NotConnected"}}});
            return;
        }
        BusMessage msg;
        try {
            msg = message_from_object(object);
            validate_topic(msg.topic);
        } catch (const std::exception& e) {
            ++stats_.rejected;
            out.push_back({session, s.sink, {{"op", "ERROR"}, {"reason", e.what()}}});
            return;
        }
        if (msg.payload.size() > kMaxPayloadBytes) {
            ++stats_.rejected;
            out.push_back({session, s.sink, {{"op", "ERROR"}, {"reason", "PayloadTooLarge"}, {"id", msg.message_id}}});
            return;
        }
        const std::uint64_t id = msg.message_id;
        const bool qos1 = msg.qos == Qos::AtLeastOnce;
        // A retransmitted publish is acknowledged again but routed only once.
        if (!qos1 || s.routed_ids.insert(id).second) {
            ++stats_.published;
            route_locked(s, std::move(msg), out);
            if (s.routed_ids.size() > 4096) {
                s.routed_ids.erase(s.routed_ids.begin());
            }
        }
        if (qos1) {
            transmit_down_locked(session, {{"op", "PUBACK"}, {"id", id}}, true);
        }
        return;
    }
    if (op == "PUBACK") {
        // acknowledgement from a subscriber for a message we delivered
        const InFlightKey key{session, object.value("from", std::string{}), object.value("id", std::uint64_t{0})};
        if (in_flight_.erase(key) != 0) {
            ++stats_.acknowledged;
        }
        return;
    }
    handle_control(session, object, out);
}

void Broker::handle_control(SessionId session, const json& object, std::vector<Outbound>& out) {
    Session& s = sessions_.at(session);
    const auto op = object.value("op", std::string{});
    if (op == "CONNECT") {
        const auto client_id = object.value("client_id", std::string{});
        if (client_id.empty() || (!config_.token.empty() && object.value("token", std::string{}) != config_.token)) {
            ++stats_.rejected;
            out.push_back({session, s.sink,
                           {{"op", "CONNACK"}, {"ok", false}, {"reason", client_id.empty() ? "client_id required"
                                                                                           : "AuthenticationFailed"}}});
            return;
        }
        // a newer session with the same client id takes over
        for (auto& [other_id, other] : sessions_) {
            if (other_id != session && other.connected && other.client_id == client_id) {
                other.connected = false;
                other.subscriptions.clear();
            }
        }
        s.client_id = client_id;
        s.connected = true;
        out.push_back({session, s.sink, {{"op", "CONNACK"}, {"ok", true}}});
        return;
    }
    if (!s.connected) {
        ++stats_.rejected;
        out.push_back({session, s.sink, {{"op", "ERROR"}, {"reason", "NotConnected"}}});
        return;
    }
    if (op == "SUBSCRIBE" || op == "UNSUBSCRIBE") {
        const auto filter = object.value("filter", std::string{});
        try {
            validate_filter(filter);
        } catch (const TopicError& e) {
            ++stats_.rejected;
            out.push_back({session, s.sink, {{"op", op == "SUBSCRIBE" ? "SUBACK" : "UNSUBACK"}, {"filter", filter},
                                             {"ok", false}, {"reason", e.what()}}});
            return;
        }
        if (op == "SUBSCRIBE") {
            s.subscriptions[filter] = object.value("qos", 1) == 0 ? Qos::AtMostOnce : Qos::AtLeastOnce;
            out.push_back({session, s.sink, {{"op", "SUBACK"}, {"filter", filter}, {"ok", true}}});
        } else {
            s.subscriptions.erase(filter);
            out.push_back({session, s.sink, {{"op", "UNSUBACK"}, {"filter", filter}, {"ok", true}}});
        }
        return;
    }
    if (op == "DISCONNECT") {
        s.connected = false;
        s.subscriptions.clear();
        std::erase_if(in_flight_, [&](const auto& entry) { return std::get<0>(entry.first) == session; });
        return;
    }
    ++stats_.rejected;
    out.push_back({session, s.sink, {{"op", "ERROR"}, {"reason", "unknown op '" + op + "'"}}});
}

DeliveryReceipt Broker::route_locked(Session& from, BusMessage msg, std::vector<Outbound>& /*out*/) {
    msg.publisher = from.client_id;
    msg.sent_at = scheduler_.now();
    DeliveryReceipt receipt{0, msg.message_id};
    for (auto& [id, s] : sessions_) {
        if (!s.connected) {
            continue;
        }
        bool matched = false;
        Qos granted = Qos::AtMostOnce;
        for (const auto& [filter, qos] : s.subscriptions) {
            if (topic_matches(filter, msg.topic)) {
                matched = true;
                granted = std::max(granted, qos);
            }
        }
        if (!matched) {
            continue;
        }
        ++receipt.matched;
        ++stats_.routed;
        BusMessage copy = msg;
        copy.qos = std::min(msg.qos, granted);
        json object = publish_object(copy);
        if (copy.qos == Qos::AtLeastOnce) {
            const InFlightKey key{id, copy.publisher, copy.message_id};
            in_flight_[key] = object;
            arm_retry_locked(key);
        }
        transmit_down_locked(id, std::move(object), true);
    }
    return receipt;
}

void Broker::transmit_down_locked(SessionId session, json object, bool lossy) {
    auto it = sessions_.find(session);
    if (it == sessions_.end()) {
        return;
    }
    Session& s = it->second;
    if (lossy) {
        ++stats_.transmissions;
        if (s.link.sample_drop()) {
            ++stats_.dropped;
            return;
        }
    }
    s.down_queue.push_back(std::move(object));
    schedule_link_locked(s.last_down_arrival, s.link.sample_delay(), [this, alive = std::weak_ptr<bool>(alive_), session] {
        if (alive.expired()) {
            return;
        }
        std::shared_ptr<SessionSink> sink;
        json arrived;
        {
            std::lock_guard lock(mu_);
            auto found = sessions_.find(session);
            if (found == sessions_.end() || found->second.down_queue.empty()) {
                return;
            }
            sink = found->second.sink;
            arrived = std::move(found->second.down_queue.front());
            found->second.down_queue.pop_front();
        }
        sink->send(arrived);
    });
}

void Broker::schedule_link_locked(TimeMs& last_arrival, TimeMs delay, Scheduler::Task task) {
    const TimeMs arrival = scheduler_.now() + delay;
    if (arrival >= last_arrival) {
        last_arrival = arrival;
        scheduler_.schedule_after(delay, std::move(task));
    } else {
        // would overtake an earlier object on this direction; queue behind it
        scheduler_.schedule_at(last_arrival, std::move(task));
    }
}

void Broker::arm_retry_locked(const InFlightKey& key) {
    scheduler_.schedule_after(config_.retry_interval_ms, [this, alive = std::weak_ptr<bool>(alive_), key] {
        if (alive.expired()) {
            return;
        }
        std::lock_guard lock(mu_);
        auto it = in_flight_.find(key);
        if (it == in_flight_.end()) {
            return;
        }
        ++stats_.retransmissions;
        transmit_down_locked(std::get<0>(key), it->second, true);
        arm_retry_locked(key);
    });
}

void Broker::flush(std::vector<Outbound>& out) {
    for (auto& o : out) {
        o.sink->send(o.object);
    }
    out.clear();
}

// ---------------------------------------------------------------------------

ClientProtocol::ClientProtocol(Scheduler& scheduler, std::string client_id, SendFn send, ClientConfig config)
    : scheduler_(scheduler), client_id_(std::move(client_id)), send_(std::move(send)), config_(std::move(config)) {}

void ClientProtocol::connect() { send_({{"op", "CONNECT"}, {"client_id", client_id_}, {"token", config_.token}}); }

void ClientProtocol::disconnect() {
    if (connected_) {
        send_({{"op", "DISCONNECT"}});
    }
    connected_ = false;
    pending_.clear();
}

void ClientProtocol::subscribe(const std::string& filter, Handler handler, Qos max_qos) {
    validate_filter(filter);
    handlers_.emplace_back(filter, std::move(handler));
    send_({{"op", "SUBSCRIBE"}, {"filter", filter}, {"qos", static_cast<int>(max_qos)}});
}

std::uint64_t ClientProtocol::publish(const std::string& topic, std::string payload, Qos qos) {
    if (!connected_) {
        throw BusError(BusErrc::NotConnected, client_id_ + ": no broker session");
    }
    validate_topic(topic);
    if (payload.size() > kMaxPayloadBytes) {
        throw BusError(BusErrc::PayloadTooLarge, "payload of " + std::to_string(payload.size()) + " bytes exceeds 256 KiB");
    }
    BusMessage msg;
    msg.topic = topic;
    msg.payload = std::move(payload);
    msg.qos = qos;
    msg.message_id = next_id_++;
    json object = publish_object(msg);
    if (qos == Qos::AtLeastOnce) {
        pending_[msg.message_id] = object;
        const std::uint64_t id = msg.message_id;
        scheduler_.schedule_after(config_.retry_interval_ms, [this, alive = std::weak_ptr<bool>(alive_), id] {
            if (!alive.expired()) {
                resend(id);
            }
        });
    }
    send_(std::move(object));
    return msg.message_id;
}

void ClientProtocol::resend(std::uint64_t id) {
    auto it = pending_.find(id);
    if (it == pending_.end() || !connected_) {
        return;
    }
    ++stats_.retransmissions;
    send_(it->second);
    scheduler_.schedule_after(config_.retry_interval_ms, [this, alive = std::weak_ptr<bool>(alive_), id] {
            if (!alive.expired()) {
                resend(id);
            }
        });
}

void ClientProtocol::on_frame(const json& object) {
    const auto op = object.value("op", std::string{});
    if (op == "CONNACK") {
        connected_ = object.value("ok", false);
        return;
    }
    if (op == "PUBACK") {
        pending_.erase(object.value("id", std::uint64_t{0}));
        return;
    }
    if (op != "PUBLISH") {
        return;
    }
    const BusMessage msg = message_from_object(object);
    if (msg.qos == Qos::AtLeastOnce) {
        send_({{"op", "PUBACK"}, {"id", msg.message_id}, {"from", msg.publisher}});
        if (!seen_[msg.publisher].insert(msg.message_id).second) {
            ++stats_.duplicates;
            return;
        }
    }
    ++stats_.processed;
    for (const auto& [filter, handler] : handlers_) {
        if (topic_matches(filter, msg.topic)) {
            handler(msg);
        }
    }
}

// ---------------------------------------------------------------------------

struct LocalClient::Sink final : SessionSink {
    ClientProtocol* protocol = nullptr;
    void send(const json& object) override {
        if (protocol != nullptr) {
            protocol->on_frame(object);
        }
    }
};

LocalClient::LocalClient(Broker& broker, Scheduler& scheduler, std::string client_id, LinkProfile link,
                         ClientConfig config)
    : broker_(broker), sink_(std::make_shared<Sink>()) {
    session_ = broker_.attach(sink_, std::move(link));
    protocol_ = std::make_unique<ClientProtocol>(
        scheduler, std::move(client_id), [this](json object) { broker_.receive(session_, std::move(object)); },
        std::move(config));
    sink_->protocol = protocol_.get();
    protocol_->connect();
}

LocalClient::~LocalClient() {
    sink_->protocol = nullptr;
    broker_.detach(session_);
}

DeliveryReceipt LocalClient::publish(const std::string& topic, std::string payload, Qos qos) {
    const std::size_t matched = broker_.match_count(topic);
    const std::uint64_t id = protocol_->publish(topic, std::move(payload), qos);
    return {matched, id};
}

} // namespace v2g::bus
