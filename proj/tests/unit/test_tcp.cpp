// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "v2g/bus/tcp.hpp"
#include "v2g/core/realtime.hpp"

using namespace v2g;
using namespace v2g::bus;

namespace {

template <typename Pred>
bool wait_for(Pred pred, int timeout_ms = 5000) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (!pred()) {
        if (std::chrono::steady_clock::now() > deadline) {
            return false;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return true;
}

} // namespace

TEST_CASE("real-time scheduler honours deadlines and ordering") {
    RealTimeScheduler rt;
    std::mutex mu;
    std::vector<int> order;
    std::vector<std::int64_t> fired;
    const std::int64_t start = rt.now_us();
    for (int i = 0; i < 5; ++i) {
        rt.schedule_after(20 - 4 * i, [&, i] {
            std::lock_guard lock(mu);
            order.push_back(i);
            fired.push_back(rt.now_us() - start);
        });
    }
    rt.schedule_after(3, [&] {
        std::lock_guard lock(mu);
        order.push_back(99);
    });
    REQUIRE(wait_for([&] {
        std::lock_guard lock(mu);
        return order.size() == 6;
    }));
    CHECK(order == std::vector<int>{99, 4, 3, 2, 1, 0});
    for (std::size_t k = 1; k < fired.size(); ++k) {
        CHECK(fired[k] >= fired[k - 1]);
    }
    // the task due at 20 ms never runs early
    CHECK(fired.back() >= 20000);
}

TEST_CASE("broker over TCP: publish, subscribe, fixed-latency round trip") {
    RealTimeScheduler rt;
    Broker broker(rt);
    TcpServerConfig cfg;
    cfg.links["tester"] = LinkProfile::fixed(5);
    TcpBrokerServer server(broker, cfg);
    server.start();
    REQUIRE(server.port() != 0);

    TcpClient echo(rt, "127.0.0.1", server.port(), "echo");
    echo.subscribe_and_wait("rtt/ping", [&](const BusMessage& m) { echo.publish("rtt/pong", m.payload, Qos::AtMostOnce); },
                            Qos::AtMostOnce);

    TcpClient tester(rt, "127.0.0.1", server.port(), "tester");
    std::atomic<int> got{0};
    std::atomic<std::int64_t> arrived_us{0};
    tester.subscribe_and_wait("rtt/pong", [&](const BusMessage&) {
        arrived_us = rt.now_us();
        ++got;
    }, Qos::AtMostOnce);

    std::vector<std::int64_t> rtts;
    for (int i = 0; i < 20; ++i) {
        const int before = got;
        const std::int64_t sent = rt.now_us();
        tester.publish("rtt/ping", std::to_string(i), Qos::AtMostOnce);
        REQUIRE(wait_for([&] { return got > before; }));
        rtts.push_back(arrived_us - sent);
    }
    std::sort(rtts.begin(), rtts.end());
    // two 5 ms crossings of the tester link
    CHECK(rtts.front() >= 10000);
    CHECK(rtts[rtts.size() / 2] < 15000);
}

TEST_CASE("AtLeastOnce over TCP under loss") {
    RealTimeScheduler rt;
    Broker broker(rt, BrokerConfig{{}, 20});
    TcpServerConfig cfg;
    LinkProfile lossy = LinkProfile::uniform(0, 2, 11);
    lossy.drop_probability = 0.3;
    cfg.links["sub"] = lossy;
    TcpBrokerServer server(broker, cfg);
    server.start();

    TcpClient sub(rt, "127.0.0.1", server.port(), "sub", ClientConfig{{}, 20});
    std::mutex mu;
    std::set<std::string> seen;
    int calls = 0;
    sub.subscribe_and_wait("q/#", [&](const BusMessage& m) {
        std::lock_guard lock(mu);
        seen.insert(m.payload);
        ++calls;
    });
    TcpClient pub(rt, "127.0.0.1", server.port(), "pub", ClientConfig{{}, 20});
    for (int i = 0; i < 50; ++i) {
        pub.publish("q/x", std::to_string(i), Qos::AtLeastOnce);
    }
    CHECK(wait_for([&] {
        std::lock_guard lock(mu);
        return seen.size() == 50;
    }, 20000));
    CHECK(wait_for([&] { return broker.in_flight() == 0; }, 20000));
    std::lock_guard lock(mu);
    CHECK(calls == 50);
}

TEST_CASE("TCP authentication failure") {
    RealTimeScheduler rt;
    Broker broker(rt, BrokerConfig{"tok", 100});
    TcpBrokerServer server(broker, TcpServerConfig{});
    server.start();
    CHECK_THROWS_AS(TcpClient(rt, "127.0.0.1", server.port(), "x", ClientConfig{"wrong", 100}), BusError);
    CHECK_NOTHROW(TcpClient(rt, "127.0.0.1", server.port(), "y", ClientConfig{"tok", 100}));
}
