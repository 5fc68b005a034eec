// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "v2g/ocpp/charge_point.hpp"

namespace v2g::ocpp {

struct CentralSystemHooks {
    /// Frame text to a charge point.
    std::function<void(const std::string& cp_id, const std::string& frame)> send;
    /// After every state change of a charge point mirror (event empty for
    /// non-transition changes such as boot).
    std::function<void(const ChargePointStatus&, std::optional<CpEvent>, TimeMs)> on_status;
    /// Meter samples from MeterValues and from StopTransaction transactionData.
    std::function<void(const std::string& cp_id, const nlohmann::json& meter_value, TimeMs)> on_meter;
    /// Outcome of a SetChargingProfile round trip.
    std::function<void(const std::string& cp_id, const ChargingProfile&, bool accepted, const std::string& detail)>
        on_profile;
    /// Outcome of ReserveNow / CancelReservation.
    std::function<void(const std::string& cp_id, std::int64_t reservation_id, const std::string& action,
                       const std::string& status)>
        on_reservation;
    /// Unanswerable or unmatched frames.
    std::function<void(const std::string& cp_id, const std::string& what)> on_violation;
};

/// Central-system side of the OCPP subset. Keeps one mirror status per charge
/// point, pairs server calls with their results, and evaluates the active
/// charging profile of every charge point against sim time.
class CentralSystem {
public:
    explicit CentralSystem(CentralSystemHooks hooks, int heartbeat_interval_s = 300);

    void register_charge_point(const std::string& cp_id, double rating_kw, bool bidirectional);

    /// One frame from a charge point.
    void handle_frame(const std::string& cp_id, const std::string& text, TimeMs now);

    // Server-initiated calls; each returns the message id used.
    std::string send_reserve_now(const std::string& cp_id, const ReservationHold& hold);
    std::string send_cancel_reservation(const std::string& cp_id, std::int64_t reservation_id);
    std::string send_charging_profile(const std::string& cp_id, const ChargingProfile& profile);

    /// Re-evaluates active profiles and reservation expiry at `now`.
    void tick(TimeMs now);
    /// Earliest future instant at which tick() would change something.
    std::optional<TimeMs> next_wakeup(TimeMs now) const;

    const ChargePointStatus& status(const std::string& cp_id) const;
    std::vector<ChargePointStatus> statuses() const;
    const std::optional<ChargingProfile>& active_profile(const std::string& cp_id) const;
    std::size_t outstanding_calls(const std::string& cp_id) const;
    bool knows(const std::string& cp_id) const { return sessions_.count(cp_id) != 0; }

private:
    struct Session {
        ChargePointStatus status;
        PendingCalls outgoing;
        std::set<std::string> seen_incoming;
        std::optional<ChargingProfile> profile;
        std::map<std::string, ChargingProfile> offered; // by message id
        std::map<std::string, ReservationHold> reservations_offered;
    };

    Session& session(const std::string& cp_id);
    std::string next_id();
    void send(const std::string& cp_id, const OcppMessage& msg);
    void set_status(Session& s, ChargePointStatus next, std::optional<CpEvent> event, TimeMs now);
    void handle_call(Session& s, const OcppMessage& msg, TimeMs now);
    void handle_reply(Session& s, const OcppMessage& msg, TimeMs now);
    void violation(const std::string& cp_id, const std::string& what);

    CentralSystemHooks hooks_;
    DispatchContext ctx_;
    std::map<std::string, Session> sessions_;
    std::uint64_t next_message_ = 1;
    bool tx_confirmed_ = false;
};

/// Charge-point side: the simulated hardware. Holds local status and meter,
/// issues client calls, answers server calls, enforces the active profile.
class SimulatedChargePoint {
public:
    using SendFn = std::function<void(const std::string& frame)>;

    SimulatedChargePoint(std::string cp_id, double rating_kw, bool bidirectional, SendFn send);

    // Client actions. Each throws OcppError(ProtocolViolation) when the local
    // state machine forbids it, without sending anything.
    void boot(TimeMs now);
    void heartbeat(TimeMs now);
    void authorize(const std::string& id_tag, TimeMs now);
    void plug_in(const std::string& vehicle_id, double ev_max_charge_kw, double ev_max_discharge_kw, TimeMs now);
    void start_transaction(TimeMs now);
    void stop_transaction(TimeMs now, const std::string& reason = "EVDisconnected");
    void unplug(TimeMs now);
    void fault(TimeMs now, const std::string& error_code = "OtherError");
    void reset(TimeMs now);
    void send_meter_values(TimeMs now);

    /// Vehicle-side power ceiling (battery full or empty).
    void set_ev_limits(double charge_kw, double discharge_kw, TimeMs now);

    void on_frame(const std::string& text, TimeMs now);
    void tick(TimeMs now);
    std::optional<TimeMs> next_wakeup(TimeMs now) const;

    const ChargePointStatus& status() const { return status_; }
    const Meter& meter() const { return meter_; }
    /// Power actually delivered: setpoint limited by the vehicle-side ceiling.
    double applied_kw() const;
    const std::optional<ChargingProfile>& active_profile() const { return profile_; }
    std::size_t outstanding_calls() const { return pending_.size(); }
    /// True once the central system has answered StartTransaction.
    bool transaction_confirmed() const { return status_.transaction_id && tx_confirmed_; }

    /// Called whenever applied power changes, with the new value.
    std::function<void(TimeMs, double)> on_power;
    /// CallErrors received for this charge point's own calls.
    std::function<void(const OcppMessage&)> on_call_error;

private:
    void call(const std::string& action, nlohmann::json payload, TimeMs now);
    void local(CpEvent expect, const std::string& action, const nlohmann::json& payload, TimeMs now);
    void set_local(ChargePointStatus next, TimeMs now);
    nlohmann::json meter_value(TimeMs now) const;

    ChargePointStatus status_;
    SendFn send_;
    PendingCalls pending_;
    DispatchContext ctx_;
    Meter meter_;
    std::optional<ChargingProfile> profile_;
    double ev_charge_ceiling_kw_ = 0.0;
    double ev_discharge_ceiling_kw_ = 0.0;
    double last_applied_ = 0.0;
    std::uint64_t next_message_ = 1;
    bool tx_confirmed_ = false;
};

} // namespace v2g::ocpp
