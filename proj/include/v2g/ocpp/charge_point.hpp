// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "v2g/core/time.hpp"
#include "v2g/ocpp/frame.hpp"

namespace v2g::ocpp {

enum class CpState { Available, Reserved, Preparing, Charging, Discharging, Finishing, Faulted };
inline constexpr std::array<CpState, 7> kAllStates{CpState::Available, CpState::Reserved,    CpState::Preparing,
                                                   CpState::Charging,  CpState::Discharging, CpState::Finishing,
                                                   CpState::Faulted};

std::string_view to_string(CpState s);
std::optional<CpState> cp_state_from_string(std::string_view s);

/// Abstract lifecycle events. Every OCPP action that changes state maps to one.
enum class CpEvent {
    ReserveNow,
    CancelReservation,
    ReservationExpired,
    PlugIn,
    StartTransaction,
    ProfilePositive, // profile limit >= 0
    ProfileNegative, // profile limit < 0
    StopTransaction,
    Unplug,
    Fault,
    Reset,
};
inline constexpr std::array<CpEvent, 11> kAllEvents{
    CpEvent::ReserveNow,      CpEvent::CancelReservation, CpEvent::ReservationExpired, CpEvent::PlugIn,
    CpEvent::StartTransaction, CpEvent::ProfilePositive,  CpEvent::ProfileNegative,    CpEvent::StopTransaction,
    CpEvent::Unplug,          CpEvent::Fault,             CpEvent::Reset};

std::string_view to_string(CpEvent e);

/// The transition table. Empty for pairs that are protocol violations.
std::optional<CpState> transition(CpState from, CpEvent event);

struct ReservationHold {
    std::int64_t reservation_id = 0;
    std::string vehicle_id;
    TimeMs expiry = 0;
    bool operator==(const ReservationHold&) const = default;
};

struct ChargePointStatus {
    std::string cp_id;
    CpState state = CpState::Available;
    std::optional<std::string> connected_vehicle;
    double active_setpoint_kw = 0.0;

    double rating_kw = 0.0;
    bool bidirectional = true;
    bool booted = false;
    std::optional<std::int64_t> transaction_id;
    std::optional<ReservationHold> reservation;
    // Limits negotiated with the vehicle at plug-in (the 15118 session stand-in).
    double ev_max_charge_kw = 0.0;
    double ev_max_discharge_kw = 0.0;

    bool operator==(const ChargePointStatus&) const = default;
};

/// Empty when the status invariants hold, otherwise a description of the breach.
std::optional<std::string> check_invariants(const ChargePointStatus& cp);

struct SchedulePeriod {
    std::int64_t start_offset_s = 0;
    double limit_kw = 0.0;
    bool operator==(const SchedulePeriod&) const = default;
};

struct ChargingProfile {
    std::int64_t profile_id = 0;
    std::string cp_id;
    std::string vehicle_id;
    std::vector<SchedulePeriod> periods;
    TimeMs valid_from = 0;
    TimeMs valid_to = 0;

    bool bidirectional() const;
    /// Limit in force at `now`, or empty outside [valid_from, valid_to).
    std::optional<double> limit_at(TimeMs now) const;
    /// Next instant after `now` at which limit_at changes, if any.
    std::optional<TimeMs> next_change_after(TimeMs now) const;

    bool operator==(const ChargingProfile&) const = default;
};

/// Throws OcppError(ProfileRejected) for an ill-formed profile or one that
/// exceeds `rating_kw`.
void validate_profile(const ChargingProfile& profile, double rating_kw);

/// Applies the profile in force at `now`. Returns the new status; the setpoint
/// is status.active_setpoint_kw. Throws OcppError(ProfileRejected /
/// NotInTransaction).
ChargePointStatus apply_charging_profile(const ChargePointStatus& cp, const ChargingProfile& profile, TimeMs now);

/// OCPP 1.6 style SetChargingProfile payload with limits in W and the
/// `x_bidirectional` extension flag. Inverse: profile_from_payload.
nlohmann::json profile_payload(const ChargingProfile& profile, std::optional<std::int64_t> transaction_id);
ChargingProfile profile_from_payload(const std::string& cp_id, const nlohmann::json& payload);

/// Simulated energy meter: integrates applied power over time.
class Meter {
public:
    /// Integrates `power_kw` from the last update to `now`, then holds the new power.
    void update(TimeMs now, double power_kw);
    void advance(TimeMs now) { update(now, power_kw_); }

    double import_kwh() const { return import_kwh_; }
    double export_kwh() const { return export_kwh_; }
    double net_kwh() const { return import_kwh_ - export_kwh_; }
    double power_kw() const { return power_kw_; }
    TimeMs last_update() const { return last_; }

private:
    TimeMs last_ = 0;
    bool started_ = false;
    double power_kw_ = 0.0;
    double import_kwh_ = 0.0;
    double export_kwh_ = 0.0;
};

// Reservation handling shared by both ends of the link. Each throws
// OcppError(ProtocolViolation) when the transition table forbids it.
ChargePointStatus reserve(const ChargePointStatus& cp, const ReservationHold& hold);
ChargePointStatus cancel_reservation(const ChargePointStatus& cp, std::int64_t reservation_id);
/// Returns the status with an expired reservation released; unchanged otherwise.
ChargePointStatus expire_reservation(const ChargePointStatus& cp, TimeMs now);

/// Context for dispatching client calls on the central-system side.
struct DispatchContext {
    TimeMs now = 0;
    std::int64_t next_transaction_id = 1;
    /// Vehicle ids that Authorize accepts; empty accepts any non-empty idTag.
    std::vector<std::string> known_id_tags;
    int heartbeat_interval_s = 300;
};

struct DispatchOutcome {
    ChargePointStatus status;
    OcppMessage response;
    std::optional<CpEvent> event;
};

/// Client-initiated actions handled by dispatch.
inline constexpr std::array<std::string_view, 7> kClientActions{"BootNotification", "Heartbeat",      "StatusNotification",
                                                                "Authorize",        "StartTransaction", "StopTransaction",
                                                                "MeterValues"};

/// Central-system handling of one Call from a charge point. Always yields
/// exactly one CallResult or CallError carrying the call's id. A rejected call
/// leaves the status unchanged.
DispatchOutcome dispatch(const ChargePointStatus& cp, const OcppMessage& call, DispatchContext& ctx);

} // namespace v2g::ocpp
