// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "v2g/ev/vehicle.hpp"
#include "v2g/ocpp/charge_point.hpp"
#include "v2g/optimizer/instance.hpp"

namespace v2g::opt {

enum class TripClass { Short, Long };
std::string_view to_string(TripClass c);
TripClass trip_class_from_string(std::string_view s);

struct DriverPreference {
    std::string vehicle_id;
    TimeMs departure_time = 0;
    /// Energy to add to the battery before departure. When absent, trip_class
    /// is mapped through the configured table.
    std::optional<double> required_energy_kwh;
    std::optional<TripClass> trip_class;
    double soc_floor = 0.3;
    bool v2g_consent = true;
    /// Driver's arrival estimate for a vehicle that is not plugged in yet.
    std::optional<TimeMs> arrival_time;
    TimeMs submitted_at = 0;

    friend bool operator==(const DriverPreference&, const DriverPreference&) = default;
};

enum class ReservationState { Active, Fulfilled, Expired, Cancelled };
std::string_view to_string(ReservationState s);
ReservationState reservation_state_from_string(std::string_view s);

struct Reservation {
    std::int64_t reservation_id = 0;
    std::string vehicle_id;
    std::string cp_id;
    TimeMs start_ms = 0;
    TimeMs end_ms = 0;
    ReservationState state = ReservationState::Active;

    bool overlaps(TimeMs start, TimeMs end) const { return start < end_ms && start_ms < end; }
    friend bool operator==(const Reservation&, const Reservation&) = default;
};

struct TripEnergyTable {
    double short_kwh = 10.0;
    double long_kwh = 25.0;
};

/// Resolves the energy need of a preference. Throws OptError(InvalidPreference)
/// when neither field is set, the value is negative, or it exceeds capacity, and
/// OptError(StalePreference) when departure is not after `now`/submission.
double required_energy(const DriverPreference& pref, const TripEnergyTable& trips, double capacity_kwh);
void validate_preference(const DriverPreference& pref, const TripEnergyTable& trips, double capacity_kwh, TimeMs now);

// ---- input events ------------------------------------------------------------

/// Fields reported by a vehicle relay; absent fields keep their previous value.
struct TelemetryEvent {
    TimeMs at = 0;
    std::string vehicle_id;
    std::optional<double> soc;
    std::optional<double> capacity_kwh;
    std::optional<double> max_charge_kw;
    std::optional<double> max_discharge_kw;
    std::optional<double> charge_efficiency;
    std::optional<double> discharge_efficiency;
    std::optional<ev::PresenceKind> presence;
    /// When the relay sampled the values, if earlier than receipt.
    std::optional<TimeMs> sampled_at;
};

struct PreferenceEvent {
    TimeMs at = 0;
    DriverPreference preference;
};

struct ReservationEvent {
    TimeMs at = 0;
    Reservation reservation;
};

/// Plug-in (with the EV-negotiated limits) or unplug at a charge point.
struct PlugEvent {
    TimeMs at = 0;
    std::string vehicle_id;
    std::string cp_id;
    bool plugged = true;
    std::optional<double> max_charge_kw;
    std::optional<double> max_discharge_kw;
};

struct ChargePointEvent {
    TimeMs at = 0;
    std::string cp_id;
    double rating_kw = 0.0;
    bool bidirectional = false;
};

/// Cumulative register readings of the charge point a vehicle is connected to.
struct MeterEvent {
    TimeMs at = 0;
    std::string vehicle_id;
    std::string cp_id;
    std::optional<std::int64_t> transaction_id;
    double import_kwh = 0.0;
    double export_kwh = 0.0;
    /// Register sampling time at the charge point, if earlier than receipt.
    std::optional<TimeMs> sampled_at;
};

/// A charging profile the charge point accepted for the vehicle. Between meter
/// readings the delivered energy is predicted from the committed profiles.
struct ProfileEvent {
    TimeMs at = 0;
    std::string vehicle_id;
    ocpp::ChargingProfile profile;
};

using ImepEvent = std::variant<TelemetryEvent, PreferenceEvent, ReservationEvent, PlugEvent, ChargePointEvent,
                               MeterEvent, ProfileEvent>;
TimeMs event_time(const ImepEvent& e);

/// Grid signal: per-period vectors starting at the scenario epoch, repeated
/// cyclically (a 24 h price curve covers every day).
struct GridConditions {
    TimeMs slot_ms = 15 * kMsPerMinute;
    int horizon_slots = 96;
    std::vector<double> price{0.0};
    std::vector<double> site_limit_kw{11.0};
    double peak_step_kw = 0.0;
    /// Plans start on the first slot boundary at least this far ahead, so the
    /// resulting profiles are installed before they take effect.
    TimeMs dispatch_lead_ms = 0;
    TripEnergyTable trips;

    double price_at(TimeMs t) const;
    double site_limit_at(TimeMs t) const;
    /// First slot boundary (multiple of slot_ms from the epoch) >= now + dispatch_lead_ms.
    TimeMs plan_start(TimeMs now) const;
};

struct ImepWarning {
    OptErrc code;
    std::string vehicle_id;
    std::string message;
    friend bool operator==(const ImepWarning&, const ImepWarning&) = default;
};

struct Aggregation {
    OptimizationInstance instance;
    std::vector<ImepWarning> warnings;
};

/// Latest-wins store behind aggregate_inputs. Single writer; snapshot() is const.
class Imep {
public:
    /// Throws OptError(InvalidInstance) if events go backwards in time.
    void ingest(const ImepEvent& event);

    /// Builds the instance for a solve at `now`. Slot k covers
    /// [s + k*slot, s + (k+1)*slot) with s = grid.plan_start(now); SoC and
    /// remaining targets are projected to s along the committed profiles.
    Aggregation snapshot(const GridConditions& grid, TimeMs now) const;

    /// Battery-side energy delivered to the vehicle since it was first seen,
    /// measured up to the last meter reading and predicted beyond it. Zero for
    /// unknown vehicles.
    double delivered_energy_kwh(const std::string& vehicle_id, TimeMs at) const;

    struct VehicleView {
        std::string vehicle_id;
        std::optional<double> soc;
        double capacity_kwh = 0.0;
        double max_charge_kw = 0.0;
        double max_discharge_kw = 0.0;
        double charge_efficiency = 1.0;
        double discharge_efficiency = 1.0;
        ev::PresenceKind presence = ev::PresenceKind::ParkedUnplugged;
        std::optional<std::string> cp_id;
        std::optional<double> ev_max_charge_kw;
        std::optional<double> ev_max_discharge_kw;
        TimeMs soc_at = 0;
        double delivered_at_soc = 0.0;
        std::optional<DriverPreference> preference;
        /// Energy the preference asks to add, and the delivered counter when it was submitted.
        double required_kwh = 0.0;
        double delivered_at_submission = 0.0;

        // Delivered energy bookkeeping.
        double measured_kwh = 0.0;
        TimeMs anchor = 0; // time of the last meter reading (or plug/unplug)
        std::optional<std::string> meter_session; // "cp/tx" of the registers below
        double last_import_kwh = 0.0;
        double last_export_kwh = 0.0;
        std::vector<std::pair<TimeMs, ocpp::ChargingProfile>> committed; // since anchor
        friend bool operator==(const VehicleView&, const VehicleView&) = default;
    };
    struct ChargePointView {
        double rating_kw = 0.0;
        bool bidirectional = false;
        friend bool operator==(const ChargePointView&, const ChargePointView&) = default;
    };

    const std::map<std::string, VehicleView>& vehicles() const { return vehicles_; }
    const std::map<std::int64_t, Reservation>& reservations() const { return reservations_; }
    const std::map<std::string, ChargePointView>& charge_points() const { return charge_points_; }
    TimeMs last_event_time() const { return last_; }
    void set_trips(TripEnergyTable trips) { trips_ = trips; }

    friend bool operator==(const Imep&, const Imep&) = default;

private:
    double predicted(const VehicleView& v, TimeMs at) const;

    std::map<std::string, VehicleView> vehicles_;
    std::map<std::int64_t, Reservation> reservations_;
    std::map<std::string, ChargePointView> charge_points_;
    TripEnergyTable trips_;
    TimeMs last_ = 0;
};

/// Folds `events` (time-ordered) and snapshots at `now`.
Aggregation aggregate_inputs(const std::vector<ImepEvent>& events, const GridConditions& grid, TimeMs now);

nlohmann::json to_json(const DriverPreference& p);
DriverPreference preference_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Reservation& r);
Reservation reservation_from_json(const nlohmann::json& j);

} // namespace v2g::opt
