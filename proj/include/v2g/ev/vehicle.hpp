// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "v2g/core/error.hpp"
#include "v2g/core/time.hpp"
#include "v2g/telemetry/codec.hpp"

namespace v2g::ev {

enum class PresenceKind { EnRoute, ParkedUnplugged, PluggedIn };

struct Presence {
    PresenceKind kind = PresenceKind::ParkedUnplugged;
    /// Set only while PluggedIn.
    std::string charge_point_id;

    static Presence en_route() { return {PresenceKind::EnRoute, {}}; }
    static Presence parked() { return {PresenceKind::ParkedUnplugged, {}}; }
    static Presence plugged_in(std::string cp) { return {PresenceKind::PluggedIn, std::move(cp)}; }

    friend bool operator==(const Presence&, const Presence&) = default;
};

std::string_view to_string(PresenceKind kind);
PresenceKind presence_kind_from_string(std::string_view name);

struct VehicleState {
    std::string vehicle_id;
    double soc = 0.5;
    double capacity_kwh = 40.0;
    double max_charge_kw = 11.0;
    double max_discharge_kw = 11.0;
    double charge_efficiency = 0.95;
    double discharge_efficiency = 0.95;
    double consumption_kwh_per_km = 0.18;
    double speed_kph = 0.0;
    Presence presence;
    TimeMs timestamp = 0;

    double stored_energy_kwh() const { return soc * capacity_kwh; }

    friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

enum class EvErrc {
    InvalidParameters,
    SocOutOfRange,
    PowerLimitExceeded,
    InsufficientEnergy,
    InvalidTransition,
    MalformedRequest,
};
using EvError = Error<EvErrc>;

std::string_view to_string(EvErrc code);

/// Throws EvError(InvalidParameters) when a field violates its domain.
void validate(const VehicleState& state);

/// Integrates constant grid-side power over `dt_h` hours. Positive power charges
/// through the charge efficiency, negative power discharges through the
/// discharge efficiency.
VehicleState step_soc(const VehicleState& state, double power_kw, double dt_h);

/// Consumes distance * consumption and sets the vehicle EnRoute.
VehicleState drive(const VehicleState& state, double distance_km);

// Presence lifecycle: EnRoute -> ParkedUnplugged -> PluggedIn -> ParkedUnplugged.
VehicleState arrive(const VehicleState& state);
VehicleState plug_in(const VehicleState& state, std::string charge_point_id);
VehicleState unplug(const VehicleState& state);

/// ECU side of the diagnostic exchange. Unsupported identifiers yield a
/// negative-response frame; malformed requests throw EvError(MalformedRequest).
telemetry::Frame answer_diagnostic(const VehicleState& state, const telemetry::Frame& request);

/// round-half-up(soc * 255), the quantization applied to the SoC PID.
std::uint8_t quantize_soc(double soc);

} // namespace v2g::ev
