// SPDX-License-Identifier: Apache-2.0
#include "v2g/optimizer/imep.hpp"

#include <algorithm>
#include <cmath>

namespace v2g::opt {

using nlohmann::json;

std::string_view to_string(TripClass c) { return c == TripClass::Short ? "Short" : "Long"; }

TripClass trip_class_from_string(std::string_view s) {
    if (s == "Short" || s == "short") {
        return TripClass::Short;
    }
    if (s == "Long" || s == "long") {
        return TripClass::Long;
    }
    throw OptError(OptErrc::InvalidPreference, "unknown trip class '" + std::string(s) + "'");
}

std::string_view to_string(ReservationState s) {
    switch (s) {
    case ReservationState::Active:
        return "Active";
    case ReservationState::Fulfilled:
        return "Fulfilled";
    case ReservationState::Expired:
        return "Expired";
    case ReservationState::Cancelled:
        return "Cancelled";
    }
    return "?";
}

ReservationState reservation_state_from_string(std::string_view s) {
    for (auto st : {ReservationState::Active, ReservationState::Fulfilled, ReservationState::Expired,
                    ReservationState::Cancelled}) {
        if (to_string(st) == s) {
            return st;
        }
    }
    throw std::invalid_argument("unknown reservation state '" + std::string(s) + "'");
}

double required_energy(const DriverPreference& pref, const TripEnergyTable& trips, double capacity_kwh) {
    double e = 0.0;
    if (pref.required_energy_kwh) {
        e = *pref.required_energy_kwh;
    } else if (pref.trip_class) {
        e = *pref.trip_class == TripClass::Short ? trips.short_kwh : trips.long_kwh;
    } else {
        throw OptError(OptErrc::InvalidPreference, "preference needs required_energy_kwh or trip_class");
    }
    if (!std::isfinite(e) || e < 0) {
        throw OptError(OptErrc::InvalidPreference, "required energy must be >= 0");
    }
    if (capacity_kwh > 0 && e > capacity_kwh) {
        throw OptError(OptErrc::InvalidPreference, "required energy exceeds the vehicle capacity");
    }
    return e;
}

void validate_preference(const DriverPreference& pref, const TripEnergyTable& trips, double capacity_kwh, TimeMs now) {
    if (!(pref.soc_floor >= 0 && pref.soc_floor <= 1)) {
        throw OptError(OptErrc::InvalidPreference, "soc_floor must lie in [0, 1]");
    }
    required_energy(pref, trips, capacity_kwh);
    if (pref.departure_time <= now || pref.departure_time <= pref.submitted_at) {
        throw OptError(OptErrc::StalePreference, "departure time is not in the future");
    }
}

TimeMs event_time(const ImepEvent& e) {
    return std::visit([](const auto& x) { return x.at; }, e);
}

namespace {

std::size_t period_index(TimeMs t, TimeMs slot, std::size_t n) {
    const TimeMs k = t >= 0 ? t / slot : (t - slot + 1) / slot;
    const auto m = static_cast<TimeMs>(n);
    return static_cast<std::size_t>(((k % m) + m) % m);
}

int ceil_slots(TimeMs delta, TimeMs slot) {
    if (delta <= 0) {
        return 0;
    }
    return static_cast<int>((delta + slot - 1) / slot);
}

int floor_slots(TimeMs delta, TimeMs slot) {
    if (delta <= 0) {
        return 0;
    }
    return static_cast<int>(delta / slot);
}

} // namespace

double GridConditions::price_at(TimeMs t) const {
    return price.empty() ? 0.0 : price[period_index(t, slot_ms, price.size())];
}

double GridConditions::site_limit_at(TimeMs t) const {
    return site_limit_kw.empty() ? 0.0 : site_limit_kw[period_index(t, slot_ms, site_limit_kw.size())];
}

TimeMs GridConditions::plan_start(TimeMs now) const {
    const TimeMs t = now + std::max<TimeMs>(0, dispatch_lead_ms);
    const TimeMs k = t >= 0 ? (t + slot_ms - 1) / slot_ms : t / slot_ms;
    return k * slot_ms;
}

namespace {

double battery_effect(const Imep::VehicleView& v, double p_kw, TimeMs ms) {
    const double h = ms_to_hours(ms);
    return p_kw >= 0 ? p_kw * h * v.charge_efficiency : p_kw * h / v.discharge_efficiency;
}

// Energy the profile would deliver over [from, to), limited by the EV session limits.
double profile_energy(const Imep::VehicleView& v, const ocpp::ChargingProfile& prof, TimeMs from, TimeMs to) {
    double e = 0.0;
    TimeMs t = from;
    while (t < to) {
        const auto next = prof.next_change_after(t);
        const TimeMs until = next ? std::min(*next, to) : to;
        double p = prof.limit_at(t).value_or(0.0);
        p = std::min(p, v.ev_max_charge_kw.value_or(p));
        p = std::max(p, -v.ev_max_discharge_kw.value_or(-p));
        e += battery_effect(v, p, until - t);
        t = until;
    }
    return e;
}

} // namespace

double Imep::predicted(const VehicleView& v, TimeMs at) const {
    double e = v.measured_kwh;
    for (std::size_t i = 0; i < v.committed.size(); ++i) {
        const TimeMs from = std::max(v.committed[i].first, v.anchor);
        const TimeMs to = i + 1 < v.committed.size() ? std::min(at, v.committed[i + 1].first) : at;
        if (to > from) {
            e += profile_energy(v, v.committed[i].second, from, to);
        }
    }
    return e;
}

double Imep::delivered_energy_kwh(const std::string& vehicle_id, TimeMs at) const {
    const auto it = vehicles_.find(vehicle_id);
    return it == vehicles_.end() ? 0.0 : predicted(it->second, at);
}

void Imep::ingest(const ImepEvent& event) {
    const TimeMs at = event_time(event);
    if (at < last_) {
        throw OptError(OptErrc::InvalidInstance, "IMEP events must be time-ordered");
    }
    last_ = at;
    auto vehicle = [this](const std::string& id) -> VehicleView& {
        auto& v = vehicles_[id];
        v.vehicle_id = id;
        return v;
    };
    // Folds the prediction into the measured counter and drops the profiles.
    auto settle = [this](VehicleView& v, TimeMs t) {
        v.measured_kwh = predicted(v, t);
        v.committed.clear();
        v.anchor = t;
    };
    std::visit(
        [&](const auto& e) {
            using E = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<E, TelemetryEvent>) {
                auto& v = vehicle(e.vehicle_id);
                if (e.capacity_kwh) {
                    v.capacity_kwh = *e.capacity_kwh;
                }
                if (e.max_charge_kw) {
                    v.max_charge_kw = *e.max_charge_kw;
                }
                if (e.max_discharge_kw) {
                    v.max_discharge_kw = *e.max_discharge_kw;
                }
                if (e.charge_efficiency) {
                    v.charge_efficiency = *e.charge_efficiency;
                }
                if (e.discharge_efficiency) {
                    v.discharge_efficiency = *e.discharge_efficiency;
                }
                // The charge point owns the plug state; the relay only tells
                // en route from parked.
                if (e.presence && !v.cp_id) {
                    v.presence = *e.presence == ev::PresenceKind::PluggedIn ? ev::PresenceKind::ParkedUnplugged
                                                                            : *e.presence;
                }
                if (e.soc) {
                    v.soc = *e.soc;
                    v.soc_at = std::min(e.at, e.sampled_at.value_or(e.at));
                    v.delivered_at_soc = predicted(v, v.soc_at);
                }
            } else if constexpr (std::is_same_v<E, PreferenceEvent>) {
                auto& v = vehicle(e.preference.vehicle_id);
                v.required_kwh = required_energy(e.preference, trips_, v.capacity_kwh);
                v.preference = e.preference;
                v.delivered_at_submission = predicted(v, e.at);
            } else if constexpr (std::is_same_v<E, ReservationEvent>) {
                reservations_[e.reservation.reservation_id] = e.reservation;
            } else if constexpr (std::is_same_v<E, PlugEvent>) {
                auto& v = vehicle(e.vehicle_id);
                settle(v, e.at);
                v.meter_session.reset();
                if (e.plugged) {
                    v.presence = ev::PresenceKind::PluggedIn;
                    v.cp_id = e.cp_id;
                    v.ev_max_charge_kw = e.max_charge_kw;
                    v.ev_max_discharge_kw = e.max_discharge_kw;
                } else {
                    v.presence = ev::PresenceKind::ParkedUnplugged;
                    v.cp_id.reset();
                    v.ev_max_charge_kw.reset();
                    v.ev_max_discharge_kw.reset();
                }
            } else if constexpr (std::is_same_v<E, ChargePointEvent>) {
                charge_points_[e.cp_id] = ChargePointView{e.rating_kw, e.bidirectional};
            } else if constexpr (std::is_same_v<E, MeterEvent>) {
                auto& v = vehicle(e.vehicle_id);
                const TimeMs sampled = std::max(v.anchor, std::min(e.at, e.sampled_at.value_or(e.at)));
                const std::string session =
                    e.cp_id + "/" + (e.transaction_id ? std::to_string(*e.transaction_id) : std::string("-"));
                if (v.meter_session == session) {
                    v.measured_kwh += e.import_kwh - v.last_import_kwh >= 0
                                          ? (e.import_kwh - v.last_import_kwh) * v.charge_efficiency
                                          : 0.0;
                    v.measured_kwh -= std::max(0.0, e.export_kwh - v.last_export_kwh) / v.discharge_efficiency;
                } else {
                    // first reading of a session: registers become the baseline
                    v.measured_kwh = predicted(v, sampled);
                    v.meter_session = session;
                }
                v.last_import_kwh = e.import_kwh;
                v.last_export_kwh = e.export_kwh;
                // keep only the profile in force at the reading and later ones
                std::vector<std::pair<TimeMs, ocpp::ChargingProfile>> keep;
                for (std::size_t i = 0; i < v.committed.size(); ++i) {
                    const bool superseded = i + 1 < v.committed.size() && v.committed[i + 1].first <= sampled;
                    if (!superseded) {
                        keep.push_back(v.committed[i]);
                    }
                }
                v.committed = std::move(keep);
                v.anchor = sampled;
            } else {
                auto& v = vehicle(e.vehicle_id);
                v.committed.emplace_back(e.at, e.profile);
            }
        },
        event);
}

Aggregation Imep::snapshot(const GridConditions& grid, TimeMs now) const {
    Aggregation out;
    OptimizationInstance& in = out.instance;
    const int T = std::max(0, grid.horizon_slots);
    const TimeMs start = grid.plan_start(now);
    in.start_ms = start;
    in.slot_hours = ms_to_hours(grid.slot_ms);
    in.peak_step_kw = grid.peak_step_kw;
    for (int k = 0; k < T; ++k) {
        in.price.push_back(grid.price_at(start + k * grid.slot_ms));
        in.site_limit_kw.push_back(grid.site_limit_at(start + k * grid.slot_ms));
    }
    for (const auto& [id, v] : vehicles_) {
        if (!v.soc || v.capacity_kwh <= 0) {
            continue; // nothing known about the battery yet
        }
        const auto& pref = v.preference;
        if (pref && pref->departure_time <= now) {
            out.warnings.push_back({OptErrc::StalePreference, id, "departure time has passed; vehicle excluded"});
            continue;
        }
        const Reservation* res = nullptr;
        for (const auto& [rid, r] : reservations_) {
            if (r.vehicle_id == id && r.state == ReservationState::Active && r.end_ms > now &&
                (!res || r.start_ms < res->start_ms)) {
                res = &r;
            }
        }
        const bool plugged = v.presence == ev::PresenceKind::PluggedIn && v.cp_id.has_value();
        if (!plugged && !pref && !res) {
            continue;
        }
        VehicleRecord rec;
        rec.vehicle_id = id;
        rec.plugged = plugged;
        rec.capacity_kwh = v.capacity_kwh;
        rec.charge_efficiency = v.charge_efficiency;
        rec.discharge_efficiency = v.discharge_efficiency;
        const double delivered = predicted(v, start);
        rec.soc = std::clamp((*v.soc * v.capacity_kwh + delivered - v.delivered_at_soc) / v.capacity_kwh, 0.0, 1.0);
        if (plugged) {
            rec.cp_id = v.cp_id;
        } else if (res) {
            rec.cp_id = res->cp_id;
        }
        // window
        int a = 0;
        if (!plugged) {
            TimeMs arrival = pref && pref->arrival_time ? *pref->arrival_time : now;
            if (res) {
                arrival = std::max(arrival, res->start_ms);
            }
            a = std::min(T, ceil_slots(arrival - start, grid.slot_ms));
        }
        int b = T;
        if (pref) {
            b = std::min(b, floor_slots(pref->departure_time - start, grid.slot_ms));
        } else if (!plugged && res) {
            b = std::min(b, floor_slots(res->end_ms - start, grid.slot_ms));
        }
        rec.window_start = a;
        rec.window_end = std::max(a, b);
        // power bounds
        const bool consent = pref && pref->v2g_consent;
        double cmax = plugged && v.ev_max_charge_kw ? *v.ev_max_charge_kw : v.max_charge_kw;
        double dmax = plugged && v.ev_max_discharge_kw ? *v.ev_max_discharge_kw : v.max_discharge_kw;
        if (rec.cp_id) {
            if (const auto cp = charge_points_.find(*rec.cp_id); cp != charge_points_.end()) {
                cmax = std::min(cmax, cp->second.rating_kw);
                dmax = cp->second.bidirectional ? std::min(dmax, cp->second.rating_kw) : 0.0;
            }
        }
        rec.max_charge_kw = std::max(0.0, cmax);
        rec.max_discharge_kw = consent ? std::max(0.0, dmax) : 0.0;
        // target: what is still missing of the requested energy
        if (pref) {
            rec.soc_floor = pref->soc_floor;
            rec.target_energy_kwh = v.required_kwh - (delivered - v.delivered_at_submission);
            if (!consent) {
                rec.target_energy_kwh = std::max(0.0, rec.target_energy_kwh);
            }
        }
        in.vehicles.push_back(std::move(rec));
    }
    return out;
}

Aggregation aggregate_inputs(const std::vector<ImepEvent>& events, const GridConditions& grid, TimeMs now) {
    Imep store;
    store.set_trips(grid.trips);
    for (const auto& e : events) {
        if (event_time(e) > now) {
            throw OptError(OptErrc::InvalidInstance, "event is later than the aggregation time");
        }
        store.ingest(e);
    }
    return store.snapshot(grid, now);
}

json to_json(const DriverPreference& p) {
    json j = {{"vehicle_id", p.vehicle_id},
              {"departure_time", to_iso8601(p.departure_time)},
              {"soc_floor", p.soc_floor},
              {"v2g_consent", p.v2g_consent},
              {"submitted_at", to_iso8601(p.submitted_at)}};
    if (p.required_energy_kwh) {
        j["required_energy_kwh"] = *p.required_energy_kwh;
    }
    if (p.trip_class) {
        j["trip_class"] = std::string(to_string(*p.trip_class));
    }
    if (p.arrival_time) {
        j["arrival_time"] = to_iso8601(*p.arrival_time);
    }
    return j;
}

DriverPreference preference_from_json(const json& j) {
    DriverPreference p;
    p.vehicle_id = j.value("vehicle_id", std::string{});
    p.departure_time = from_iso8601(j.at("departure_time").get<std::string>());
    if (j.contains("required_energy_kwh") && !j["required_energy_kwh"].is_null()) {
        p.required_energy_kwh = j["required_energy_kwh"].get<double>();
    }
    if (j.contains("trip_class") && !j["trip_class"].is_null()) {
        p.trip_class = trip_class_from_string(j["trip_class"].get<std::string>());
    }
    p.soc_floor = j.value("soc_floor", 0.3);
    p.v2g_consent = j.value("v2g_consent", true);
    if (j.contains("arrival_time") && !j["arrival_time"].is_null()) {
        p.arrival_time = from_iso8601(j["arrival_time"].get<std::string>());
    }
    if (j.contains("submitted_at")) {
        p.submitted_at = from_iso8601(j["submitted_at"].get<std::string>());
    }
    return p;
}

json to_json(const Reservation& r) {
    return {{"reservation_id", r.reservation_id},
            {"vehicle_id", r.vehicle_id},
            {"cp_id", r.cp_id},
            {"window", {to_iso8601(r.start_ms), to_iso8601(r.end_ms)}},
            {"state", std::string(to_string(r.state))}};
}

Reservation reservation_from_json(const json& j) {
    Reservation r;
    r.reservation_id = j.value("reservation_id", std::int64_t{0});
    r.vehicle_id = j.at("vehicle_id").get<std::string>();
    r.cp_id = j.at("cp_id").get<std::string>();
    const auto w = j.at("window");
    r.start_ms = from_iso8601(w.at(0).get<std::string>());
    r.end_ms = from_iso8601(w.at(1).get<std::string>());
    r.state = reservation_state_from_string(j.value("state", std::string("Active")));
    return r;
}

} // namespace v2g::opt
