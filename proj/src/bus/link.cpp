// SPDX-License-Identifier: Apache-2.0
#include "v2g/bus/link.hpp"

#include <limits>
#include <stdexcept>

namespace v2g::bus {

namespace {

// Unbiased draw in [0, span) by rejection.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t span) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t x = 0;
    do {
        x = rng();
    } while (x >= limit);
    return x % span;
}

} // namespace

void validate(const LinkProfile& link) {
    if (link.latency_min_ms < 0 || link.latency_max_ms < link.latency_min_ms) {
        throw std::invalid_argument("link latency range must satisfy 0 <= min <= max");
    }
    if (!(link.drop_probability >= 0.0 && link.drop_probability <= 1.0)) {
        throw std::invalid_argument("drop probability must lie in [0,1]");
    }
}

LinkSampler::LinkSampler(LinkProfile profile)
    : profile_(std::move(profile)), delay_rng_(profile_.seed), drop_rng_(profile_.seed ^ 0x9E3779B97F4A7C15ULL) {
    validate(profile_);
}

TimeMs LinkSampler::sample_delay() {
    if (profile_.latency_min_ms == profile_.latency_max_ms) {
        return profile_.latency_min_ms;
    }
    const auto span = static_cast<std::uint64_t>(profile_.latency_max_ms - profile_.latency_min_ms) + 1;
    return profile_.latency_min_ms + static_cast<TimeMs>(bounded(delay_rng_, span));
}

bool LinkSampler::sample_drop() {
    const std::uint64_t index = lossy_count_++;
    if (profile_.scripted_drops.count(index) != 0) {
        return true;
    }
    if (profile_.drop_probability <= 0.0) {
        return false;
    }
    if (profile_.drop_probability >= 1.0) {
        return true;
    }
    const double u = static_cast<double>(drop_rng_() >> 11) * 0x1.0p-53;
    return u < profile_.drop_probability;
}

} // namespace v2g::bus
