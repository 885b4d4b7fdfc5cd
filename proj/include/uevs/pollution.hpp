#pragma once

// Baseline distortions of event streams (coordinate shift, timestamp shift,
// polarity inversion, manual pattern, area shuffle) and the augmentations
// used when training a victim for robustness checks.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "uevs/error.hpp"
#include "uevs/events.hpp"
#include "uevs/random.hpp"
#include "uevs/stack.hpp"

namespace uevs {

enum class PollutionKind { CoordinateShift, TimestampShift, PolarityInversion, ManualPattern, AreaShuffle };

inline PollutionKind parse_pollution_kind(const std::string& s) {
    if (s == "cs") return PollutionKind::CoordinateShift;
    if (s == "ts") return PollutionKind::TimestampShift;
    if (s == "pi") return PollutionKind::PolarityInversion;
    if (s == "mp") return PollutionKind::ManualPattern;
    if (s == "as") return PollutionKind::AreaShuffle;
    throw Error("unknown pollution kind '" + s + "' (expected cs, ts, pi, mp or as)");
}

struct PollutionSpec {
    PollutionKind kind = PollutionKind::CoordinateShift;
    int dx = 2;
    int dy = 2;
    std::int64_t time_shift = 25000;
    int block = 8;
    int pattern_size = 8;
    int channels = kDefaultChannels;  // time bins used by the manual pattern
    std::uint64_t seed = 0;
};

/// Moves every event by (dx, dy); events that leave the sensor are dropped.
inline EventStream coordinate_shift(const EventStream& s, int dx, int dy) {
    EventStream out = s;
    out.events.clear();
    for (Event e : s.events) {
        e.x += dx;
        e.y += dy;
        if (e.x >= 0 && e.x < s.width && e.y >= 0 && e.y < s.height) out.events.push_back(e);
    }
    return out;
}

/// t' = t_start + ((t - t_start + shift) mod duration), then re-sorted.
inline EventStream timestamp_shift(const EventStream& s, std::int64_t shift) {
    const std::int64_t d = s.duration();
    if (d <= 0) throw Error("timestamp shift needs a stream with positive duration");
    EventStream out = s;
    for (Event& e : out.events) {
        std::int64_t r = (e.t - s.t_start + shift) % d;
        if (r < 0) r += d;
        e.t = s.t_start + r;
    }
    sort_events(out.events);
    return out;
}

inline EventStream polarity_inversion(const EventStream& s) {
    EventStream out = s;
    for (Event& e : out.events) e.p = static_cast<std::int8_t>(-e.p);
    return out;
}

/// Events of the per-label pattern: 30% of the pixels of the top-left
/// pattern_size x pattern_size block fire once per time bin with a fixed
/// polarity. Depends only on (label, seed) and the stream window.
inline std::vector<Event> manual_pattern_events(const EventStream& s, int label, int pattern_size, int channels,
                                                std::uint64_t seed) {
    if (pattern_size < 1 || pattern_size >= std::min(s.width, s.height))
        throw Error("pattern size must be at least 1 and smaller than the sensor");
    if (channels < 1) throw Error("channel count must be positive");
    Rng rng(mix_seed(seed, 0x4d50, static_cast<std::uint64_t>(label)));
    std::vector<int> pixels(std::size_t(pattern_size) * pattern_size);
    std::iota(pixels.begin(), pixels.end(), 0);
    shuffle(pixels, rng);
    pixels.resize(std::size_t(std::llround(0.3 * double(pixels.size()))));
    std::sort(pixels.begin(), pixels.end());

    std::vector<Event> out;
    const std::int64_t d = s.duration();
    for (int k = 0; k < channels; ++k) {
        const std::int64_t t = s.t_start + ((2 * std::int64_t(k) + 1) * d) / (2 * std::int64_t(channels));
        for (int px : pixels) {
            const std::int8_t p = uniform01(rng) < 0.5 ? 1 : -1;
            out.push_back(Event{px % pattern_size, px / pattern_size, t, p});
        }
    }
    return out;
}

/// Adds the label's pattern to the stream; original events are kept.
inline EventStream manual_pattern(const EventStream& s, int label, int pattern_size, std::uint64_t seed,
                                  int channels = kDefaultChannels) {
    EventStream out = s;
    auto extra = manual_pattern_events(s, label, pattern_size, channels, seed);
    out.events.insert(out.events.end(), extra.begin(), extra.end());
    sort_events(out.events);
    return out;
}

/// Tile grid of the area shuffle: ceil(W / block) x ceil(H / block) tiles.
inline std::pair<int, int> shuffle_grid(const EventStream& s, int block) {
    if (block < 1) throw Error("block size must be at least 1");
    return {(s.width + block - 1) / block, (s.height + block - 1) / block};
}

/// Moves the events of tile i to tile perm[i], keeping offsets inside the
/// tile. Offsets that do not fit a smaller edge tile are clamped to it.
inline EventStream area_shuffle(const EventStream& s, int block, const std::vector<int>& perm) {
    const auto [tx, ty] = shuffle_grid(s, block);
    if (perm.size() != std::size_t(tx) * ty) throw Error("permutation does not match the tile grid");
    EventStream out = s;
    for (Event& e : out.events) {
        const int src = (e.y / block) * tx + e.x / block;
        const int dst = perm[std::size_t(src)];
        const int x0 = (dst % tx) * block, y0 = (dst / tx) * block;
        const int x1 = std::min(x0 + block, s.width) - 1, y1 = std::min(y0 + block, s.height) - 1;
        e.x = std::min(x0 + e.x % block, x1);
        e.y = std::min(y0 + e.y % block, y1);
    }
    return out;
}

inline EventStream area_shuffle(const EventStream& s, int block, std::uint64_t seed) {
    const auto [tx, ty] = shuffle_grid(s, block);
    std::vector<int> perm(std::size_t(tx) * ty);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(seed, 0x4153));
    shuffle(perm, rng);
    return area_shuffle(s, block, perm);
}

inline EventStream pollute(const EventStream& s, int label, const PollutionSpec& spec) {
    switch (spec.kind) {
    case PollutionKind::CoordinateShift: return coordinate_shift(s, spec.dx, spec.dy);
    case PollutionKind::TimestampShift: return timestamp_shift(s, spec.time_shift);
    case PollutionKind::PolarityInversion: return polarity_inversion(s);
    case PollutionKind::ManualPattern: return manual_pattern(s, label, spec.pattern_size, spec.seed, spec.channels);
    case PollutionKind::AreaShuffle: return area_shuffle(s, spec.block, spec.seed);
    }
    throw Error("unhandled pollution kind");
}

/// Applies a pollution to every sample; labels and order are unchanged.
inline Dataset pollute_dataset(const Dataset& d, const PollutionSpec& spec) {
    Dataset out;
    out.class_names = d.class_names;
    out.samples.resize(d.size());
    parallel_for(d.size(), [&](std::size_t i) {
        try {
            out.samples[i] = {pollute(d.samples[i].stream, d.samples[i].label, spec), d.samples[i].label};
        } catch (const std::exception& e) {
            throw SampleError(i, e.what());
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Keeps each event independently with probability 1 - ratio.
inline EventStream event_drop(const EventStream& s, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0 && ratio <= 1)) throw Error("drop ratio must lie in [0, 1]");
    Rng rng(mix_seed(seed, 0x4452));
    EventStream out = s;
    out.events.clear();
    for (const Event& e : s.events)
        if (uniform01(rng) >= ratio) out.events.push_back(e);
    return out;
}

/// Content moves by (dx, dy); uncovered cells become "no event".
inline EventStack shift_stack(const EventStack& s, int dx, int dy) {
    EventStack out = s;
    std::fill(out.cells.begin(), out.cells.end(), kNoEvent);
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const int sx = x - dx, sy = y - dy;
                if (sx >= 0 && sx < s.width && sy >= 0 && sy < s.height) out.at(c, y, x) = s.at(c, sy, sx);
            }
    return out;
}

/// Keeps the centered keep x keep window and resets everything else.
inline EventStack crop_stack(const EventStack& s, int keep) {
    if (keep < 1 || keep > s.height || keep > s.width) throw Error("crop size must lie in [1, min(H, W)]");
    EventStack out = s;
    const int y0 = (s.height - keep) / 2, x0 = (s.width - keep) / 2;
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x)
                if (y < y0 || y >= y0 + keep || x < x0 || x >= x0 + keep) out.at(c, y, x) = kNoEvent;
    return out;
}

inline EventStack flip_stack(const EventStack& s) {
    EventStack out = s;
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) out.at(c, y, x) = s.at(c, y, s.width - 1 - x);
    return out;
}

struct AugmentSpec {
    double drop_ratio = 0.0;  // applied to the stream before stacking
    int shift_px = 0;         // shift drawn from [-shift_px, shift_px] per axis
    int crop_keep = 0;        // 0 disables cropping; otherwise applied with probability 1/2
    bool flip_h = false;      // horizontal flip with probability 1/2

    bool enabled() const { return drop_ratio > 0 || shift_px > 0 || crop_keep > 0 || flip_h; }
};

/// Default robustness suite: shift, crop, flip and event drop together.
inline AugmentSpec robustness_suite(int height, int width) {
    return AugmentSpec{0.1, 4, std::max(1, std::min(height, width) * 3 / 4), true};
}

/// Seeded random shift, crop and flip of a stack.
inline EventStack stack_augment(const EventStack& s, const AugmentSpec& spec, std::uint64_t seed) {
    if (spec.crop_keep > 0 && (spec.crop_keep > s.height || spec.crop_keep > s.width))
        throw Error("crop size exceeds the stack");
    Rng rng(mix_seed(seed, 0x5341));
    EventStack out = s;
    if (spec.shift_px > 0) {
        const auto span = std::uint64_t(2 * spec.shift_px + 1);
        const int dx = int(uniform_index(rng, span)) - spec.shift_px;
        const int dy = int(uniform_index(rng, span)) - spec.shift_px;
        out = shift_stack(out, dx, dy);
    }
    if (spec.crop_keep > 0 && uniform01(rng) < 0.5) out = crop_stack(out, spec.crop_keep);
    if (spec.flip_h && uniform01(rng) < 0.5) out = flip_stack(out);
    return out;
}

} // namespace uevs
