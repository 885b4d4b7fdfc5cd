#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include "uevs/error.hpp"
#include "uevs/events.hpp"
#include "uevs/random.hpp"

namespace uevs {

/// Cell values of an event stack.
inline constexpr float kNegativeEvent = 0.0f;
inline constexpr float kNoEvent = 0.5f;
inline constexpr float kPositiveEvent = 1.0f;

inline constexpr int kDefaultChannels = 16;

/// C-channel voxel grid of an event stream. Each (channel, y, x) cell holds the
/// polarity of the latest event of that pixel inside the channel's time bin:
/// 0.0 for p = -1, 1.0 for p = +1, 0.5 when the bin saw no event.
struct EventStack {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::int64_t t_origin = 0;
    std::int64_t t_end = 0;
    std::vector<float> cells;

    std::int64_t duration() const { return t_end - t_origin; }
    double bin_duration() const { return channels > 0 ? double(duration()) / channels : 0.0; }
    std::size_t size() const { return cells.size(); }
    std::size_t plane() const { return std::size_t(height) * std::size_t(width); }

    std::size_t index(int c, int y, int x) const {
        return (std::size_t(c) * std::size_t(height) + std::size_t(y)) * std::size_t(width) + std::size_t(x);
    }
    float& at(int c, int y, int x) { return cells[index(c, y, x)]; }
    float at(int c, int y, int x) const { return cells[index(c, y, x)]; }

    friend bool operator==(const EventStack&, const EventStack&) = default;
};

inline bool is_stack_value(float v) { return v == kNegativeEvent || v == kNoEvent || v == kPositiveEvent; }

inline float polarity_value(int p) { return p > 0 ? kPositiveEvent : kNegativeEvent; }

/// Time bin of timestamp t; the last bin absorbs the remainder when the
/// duration is not a multiple of the channel count.
inline int bin_index(std::int64_t t, std::int64_t t_origin, std::int64_t duration, int channels) {
    if (duration <= 0) return 0;
    const std::int64_t k = ((t - t_origin) * channels) / duration;
    return static_cast<int>(std::clamp<std::int64_t>(k, 0, channels - 1));
}

inline EventStack build_stack(const EventStream& stream, int channels = kDefaultChannels) {
    if (channels <= 0) throw Error("channel count must be positive");
    if (stream.duration() == 0 && !stream.events.empty())
        throw Error("cannot bin a zero-duration stream that contains events");
    EventStack s;
    s.channels = channels;
    s.height = stream.height;
    s.width = stream.width;
    s.t_origin = stream.t_start;
    s.t_end = stream.t_end;
    s.cells.assign(std::size_t(channels) * s.plane(), kNoEvent);
    const std::int64_t d = stream.duration();
    for (const Event& e : stream.events) {
        const int k = bin_index(e.t, stream.t_start, d, channels);
        s.at(k, e.y, e.x) = polarity_value(e.p);  // latest event wins
    }
    return s;
}

enum class TimestampMode {
    Midpoint,      ///< t_origin + (k + 0.5) * bin duration
    UniformInBin,  ///< seeded uniform draw inside the bin
};

struct ReconstructOptions {
    TimestampMode mode = TimestampMode::Midpoint;
    std::uint64_t seed = 0;
};

namespace detail {

// First and last integer timestamps that fall into bin k.
inline std::pair<std::int64_t, std::int64_t> bin_range(int k, std::int64_t t0, std::int64_t d, int channels) {
    // smallest t with (t - t0) * C >= k * d
    const std::int64_t lo = t0 + (std::int64_t(k) * d + channels - 1) / channels;
    std::int64_t hi = t0 + ((std::int64_t(k) + 1) * d + channels - 1) / channels - 1;
    if (k == channels - 1) hi = t0 + d;
    return {lo, hi};
}

} // namespace detail

/// Maps an unlearnable stack back to an event stream using the original
/// stream as a timestamp source. Per (pixel, bin) cell:
///   - same value as the clean stack: every original event is kept;
///   - 0.5 where the clean stack had an event: the originals are deleted;
///   - a polarity the clean cell did not hold: the originals are dropped and
///     one event of the new polarity is generated inside the bin.
inline EventStream reconstruct_stream(const EventStack& unlearnable, const EventStream& original,
                                      const ReconstructOptions& options = {}) {
    if (unlearnable.height != original.height || unlearnable.width != original.width ||
        unlearnable.t_origin != original.t_start || unlearnable.t_end != original.t_end)
        throw ShapeError("stack geometry does not match the original stream");
    for (std::size_t i = 0; i < unlearnable.cells.size(); ++i)
        if (!is_stack_value(unlearnable.cells[i]))
            throw Error("stack cell " + std::to_string(i) + " holds a value outside {0, 0.5, 1}");

    const EventStack clean = build_stack(original, unlearnable.channels);
    const std::int64_t d = original.duration();
    const int channels = unlearnable.channels;

    EventStream out;
    out.width = original.width;
    out.height = original.height;
    out.t_start = original.t_start;
    out.t_end = original.t_end;
    out.events.reserve(original.events.size());

    for (const Event& e : original.events) {
        const std::size_t idx = clean.index(bin_index(e.t, original.t_start, d, channels), e.y, e.x);
        if (unlearnable.cells[idx] == clean.cells[idx]) out.events.push_back(e);
    }

    Rng rng(mix_seed(options.seed, 0x7265636fULL));
    bool generated = false;
    for (int k = 0; k < channels; ++k) {
        std::int64_t lo = 0, hi = -1, mid = 0;
        bool range_ready = false;
        for (int y = 0; y < unlearnable.height; ++y) {
            for (int x = 0; x < unlearnable.width; ++x) {
                const std::size_t idx = clean.index(k, y, x);
                const float u = unlearnable.cells[idx];
                if (u == kNoEvent || u == clean.cells[idx]) continue;
                if (!range_ready) {
                    std::tie(lo, hi) = detail::bin_range(k, original.t_start, d, channels);
                    if (lo > hi)
                        throw Error("bin " + std::to_string(k) + " has no representable timestamp; the stream "
                                    "duration must be at least the channel count in microseconds");
                    mid = original.t_start + ((2 * std::int64_t(k) + 1) * d) / (2 * std::int64_t(channels));
                    mid = std::clamp(mid, lo, hi);
                    range_ready = true;
                }
                Event g;
                g.x = x;
                g.y = y;
                g.p = u == kPositiveEvent ? 1 : -1;
                g.t = options.mode == TimestampMode::Midpoint
                          ? mid
                          : lo + static_cast<std::int64_t>(uniform_index(rng, std::uint64_t(hi - lo + 1)));
                out.events.push_back(g);
                generated = true;
            }
        }
    }
    if (generated) sort_events(out.events);
    return out;
}

/// Debug dump: int32 C, H, W header followed by row-major float32 cells, little-endian.
inline std::string dump_stack(const EventStack& s) {
    std::string out;
    auto put32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put32(std::uint32_t(s.channels));
    put32(std::uint32_t(s.height));
    put32(std::uint32_t(s.width));
    for (float v : s.cells) put32(std::bit_cast<std::uint32_t>(v));
    return out;
}

} // namespace uevs
