#pragma once

// Synthetic labeled event streams: moving shapes rendered as luminance
// frames and converted to events by a log-brightness threshold model.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "uevs/error.hpp"
#include "uevs/events.hpp"
#include "uevs/parallel.hpp"
#include "uevs/random.hpp"

namespace uevs {

enum class Shape { Square, Disc, Bar, Cross };

inline std::string to_string(Shape s) {
    switch (s) {
    case Shape::Square: return "square";
    case Shape::Disc: return "disc";
    case Shape::Bar: return "bar";
    case Shape::Cross: return "cross";
    }
    return "?";
}

struct SceneSpec {
    int class_id = 0;
    Shape shape = Shape::Square;
    double radius = 4.0;     // half extent in pixels
    double vx = 0, vy = 0;   // displacement over the whole window, pixels
    double background = 0.2;
    double foreground = 0.9;
    int texture = 1;         // checker cell size of the foreground in pixels, 0 for a flat shape
    int substeps = 64;       // rendered frames, the first one is the reference

    void validate() const {
        if (substeps < 2) throw Error("a scene needs at least 2 frames");
        if (!(background > 0 && background <= 1 && foreground > 0 && foreground <= 1))
            throw Error("luminance levels must lie in (0, 1]");
        if (!(radius > 0)) throw Error("shape radius must be positive");
        if (texture < 0) throw Error("texture cell size must be non-negative");
    }
};

struct GenConfig {
    int classes = 4;
    int per_class = 250;
    int width = 32;
    int height = 32;
    std::int64_t duration = 100000;  // microseconds
    double sigma = 0.2;
    double test_fraction = 0.2;
    std::uint64_t seed = 7;

    void validate() const {
        if (classes < 2) throw Error("need at least 2 classes");
        if (per_class < 1) throw Error("per_class must be positive");
        if (width < 1 || height < 1) throw Error("sensor size must be positive");
        if (duration < 1) throw Error("duration must be positive");
        if (!(sigma > 0)) throw Error("sigma must be positive");
        if (!(test_fraction >= 0 && test_fraction <= 1)) throw Error("test fraction must lie in [0, 1]");
    }

    int test_per_class() const { return int(std::lround(per_class * test_fraction)); }
};

/// Default scene of a class: the shape cycles through square, disc, bar and
/// cross, and the direction of motion turns by 360/classes degrees per class.
inline SceneSpec default_scene(int class_id, const GenConfig& cfg) {
    SceneSpec s;
    s.class_id = class_id;
    s.shape = Shape(class_id % 4);
    s.radius = std::min(cfg.width, cfg.height) / 6.0;
    const double angle = 2 * std::numbers::pi * class_id / cfg.classes;
    const double travel = 0.375 * std::min(cfg.width, cfg.height);
    s.vx = travel * std::cos(angle);
    s.vy = travel * std::sin(angle);
    return s;
}

inline std::string class_name(const SceneSpec& s, int classes) {
    return to_string(s.shape) + "_" + std::to_string(int(std::lround(360.0 * s.class_id / classes)));
}

namespace detail {

inline bool inside(Shape shape, double dx, double dy, double r) {
    switch (shape) {
    case Shape::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case Shape::Disc: return dx * dx + dy * dy <= r * r;
    case Shape::Bar: return std::abs(dx) <= r && std::abs(dy) <= r / 2;
    case Shape::Cross:
        return (std::abs(dx) <= r && std::abs(dy) <= r / 3) || (std::abs(dy) <= r && std::abs(dx) <= r / 3);
    }
    return false;
}

} // namespace detail

/// Luminance frame with the shape centered at (cx, cy).
inline std::vector<double> render_frame(const SceneSpec& spec, int width, int height, double cx, double cy) {
    std::vector<double> frame(std::size_t(width) * height, spec.background);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            if (!detail::inside(spec.shape, dx, dy, spec.radius)) continue;
            double lum = spec.foreground;
            if (spec.texture > 0) {
                const int cell = int(std::floor((dx + spec.radius) / spec.texture)) +
                                 int(std::floor((dy + spec.radius) / spec.texture));
                if (cell % 2) lum *= 0.5;
            }
            frame[std::size_t(y) * width + x] = lum;
        }
    return frame;
}

/// Threshold event model over a frame sequence. Each pixel keeps the
/// luminance of its last event; a log change beyond sigma emits an event at
/// the frame time and resets the reference.
inline EventStream events_from_frames(const std::vector<std::vector<double>>& frames, int width, int height,
                                      std::int64_t duration, double sigma) {
    if (frames.size() < 2) throw Error("need at least 2 frames");
    EventStream s;
    s.width = width;
    s.height = height;
    s.t_start = 0;
    s.t_end = duration;
    std::vector<double> ref(frames[0].size());
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = std::log(frames[0][i]);
    const auto last = std::int64_t(frames.size() - 1);
    for (std::int64_t f = 1; f <= last; ++f) {
        const std::int64_t t = (f * duration) / last;
        const auto& frame = frames[std::size_t(f)];
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const std::size_t i = std::size_t(y) * width + x;
                const double l = std::log(frame[i]);
                if (l - ref[i] > sigma) {
                    s.events.push_back({x, y, t, 1});
                    ref[i] = l;
                } else if (l - ref[i] < -sigma) {
                    s.events.push_back({x, y, t, -1});
                    ref[i] = l;
                }
            }
    }
    return s;
}

/// Luminance frames of one sample. The seed jitters the start position
/// (within the slack left by the trajectory) and the speed by up to 20%.
inline std::vector<std::vector<double>> render_sample(const SceneSpec& spec, const GenConfig& cfg,
                                                      std::uint64_t sample_seed) {
    spec.validate();
    cfg.validate();
    Rng rng(mix_seed(sample_seed, 0x73796e74));
    const double speed = uniform(rng, 0.8, 1.2);
    const double vx = spec.vx * speed, vy = spec.vy * speed;
    const double reach = spec.radius + 0.5;
    auto start_range = [&](double v, int extent) -> std::pair<double, double> {
        const double lo = reach - std::min(0.0, v);
        const double hi = extent - reach - std::max(0.0, v);
        if (lo > hi) throw Error("shape leaves the sensor along its trajectory");
        return {lo, hi};
    };
    const auto [x_lo, x_hi] = start_range(vx, cfg.width);
    const auto [y_lo, y_hi] = start_range(vy, cfg.height);
    const double x0 = uniform(rng, x_lo, x_hi), y0 = uniform(rng, y_lo, y_hi);

    std::vector<std::vector<double>> frames;
    frames.reserve(std::size_t(spec.substeps));
    for (int f = 0; f < spec.substeps; ++f) {
        const double a = double(f) / (spec.substeps - 1);
        frames.push_back(render_frame(spec, cfg.width, cfg.height, x0 + a * vx, y0 + a * vy));
    }
    return frames;
}

inline EventStream gen_sample(const SceneSpec& spec, const GenConfig& cfg, std::uint64_t sample_seed) {
    return events_from_frames(render_sample(spec, cfg, sample_seed), cfg.width, cfg.height, cfg.duration, cfg.sigma);
}

struct SynthSplits {
    Dataset train;
    Dataset test;
};

/// Balanced train and test splits; sample k of a split has label k % classes.
inline SynthSplits generate(const GenConfig& cfg) {
    cfg.validate();
    std::vector<SceneSpec> scenes;
    SynthSplits out;
    for (int c = 0; c < cfg.classes; ++c) {
        scenes.push_back(default_scene(c, cfg));
        out.train.class_names.push_back(class_name(scenes.back(), cfg.classes));
    }
    out.test.class_names = out.train.class_names;
    auto fill = [&](Dataset& d, int per_class, std::uint64_t split) {
        d.samples.resize(std::size_t(per_class) * cfg.classes);
        parallel_for(d.samples.size(), [&](std::size_t k) {
            const int label = int(k % std::size_t(cfg.classes));
            d.samples[k] = {gen_sample(scenes[std::size_t(label)], cfg, mix_seed(cfg.seed, split, k)), label};
        });
    };
    fill(out.train, cfg.per_class, 0);
    fill(out.test, cfg.test_per_class(), 1);
    return out;
}

/// Writes <out_dir>/train and <out_dir>/test, each with a manifest.json.
inline SynthSplits gen_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
    auto splits = generate(cfg);
    save_dataset(out_dir / "train", splits.train);
    save_dataset(out_dir / "test", splits.test);
    return splits;
}

} // namespace uevs
