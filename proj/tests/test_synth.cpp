#include <gtest/gtest.h>

#include <filesystem>

#include "uevs/synth.hpp"

using namespace uevs;
namespace fs = std::filesystem;

namespace {

// Frame differencing against the previous frame. With two-level scenes whose
// log contrast exceeds sigma this coincides with the reference-reset model.
std::vector<Event> frame_difference(const std::vector<std::vector<double>>& frames, int width, std::int64_t duration,
                                    double sigma) {
    std::vector<Event> out;
    const auto last = std::int64_t(frames.size() - 1);
    for (std::size_t f = 1; f < frames.size(); ++f)
        for (std::size_t i = 0; i < frames[f].size(); ++i) {
            const double d = std::log(frames[f][i]) - std::log(frames[f - 1][i]);
            if (std::abs(d) > sigma)
                out.push_back({int(i % std::size_t(width)), int(i / std::size_t(width)),
                               (std::int64_t(f) * duration) / last, std::int8_t(d > 0 ? 1 : -1)});
        }
    return out;
}

long foreground_pixels(const std::vector<double>& frame, double background) {
    long n = 0;
    for (double v : frame) n += v != background;
    return n;
}

} // namespace

TEST(Synth, StaticSceneHasNoEvents) {
    GenConfig g;
    auto spec = default_scene(0, g);
    spec.vx = spec.vy = 0;
    EXPECT_TRUE(gen_sample(spec, g, 3).events.empty());
}

TEST(Synth, DotSteppingRightEmitsOnePairPerStep) {
    SceneSpec dot;
    dot.shape = Shape::Square;
    dot.radius = 0.4;
    dot.texture = 0;
    const int frames_n = 6, w = 8, h = 3;
    std::vector<std::vector<double>> frames;
    for (int f = 0; f < frames_n; ++f) frames.push_back(render_frame(dot, w, h, 1.5 + f, 1.5));
    const auto s = events_from_frames(frames, w, h, 500, 0.2);
    ASSERT_EQ(s.events.size(), std::size_t(2 * (frames_n - 1)));
    for (int f = 1; f < frames_n; ++f) {
        const auto& a = s.events[std::size_t(2 * (f - 1))];
        const auto& b = s.events[std::size_t(2 * (f - 1) + 1)];
        EXPECT_EQ(a, (Event{f, 1, f * 100, -1}));  // vacated pixel
        EXPECT_EQ(b, (Event{f + 1, 1, f * 100, 1}));  // entered pixel
    }
    EXPECT_EQ(s.events, frame_difference(frames, w, 500, 0.2));
}

TEST(Synth, MatchesFrameDifferencingOracle) {
    GenConfig g;
    for (int c = 0; c < 4; ++c) {
        const auto spec = default_scene(c, g);
        const auto frames = render_sample(spec, g, 100 + c);
        const auto s = gen_sample(spec, g, 100 + c);
        EXPECT_EQ(s.events, frame_difference(frames, g.width, g.duration, g.sigma)) << "class " << c;
    }
}

TEST(Synth, SeedsJitterButValidate) {
    GenConfig g;
    const auto spec = default_scene(1, g);
    const auto a = gen_sample(spec, g, 1), b = gen_sample(spec, g, 2);
    EXPECT_NE(a, b);
    EXPECT_EQ(a, gen_sample(spec, g, 1));
    EXPECT_NO_THROW(validate(a));
    EXPECT_FALSE(a.events.empty());
}

// A flat shape gives every pixel two levels, so its events alternate in sign
// and the net polarity is the change in foreground area.
TEST(Synth, NetPolarityOfFlatShapesIsAreaChange) {
    GenConfig g;
    for (int c = 0; c < 4; ++c) {
        auto spec = default_scene(c, g);
        spec.texture = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto frames = render_sample(spec, g, seed);
            const auto s = events_from_frames(frames, g.width, g.height, g.duration, g.sigma);
            long net = 0;
            for (const auto& e : s.events) net += e.p;
            EXPECT_EQ(net, foreground_pixels(frames.back(), spec.background) -
                               foreground_pixels(frames.front(), spec.background))
                << "class " << c << " seed " << seed;
        }
    }
}

TEST(Synth, ShapeMustStayOnSensor) {
    GenConfig g;
    auto spec = default_scene(0, g);
    spec.vx = 40;
    EXPECT_THROW(gen_sample(spec, g, 1), Error);
}

TEST(Synth, DatasetCountsBalanceAndDeterminism) {
    GenConfig g;
    EXPECT_EQ(g.classes * g.per_class, 1000);
    EXPECT_EQ(g.classes * g.test_per_class(), 200);
    g.per_class = 10;
    g.width = g.height = 16;
    const auto base = fs::temp_directory_path() / "uevs_test_synth";
    fs::remove_all(base);
    const auto a = gen_dataset(g, base / "a");
    gen_dataset(g, base / "b");
    EXPECT_EQ(a.train.size(), 40u);
    EXPECT_EQ(a.test.size(), 8u);
    std::vector<int> counts(4, 0);
    for (const auto& s : a.train.samples) {
        ++counts[std::size_t(s.label)];
        EXPECT_NO_THROW(validate(s.stream));
    }
    EXPECT_EQ(counts, (std::vector<int>{10, 10, 10, 10}));
    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(base / "a")) {
        if (!entry.is_regular_file()) continue;
        ++files;
        const auto twin = base / "b" / fs::relative(entry.path(), base / "a");
        EXPECT_EQ(read_file(entry.path()), read_file(twin)) << entry.path();
    }
    EXPECT_EQ(files, 40u + 8u + 2u);
    const auto back = load_dataset(base / "a" / "train");
    EXPECT_EQ(back.size(), 40u);
    EXPECT_EQ(back.class_names, a.train.class_names);
}
