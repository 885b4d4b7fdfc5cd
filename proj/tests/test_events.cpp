#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "uevs/events.hpp"

using namespace uevs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("uevs_test_events_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::size_t error_line(const std::string& text) {
    try {
        parse_stream(text);
    } catch (const ParseError& e) {
        return e.line();
    }
    return 0;
}

} // namespace

TEST(Parse, EmptyStream) {
    auto s = parse_stream("uevs 1 2 2 0 0 0\n");
    EXPECT_EQ(s.width, 2);
    EXPECT_EQ(s.height, 2);
    EXPECT_TRUE(s.events.empty());
}

TEST(Parse, ShortHeaderWithoutWindow) {
    auto s = parse_stream("uevs 1 2 2 0\n");
    EXPECT_EQ(s.width, 2);
    EXPECT_EQ(s.height, 2);
    EXPECT_EQ(s.t_start, 0);
    EXPECT_EQ(s.t_end, 0);
    EXPECT_TRUE(s.events.empty());
}

TEST(Parse, TwoEventsFieldByField) {
    auto s = parse_stream("uevs 1 2 2 2 0 100\n0 0 10 1\n1 1 90 -1\n");
    ASSERT_EQ(s.events.size(), 2u);
    EXPECT_EQ(s.t_start, 0);
    EXPECT_EQ(s.t_end, 100);
    EXPECT_EQ(s.events[0], (Event{0, 0, 10, 1}));
    EXPECT_EQ(s.events[1], (Event{1, 1, 90, -1}));
}

TEST(Parse, UnorderedInputIsStablySorted) {
    auto s = parse_stream("uevs 1 4 4 4 0 100\n3 3 50 1\n0 0 10 1\n1 0 50 -1\n2 0 10 -1\n");
    ASSERT_EQ(s.events.size(), 4u);
    EXPECT_EQ(s.events[0], (Event{0, 0, 10, 1}));
    EXPECT_EQ(s.events[1], (Event{2, 0, 10, -1}));
    EXPECT_EQ(s.events[2], (Event{3, 3, 50, 1}));
    EXPECT_EQ(s.events[3], (Event{1, 0, 50, -1}));
    EXPECT_THROW(parse_stream("uevs 1 4 4 2 0 100\n3 3 50 1\n0 0 10 1\n", {true}), ParseError);
}

TEST(Parse, ErrorsCarryLineNumbers) {
    EXPECT_EQ(error_line("uevs 1 2 2 1 0 100\n5 0 10 1\n"), 2u);   // x out of bounds
    EXPECT_EQ(error_line("uevs 1 2 2 1 0 100\n0 0 10 0\n"), 2u);   // polarity
    EXPECT_EQ(error_line("uevs 1 2 2 1 0 100\n0 0 -5 1\n"), 2u);   // negative t
    EXPECT_EQ(error_line("uevs 1 2 2 2 0 100\n0 0 5 1\n"), 3u);    // missing event
    EXPECT_EQ(error_line("uevs 1 2 2 0 0 100\n0 0 5 1\n"), 2u);    // extra event
    EXPECT_EQ(error_line("uevs 2 2 2 0 0 100\n"), 1u);             // version
    EXPECT_EQ(error_line("uevs 1 2 x 0 0 100\n"), 1u);             // non-integer
    EXPECT_EQ(error_line(""), 1u);                                 // no header
    EXPECT_EQ(error_line("uevs 1 2 2 2 0 100\n0 0 5 1\n0  0 6 1\n"), 3u);  // double space
    EXPECT_EQ(error_line("uevs 1 2 2 1 0 100\n0 0 500 1\n"), 2u);  // outside window
}

TEST(Serialize, EmptyStreamIsHeaderOnly) {
    EventStream s;
    s.width = 3;
    s.height = 5;
    s.t_start = 7;
    s.t_end = 9;
    EXPECT_EQ(serialize_stream(s), "uevs 1 3 5 0 7 9\n");
}

TEST(Serialize, RandomRoundTripIsExact) {
    Rng rng(2024);
    for (int i = 0; i < 50; ++i) {
        auto s = oracle::random_stream(rng, 1 + int(uniform_index(rng, 64)), 1 + int(uniform_index(rng, 64)),
                                       uniform_index(rng, 1000), 5, 5 + std::int64_t(uniform_index(rng, 1 << 20)));
        EXPECT_EQ(parse_stream(serialize_stream(s)), s);
    }
}

TEST(Serialize, DuplicateTimestampsKeepOrder) {
    EventStream s{4, 4, 0, 10, {{3, 0, 5, 1}, {0, 0, 5, -1}, {2, 2, 5, 1}}};
    EXPECT_EQ(parse_stream(serialize_stream(s)), s);
}

TEST(Dataset, EmptyManifest) {
    auto dir = scratch_dir("empty");
    write_file(dir / "manifest.json", R"({"classes": ["a"], "samples": []})");
    auto d = load_dataset(dir);
    EXPECT_EQ(d.size(), 0u);
    EXPECT_EQ(d.num_classes(), 1);
}

TEST(Dataset, ManifestOrderIsPreserved) {
    auto dir = scratch_dir("order");
    Dataset d;
    d.class_names = {"a", "b", "c", "d"};
    Rng rng(3);
    for (int c = 0; c < 4; ++c)
        for (int k = 0; k < 2; ++k) d.samples.push_back({oracle::random_stream(rng, 8, 8, 20, 0, 1000), 3 - c});
    save_dataset(dir, d);
    auto back = load_dataset(dir / "manifest.json");
    ASSERT_EQ(back.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_EQ(back.samples[i].label, d.samples[i].label);
        EXPECT_EQ(back.samples[i].stream, d.samples[i].stream);
    }
}

TEST(Dataset, MissingFileNamesThePath) {
    auto dir = scratch_dir("missing");
    write_file(dir / "manifest.json", R"({"classes": ["a"], "samples": [{"path": "gone.uevs", "label": 0}]})");
    try {
        load_dataset(dir);
        FAIL() << "expected an error";
    } catch (const SampleError& e) {
        EXPECT_EQ(e.index(), 0u);
        EXPECT_NE(std::string(e.what()).find("gone.uevs"), std::string::npos);
    }
}

TEST(Dataset, LabelOutOfRangeAndParseFailures) {
    auto dir = scratch_dir("bad");
    write_file(dir / "ok.uevs", "uevs 1 2 2 0 0 0\n");
    write_file(dir / "bad.uevs", "uevs 1 2 2 1 0 10\n9 0 1 1\n");
    write_file(dir / "labels.json", R"({"classes": ["a"], "samples": [{"path": "ok.uevs", "label": 1}]})");
    EXPECT_THROW(load_dataset(dir / "labels.json"), SampleError);
    write_file(dir / "parse.json",
               R"({"classes": ["a"], "samples": [{"path": "ok.uevs", "label": 0}, {"path": "bad.uevs", "label": 0}]})");
    try {
        load_dataset(dir / "parse.json");
        FAIL() << "expected an error";
    } catch (const SampleError& e) {
        EXPECT_EQ(e.index(), 1u);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}
