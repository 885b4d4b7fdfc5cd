#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uevs/error.hpp"
#include "uevs/parallel.hpp"

namespace uevs {

/// One brightness change: pixel (x, y), timestamp in microseconds, polarity +1/-1.
struct Event {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int64_t t = 0;
    std::int8_t p = 1;

    friend bool operator==(const Event&, const Event&) = default;
};

/// Time-ordered events of one recording together with the sensor geometry
/// and the recording window [t_start, t_end].
struct EventStream {
    std::int32_t width = 0;
    std::int32_t height = 0;
    std::int64_t t_start = 0;
    std::int64_t t_end = 0;
    std::vector<Event> events;

    std::int64_t duration() const { return t_end - t_start; }
    std::size_t size() const { return events.size(); }

    friend bool operator==(const EventStream&, const EventStream&) = default;
};

inline bool same_geometry(const EventStream& a, const EventStream& b) {
    return a.width == b.width && a.height == b.height && a.t_start == b.t_start && a.t_end == b.t_end;
}

inline void sort_events(std::vector<Event>& events) {
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
}

/// Throws Error when any EventStream invariant is violated.
inline void validate(const EventStream& s) {
    if (s.width <= 0 || s.height <= 0) throw Error("stream geometry must be positive");
    if (s.t_start < 0 || s.t_end < s.t_start) throw Error("invalid stream window");
    std::int64_t prev = s.t_start;
    for (std::size_t k = 0; k < s.events.size(); ++k) {
        const Event& e = s.events[k];
        if (e.x < 0 || e.x >= s.width || e.y < 0 || e.y >= s.height)
            throw Error("event " + std::to_string(k) + " outside sensor");
        if (e.p != 1 && e.p != -1) throw Error("event " + std::to_string(k) + " has invalid polarity");
        if (e.t < s.t_start || e.t > s.t_end) throw Error("event " + std::to_string(k) + " outside window");
        if (e.t < prev) throw Error("event " + std::to_string(k) + " out of order");
        prev = e.t;
    }
}

// ---------------------------------------------------------------------------
// UEVS1 text codec
//
//   uevs 1 <width> <height> <count> <t_start_us> <t_end_us>
//   <x> <y> <t_us> <p>
//
// Single-space separated, LF line endings. A five-field header
// "uevs 1 <width> <height> <count>" is also accepted; its window starts at 0
// and ends at the last event.

struct ParseOptions {
    /// Reject files whose events are not sorted by timestamp instead of sorting them.
    bool strict_order = false;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t next = line.find(' ', pos);
        if (next == std::string_view::npos) next = line.size();
        out.push_back(line.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

template <typename Int>
bool parse_int(std::string_view field, Int& value) {
    if (field.empty()) return false;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    return ec == std::errc() && ptr == field.data() + field.size();
}

} // namespace detail

inline EventStream parse_stream(std::string_view bytes, const ParseOptions& options = {}) {
    std::vector<std::string_view> lines;
    {
        std::size_t pos = 0;
        while (pos < bytes.size()) {
            std::size_t nl = bytes.find('\n', pos);
            if (nl == std::string_view::npos) {
                lines.push_back(bytes.substr(pos));
                break;
            }
            lines.push_back(bytes.substr(pos, nl - pos));
            pos = nl + 1;
        }
    }
    if (lines.empty()) throw ParseError(1, "missing header");

    const auto header = detail::split_fields(lines[0]);
    if (header.size() != 7 && header.size() != 5) throw ParseError(1, "malformed header: expected 7 fields");
    if (header[0] != "uevs" || header[1] != "1") throw ParseError(1, "malformed header: bad magic or version");

    EventStream s;
    std::int64_t count = 0;
    if (!detail::parse_int(header[2], s.width) || !detail::parse_int(header[3], s.height) ||
        !detail::parse_int(header[4], count))
        throw ParseError(1, "malformed header: non-integer field");
    const bool short_header = header.size() == 5;
    if (!short_header &&
        (!detail::parse_int(header[5], s.t_start) || !detail::parse_int(header[6], s.t_end)))
        throw ParseError(1, "malformed header: non-integer field");
    if (s.width <= 0 || s.height <= 0) throw ParseError(1, "malformed header: geometry must be positive");
    if (count < 0) throw ParseError(1, "malformed header: negative event count");
    if (s.t_start < 0 || s.t_end < s.t_start) throw ParseError(1, "malformed header: invalid time window");

    const std::size_t available = lines.size() - 1;
    if (available != static_cast<std::size_t>(count)) {
        const std::size_t line = std::min(available, static_cast<std::size_t>(count)) + 2;
        throw ParseError(line, "event count mismatch: header declares " + std::to_string(count) + ", found " +
                                   std::to_string(available));
    }

    s.events.reserve(static_cast<std::size_t>(count));
    bool sorted = true;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        const auto f = detail::split_fields(lines[i]);
        if (f.size() != 4) throw ParseError(line_no, "malformed event: expected 4 fields");
        Event e;
        int p = 0;
        if (!detail::parse_int(f[0], e.x) || !detail::parse_int(f[1], e.y) || !detail::parse_int(f[2], e.t) ||
            !detail::parse_int(f[3], p))
            throw ParseError(line_no, "malformed event: non-integer field");
        if (e.x < 0 || e.x >= s.width || e.y < 0 || e.y >= s.height)
            throw ParseError(line_no, "coordinate out of bounds");
        if (p != 1 && p != -1) throw ParseError(line_no, "polarity must be -1 or 1");
        if (e.t < 0) throw ParseError(line_no, "negative timestamp");
        if (!short_header && (e.t < s.t_start || e.t > s.t_end))
            throw ParseError(line_no, "timestamp outside stream window");
        e.p = static_cast<std::int8_t>(p);
        if (!s.events.empty() && e.t < s.events.back().t) {
            if (options.strict_order) throw ParseError(line_no, "events not sorted by timestamp");
            sorted = false;
        }
        s.events.push_back(e);
    }
    if (!sorted) sort_events(s.events);
    if (short_header && !s.events.empty()) s.t_end = s.events.back().t;
    return s;
}

inline std::string serialize_stream(const EventStream& s) {
    std::string out;
    out.reserve(48 + s.events.size() * 20);
    auto put = [&out](auto v) {
        char buf[24];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        out.append(buf, ptr);
    };
    out += "uevs 1 ";
    put(s.width);
    out += ' ';
    put(s.height);
    out += ' ';
    put(s.events.size());
    out += ' ';
    put(s.t_start);
    out += ' ';
    put(s.t_end);
    out += '\n';
    for (const Event& e : s.events) {
        put(e.x);
        out += ' ';
        put(e.y);
        out += ' ';
        put(e.t);
        out += e.p > 0 ? " 1\n" : " -1\n";
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing file: " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

inline EventStream load_stream(const std::filesystem::path& path, const ParseOptions& options = {}) {
    const std::string bytes = read_file(path);
    try {
        return parse_stream(bytes, options);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), path.string() + ": " + e.what());
    }
}

inline void save_stream(const std::filesystem::path& path, const EventStream& s) {
    write_file(path, serialize_stream(s));
}

// ---------------------------------------------------------------------------
// Labeled datasets and JSON manifests

struct Sample {
    EventStream stream;
    int label = 0;
};

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct ManifestEntry {
    std::string path;
    int label = 0;
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::vector<ManifestEntry> samples;
};

inline DatasetManifest parse_manifest(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("manifest is not valid JSON: ") + e.what());
    }
    DatasetManifest m;
    try {
        m.class_names = doc.at("classes").get<std::vector<std::string>>();
        for (const auto& entry : doc.at("samples"))
            m.samples.push_back({entry.at("path").get<std::string>(), entry.at("label").get<int>()});
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const int label = m.samples[i].label;
        if (label < 0 || label >= static_cast<int>(m.class_names.size()))
            throw SampleError(i, "label " + std::to_string(label) + " out of range");
    }
    return m;
}

inline std::string manifest_json(const DatasetManifest& m) {
    nlohmann::json doc;
    doc["classes"] = m.class_names;
    doc["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) doc["samples"].push_back({{"path", s.path}, {"label", s.label}});
    return doc.dump(1) + "\n";
}

/// A dataset argument may name the manifest itself or a directory holding manifest.json.
inline std::filesystem::path resolve_manifest(const std::filesystem::path& p) {
    if (std::filesystem::is_directory(p)) return p / "manifest.json";
    return p;
}

/// Loads every sample of a manifest; results keep manifest order.
inline Dataset load_dataset(const std::filesystem::path& manifest_path, const ParseOptions& options = {}) {
    const auto path = resolve_manifest(manifest_path);
    const DatasetManifest m = parse_manifest(read_file(path));
    const auto base = path.parent_path();

    Dataset d;
    d.class_names = m.class_names;
    d.samples.resize(m.samples.size());
    parallel_for(m.samples.size(), [&](std::size_t i) {
        const auto file = base / m.samples[i].path;
        if (!std::filesystem::exists(file)) throw SampleError(i, "missing file: " + file.string());
        try {
            d.samples[i].stream = load_stream(file, options);
        } catch (const ParseError& e) {
            throw SampleError(i, e.what());
        }
        d.samples[i].label = m.samples[i].label;
    });
    return d;
}

/// Writes one UEVS1 file per sample plus manifest.json into `dir`.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.class_names = d.class_names;
    const int width = std::max<int>(4, static_cast<int>(std::to_string(d.samples.size()).size()));
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        std::string idx = std::to_string(i);
        std::string name = "s" + std::string(static_cast<std::size_t>(std::max(0, width - int(idx.size()))), '0') +
                           idx + ".uevs";
        save_stream(dir / name, d.samples[i].stream);
        m.samples.push_back({name, d.samples[i].label});
    }
    write_file(dir / "manifest.json", manifest_json(m));
}

} // namespace uevs
