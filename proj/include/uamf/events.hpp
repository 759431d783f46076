#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uamf/tensor.hpp"

namespace uamf {

struct EventPoint {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::int64_t t = 0;  // microseconds
    std::int8_t p = 1;   // +1 or -1

    bool operator==(const EventPoint&) const = default;
};

/// Events sorted by timestamp, ties kept in emission order.
struct EventStream {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<EventPoint> events;
    std::optional<int> label;

    bool operator==(const EventStream&) const = default;
};

/// Throws DataError on an unsorted stream, out-of-range coordinate or bad polarity.
void validate_stream(const EventStream& stream);

/// M frames of 2 polarity channels: tensor shape (M, 2, H, W).
template <typename T>
struct FrameStack {
    Tensor<T> tensor;
    double frame_duration = 0.0;  // microseconds
};

/// Splits into `m` equal-duration windows over [t_first, t_last]. Windows are
/// half-open except the last, which is closed. A zero-duration stream puts
/// every event in the first window.
std::vector<std::span<const EventPoint>> split_stream(const EventStream& stream, std::size_t m);

/// Raw per-pixel event counts, shape (2, h, w); channel 0 positive, 1 negative.
template <typename T>
Tensor<T> count_events(std::span<const EventPoint> tube, std::size_t h, std::size_t w);

/// Counts divided by the frame's max count (at least 1), so values lie in [0, 1].
template <typename T>
Tensor<T> rasterize(std::span<const EventPoint> tube, std::size_t h, std::size_t w);

/// Bilinear resampling with half-pixel centers, per frame and channel.
template <typename T>
FrameStack<T> resize_frames(const FrameStack<T>& frames, std::size_t h, std::size_t w);

/// split_stream -> rasterize at sensor resolution -> resize_frames.
template <typename T>
FrameStack<T> stack_frames(const EventStream& stream, std::size_t m, std::size_t h, std::size_t w);

struct GeneratorConfig {
    int num_classes = 4;
    std::uint32_t sensor_width = 64;
    std::uint32_t sensor_height = 64;
    std::int64_t duration_us = 100000;
    std::uint32_t bar_width_min = 2;
    std::uint32_t bar_width_max = 4;
    // Probability that a pixel swept by the bar fires at all.
    double event_rate = 1.0;
    // Per-pixel probability of one spurious event of random polarity and time.
    double noise_rate = 0.01;
    std::size_t min_events = 1;
    std::size_t max_events = 50000;

    void validate() const;
};

enum class MotionClass : int { up = 0, down = 1, left = 2, right = 3 };

/// Bar sweeping across the sensor in the class's direction: +1 events at the
/// leading edge, -1 at the trailing edge, plus Bernoulli noise.
EventStream synth_stream(int class_id, std::uint64_t seed, const GeneratorConfig& cfg);

/// Text format: "EVS1 width height num_events" then one "t x y p" line per event.
void write_evs(std::ostream& os, const EventStream& stream);
EventStream read_evs(std::istream& is);
void write_evs_file(const std::filesystem::path& path, const EventStream& stream);
EventStream read_evs_file(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;
    int label = 0;
};

/// CSV with a "path,label" header.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

} // namespace uamf
