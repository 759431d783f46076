#include "uamf/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "uamf/error.hpp"
#include "uamf/rng.hpp"

namespace uamf {

namespace {

std::string describe(const EventPoint& e) {
    std::ostringstream os;
    os << "event(t=" << e.t << ", x=" << e.x << ", y=" << e.y << ", p=" << int(e.p) << ")";
    return os.str();
}

} // namespace

void validate_stream(const EventStream& stream) {
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const auto& e = stream.events[i];
        if (e.x >= stream.width || e.y >= stream.height) {
            throw DataError(describe(e) + " outside " + std::to_string(stream.width) + "x" +
                            std::to_string(stream.height) + " sensor");
        }
        if (e.p != 1 && e.p != -1) throw DataError(describe(e) + " has invalid polarity");
        if (e.t < 0) throw DataError(describe(e) + " has negative timestamp");
        if (i > 0 && e.t < stream.events[i - 1].t) {
            throw DataError(describe(e) + " breaks timestamp order at index " + std::to_string(i));
        }
    }
}

std::vector<std::span<const EventPoint>> split_stream(const EventStream& stream, std::size_t m) {
    if (m == 0) throw ConfigError("split_stream: window count must be at least 1");
    const auto& ev = stream.events;
    if (ev.empty()) throw DataError("split_stream: empty event stream");
    for (std::size_t i = 1; i < ev.size(); ++i) {
        if (ev[i].t < ev[i - 1].t) throw DataError("split_stream: events not sorted by time");
    }
    const std::int64_t t0 = ev.front().t;
    const auto duration = static_cast<unsigned __int128>(ev.back().t - t0);
    std::vector<std::span<const EventPoint>> windows;
    windows.reserve(m);
    std::size_t begin = 0;
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t end = begin;
        if (duration == 0) {
            end = k == 0 ? ev.size() : begin;
        } else if (k + 1 == m) {
            end = ev.size();
        } else {
            // Event belongs to window k iff k <= (t - t0) * m / duration < k + 1.
            while (end < ev.size() &&
                   static_cast<unsigned __int128>(ev[end].t - t0) * m < (k + 1) * duration)
                ++end;
        }
        windows.emplace_back(ev.data() + begin, end - begin);
        begin = end;
    }
    return windows;
}

template <typename T>
Tensor<T> count_events(std::span<const EventPoint> tube, std::size_t h, std::size_t w) {
    std::vector<T> counts(2 * h * w, T(0));
    for (const auto& e : tube) {
        if (e.x >= w || e.y >= h) {
            throw DataError(describe(e) + " outside " + std::to_string(w) + "x" +
                            std::to_string(h) + " frame");
        }
        if (e.p != 1 && e.p != -1) throw DataError(describe(e) + " has invalid polarity");
        const std::size_t channel = e.p > 0 ? 0 : 1;
        counts[(channel * h + e.y) * w + e.x] += T(1);
    }
    return Tensor<T>(Shape{2, h, w}, std::move(counts));
}

template <typename T>
Tensor<T> rasterize(std::span<const EventPoint> tube, std::size_t h, std::size_t w) {
    Tensor<T> counts = count_events<T>(tube, h, w);
    auto data = counts.mutable_data();
    const T peak = std::max(T(1), *std::max_element(data.begin(), data.end()));
    for (auto& v : data) v /= peak;
    return counts;
}

template <typename T>
FrameStack<T> resize_frames(const FrameStack<T>& frames, std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw ConfigError("resize_frames: target extents must be positive");
    const Shape& s = frames.tensor.shape();
    if (s.size() != 4) {
        throw DimensionError("resize_frames: expected (M, C, H, W), got " + shape_str(s));
    }
    const std::size_t planes = s[0] * s[1], ih = s[2], iw = s[3];
    if (ih == h && iw == w) return frames;

    struct Tap {
        std::size_t i0, i1;
        T frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double ratio = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t d = 0; d < out; ++d) {
            double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
            src = std::max(src, 0.0);
            auto i0 = static_cast<std::size_t>(std::floor(src));
            i0 = std::min(i0, in - 1);
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            t[d] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
        }
        return t;
    };
    const auto ty = taps(ih, h);
    const auto tx = taps(iw, w);
    const auto in = frames.tensor.data();
    std::vector<T> out(planes * h * w);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = in.data() + p * ih * iw;
        T* dst = out.data() + p * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < w; ++x) {
                const auto& b = tx[x];
                const T top = src[a.i0 * iw + b.i0] * (T(1) - b.frac) + src[a.i0 * iw + b.i1] * b.frac;
                const T bot = src[a.i1 * iw + b.i0] * (T(1) - b.frac) + src[a.i1 * iw + b.i1] * b.frac;
                dst[y * w + x] = top * (T(1) - a.frac) + bot * a.frac;
            }
        }
    }
    return {Tensor<T>(Shape{s[0], s[1], h, w}, std::move(out)), frames.frame_duration};
}

template <typename T>
FrameStack<T> stack_frames(const EventStream& stream, std::size_t m, std::size_t h, std::size_t w) {
    validate_stream(stream);
    const auto windows = split_stream(stream, m);
    const std::size_t sh = stream.height, sw = stream.width;
    std::vector<T> data;
    data.reserve(m * 2 * sh * sw);
    for (const auto& win : windows) {
        const auto frame = rasterize<T>(win, sh, sw);
        data.insert(data.end(), frame.data().begin(), frame.data().end());
    }
    const double duration =
        static_cast<double>(stream.events.back().t - stream.events.front().t) / static_cast<double>(m);
    FrameStack<T> frames{Tensor<T>(Shape{m, 2, sh, sw}, std::move(data)), duration};
    return resize_frames(frames, h, w);
}

void GeneratorConfig::validate() const {
    if (num_classes < 1 || num_classes > 4) {
        throw ConfigError("generator: num_classes must be in [1, 4], got " +
                          std::to_string(num_classes));
    }
    if (sensor_width < 2 || sensor_height < 2) throw ConfigError("generator: sensor too small");
    if (duration_us < 1) throw ConfigError("generator: duration must be positive");
    if (bar_width_min < 1 || bar_width_min > bar_width_max) {
        throw ConfigError("generator: invalid bar width range");
    }
    if (!(event_rate > 0.0 && event_rate <= 1.0)) {
        throw ConfigError("generator: event_rate must be in (0, 1]");
    }
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
        throw ConfigError("generator: noise_rate must be in [0, 1]");
    }
    if (min_events > max_events || max_events == 0) {
        throw ConfigError("generator: invalid event count bounds");
    }
}

EventStream synth_stream(int class_id, std::uint64_t seed, const GeneratorConfig& cfg) {
    cfg.validate();
    if (class_id < 0 || class_id >= cfg.num_classes) {
        throw ConfigError("synth_stream: unknown class id " + std::to_string(class_id));
    }
    Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(class_id + 1)));
    const auto motion = static_cast<MotionClass>(class_id);
    const bool horizontal = motion == MotionClass::left || motion == MotionClass::right;
    const std::uint32_t along = horizontal ? cfg.sensor_width : cfg.sensor_height;
    const std::uint32_t across = horizontal ? cfg.sensor_height : cfg.sensor_width;

    const auto bar = static_cast<std::uint32_t>(
        cfg.bar_width_min + rng.below(cfg.bar_width_max - cfg.bar_width_min + 1));
    const std::uint32_t span = across / 2 + static_cast<std::uint32_t>(rng.below(across - across / 2 + 1));
    const std::uint32_t span_start = static_cast<std::uint32_t>(rng.below(across - span + 1));
    const std::int64_t t0 = static_cast<std::int64_t>(rng.below(1000));
    const double step_us = static_cast<double>(cfg.duration_us) / static_cast<double>(along - 1 + bar);
    auto time_at = [&](std::uint32_t step) { return t0 + std::llround(step * step_us); };

    EventStream s;
    s.width = cfg.sensor_width;
    s.height = cfg.sensor_height;
    s.label = class_id;
    for (std::uint32_t c = 0; c < along; ++c) {
        for (std::uint32_t a = span_start; a < span_start + span; ++a) {
            if (cfg.event_rate < 1.0 && !rng.bernoulli(cfg.event_rate)) continue;
            std::uint32_t x = 0, y = 0;
            switch (motion) {
                case MotionClass::right: x = c; y = a; break;
                case MotionClass::left: x = along - 1 - c; y = a; break;
                case MotionClass::down: x = a; y = c; break;
                case MotionClass::up: x = a; y = along - 1 - c; break;
            }
            s.events.push_back({x, y, time_at(c), 1});
            s.events.push_back({x, y, time_at(c + bar), -1});
        }
    }
    if (cfg.noise_rate > 0.0) {
        for (std::uint32_t y = 0; y < cfg.sensor_height; ++y)
            for (std::uint32_t x = 0; x < cfg.sensor_width; ++x) {
                if (!rng.bernoulli(cfg.noise_rate)) continue;
                const auto t = t0 + static_cast<std::int64_t>(
                                        rng.below(static_cast<std::uint64_t>(cfg.duration_us) + 1));
                const std::int8_t p = rng.bernoulli(0.5) ? 1 : -1;
                s.events.push_back({x, y, t, p});
            }
    }
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const EventPoint& a, const EventPoint& b) { return a.t < b.t; });

    if (s.events.size() > cfg.max_events) {
        std::vector<std::size_t> idx(s.events.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        idx.resize(cfg.max_events);
        std::sort(idx.begin(), idx.end());
        std::vector<EventPoint> kept;
        kept.reserve(idx.size());
        for (auto i : idx) kept.push_back(s.events[i]);
        s.events = std::move(kept);
    }
    if (s.events.size() < cfg.min_events) {
        throw ConfigError("synth_stream: generated " + std::to_string(s.events.size()) +
                          " events, fewer than min_events " + std::to_string(cfg.min_events));
    }
    return s;
}

void write_evs(std::ostream& os, const EventStream& stream) {
    os << "EVS1 " << stream.width << ' ' << stream.height << ' ' << stream.events.size() << '\n';
    for (const auto& e : stream.events) {
        os << e.t << ' ' << e.x << ' ' << e.y << ' ' << (e.p > 0 ? "1" : "-1") << '\n';
    }
}

EventStream read_evs(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("evs: missing header");
    std::istringstream header(line);
    std::string magic;
    long long width = 0, height = 0, count = 0;
    if (!(header >> magic >> width >> height >> count) || magic != "EVS1" || width <= 0 ||
        height <= 0 || count < 0) {
        throw DataError("evs: malformed header '" + line + "'");
    }
    EventStream s;
    s.width = static_cast<std::uint32_t>(width);
    s.height = static_cast<std::uint32_t>(height);
    s.events.reserve(static_cast<std::size_t>(count));
    for (long long i = 0; i < count; ++i) {
        if (!std::getline(is, line)) {
            throw DataError("evs: expected " + std::to_string(count) + " events, found " +
                            std::to_string(i));
        }
        std::istringstream ls(line);
        long long t = 0, x = 0, y = 0;
        std::string p;
        std::string extra;
        if (!(ls >> t >> x >> y >> p) || (ls >> extra) || (p != "1" && p != "-1") || x < 0 ||
            y < 0) {
            throw DataError("evs: malformed event on line " + std::to_string(i + 2) + ": '" +
                            line + "'");
        }
        s.events.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), t,
                            static_cast<std::int8_t>(p == "1" ? 1 : -1)});
    }
    validate_stream(s);
    return s;
}

void write_evs_file(const std::filesystem::path& path, const EventStream& stream) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_evs(os, stream);
    if (!os) throw IoError("failed writing " + path.string());
}

EventStream read_evs_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return read_evs(is);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "path,label\n";
    for (const auto& e : entries) os << e.path << ',' << e.label << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "path,label") {
        throw DataError(path.string() + ": missing 'path,label' header");
    }
    std::vector<ManifestEntry> entries;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) {
            throw DataError(path.string() + ": malformed line " + std::to_string(line_no));
        }
        ManifestEntry e;
        e.path = line.substr(0, comma);
        try {
            std::size_t used = 0;
            e.label = std::stoi(line.substr(comma + 1), &used);
            if (used != line.size() - comma - 1) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError(path.string() + ": bad label on line " + std::to_string(line_no));
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

template Tensor<float> count_events(std::span<const EventPoint>, std::size_t, std::size_t);
template Tensor<double> count_events(std::span<const EventPoint>, std::size_t, std::size_t);
template Tensor<float> rasterize(std::span<const EventPoint>, std::size_t, std::size_t);
template Tensor<double> rasterize(std::span<const EventPoint>, std::size_t, std::size_t);
template FrameStack<float> resize_frames(const FrameStack<float>&, std::size_t, std::size_t);
template FrameStack<double> resize_frames(const FrameStack<double>&, std::size_t, std::size_t);
template FrameStack<float> stack_frames(const EventStream&, std::size_t, std::size_t, std::size_t);
template FrameStack<double> stack_frames(const EventStream&, std::size_t, std::size_t, std::size_t);

} // namespace uamf
