#include "uamf/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "uamf/error.hpp"
#include "uamf/json_io.hpp"

namespace uamf {

namespace {

constexpr char kMagic[4] = {'U', 'A', 'M', 'F'};

template <typename U>
void put(std::string& out, U value) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
}

void put_bytes(std::string& out, std::string_view bytes) {
    put<std::uint64_t>(out, bytes.size());
    out.append(bytes);
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace

template <typename T>
Checkpoint make_checkpoint(const UaMobileFormer<T>& model, std::string rng_state) {
    Checkpoint c;
    c.config = model.config();
    c.rng_state = std::move(rng_state);
    for (const auto& p : model.parameters()) {
        StoredParameter sp;
        sp.name = p.name;
        sp.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
        sp.shape = p.tensor.shape();
        sp.values.assign(p.tensor.data().begin(), p.tensor.data().end());
        c.parameters.push_back(std::move(sp));
    }
    return c;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, ckpt.format_version);
    put_bytes(out, to_json(ckpt.config).dump());
    put_bytes(out, ckpt.rng_state);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.parameters.size()));
    for (const auto& p : ckpt.parameters) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.append(p.name);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(p.dtype));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
        for (auto e : p.shape) put<std::uint64_t>(out, e);
        for (double v : p.values) {
            if (p.dtype == DType::f32) {
                put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            } else {
                put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
            }
        }
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointVersionError("not a checkpoint: bad magic");
    }
    Reader r(bytes.substr(4));
    Checkpoint c;
    c.format_version = r.get<std::uint32_t>("version");
    if (c.format_version != kCheckpointVersion) {
        throw CheckpointVersionError("unsupported checkpoint version " +
                                     std::to_string(c.format_version) + " (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
    }
    const auto config_len = r.get<std::uint64_t>("config length");
    const auto config_text = r.take(config_len, "config");
    try {
        c.config = model_config_from_json(nlohmann::json::parse(config_text));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    const auto rng_len = r.get<std::uint64_t>("rng state length");
    c.rng_state = std::string(r.take(rng_len, "rng state"));
    const auto count = r.get<std::uint32_t>("parameter count");
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredParameter p;
        const auto name_len = r.get<std::uint32_t>("parameter name length");
        p.name = std::string(r.take(name_len, "parameter name"));
        if (!seen.insert(p.name).second) throw DataError("checkpoint repeats parameter " + p.name);
        const auto tag = r.get<std::uint8_t>("dtype");
        if (tag != static_cast<std::uint8_t>(DType::f32) && tag != static_cast<std::uint8_t>(DType::f64)) {
            throw DataError("checkpoint parameter " + p.name + " has unknown dtype tag " +
                            std::to_string(tag));
        }
        p.dtype = static_cast<DType>(tag);
        const auto rank = r.get<std::uint32_t>("rank");
        for (std::uint32_t k = 0; k < rank; ++k) p.shape.push_back(r.get<std::uint64_t>("extent"));
        const std::size_t n = shape_numel(p.shape);
        p.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            if (p.dtype == DType::f32) {
                p.values[k] = std::bit_cast<float>(r.get<std::uint32_t>("parameter data"));
            } else {
                p.values[k] = std::bit_cast<double>(r.get<std::uint64_t>("parameter data"));
            }
        }
        c.parameters.push_back(std::move(p));
    }
    if (!r.done()) throw DataError("checkpoint has trailing bytes");
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_checkpoint(ckpt);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

template <typename T>
void apply_checkpoint(UaMobileFormer<T>& model, const Checkpoint& ckpt) {
    std::map<std::string, const StoredParameter*> stored;
    for (const auto& p : ckpt.parameters) stored.emplace(p.name, &p);
    auto params = model.parameters();
    for (auto& p : params) {
        auto it = stored.find(p.name);
        if (it == stored.end()) throw CheckpointShapeError("checkpoint lacks parameter " + p.name);
        if (it->second->shape != p.tensor.shape()) {
            throw CheckpointShapeError("parameter " + p.name + " has shape " +
                                       shape_str(it->second->shape) + " in the checkpoint but " +
                                       shape_str(p.tensor.shape()) + " in the model");
        }
    }
    if (stored.size() != params.size()) {
        for (const auto& [name, sp] : stored) {
            const bool known = std::any_of(params.begin(), params.end(),
                                           [&](const Parameter<T>& p) { return p.name == name; });
            if (!known) throw CheckpointShapeError("checkpoint parameter " + name + " not in model");
        }
    }
    for (auto& p : params) {
        const auto& values = stored.at(p.name)->values;
        auto dst = p.tensor.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<T>(values[i]);
    }
}

template <typename T>
UaMobileFormer<T> model_from_checkpoint(const Checkpoint& ckpt) {
    Rng rng(0);
    UaMobileFormer<T> model(ckpt.config, rng);
    apply_checkpoint(model, ckpt);
    return model;
}

template Checkpoint make_checkpoint(const UaMobileFormer<float>&, std::string);
template Checkpoint make_checkpoint(const UaMobileFormer<double>&, std::string);
template void apply_checkpoint(UaMobileFormer<float>&, const Checkpoint&);
template void apply_checkpoint(UaMobileFormer<double>&, const Checkpoint&);
template UaMobileFormer<float> model_from_checkpoint(const Checkpoint&);
template UaMobileFormer<double> model_from_checkpoint(const Checkpoint&);

} // namespace uamf
