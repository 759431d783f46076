#include "uamf/json_io.hpp"

#include <algorithm>
#include <cstdio>

#include "uamf/error.hpp"

namespace uamf {

using nlohmann::json;

void require_known_keys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& section) {
    if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* a) { return key == a; });
        if (!known) throw ConfigError(section + ": unknown key '" + key + "'");
    }
}

namespace {

template <typename V>
void read_field(const json& j, const char* key, V& field, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

} // namespace

json to_json(const ModelConfig& c) {
    return json{{"num_frames", c.num_frames},
                {"input_height", c.input_height},
                {"input_width", c.input_width},
                {"stem_channels", c.stem_channels},
                {"channel_schedule", c.channel_schedule},
                {"num_blocks", c.num_blocks},
                {"num_tokens", c.num_tokens},
                {"token_dim", c.token_dim},
                {"num_heads", c.num_heads},
                {"num_classes", c.num_classes},
                {"expansion", c.expansion},
                {"ffn_expansion", c.ffn_expansion},
                {"head_hidden", c.head_hidden},
                {"enable_bridge", c.enable_bridge},
                {"enable_cross_attention", c.enable_cross_attention},
                {"enable_dy_relu", c.enable_dy_relu},
                {"enable_mobile", c.enable_mobile},
                {"enable_former", c.enable_former}};
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
    const std::string s = "model";
    require_known_keys(j,
                       {"num_frames", "input_height", "input_width", "stem_channels",
                        "channel_schedule", "num_blocks", "num_tokens", "token_dim", "num_heads",
                        "num_classes", "expansion", "ffn_expansion", "head_hidden", "enable_bridge",
                        "enable_cross_attention", "enable_dy_relu", "enable_mobile", "enable_former"},
                       s);
    ModelConfig c = base;
    read_field(j, "num_frames", c.num_frames, s);
    read_field(j, "input_height", c.input_height, s);
    read_field(j, "input_width", c.input_width, s);
    read_field(j, "stem_channels", c.stem_channels, s);
    read_field(j, "channel_schedule", c.channel_schedule, s);
    read_field(j, "num_blocks", c.num_blocks, s);
    read_field(j, "num_tokens", c.num_tokens, s);
    read_field(j, "token_dim", c.token_dim, s);
    read_field(j, "num_heads", c.num_heads, s);
    read_field(j, "num_classes", c.num_classes, s);
    read_field(j, "expansion", c.expansion, s);
    read_field(j, "ffn_expansion", c.ffn_expansion, s);
    read_field(j, "head_hidden", c.head_hidden, s);
    read_field(j, "enable_bridge", c.enable_bridge, s);
    read_field(j, "enable_cross_attention", c.enable_cross_attention, s);
    read_field(j, "enable_dy_relu", c.enable_dy_relu, s);
    read_field(j, "enable_mobile", c.enable_mobile, s);
    read_field(j, "enable_former", c.enable_former, s);
    return c;
}

json to_json(const GeneratorConfig& c) {
    return json{{"num_classes", c.num_classes},       {"sensor_width", c.sensor_width},
                {"sensor_height", c.sensor_height},   {"duration_us", c.duration_us},
                {"bar_width_min", c.bar_width_min},   {"bar_width_max", c.bar_width_max},
                {"event_rate", c.event_rate},         {"noise_rate", c.noise_rate},
                {"min_events", c.min_events},         {"max_events", c.max_events}};
}

GeneratorConfig generator_config_from_json(const json& j, const GeneratorConfig& base) {
    const std::string s = "data.generator";
    require_known_keys(j,
                       {"num_classes", "sensor_width", "sensor_height", "duration_us",
                        "bar_width_min", "bar_width_max", "event_rate", "noise_rate", "min_events",
                        "max_events"},
                       s);
    GeneratorConfig c = base;
    read_field(j, "num_classes", c.num_classes, s);
    read_field(j, "sensor_width", c.sensor_width, s);
    read_field(j, "sensor_height", c.sensor_height, s);
    read_field(j, "duration_us", c.duration_us, s);
    read_field(j, "bar_width_min", c.bar_width_min, s);
    read_field(j, "bar_width_max", c.bar_width_max, s);
    read_field(j, "event_rate", c.event_rate, s);
    read_field(j, "noise_rate", c.noise_rate, s);
    read_field(j, "min_events", c.min_events, s);
    read_field(j, "max_events", c.max_events, s);
    return c;
}

std::string config_hash(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace uamf
