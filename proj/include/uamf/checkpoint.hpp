#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uamf/model.hpp"

namespace uamf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct StoredParameter {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<double> values;  // widened; f32 values round-trip exactly
};

/// Little-endian layout:
///   "UAMF" | u32 version | u64 n + config JSON | u64 n + rng state |
///   u32 count | per parameter: u32 n + name, u8 dtype, u32 rank,
///   u64 extents[rank], raw elements.
struct Checkpoint {
    std::uint32_t format_version = kCheckpointVersion;
    ModelConfig config;
    std::vector<StoredParameter> parameters;
    std::string rng_state;
};

template <typename T>
Checkpoint make_checkpoint(const UaMobileFormer<T>& model, std::string rng_state = {});

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointVersionError on a bad magic or version and
/// CheckpointTruncatedError when the bytes run out.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into the model. Throws CheckpointShapeError naming the
/// first missing, extra or mis-shaped parameter.
template <typename T>
void apply_checkpoint(UaMobileFormer<T>& model, const Checkpoint& ckpt);

template <typename T>
UaMobileFormer<T> model_from_checkpoint(const Checkpoint& ckpt);

} // namespace uamf
