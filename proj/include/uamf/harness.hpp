#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "uamf/events.hpp"
#include "uamf/model.hpp"
#include "uamf/training.hpp"

namespace uamf {

struct DataConfig {
    std::string source = "synth";  // synth | files
    // Manifests for source = files; entry paths are relative to the manifest.
    std::string train_manifest;
    std::string val_manifest;
    // Synthetic split sizes for source = synth.
    std::size_t train_per_class = 50;
    std::size_t val_per_class = 20;
    std::uint64_t seed = 0;
    GeneratorConfig generator;

    bool operator==(const DataConfig&) const;
};

struct HarnessConfig {
    DataConfig data;
    ModelConfig model = ModelConfig::desk();
    TrainConfig train;
    std::string run_dir = "runs/default";

    void validate() const;
};

/// Every field is written, so the result can be fed back in unchanged.
nlohmann::json to_json(const HarnessConfig& c);
/// Sections and keys are optional; unknown ones raise ConfigError.
HarnessConfig harness_config_from_json(const nlohmann::json& j);
HarnessConfig load_harness_config(const std::filesystem::path& path);
void save_harness_config(const std::filesystem::path& path, const HarnessConfig& c);

/// Labelled streams for one split. Synthetic samples cycle through the
/// classes; sample i of a split uses its own seed drawn from data.seed.
std::vector<EventStream> synth_split(const DataConfig& data, std::size_t per_class, int split);

/// (train, val) streams from the data section.
std::pair<std::vector<EventStream>, std::vector<EventStream>> load_streams(const DataConfig& data);

/// Writes .evs files and labels.csv into `dir`. Returns the manifest entries.
std::vector<ManifestEntry> write_stream_tree(const std::filesystem::path& dir,
                                             const std::vector<EventStream>& streams);

std::vector<EventStream> read_manifest_streams(const std::filesystem::path& manifest);

/// Command-line entry point. Exit codes: 0 success, 1 usage or config
/// error, 2 data error, 3 numeric error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace uamf
