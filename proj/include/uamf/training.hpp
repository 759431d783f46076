#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "uamf/events.hpp"
#include "uamf/model.hpp"

namespace uamf {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 0.1;
    std::size_t epochs = 60;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::optional<double> grad_clip;      // global L2 norm
    std::optional<std::size_t> max_steps; // stop early after this many optimizer steps

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

struct AdamWHyper {
    double lr = 1e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One AdamW update of a single array. `step` counts from 1. Weight decay is
/// decoupled (p -= lr * wd * p) and skipped when `decay` is false.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::size_t step, const AdamWHyper& h, bool decay = true);

/// Biases, normalization gains/shifts and the global tokens are not decayed.
bool uses_weight_decay(const std::string& parameter_name);

template <typename T>
class AdamW {
public:
    AdamW(ParameterList<T> params, const AdamWHyper& hyper);

    /// Applies one update from the accumulated gradients. Parameters that
    /// received no gradient are left alone. Throws NumericError naming the
    /// first parameter with a non-finite gradient before touching anything.
    void step();
    void zero_grad();
    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    double clip_grad_norm(double max_norm);

    std::size_t steps() const noexcept { return step_; }
    const ParameterList<T>& parameters() const noexcept { return params_; }

private:
    ParameterList<T> params_;
    AdamWHyper hyper_;
    std::vector<std::vector<T>> m_, v_;
    std::vector<bool> decay_;
    std::size_t step_ = 0;
};

template <typename T>
struct Sample {
    Tensor<T> input;  // (2, M, H, W)
    int label = 0;
};

template <typename T>
using Dataset = std::vector<Sample<T>>;

/// Event stream -> (2, M, H, W) input sized for `config`.
template <typename T>
Sample<T> make_sample(const EventStream& stream, const ModelConfig& config);

template <typename T>
Dataset<T> make_dataset(const std::vector<EventStream>& streams, const ModelConfig& config);

/// Gathers samples into a (B, 2, M, H, W) batch and their labels.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> collate(const Dataset<T>& data,
                                               std::span<const std::size_t> indices);

/// Row-wise argmax; ties go to the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

/// Eval-mode top-1 accuracy in [0, 1]. Throws DataError on an empty set.
template <typename T>
double evaluate_top1(const UaMobileFormer<T>& model, const Dataset<T>& data,
                     std::size_t batch_size = 32);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_top1 = 0.0;
    double val_top1 = 0.0;
    double seconds = 0.0;
};

struct RunReport {
    std::vector<EpochRecord> epochs;
    std::size_t steps = 0;
    double wall_seconds = 0.0;
    double best_val_top1 = 0.0;
    std::size_t best_epoch = 0;
    std::string checkpoint_path;  // best checkpoint, empty if none written
    std::string config_hash;
};

struct TrainOptions {
    /// best.ckpt and last.ckpt go here when set.
    std::optional<std::filesystem::path> checkpoint_dir;
    /// Evaluate train top-1 in eval mode after every epoch.
    bool eval_train = true;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Hash of the model and train configs together.
std::string run_config_hash(const ModelConfig& model, const TrainConfig& train);

/// Minibatch AdamW on cross-entropy with a seeded per-epoch shuffle. The
/// best checkpoint is chosen by val top-1 (train top-1 when `val` is empty).
template <typename T>
RunReport train(UaMobileFormer<T>& model, const Dataset<T>& train_set, const Dataset<T>& val,
                const TrainConfig& cfg, const TrainOptions& options = {});

void write_report_csv(const std::filesystem::path& path, const RunReport& report);
nlohmann::json report_to_json(const RunReport& report);
void write_report_json(const std::filesystem::path& path, const RunReport& report);

// Component ablation.

struct AblationRow {
    int number = 0;
    bool mobile = false;
    bool former = false;
    bool bridge = false;
    bool cross_attention = false;
    bool dy_relu = false;
    double reference = 0.0;  // published N-Caltech101 top-1, recorded only
};

const std::vector<AblationRow>& ablation_rows();
ModelConfig apply_ablation_row(ModelConfig base, const AblationRow& row);

struct AblationResult {
    AblationRow row;
    ModelConfig config;
    std::string config_hash;
    std::size_t parameter_count = 0;
    RunReport report;
};

/// Callback producing (train, val) datasets for a given model config.
using DataProvider =
    std::function<std::pair<Dataset<float>, Dataset<float>>(const ModelConfig&)>;

/// Trains one model per row. Checkpoints go under `run_dir`/checkpoints/row_N
/// when `run_dir` is set.
std::vector<AblationResult> run_ablation(const std::vector<AblationRow>& rows,
                                         const ModelConfig& base, const TrainConfig& cfg,
                                         const DataProvider& data,
                                         const std::optional<std::filesystem::path>& run_dir = {});

/// Columns: No.,Mobile,Former,UAB,CA,DY-ReLU,Results,Reference,ConfigHash.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationResult>& rows);

// Hyperparameter sweeps.

enum class SweepAxis { tokens, token_dim, frames, blocks };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);
std::vector<std::size_t> default_sweep_grid(SweepAxis axis);
ModelConfig apply_sweep_value(ModelConfig base, SweepAxis axis, std::size_t value);

struct SweepPoint {
    std::size_t value = 0;
    ModelConfig config;
    std::string config_hash;
    RunReport report;
};

std::vector<SweepPoint> run_sweep(SweepAxis axis, const std::vector<std::size_t>& values,
                                  const ModelConfig& base, const TrainConfig& cfg,
                                  const DataProvider& data,
                                  const std::optional<std::filesystem::path>& run_dir = {});

/// Columns: <axis>,top1,ConfigHash.
void write_sweep_csv(const std::filesystem::path& path, SweepAxis axis,
                     const std::vector<SweepPoint>& points);

} // namespace uamf
