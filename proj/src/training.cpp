#include "uamf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uamf/checkpoint.hpp"
#include "uamf/error.hpp"
#include "uamf/json_io.hpp"

namespace uamf {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train.grad_clip must be > 0");
    if (max_steps && *max_steps < 1) throw ConfigError("train.max_steps must be >= 1");
}

json to_json(const TrainConfig& c) {
    json j{{"lr", c.lr},       {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
           {"batch_size", c.batch_size}, {"seed", c.seed},       {"beta1", c.beta1},
           {"beta2", c.beta2}, {"eps", c.eps}};
    j["grad_clip"] = c.grad_clip ? json(*c.grad_clip) : json(nullptr);
    j["max_steps"] = c.max_steps ? json(*c.max_steps) : json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
    require_known_keys(j,
                       {"lr", "weight_decay", "epochs", "batch_size", "seed", "beta1", "beta2", "eps",
                        "grad_clip", "max_steps"},
                       "train");
    TrainConfig c = base;
    try {
        if (j.contains("lr")) c.lr = j.at("lr").get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
        if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
        if (j.contains("eps")) c.eps = j.at("eps").get<double>();
        if (j.contains("grad_clip")) {
            const auto& v = j.at("grad_clip");
            c.grad_clip = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        }
        if (j.contains("max_steps")) {
            const auto& v = j.at("max_steps");
            c.max_steps = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    return c;
}

template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::size_t step, const AdamWHyper& h, bool decay) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw DimensionError("adamw_update: parameter, gradient and moment sizes differ");
    }
    if (step == 0) throw UsageError("adamw_update: step counts from 1");
    const T lr = static_cast<T>(h.lr);
    const T b1 = static_cast<T>(h.beta1);
    const T b2 = static_cast<T>(h.beta2);
    const T eps = static_cast<T>(h.eps);
    const T bc1 = T(1) - static_cast<T>(std::pow(h.beta1, static_cast<double>(step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(h.beta2, static_cast<double>(step)));
    const T shrink = T(1) - static_cast<T>(h.lr * h.weight_decay);
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (decay) param[i] *= shrink;
        m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
        const T m_hat = m[i] / bc1;
        const T v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

bool uses_weight_decay(const std::string& name) {
    auto ends_with = [&](std::string_view suffix) {
        return name.size() >= suffix.size() &&
               name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return !(name == "tokens" || ends_with(".bias") || ends_with(".norm_gain") ||
             ends_with(".norm_shift"));
}

template <typename T>
AdamW<T>::AdamW(ParameterList<T> params, const AdamWHyper& hyper)
    : params_(std::move(params)), hyper_(hyper) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), T(0));
        v_.emplace_back(p.tensor.numel(), T(0));
        decay_.push_back(uses_weight_decay(p.name));
    }
}

template <typename T>
void AdamW<T>::step() {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("non-finite gradient in parameter " + p.name);
            }
        }
    }
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& t = params_[i].tensor;
        if (!t.has_grad()) continue;
        adamw_update<T>(t.mutable_data(), t.grad(), m_[i], v_[i], step_, hyper_, decay_[i]);
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
double AdamW<T>::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const T factor = static_cast<T>(max_norm / (norm + 1e-12));
        for (auto& p : params_) {
            if (!p.tensor.has_grad()) continue;
            for (T& g : p.tensor.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

template <typename T>
Sample<T> make_sample(const EventStream& stream, const ModelConfig& config) {
    if (!stream.label) throw DataError("event stream has no label");
    const auto stack =
        stack_frames<T>(stream, config.num_frames, config.input_height, config.input_width);
    Sample<T> s;
    s.input = permute(stack.tensor, {1, 0, 2, 3}).detach();
    s.label = *stream.label;
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= config.num_classes) {
        throw DataError("label " + std::to_string(s.label) + " outside [0, " +
                        std::to_string(config.num_classes) + ")");
    }
    return s;
}

template <typename T>
Dataset<T> make_dataset(const std::vector<EventStream>& streams, const ModelConfig& config) {
    Dataset<T> out;
    out.reserve(streams.size());
    for (const auto& s : streams) out.push_back(make_sample<T>(s, config));
    return out;
}

template <typename T>
std::pair<Tensor<T>, std::vector<int>> collate(const Dataset<T>& data,
                                               std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("collate: empty batch");
    const Shape& item = data.at(indices[0]).input.shape();
    const std::size_t n = shape_numel(item);
    Shape shape{indices.size()};
    shape.insert(shape.end(), item.begin(), item.end());
    std::vector<T> buf(indices.size() * n);
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& s = data.at(indices[b]);
        if (s.input.shape() != item) {
            throw DimensionError("collate: sample shapes differ: " + shape_str(item) + " vs " +
                                 shape_str(s.input.shape()));
        }
        std::copy(s.input.data().begin(), s.input.data().end(), buf.begin() + b * n);
        labels.push_back(s.label);
    }
    return {Tensor<T>(std::move(shape), std::move(buf)), std::move(labels)};
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw DimensionError("argmax_rows expects (B, K) logits");
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    const auto d = logits.data();
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (d[r * k + c] > d[r * k + best]) best = c;
        }
        out[r] = static_cast<int>(best);
    }
    return out;
}

template <typename T>
double evaluate_top1(const UaMobileFormer<T>& model, const Dataset<T>& data, std::size_t batch_size) {
    if (data.empty()) throw DataError("evaluate_top1: empty dataset");
    if (batch_size == 0) batch_size = 1;
    NoGradGuard no_grad;
    Rng unused(0);
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
        auto [x, labels] = collate(data, idx);
        const auto pred = argmax_rows(model.forward(x, unused, Mode::eval).logits);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string run_config_hash(const ModelConfig& model, const TrainConfig& train) {
    return config_hash(json{{"model", to_json(model)}, {"train", to_json(train)}});
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

template <typename T>
void check_labels(std::size_t k, const Dataset<T>& data, const char* what) {
    for (const auto& s : data) {
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= k) {
            throw DataError(std::string(what) + " label " + std::to_string(s.label) +
                            " outside [0, " + std::to_string(k) + ")");
        }
    }
}

} // namespace

template <typename T>
RunReport train(UaMobileFormer<T>& model, const Dataset<T>& train_set, const Dataset<T>& val,
                const TrainConfig& cfg, const TrainOptions& options) {
    using clock = std::chrono::steady_clock;
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    const std::size_t k = model.config().num_classes;
    check_labels(k, train_set, "training");
    check_labels(k, val, "validation");

    const auto run_start = clock::now();
    RunReport report;
    report.config_hash = run_config_hash(model.config(), cfg);

    Rng root(cfg.seed);
    Rng shuffle_rng = root.split();
    Rng noise_rng = root.split();
    AdamW<T> opt(model.parameters(),
                 AdamWHyper{cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps});

    bool have_best = false;
    bool stop = false;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
        const auto epoch_start = clock::now();
        const auto order = permutation(train_set.size(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            auto [x, labels] = collate(train_set, idx);
            opt.zero_grad();
            Tensor<T> loss;
            {
                auto out = model.forward(x, noise_rng, Mode::train);
                loss = cross_entropy(out.logits, labels);
            }
            const double value = static_cast<double>(loss.item());
            if (!std::isfinite(value)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
            }
            loss.backward();
            loss = Tensor<T>();
            if (cfg.grad_clip) opt.clip_grad_norm(*cfg.grad_clip);
            opt.step();
            loss_sum += value * static_cast<double>(idx.size());
            seen += idx.size();
            if (cfg.max_steps && opt.steps() >= *cfg.max_steps) {
                stop = true;
                break;
            }
        }
        opt.zero_grad();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        const std::size_t eval_batch = std::max<std::size_t>(cfg.batch_size, 32);
        if (options.eval_train) rec.train_top1 = evaluate_top1(model, train_set, eval_batch);
        rec.val_top1 = val.empty() ? rec.train_top1 : evaluate_top1(model, val, eval_batch);
        rec.seconds = std::chrono::duration<double>(clock::now() - epoch_start).count();
        report.epochs.push_back(rec);

        if (!have_best || rec.val_top1 > report.best_val_top1) {
            have_best = true;
            report.best_val_top1 = rec.val_top1;
            report.best_epoch = epoch;
            if (options.checkpoint_dir) {
                const auto path = *options.checkpoint_dir / "best.ckpt";
                save_checkpoint(path, make_checkpoint(model, noise_rng.state()));
                report.checkpoint_path = path.string();
            }
        }
        if (options.on_epoch) options.on_epoch(rec);
    }
    if (options.checkpoint_dir) {
        save_checkpoint(*options.checkpoint_dir / "last.ckpt", make_checkpoint(model, noise_rng.state()));
    }
    report.steps = opt.steps();
    report.wall_seconds = std::chrono::duration<double>(clock::now() - run_start).count();
    return report;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << std::setprecision(17);
    return os;
}

} // namespace

void write_report_csv(const std::filesystem::path& path, const RunReport& report) {
    auto os = open_out(path);
    os << "epoch,train_loss,train_top1,val_top1,seconds\n";
    for (const auto& e : report.epochs) {
        os << e.epoch << ',' << e.train_loss << ',' << e.train_top1 << ',' << e.val_top1 << ','
           << e.seconds << '\n';
    }
    if (!os) throw IoError("failed writing " + path.string());
}

json report_to_json(const RunReport& report) {
    json epochs = json::array();
    for (const auto& e : report.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"train_top1", e.train_top1},
                          {"val_top1", e.val_top1},
                          {"seconds", e.seconds}});
    }
    return json{{"epochs", epochs},
                {"steps", report.steps},
                {"wall_seconds", report.wall_seconds},
                {"best_val_top1", report.best_val_top1},
                {"best_epoch", report.best_epoch},
                {"checkpoint", report.checkpoint_path},
                {"config_hash", report.config_hash}};
}

void write_report_json(const std::filesystem::path& path, const RunReport& report) {
    auto os = open_out(path);
    os << report_to_json(report).dump(2) << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

const std::vector<AblationRow>& ablation_rows() {
    static const std::vector<AblationRow> rows{
        {1, true, false, false, false, false, 76.53},
        {2, false, true, false, false, false, 58.01},
        {3, true, true, false, true, false, 76.83},
        {4, true, true, false, true, true, 77.94},
        {5, true, true, true, true, true, 79.80},
    };
    return rows;
}

ModelConfig apply_ablation_row(ModelConfig base, const AblationRow& row) {
    base.enable_mobile = row.mobile;
    base.enable_former = row.former;
    base.enable_bridge = row.bridge;
    base.enable_cross_attention = row.cross_attention;
    base.enable_dy_relu = row.dy_relu;
    base.validate();
    return base;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationRow>& rows,
                                         const ModelConfig& base, const TrainConfig& cfg,
                                         const DataProvider& data,
                                         const std::optional<std::filesystem::path>& run_dir) {
    std::vector<AblationResult> out;
    for (const auto& row : rows) {
        AblationResult r;
        r.row = row;
        r.config = apply_ablation_row(base, row);
        r.config_hash = run_config_hash(r.config, cfg);
        auto [train_set, val] = data(r.config);
        Rng init(cfg.seed);
        UaMobileFormer<float> model(r.config, init);
        r.parameter_count = model.parameter_count();
        TrainOptions opts;
        if (run_dir) opts.checkpoint_dir = *run_dir / "checkpoints" / ("row_" + std::to_string(row.number));
        r.report = train(model, train_set, val, cfg, opts);
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

const char* mark(bool on) { return on ? "x" : ""; }

} // namespace

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationResult>& rows) {
    auto os = open_out(path);
    os << std::fixed << std::setprecision(2);
    os << "No.,Mobile,Former,UAB,CA,DY-ReLU,Results,Reference,ConfigHash\n";
    for (const auto& r : rows) {
        os << r.row.number << ',' << mark(r.row.mobile) << ',' << mark(r.row.former) << ','
           << mark(r.row.bridge) << ',' << mark(r.row.cross_attention) << ',' << mark(r.row.dy_relu)
           << ',' << 100.0 * r.report.best_val_top1 << ',' << r.row.reference << ','
           << r.config_hash << '\n';
    }
    if (!os) throw IoError("failed writing " + path.string());
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "tokens") return SweepAxis::tokens;
    if (name == "token_dim") return SweepAxis::token_dim;
    if (name == "frames") return SweepAxis::frames;
    if (name == "blocks") return SweepAxis::blocks;
    throw ConfigError("unknown sweep axis '" + name + "' (tokens, token_dim, frames, blocks)");
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::tokens: return "tokens";
    case SweepAxis::token_dim: return "token_dim";
    case SweepAxis::frames: return "frames";
    case SweepAxis::blocks: return "blocks";
    }
    return "?";
}

std::vector<std::size_t> default_sweep_grid(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::tokens: return {1, 3, 6, 9};
    case SweepAxis::token_dim: return {64, 128, 192, 256};
    case SweepAxis::frames: return {4, 8, 12};
    case SweepAxis::blocks: return {9, 12, 14};
    }
    return {};
}

ModelConfig apply_sweep_value(ModelConfig base, SweepAxis axis, std::size_t value) {
    switch (axis) {
    case SweepAxis::tokens: base.num_tokens = value; break;
    case SweepAxis::token_dim: base.token_dim = value; break;
    case SweepAxis::frames: base.num_frames = value; break;
    case SweepAxis::blocks: base.num_blocks = value; break;
    }
    base.validate();
    return base;
}

std::vector<SweepPoint> run_sweep(SweepAxis axis, const std::vector<std::size_t>& values,
                                  const ModelConfig& base, const TrainConfig& cfg,
                                  const DataProvider& data,
                                  const std::optional<std::filesystem::path>& run_dir) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<SweepPoint> out;
    for (std::size_t value : values) {
        SweepPoint p;
        p.value = value;
        p.config = apply_sweep_value(base, axis, value);
        p.config_hash = run_config_hash(p.config, cfg);
        auto [train_set, val] = data(p.config);
        Rng init(cfg.seed);
        UaMobileFormer<float> model(p.config, init);
        TrainOptions opts;
        if (run_dir) {
            opts.checkpoint_dir =
                *run_dir / "checkpoints" / (sweep_axis_name(axis) + "_" + std::to_string(value));
        }
        p.report = train(model, train_set, val, cfg, opts);
        out.push_back(std::move(p));
    }
    return out;
}

void write_sweep_csv(const std::filesystem::path& path, SweepAxis axis,
                     const std::vector<SweepPoint>& points) {
    auto os = open_out(path);
    os << sweep_axis_name(axis) << ",top1,ConfigHash\n";
    for (const auto& p : points) {
        os << p.value << ',' << p.report.best_val_top1 << ',' << p.config_hash << '\n';
    }
    if (!os) throw IoError("failed writing " + path.string());
}

#define UAMF_INSTANTIATE_TRAINING(T)                                                              \
    template void adamw_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>,   \
                                  std::size_t, const AdamWHyper&, bool);                          \
    template class AdamW<T>;                                                                      \
    template Sample<T> make_sample<T>(const EventStream&, const ModelConfig&);                    \
    template Dataset<T> make_dataset<T>(const std::vector<EventStream>&, const ModelConfig&);     \
    template std::pair<Tensor<T>, std::vector<int>> collate<T>(const Dataset<T>&,                 \
                                                               std::span<const std::size_t>);     \
    template std::vector<int> argmax_rows<T>(const Tensor<T>&);                                   \
    template double evaluate_top1<T>(const UaMobileFormer<T>&, const Dataset<T>&, std::size_t);   \
    template RunReport train<T>(UaMobileFormer<T>&, const Dataset<T>&, const Dataset<T>&,         \
                                const TrainConfig&, const TrainOptions&);

UAMF_INSTANTIATE_TRAINING(float)
UAMF_INSTANTIATE_TRAINING(double)

} // namespace uamf
