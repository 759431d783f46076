#include "uamf/harness.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "uamf/checkpoint.hpp"
#include "uamf/error.hpp"
#include "uamf/gradcheck.hpp"
#include "uamf/json_io.hpp"

namespace uamf {

using nlohmann::json;
namespace fs = std::filesystem;

bool DataConfig::operator==(const DataConfig& o) const {
    return source == o.source && train_manifest == o.train_manifest &&
           val_manifest == o.val_manifest && train_per_class == o.train_per_class &&
           val_per_class == o.val_per_class && seed == o.seed &&
           to_json(generator) == to_json(o.generator);
}

void HarnessConfig::validate() const {
    if (data.source != "synth" && data.source != "files") {
        throw ConfigError("data.source must be \"synth\" or \"files\", got \"" + data.source + "\"");
    }
    if (data.source == "files" && (data.train_manifest.empty() || data.val_manifest.empty())) {
        throw ConfigError("data.source = files needs data.train_manifest and data.val_manifest");
    }
    if (data.source == "synth") {
        data.generator.validate();
        if (data.train_per_class == 0) throw ConfigError("data.train_per_class must be >= 1");
        if (static_cast<std::size_t>(data.generator.num_classes) > model.num_classes) {
            throw ConfigError("data.generator.num_classes exceeds model.num_classes");
        }
    }
    model.validate();
    train.validate();
    if (run_dir.empty()) throw ConfigError("output.run_dir must not be empty");
}

json to_json(const HarnessConfig& c) {
    return json{{"data",
                 {{"source", c.data.source},
                  {"train_manifest", c.data.train_manifest},
                  {"val_manifest", c.data.val_manifest},
                  {"train_per_class", c.data.train_per_class},
                  {"val_per_class", c.data.val_per_class},
                  {"seed", c.data.seed},
                  {"generator", to_json(c.data.generator)}}},
                {"model", to_json(c.model)},
                {"train", to_json(c.train)},
                {"output", {{"run_dir", c.run_dir}}}};
}

HarnessConfig harness_config_from_json(const json& j) {
    require_known_keys(j, {"data", "model", "train", "output"}, "config");
    HarnessConfig c;
    try {
        if (j.contains("data")) {
            const auto& d = j.at("data");
            require_known_keys(d,
                               {"source", "train_manifest", "val_manifest", "train_per_class",
                                "val_per_class", "seed", "generator"},
                               "data");
            if (d.contains("source")) c.data.source = d.at("source").get<std::string>();
            if (d.contains("train_manifest")) c.data.train_manifest = d.at("train_manifest").get<std::string>();
            if (d.contains("val_manifest")) c.data.val_manifest = d.at("val_manifest").get<std::string>();
            if (d.contains("train_per_class")) c.data.train_per_class = d.at("train_per_class").get<std::size_t>();
            if (d.contains("val_per_class")) c.data.val_per_class = d.at("val_per_class").get<std::size_t>();
            if (d.contains("seed")) c.data.seed = d.at("seed").get<std::uint64_t>();
            if (d.contains("generator")) c.data.generator = generator_config_from_json(d.at("generator"));
        }
        if (j.contains("model")) c.model = model_config_from_json(j.at("model"), ModelConfig::desk());
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("output")) {
            const auto& o = j.at("output");
            require_known_keys(o, {"run_dir"}, "output");
            if (o.contains("run_dir")) c.run_dir = o.at("run_dir").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

HarnessConfig load_harness_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return harness_config_from_json(j);
}

void save_harness_config(const fs::path& path, const HarnessConfig& c) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << to_json(c).dump(2) << '\n';
}

std::vector<EventStream> synth_split(const DataConfig& data, std::size_t per_class, int split) {
    data.generator.validate();
    Rng root(data.seed);
    Rng rng = root.split();
    for (int s = 0; s < split; ++s) rng = root.split();
    const auto k = static_cast<std::size_t>(data.generator.num_classes);
    std::vector<EventStream> out;
    out.reserve(per_class * k);
    for (std::size_t i = 0; i < per_class * k; ++i) {
        const int label = static_cast<int>(i % k);
        out.push_back(synth_stream(label, rng.next_u64(), data.generator));
    }
    return out;
}

std::vector<EventStream> read_manifest_streams(const fs::path& manifest) {
    const auto entries = read_manifest(manifest);
    const fs::path base = manifest.parent_path();
    std::vector<EventStream> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        EventStream s = read_evs_file(base / e.path);
        s.label = e.label;
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("manifest " + manifest.string() + " lists no samples");
    return out;
}

std::pair<std::vector<EventStream>, std::vector<EventStream>> load_streams(const DataConfig& data) {
    if (data.source == "files") {
        return {read_manifest_streams(data.train_manifest), read_manifest_streams(data.val_manifest)};
    }
    return {synth_split(data, data.train_per_class, 0), synth_split(data, data.val_per_class, 1)};
}

std::vector<ManifestEntry> write_stream_tree(const fs::path& dir, const std::vector<EventStream>& streams) {
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < streams.size(); ++i) {
        std::ostringstream name;
        name << "sample_" << std::setw(5) << std::setfill('0') << i << ".evs";
        write_evs_file(dir / name.str(), streams[i]);
        entries.push_back({name.str(), streams[i].label.value_or(0)});
    }
    write_manifest(dir / "labels.csv", entries);
    return entries;
}

namespace {

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("UAMF_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    try {
        std::size_t used = 0;
        const auto s = std::stoull(v, &used);
        if (used != std::string(v).size()) throw std::invalid_argument(v);
        return s;
    } catch (const std::exception&) {
        throw ConfigError(std::string("UAMF_SEED is not an unsigned integer: ") + v);
    }
}

// flag > UAMF_SEED > config
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t from_config) {
    if (flag) return *flag;
    if (auto e = env_seed()) return *e;
    return from_config;
}

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string run_dir;
};

HarnessConfig resolve_config(const Common& c) {
    HarnessConfig h = c.config_path.empty() ? HarnessConfig{} : load_harness_config(c.config_path);
    h.train.seed = resolve_seed(c.seed, h.train.seed);
    if (!c.run_dir.empty()) h.run_dir = c.run_dir;
    h.validate();
    return h;
}

DataProvider provider(const DataConfig& data) {
    auto streams = std::make_shared<std::pair<std::vector<EventStream>, std::vector<EventStream>>>(
        load_streams(data));
    return [streams](const ModelConfig& m) {
        return std::make_pair(make_dataset<float>(streams->first, m),
                              make_dataset<float>(streams->second, m));
    };
}

// The resolved config sits two levels above run_dir/checkpoints/*.ckpt.
HarnessConfig config_for_checkpoint(const Common& c, const fs::path& ckpt) {
    if (!c.config_path.empty()) return resolve_config(c);
    for (fs::path dir = ckpt.parent_path(); !dir.empty(); dir = dir.parent_path()) {
        const fs::path candidate = dir / "config.resolved.json";
        if (fs::exists(candidate)) {
            Common copy = c;
            copy.config_path = candidate.string();
            return resolve_config(copy);
        }
        if (dir == dir.parent_path()) break;
    }
    throw ConfigError("no --config given and no config.resolved.json found above " + ckpt.string());
}

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("not a comma-separated list of integers: " + text);
        }
    }
    return out;
}

void print_epoch(std::ostream& out, const EpochRecord& e) {
    out << "epoch " << e.epoch << " loss " << std::setprecision(6) << e.train_loss << " train_top1 "
        << e.train_top1 << " val_top1 " << e.val_top1 << " (" << std::setprecision(3) << e.seconds
        << " s)\n"
        << std::flush;
}

int run_synth(const Common& c, std::size_t classes, std::size_t per_class, const std::string& out_dir,
              std::ostream& out) {
    DataConfig data;
    if (!c.config_path.empty()) data = load_harness_config(c.config_path).data;
    data.seed = resolve_seed(c.seed, data.seed);
    if (classes != 0) data.generator.num_classes = static_cast<int>(classes);
    const auto streams = synth_split(data, per_class, 0);
    const auto entries = write_stream_tree(out_dir, streams);
    out << "wrote " << entries.size() << " streams and labels.csv to " << out_dir << '\n';
    return 0;
}

int run_train(const Common& c, std::optional<std::size_t> epochs, std::optional<std::size_t> max_steps,
              std::ostream& out) {
    HarnessConfig h = resolve_config(c);
    if (epochs) h.train.epochs = *epochs;
    if (max_steps) h.train.max_steps = *max_steps;
    h.validate();
    const fs::path dir = h.run_dir;
    fs::create_directories(dir);
    save_harness_config(dir / "config.resolved.json", h);

    auto data = provider(h.data)(h.model);
    Rng init(h.train.seed);
    UaMobileFormer<float> model(h.model, init);
    out << "model parameters: " << model.parameter_count() << '\n';
    TrainOptions opts;
    opts.checkpoint_dir = dir / "checkpoints";
    opts.on_epoch = [&](const EpochRecord& e) { print_epoch(out, e); };
    const RunReport report = train(model, data.first, data.second, h.train, opts);
    write_report_csv(dir / "report.csv", report);
    write_report_json(dir / "report.json", report);
    out << "best val top1 " << report.best_val_top1 << " at epoch " << report.best_epoch << '\n'
        << "checkpoint " << report.checkpoint_path << '\n';
    return 0;
}

int run_eval(const Common& c, const std::string& ckpt_path, const std::string& split, std::ostream& out) {
    const HarnessConfig h = config_for_checkpoint(c, ckpt_path);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto model = model_from_checkpoint<float>(ckpt);
    auto data = provider(h.data)(model.config());
    const auto& set = split == "train" ? data.first : data.second;
    const double top1 = evaluate_top1(model, set);
    out << "top1 " << std::setprecision(17) << top1 << '\n';
    return 0;
}

int run_ablate(const Common& c, const std::string& rows_text, std::ostream& out) {
    HarnessConfig h = resolve_config(c);
    std::vector<AblationRow> rows;
    if (rows_text.empty()) {
        rows = ablation_rows();
    } else {
        for (auto n : parse_list(rows_text)) {
            if (n < 1 || n > ablation_rows().size()) throw UsageError("ablation rows are numbered 1-5");
            rows.push_back(ablation_rows()[n - 1]);
        }
    }
    const fs::path dir = h.run_dir;
    fs::create_directories(dir);
    save_harness_config(dir / "config.resolved.json", h);
    const auto results = run_ablation(rows, h.model, h.train, provider(h.data), dir);
    write_ablation_csv(dir / "ablation.csv", results);
    json summary = json::array();
    for (const auto& r : results) {
        summary.push_back({{"row", r.row.number},
                           {"parameters", r.parameter_count},
                           {"config", to_json(r.config)},
                           {"report", report_to_json(r.report)}});
        out << "row " << r.row.number << " top1 " << r.report.best_val_top1 << " params "
            << r.parameter_count << '\n';
    }
    std::ofstream(dir / "ablation.json") << summary.dump(2) << '\n';
    return 0;
}

int run_sweep_cmd(const Common& c, const std::string& axis_name, const std::string& values_text,
                  std::ostream& out) {
    HarnessConfig h = resolve_config(c);
    const SweepAxis axis = parse_sweep_axis(axis_name);
    const auto values = values_text.empty() ? default_sweep_grid(axis) : parse_list(values_text);
    const fs::path dir = h.run_dir;
    fs::create_directories(dir);
    save_harness_config(dir / "config.resolved.json", h);
    const auto points = run_sweep(axis, values, h.model, h.train, provider(h.data), dir);
    write_sweep_csv(dir / ("sweep_" + axis_name + ".csv"), axis, points);
    for (const auto& p : points) out << axis_name << ' ' << p.value << " top1 " << p.report.best_val_top1 << '\n';
    return 0;
}

int run_export(const Common& c, const std::string& ckpt_path, std::size_t index, const std::string& out_dir,
               std::ostream& out) {
    const HarnessConfig h = config_for_checkpoint(c, ckpt_path);
    const auto model = model_from_checkpoint<float>(load_checkpoint(ckpt_path));
    auto data = provider(h.data)(model.config());
    if (index >= data.second.size()) {
        throw UsageError("--sample " + std::to_string(index) + " out of range (validation set has " +
                         std::to_string(data.second.size()) + " samples)");
    }
    const std::size_t idx[] = {index};
    const auto batch = collate(data.second, idx).first;
    const fs::path dir = out_dir.empty() ? fs::path(h.run_dir) / "exports" : fs::path(out_dir);
    const auto maps = export_feature_maps(model, batch, dir);
    out << "exported " << maps.size() << " feature maps to " << dir.string() << '\n';
    return 0;
}

int run_gradcheck(const std::string& which, std::size_t entries, std::uint64_t seed, std::ostream& out) {
    double worst = 0.0;
    for (const auto& r : gradcheck_ops(seed)) {
        out << std::left << std::setw(20) << r.name << " max rel err " << std::scientific
            << std::setprecision(3) << r.max_rel_error << std::defaultfloat << '\n';
        worst = std::max(worst, r.max_rel_error);
    }
    ModelConfig cfg;
    ModelGradcheckOptions opts;
    opts.seed = seed;
    if (which == "tiny") {
        cfg = ModelConfig::tiny();
    } else if (which == "desk") {
        cfg = ModelConfig::desk();
        opts.entries_per_tensor = 2;
        opts.max_refinements = 2;
    } else {
        throw UsageError("--model must be tiny or desk");
    }
    if (entries != 0) opts.entries_per_tensor = entries;
    const auto r = gradcheck_model(cfg, opts);
    out << "model (" << which << ", " << r.entries << " entries) max rel err " << std::scientific
        << std::setprecision(3) << r.max_rel_error << std::defaultfloat << " worst " << r.worst;
    if (opts.max_refinements != 0) out << ", " << r.refined << " steps refined at kinks";
    out << '\n';
    worst = std::max(worst, r.max_rel_error);
    out << "max relative error " << std::scientific << std::setprecision(3) << worst << std::defaultfloat
        << '\n';
    if (!(worst < 1e-4)) throw NumericError("gradient check exceeded 1e-4");
    return 0;
}

} // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Event-stream recognition with an uncertainty-aware Mobile-Former"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub, bool with_run_dir) {
        sub->add_option("--config", common.config_path, "Harness config (JSON)");
        sub->add_option("--seed", common.seed, "Seed; overrides UAMF_SEED and the config");
        if (with_run_dir) sub->add_option("--run-dir", common.run_dir, "Output directory");
    };

    auto* synth = app.add_subcommand("synth-data", "Write synthetic .evs streams and labels.csv");
    std::size_t classes = 0, per_class = 50;
    std::string synth_out = "data";
    add_common(synth, false);
    synth->add_option("--classes", classes, "Number of motion classes (1-4)");
    synth->add_option("--per-class", per_class, "Streams per class");
    synth->add_option("--out", synth_out, "Output directory");

    auto* train_cmd = app.add_subcommand("train", "Train and write report and checkpoints");
    std::optional<std::size_t> epochs, max_steps;
    add_common(train_cmd, true);
    train_cmd->add_option("--epochs", epochs, "Override train.epochs");
    train_cmd->add_option("--max-steps", max_steps, "Stop after this many optimizer steps");

    auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
    std::string ckpt, split = "val";
    add_common(eval_cmd, false);
    eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

    auto* ablate_cmd = app.add_subcommand("ablate", "Run the component ablation rows");
    std::string rows;
    add_common(ablate_cmd, true);
    ablate_cmd->add_option("--rows", rows, "Comma-separated row numbers (default all)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Train once per value of one hyperparameter");
    std::string axis, values;
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--axis", axis, "tokens, token_dim, frames or blocks")->required();
    sweep_cmd->add_option("--values", values, "Comma-separated values (default grid otherwise)");

    auto* export_cmd = app.add_subcommand("export-features", "Write per-block feature maps");
    std::string export_ckpt, export_out;
    std::size_t sample = 0;
    add_common(export_cmd, false);
    export_cmd->add_option("--checkpoint", export_ckpt, "Checkpoint file")->required();
    export_cmd->add_option("--sample", sample, "Validation sample index");
    export_cmd->add_option("--out", export_out, "Output directory (default <run_dir>/exports)");

    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    std::string grad_model = "tiny";
    std::size_t grad_entries = 0;
    std::uint64_t grad_seed = 1;
    grad_cmd->add_option("--model", grad_model, "tiny or desk");
    grad_cmd->add_option("--entries", grad_entries, "Entries checked per parameter tensor (0 = all)");
    grad_cmd->add_option("--seed", grad_seed, "Seed for the random point");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return run_synth(common, classes, per_class, synth_out, out);
        if (train_cmd->parsed()) return run_train(common, epochs, max_steps, out);
        if (eval_cmd->parsed()) return run_eval(common, ckpt, split, out);
        if (ablate_cmd->parsed()) return run_ablate(common, rows, out);
        if (sweep_cmd->parsed()) return run_sweep_cmd(common, axis, values, out);
        if (export_cmd->parsed()) return run_export(common, export_ckpt, sample, export_out, out);
        if (grad_cmd->parsed()) return run_gradcheck(grad_model, grad_entries, grad_seed, out);
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("uamf");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace uamf
