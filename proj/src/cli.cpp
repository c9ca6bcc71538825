#include "ricenet/cli.hpp"

#include <ostream>

#include <fmt/format.h>
#include "CLI11.hpp"

#include "ricenet/config.hpp"
#include "ricenet/dataset.hpp"
#include "ricenet/modelio.hpp"
#include "ricenet/predict.hpp"
#include "ricenet/serve.hpp"
#include "ricenet/train.hpp"

namespace ricenet::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Thrown inside a command to end it with a specific exit code after printing `what()`.
class CommandError : public std::runtime_error {
public:
    CommandError(int code, const std::string& message) : std::runtime_error(message), code_(code) {}
    int code() const noexcept { return code_; }

private:
    int code_;
};

fs::path parent_or_dot(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

fs::path classes_path_for(const fs::path& manifest, const std::optional<fs::path>& classes) {
    return classes ? *classes : default_classes_path(manifest);
}

DatasetManifest read_manifest_or_fail(const fs::path& manifest, const std::optional<fs::path>& classes) {
    try {
        return read_manifest(manifest, classes_path_for(manifest, classes));
    } catch (const std::exception& e) {
        throw CommandError(exit_config, fmt::format("cannot read manifest: {}", e.what()));
    }
}

Model<float> load_model_or_fail(const fs::path& path, int code) {
    try {
        return load_model_file(path);
    } catch (const std::exception& e) {
        throw CommandError(code, fmt::format("cannot load model: {}", e.what()));
    }
}

/// Rewrites record paths from `from_dir` so they resolve from `to_dir`.
DatasetManifest rebase(DatasetManifest m, const fs::path& from_dir, const fs::path& to_dir) {
    const auto from = fs::absolute(from_dir).lexically_normal();
    const auto to = fs::absolute(to_dir).lexically_normal();
    if (from == to) return m;
    for (auto& r : m.records) r.path = (from / r.path).lexically_normal().lexically_relative(to).generic_string();
    return m;
}

fs::path with_suffix(const fs::path& p, std::string_view suffix) { return fs::path(p.string() + std::string(suffix)); }

// ---- scan -------------------------------------------------------------------------------------

struct ScanArgs {
    fs::path data_dir;
    fs::path out;
    std::optional<fs::path> classes;
};

void cmd_scan(const ScanArgs& a, std::ostream& out, std::ostream& err) {
    std::vector<std::string> classes = default_classes();
    if (a.classes) {
        try {
            const auto bytes = read_file(*a.classes);
            classes = parse_classes(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        } catch (const std::exception& e) {
            throw CommandError(exit_config, fmt::format("cannot read class list: {}", e.what()));
        }
    }
    ScanReport report;
    try {
        report = scan_directory(a.data_dir, parent_or_dot(a.out), classes);
    } catch (const std::exception& e) {
        throw CommandError(exit_config, e.what());
    }
    for (const auto& w : report.warnings) err << "warning: " << w << "\n";
    write_manifest(report.manifest, a.out, default_classes_path(a.out));
    for (const auto& c : report.manifest.classes) out << fmt::format("{}: {}\n", c, report.counts.at(c));
    out << fmt::format("total: {}\n", report.manifest.records.size());
    if (report.skipped_files > 0) out << fmt::format("skipped non-image files: {}\n", report.skipped_files);
    out << fmt::format("wrote {}\n", a.out.string());
}

// ---- train ------------------------------------------------------------------------------------

struct TrainArgs {
    std::optional<fs::path> config;
    json overlay = json::object();
};

void cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    CliConfig cfg;
    try {
        json doc = a.config ? load_config_file(*a.config) : json::object();
        doc.merge_patch(a.overlay);
        cfg = resolve_config(doc);
    } catch (const ConfigError& e) {
        throw CommandError(exit_config, e.what());
    }
    const auto missing = missing_keys(cfg, {"data.manifest", "model.out"});
    if (!missing.empty()) {
        std::string msg = "missing required settings:";
        for (const auto& k : missing) msg += " " + k;
        throw CommandError(exit_config, msg);
    }

    auto manifest = read_manifest_or_fail(*cfg.manifest, cfg.classes);
    if (!manifest.is_split()) {
        try {
            manifest = split_dataset(std::move(manifest), cfg.split_fraction, cfg.seed);
        } catch (const std::exception& e) {
            throw CommandError(exit_config, fmt::format("cannot split manifest: {}", e.what()));
        }
    }

    std::optional<Model<float>> model;
    if (cfg.backbone) {
        const auto backbone = load_model_or_fail(*cfg.backbone, exit_config);
        try {
            model = attach_head(backbone, HeadSpec{manifest.classes}, !cfg.train.freeze_policy.empty(),
                                derive_seed(cfg.seed, 0x4EAD));
        } catch (const std::exception& e) {
            throw CommandError(exit_config, fmt::format("cannot attach a head to the backbone: {}", e.what()));
        }
        cfg.image_height = model->input_shape()[1];
        cfg.image_width = model->input_shape()[2];
    } else {
        model = default_architecture(cfg.image_height, cfg.image_width, manifest.classes, derive_seed(cfg.seed, 1));
        if (!cfg.train.freeze_policy.empty()) {
            err << "warning: no backbone given; the freeze policy applies to randomly initialized layers\n";
        }
    }
    try {
        if (!cfg.train.freeze_policy.empty()) apply_freeze(*model, cfg.train.freeze_policy);
    } catch (const ConfigError& e) {
        throw CommandError(exit_config, e.what());
    }

    out << "effective config:\n" << echo_config(cfg) << "\n";
    if (cfg.preset == "paper-iter1") out << "note: paper-iter1 is a reconstructed preset (same settings as paper-iter2)\n";

    const fs::path manifest_dir = parent_or_dot(*cfg.manifest);
    const ManifestDataset train_set(manifest, Split::train, manifest_dir, cfg.image_height, cfg.image_width);
    const ManifestDataset val_set(manifest, Split::val, manifest_dir, cfg.image_height, cfg.image_width);
    out << fmt::format("train records: {}, validation records: {}\n", train_set.size(), val_set.size());
    out.flush();

    TrainHistory history;
    try {
        history = train(*model, train_set, val_set, cfg.train, [&](const EpochRecord& e) {
            out << fmt::format("epoch {}/{}  train_loss={:.4f} train_acc={:.4f}  val_loss={:.4f} val_acc={:.4f}  "
                               "gap={:+.4f}  ({:.1f} s)\n",
                               e.epoch, cfg.train.epochs, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy,
                               e.gap(), e.wall_seconds);
            out.flush();
        });
    } catch (const ConfigError& e) {
        throw CommandError(exit_config, e.what());
    } catch (const std::exception& e) {
        throw CommandError(exit_training, fmt::format("training failed: {}", e.what()));
    }

    auto& meta = model->metadata();
    meta["seed"] = std::to_string(cfg.seed);
    meta["epochs"] = std::to_string(cfg.train.epochs);
    if (cfg.preset) meta["preset"] = *cfg.preset;
    meta["result"] = iteration_report(history);

    const fs::path out_dir = parent_or_dot(*cfg.out);
    const auto split_path = with_suffix(*cfg.out, ".manifest.tsv");
    save_model_file(*model, *cfg.out);
    write_file_atomic(with_suffix(*cfg.out, ".history.tsv"), format_history(history));
    write_manifest(rebase(manifest, manifest_dir, out_dir), split_path, default_classes_path(split_path));
    out << fmt::format("wrote {}\n", cfg.out->string());
    out << iteration_report(history) << "\n";
}

// ---- eval -------------------------------------------------------------------------------------

struct EvalArgs {
    fs::path model;
    fs::path manifest;
    std::optional<fs::path> classes;
    std::string split = "val";
    std::size_t batch_size = 32;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto model = load_model_or_fail(a.model, exit_config);
    const auto manifest = read_manifest_or_fail(a.manifest, a.classes);
    if (manifest.classes != model.class_labels()) {
        throw CommandError(exit_config, "manifest classes do not match the model's class labels");
    }
    std::optional<Split> split;
    if (a.split != "all") {
        try {
            split = parse_split(a.split);
        } catch (const std::exception& e) {
            throw CommandError(exit_config, e.what());
        }
        if (!manifest.is_split()) throw CommandError(exit_config, "manifest has no split tags");
    }
    const ManifestDataset ds(manifest, split, parent_or_dot(a.manifest), model.input_shape()[1], model.input_shape()[2]);
    if (ds.size() == 0) throw CommandError(exit_config, fmt::format("split '{}' is empty", a.split));
    const auto ev = evaluate(model, ds, a.batch_size);
    out << fmt::format("split\t{}\n", a.split) << format_evaluation(ev, model.class_labels());
}

// ---- predict ----------------------------------------------------------------------------------

struct PredictArgs {
    fs::path model;
    std::vector<fs::path> images;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
    const auto model = load_model_or_fail(a.model, exit_predict);
    bool failed = false;
    for (const auto& path : a.images) {
        try {
            const auto bytes = read_file(path);
            const auto p = classify_bytes(model, bytes);
            out << "image:\t" << path.string() << "\n" << format_prediction(p);
        } catch (const std::exception& e) {
            err << "error: " << path.string() << ": " << e.what() << "\n";
            failed = true;
        }
    }
    return failed ? exit_predict : exit_ok;
}

// ---- augment-preview --------------------------------------------------------------------------

struct PreviewArgs {
    std::optional<fs::path> config;
    json overlay = json::object();
    std::size_t n = 4;
    fs::path out_dir;
};

int cmd_augment_preview(const PreviewArgs& a, std::ostream& out, std::ostream& err) {
    CliConfig cfg;
    try {
        json doc = a.config ? load_config_file(*a.config) : json::object();
        doc.merge_patch(a.overlay);
        cfg = resolve_config(doc);
    } catch (const ConfigError& e) {
        throw CommandError(exit_config, e.what());
    }
    if (!cfg.manifest) throw CommandError(exit_config, "missing required settings: data.manifest");
    const auto manifest = read_manifest_or_fail(*cfg.manifest, cfg.classes);
    out << "effective config:\n" << echo_config(cfg) << "\n";
    if (a.n == 0) return exit_ok;
    if (manifest.records.empty()) throw CommandError(exit_config, "manifest has no records");

    const ManifestDataset ds(manifest, std::nullopt, parent_or_dot(*cfg.manifest), cfg.image_height, cfg.image_width);
    fs::create_directories(a.out_dir);
    bool failed = false;
    for (std::size_t i = 0; i < a.n; ++i) {
        const std::size_t idx = i % ds.size();
        const auto target = a.out_dir / fmt::format("preview_{:03}.ppm", i);
        try {
            Rng draw(derive_seed(cfg.train.augmentation.seed, 0xA11CE, i));
            const auto img = augment(ds.image(idx), cfg.train.augmentation, draw);
            write_file_atomic(target, encode_ppm(img));
            out << fmt::format("{}\t{}\n", target.string(), ds.describe(idx));
        } catch (const std::exception& e) {
            err << "error: " << target.string() << ": " << e.what() << "\n";
            failed = true;
        }
    }
    return failed ? exit_failure : exit_ok;
}

// ---- inspect ----------------------------------------------------------------------------------

void cmd_inspect(const fs::path& path, std::ostream& out) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const std::exception& e) {
        throw CommandError(exit_config, e.what());
    }
    std::optional<Model<float>> model;
    try {
        model = load_model(bytes);
    } catch (const std::exception& e) {
        throw CommandError(exit_config, fmt::format("cannot load model: {}", e.what()));
    }
    out << fmt::format("model_id\t{}\nformat_version\t{}\ninput_shape\t{}\n", model_id(bytes), kModelFormatVersion,
                       format_shape(model->input_shape()));
    out << "classes\t";
    for (std::size_t i = 0; i < model->num_classes(); ++i) out << (i ? ", " : "") << model->class_labels()[i];
    out << "\n";
    for (const auto& [k, v] : model->metadata()) out << fmt::format("meta.{}\t{}\n", k, v);
    out << "layer\tkind\toutput\tparameters\tfrozen\n";
    std::size_t total = 0, trainable = 0;
    for (std::size_t i = 0; i < model->layers().size(); ++i) {
        const auto& l = model->layer(i);
        std::size_t n = 0;
        for (const auto& p : l.params) n += p.value.size();
        total += n;
        if (!l.frozen) trainable += n;
        out << fmt::format("{}\t{}\t{}\t{}\t{}\n", l.name, to_string(l.kind), format_shape(model->output_shapes()[i]), n,
                           l.frozen ? "yes" : "no");
    }
    out << fmt::format("parameters\t{} ({} trainable)\n", total, trainable);
}

// ---- serve ------------------------------------------------------------------------------------

struct ServeArgs {
    std::optional<fs::path> model;
    fs::path diseases = "data/diseases.txt";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<fs::path> static_dir;
};

void cmd_serve(const ServeArgs& a, std::ostream& out) {
    std::optional<LoadedModel> loaded;
    std::optional<InferenceService> service;
    try {
        if (a.model) loaded = load_served_model(*a.model);
        service.emplace(std::move(loaded), load_disease_table(a.diseases));
    } catch (const std::exception& e) {
        throw CommandError(exit_config, e.what());
    }
    HttpServer server(*service, a.static_dir);
    int port = 0;
    try {
        port = server.bind(a.host, a.port);
    } catch (const std::exception& e) {
        throw CommandError(exit_failure, e.what());
    }
    out << fmt::format("serving on http://{}:{}{}\n", a.host, port, service->has_model() ? "" : " (no model loaded)");
    out.flush();
    server.listen();
}

}  // namespace

Model<float> default_architecture(std::size_t height, std::size_t width, std::vector<std::string> class_labels,
                                  std::uint64_t seed) {
    return ModelBuilder<float>({3, height, width})
        .conv2d("base.conv1", 16, 3)
        .relu("base.relu1")
        .maxpool("base.pool1")
        .conv2d("base.conv2", 32, 3)
        .relu("base.relu2")
        .maxpool("base.pool2")
        .conv2d("base.conv3", 64, 3)
        .relu("base.relu3")
        .maxpool("base.pool3")
        .global_avg_pool("head.gap")
        .dense("head.fc", class_labels.size())
        .softmax("head.softmax")
        .build(std::move(class_labels), seed);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Rice leaf disease CNN: dataset import, training, evaluation, prediction and serving", "ricenet"};
    app.require_subcommand(1);

    ScanArgs scan;
    auto* scan_cmd = app.add_subcommand("scan", "Import a directory-per-class image tree into a manifest");
    scan_cmd->add_option("--data-dir", scan.data_dir, "Root with one folder per class")->required();
    scan_cmd->add_option("--out", scan.out, "Manifest to write (class list goes to <out>.classes)")->required();
    scan_cmd->add_option("--classes", scan.classes, "Class vocabulary file (default: leaf_blast, brown_spot, hispa)");

    // Flags shared by train and augment-preview map onto config keys.
    struct Overlay {
        std::optional<fs::path> config;
        std::optional<std::string> preset, manifest, classes, backbone, out_model;
        std::optional<std::uint64_t> seed, epochs, batch_size, image_size;
        std::optional<double> lr, split_fraction, flip_probability, shear_range;
        std::vector<std::string> freeze;
        bool no_freeze = false, augment = false, no_augment = false, no_flip = false, no_shear = false;

        json to_json(const CLI::App& cmd) const {
            json j = json::object();
            auto abs = [](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
            if (preset) j["preset"] = *preset;
            if (seed) j["seed"] = *seed;
            if (manifest) j["data"]["manifest"] = abs(*manifest);
            if (classes) j["data"]["classes"] = abs(*classes);
            if (image_size) j["data"]["image_height"] = j["data"]["image_width"] = *image_size;
            if (split_fraction) j["data"]["split_fraction"] = *split_fraction;
            if (backbone) j["model"]["backbone"] = abs(*backbone);
            if (out_model) j["model"]["out"] = abs(*out_model);
            if (epochs) j["train"]["epochs"] = *epochs;
            if (batch_size) j["train"]["batch_size"] = *batch_size;
            if (lr) j["train"]["learning_rate"] = *lr;
            if (const auto* opt = cmd.get_option_no_throw("--freeze"); opt && opt->count() > 0) {
                j["train"]["freeze"] = freeze;
            }
            if (no_freeze) j["train"]["freeze"] = json::array();
            if (augment) j["train"]["augmentation"] = true;
            if (no_augment) j["train"]["augmentation"] = false;
            if (no_flip) j["augment"]["horizontal_flip"] = false;
            if (no_shear) j["augment"]["shear"] = false;
            if (flip_probability) j["augment"]["flip_probability"] = *flip_probability;
            if (shear_range) j["augment"]["shear_range"] = *shear_range;
            return j;
        }
    };

    Overlay tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model (optionally from a backbone) on a manifest");
    train_cmd->add_option("--config", tr.config, "JSON config file (comments allowed)");
    train_cmd->add_option("--preset", tr.preset, "paper-iter1 | paper-iter2 | paper-iter3");
    train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest (split 80/20 when untagged)");
    train_cmd->add_option("--classes", tr.classes, "Class vocabulary file (default: <manifest>.classes)");
    train_cmd->add_option("--out", tr.out_model, "Model file to write; also writes <out>.history.tsv and <out>.manifest.tsv");
    train_cmd->add_option("--backbone", tr.backbone, "Model file whose feature layers become base.*");
    train_cmd->add_option("--epochs", tr.epochs, "Number of epochs");
    train_cmd->add_option("--batch-size", tr.batch_size, "Minibatch size");
    train_cmd->add_option("--lr", tr.lr, "ADAM learning rate");
    train_cmd->add_option("--seed", tr.seed, "Seed for split, initialization, shuffling and augmentation");
    train_cmd->add_option("--image-size", tr.image_size, "Square input size for a new model");
    train_cmd->add_option("--split-fraction", tr.split_fraction, "Training share when splitting");
    train_cmd->add_option("--freeze", tr.freeze, "Layer-name prefix to freeze (repeatable)");
    train_cmd->add_flag("--no-freeze", tr.no_freeze, "Train every layer");
    train_cmd->add_flag("--augment", tr.augment, "Enable flip/shear augmentation");
    train_cmd->add_flag("--no-augment", tr.no_augment, "Disable augmentation");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a manifest split");
    eval_cmd->add_option("--model", ev.model, "Model file")->required();
    eval_cmd->add_option("--manifest", ev.manifest, "Split manifest")->required();
    eval_cmd->add_option("--classes", ev.classes, "Class vocabulary file (default: <manifest>.classes)");
    eval_cmd->add_option("--split", ev.split, "train | val | all")->capture_default_str();
    eval_cmd->add_option("--batch-size", ev.batch_size, "Evaluation batch size")->capture_default_str();

    PredictArgs pr;
    auto* predict_cmd = app.add_subcommand("predict", "Print class probabilities for images");
    predict_cmd->add_option("--model", pr.model, "Model file")->required();
    predict_cmd->add_option("images", pr.images, "PNG, JPEG or PPM files")->required();

    Overlay pv;
    PreviewArgs preview;
    auto* preview_cmd = app.add_subcommand("augment-preview", "Write augmented samples as PPM files");
    preview_cmd->add_option("--config", pv.config, "JSON config file (comments allowed)");
    preview_cmd->add_option("--manifest", pv.manifest, "Dataset manifest");
    preview_cmd->add_option("--classes", pv.classes, "Class vocabulary file (default: <manifest>.classes)");
    preview_cmd->add_option("-n,--count", preview.n, "Number of samples")->capture_default_str();
    preview_cmd->add_option("--out-dir", preview.out_dir, "Output directory")->required();
    preview_cmd->add_option("--seed", pv.seed, "Augmentation seed");
    preview_cmd->add_option("--image-size", pv.image_size, "Square preprocessing size");
    preview_cmd->add_flag("--no-flip", pv.no_flip, "Disable horizontal flips");
    preview_cmd->add_flag("--no-shear", pv.no_shear, "Disable shear");
    preview_cmd->add_option("--flip-probability", pv.flip_probability, "Flip probability");
    preview_cmd->add_option("--shear-range", pv.shear_range, "Maximum absolute shear factor");

    fs::path inspect_model;
    auto* inspect_cmd = app.add_subcommand("inspect", "Describe a model file");
    inspect_cmd->add_option("--model", inspect_model, "Model file")->required();

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP inference service");
    serve_cmd->add_option("--model", sv.model, "Model file")->envname("RICENET_MODEL");
    serve_cmd->add_option("--diseases", sv.diseases, "Disease information file")
        ->envname("RICENET_DISEASES")
        ->capture_default_str();
    serve_cmd->add_option("--host", sv.host, "Bind address")->envname("RICENET_HOST")->capture_default_str();
    serve_cmd->add_option("--port", sv.port, "Port (0 picks a free one)")->envname("RICENET_PORT")->capture_default_str();
    serve_cmd->add_option("--static", sv.static_dir, "Directory served at /")->envname("RICENET_STATIC");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return exit_ok;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        if (app.get_subcommands().empty()) err << "run with --help for usage\n";
        return exit_config;
    }

    try {
        if (scan_cmd->parsed()) {
            cmd_scan(scan, out, err);
        } else if (train_cmd->parsed()) {
            cmd_train({tr.config, tr.to_json(*train_cmd)}, out, err);
        } else if (eval_cmd->parsed()) {
            cmd_eval(ev, out);
        } else if (predict_cmd->parsed()) {
            return cmd_predict(pr, out, err);
        } else if (preview_cmd->parsed()) {
            preview.config = pv.config;
            preview.overlay = pv.to_json(*preview_cmd);
            return cmd_augment_preview(preview, out, err);
        } else if (inspect_cmd->parsed()) {
            cmd_inspect(inspect_model, out);
        } else if (serve_cmd->parsed()) {
            cmd_serve(sv, out);
        }
    } catch (const CommandError& e) {
        err << "error: " << e.what() << "\n";
        return e.code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_failure;
    }
    return exit_ok;
}

}  // namespace ricenet::cli
