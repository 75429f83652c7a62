#include "pneumo/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pneumo/errors.hpp"
#include "pneumo/metrics.hpp"
#include "pneumo/model.hpp"
#include "pneumo/ontology.hpp"

namespace pneumo {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size())
        throw ValueError("config key '" + key + "' needs a number, got '" + value + "'");
    return v;
}

long parse_long(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const long v = std::strtol(value.c_str(), &end, 10);
    if (value.empty() || end != value.c_str() + value.size())
        throw ValueError("config key '" + key + "' needs an integer, got '" + value + "'");
    return v;
}

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void require_input_file(const std::string& path, const char* what) {
    if (path.empty())
        throw ValueError(std::string(what) + " path is required");
    if (!fs::exists(path))
        throw DataError(std::string(what) + " not found: " + path);
}

void require_out_dir(const std::string& out_dir) {
    if (out_dir.empty()) throw ValueError("output directory is required");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir);
}

// Absolute-path copy of a manifest so the split files remain loadable from
// the output directory.
Manifest absolutized(const Manifest& manifest) {
    Manifest out = manifest;
    for (SampleRecord& rec : out.records)
        rec.image_path = fs::absolute(
                             resolve_image_path(manifest.source_path, rec.image_path))
                             .string();
    return out;
}

void print_confusion_and_metrics(const ConfusionMatrix& cm,
                                 const MetricsReport& report,
                                 const RocCurve* roc) {
    std::cout << "tn " << cm.tn << "\n"
              << "fp " << cm.fp << "\n"
              << "fn " << cm.fn << "\n"
              << "tp " << cm.tp << "\n"
              << "accuracy " << fmt4(report.accuracy) << "\n"
              << "precision " << fmt4(report.precision) << "\n"
              << "recall " << fmt4(report.recall) << "\n"
              << "f1 " << fmt4(report.f1) << "\n";
    if (roc != nullptr) std::cout << "auc " << fmt4(roc->auc) << "\n";
}

} // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
    if (key == "learning_rate") cfg.train.learning_rate = parse_double(key, value);
    else if (key == "beta1") cfg.train.beta1 = parse_double(key, value);
    else if (key == "beta2") cfg.train.beta2 = parse_double(key, value);
    else if (key == "eps") cfg.train.eps = parse_double(key, value);
    else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_long(key, value));
    else if (key == "max_epochs") cfg.train.max_epochs = static_cast<int>(parse_long(key, value));
    else if (key == "plateau_factor") cfg.train.plateau.factor = parse_double(key, value);
    else if (key == "plateau_patience") cfg.train.plateau.patience = static_cast<int>(parse_long(key, value));
    else if (key == "plateau_min_delta") cfg.train.plateau.min_delta = parse_double(key, value);
    else if (key == "plateau_min_lr") cfg.train.plateau.min_lr = parse_double(key, value);
    else if (key == "early_stop_patience") cfg.train.early_stop.patience = static_cast<int>(parse_long(key, value));
    else if (key == "early_stop_min_delta") cfg.train.early_stop.min_delta = parse_double(key, value);
    else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(parse_long(key, value));
    else if (key == "rotation_max_degrees") cfg.augment.rotation_max_degrees = static_cast<float>(parse_double(key, value));
    else if (key == "flip_prob") cfg.augment.flip_prob = static_cast<float>(parse_double(key, value));
    else if (key == "train_ratio") cfg.split.train = parse_double(key, value);
    else if (key == "val_ratio") cfg.split.val = parse_double(key, value);
    else if (key == "test_ratio") cfg.split.test = parse_double(key, value);
    else if (key == "manifest") cfg.manifest = value;
    else if (key == "ontology") cfg.ontology = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "out") cfg.out_dir = value;
    else if (key == "threshold") cfg.threshold = parse_double(key, value);
    else if (key == "fusion_threshold") cfg.fusion_threshold = parse_double(key, value);
    else throw ValueError("unknown config key '" + key + "'");
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ValueError("config " + path + " line " + std::to_string(line_no) +
                             ": expected key=value");
        try {
            apply_config_entry(cfg, trim(stripped.substr(0, eq)),
                               trim(stripped.substr(eq + 1)));
        } catch (const ValueError& e) {
            throw ValueError("config " + path + " line " + std::to_string(line_no) +
                             ": " + e.what());
        }
    }
    return cfg;
}

void cmd_train(const RunConfig& cfg) {
    cfg.train.validate();
    cfg.augment.validate();
    cfg.split.validate();
    require_input_file(cfg.manifest, "manifest");
    require_out_dir(cfg.out_dir);

    const Manifest manifest = load_manifest_file(cfg.manifest);
    const SplitManifests splits =
        split_dataset(absolutized(manifest), cfg.split, cfg.train.seed);
    write_manifest_file(splits.train, (fs::path(cfg.out_dir) / "split_train.csv").string());
    write_manifest_file(splits.val, (fs::path(cfg.out_dir) / "split_val.csv").string());
    write_manifest_file(splits.test, (fs::path(cfg.out_dir) / "split_test.csv").string());

    const Dataset train_set = load_dataset(splits.train, &cfg.augment, cfg.train.seed);
    const Dataset val_set = load_dataset(splits.val, nullptr, cfg.train.seed);
    std::cout << "train_samples " << train_set.size() << "\n"
              << "val_samples " << val_set.size() << "\n"
              << "test_samples " << splits.test.size() << "\n";

    ModelConfig mc;
    SeededRng init_rng(cfg.train.seed);
    Model model(mc, init_rng);
    const std::vector<EpochLog> logs = train(model, train_set, val_set, cfg.train);
    for (const EpochLog& log : logs) {
        std::cout << "epoch " << log.epoch << " train_loss " << fmt6(log.train_loss)
                  << " train_acc " << fmt6(log.train_accuracy) << " val_loss "
                  << fmt6(log.val_loss) << " val_acc " << fmt6(log.val_accuracy)
                  << " lr " << fmt6(log.learning_rate) << "\n";
    }

    const std::string ckpt = (fs::path(cfg.out_dir) / "model.ckpt").string();
    model.save_file(ckpt);
    render_report(&logs, nullptr, nullptr, nullptr, cfg.out_dir);
    std::cout << "epochs " << logs.size() << "\n"
              << "checkpoint " << ckpt << "\n";
}

void cmd_evaluate(const RunConfig& cfg) {
    require_input_file(cfg.manifest, "manifest");
    if (cfg.checkpoint.empty()) throw ValueError("checkpoint path is required");
    require_out_dir(cfg.out_dir);

    Model model = Model::load_file(cfg.checkpoint);
    const Manifest manifest = load_manifest_file(cfg.manifest);
    const Dataset data = load_dataset(manifest, nullptr, 0);
    if (data.size() == 0) throw DataError("manifest has no records");

    std::vector<PredPair> preds;
    preds.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        preds.emplace_back(model.predict_proba(data.images[i]), data.labels[i]);

    const ConfusionMatrix cm = confusion_from_predictions(preds, cfg.threshold);
    const MetricsReport report = compute_metrics(cm);

    RocCurve roc;
    const RocCurve* roc_ptr = nullptr;
    const bool two_class = (cm.tp + cm.fn) > 0 && (cm.tn + cm.fp) > 0;
    if (two_class) {
        roc = pneumo::roc_curve(preds);
        roc_ptr = &roc;
    } else {
        std::cerr << "data: only one label present, skipping ROC\n";
    }

    render_report(nullptr, &cm, &report, roc_ptr, cfg.out_dir);
    std::cout << "samples " << preds.size() << "\n";
    print_confusion_and_metrics(cm, report, roc_ptr);
}

void cmd_diagnose(const RunConfig& cfg, const std::string& image_path,
                  std::optional<int> age_months,
                  const std::vector<std::string>& metadata) {
    if (cfg.checkpoint.empty()) throw ValueError("checkpoint path is required");
    require_input_file(cfg.ontology, "ontology");
    require_input_file(image_path, "image");

    SampleRecord rec;
    rec.image_path = image_path;
    rec.age_months = age_months;
    for (const std::string& entry : metadata) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ValueError("metadata must be key=value, got '" + entry + "'");
        rec.metadata.emplace_back(trim(entry.substr(0, eq)), trim(entry.substr(eq + 1)));
    }

    Model model = Model::load_file(cfg.checkpoint);
    const Ontology ontology = parse_ontology_file(cfg.ontology);
    const Tensor image = load_and_preprocess(image_path);
    const double p = model.predict_proba(image);
    const Diagnosis diag =
        diagnose_case(p, rec, ontology, "Pneumonia", cfg.fusion_threshold);

    std::cout << "p_cnn " << fmt4(diag.p_cnn) << "\n";
    std::cout << "findings";
    for (const auto& f : diag.asserted) std::cout << ' ' << f;
    std::cout << "\ninferred";
    for (const auto& f : diag.inferred) std::cout << ' ' << f;
    std::cout << "\ntrace";
    for (const auto& r : diag.trace) std::cout << ' ' << r;
    std::cout << "\nverdict " << diag.verdict << "\n";
}

void cmd_metrics(const std::string& predictions_path, double threshold) {
    require_input_file(predictions_path, "predictions");
    std::ifstream in(predictions_path);
    if (!in) throw DataError("cannot open predictions " + predictions_path);

    std::vector<PredPair> preds;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        if (line_no == 1 && stripped == "p,label") continue; // optional header
        const auto comma = stripped.find(',');
        if (comma == std::string::npos)
            throw ParseError("predictions " + predictions_path + " line " +
                             std::to_string(line_no) + ": expected p,label");
        double p = 0.0;
        long y = 0;
        try {
            p = parse_double("p", trim(stripped.substr(0, comma)));
            y = parse_long("label", trim(stripped.substr(comma + 1)));
        } catch (const ValueError& e) {
            throw ParseError("predictions " + predictions_path + " line " +
                             std::to_string(line_no) + ": " + e.what());
        }
        if (y != 0 && y != 1)
            throw ParseError("predictions " + predictions_path + " line " +
                             std::to_string(line_no) + ": label must be 0 or 1");
        preds.emplace_back(p, static_cast<int>(y));
    }
    if (preds.empty()) throw DataError("predictions file has no records");

    const ConfusionMatrix cm = confusion_from_predictions(preds, threshold);
    const MetricsReport report = compute_metrics(cm);
    RocCurve roc;
    const RocCurve* roc_ptr = nullptr;
    if ((cm.tp + cm.fn) > 0 && (cm.tn + cm.fp) > 0) {
        roc = pneumo::roc_curve(preds);
        roc_ptr = &roc;
    }
    std::cout << "samples " << preds.size() << "\n";
    print_confusion_and_metrics(cm, report, roc_ptr);
}

void cmd_synth(int n_per_class, std::uint64_t seed, const std::string& out_dir) {
    if (n_per_class < 1) throw ValueError("--n must be >= 1");
    require_out_dir(out_dir);
    const Manifest manifest = synth_dataset(n_per_class, seed, out_dir);
    std::cout << "images " << manifest.size() << "\n"
              << "manifest " << manifest.source_path << "\n";
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Pediatric chest X-ray pneumonia screening toolkit"};
    app.require_subcommand(1);

    std::string config_path, manifest, ontology, checkpoint, out_dir, image,
        predictions;
    long seed = -1;
    double threshold = -1.0, fusion_threshold = -1.0;
    long max_epochs = -1, batch_size = -1;
    double learning_rate = -1.0;
    int age = -1;
    std::vector<std::string> metadata;
    long synth_n = 8;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--seed", seed, "run seed");
        sub->add_option("--out", out_dir, "output directory");
    };

    CLI::App* t = app.add_subcommand("train", "Train a model from a manifest");
    add_common(t);
    t->add_option("--manifest", manifest, "dataset manifest");
    t->add_option("--max-epochs", max_epochs, "epoch cap");
    t->add_option("--batch-size", batch_size, "mini-batch size");
    t->add_option("--learning-rate", learning_rate, "initial learning rate");

    CLI::App* e = app.add_subcommand("evaluate", "Evaluate a checkpoint on a manifest");
    add_common(e);
    e->add_option("--manifest", manifest, "dataset manifest");
    e->add_option("--checkpoint", checkpoint, "model checkpoint");
    e->add_option("--threshold", threshold, "classification threshold");

    CLI::App* d = app.add_subcommand("diagnose", "Diagnose a single image");
    add_common(d);
    d->add_option("--checkpoint", checkpoint, "model checkpoint");
    d->add_option("--ontology", ontology, "ontology file");
    d->add_option("--image", image, "chest film (PGM/PPM)")->required();
    d->add_option("--age", age, "age in months");
    d->add_option("--meta", metadata, "clinical metadata key=value (repeatable)");
    d->add_option("--fusion-threshold", fusion_threshold,
                  "probability gate for decision fusion");

    CLI::App* m = app.add_subcommand("metrics", "Recompute metrics from predictions");
    m->add_option("--predictions", predictions, "CSV of p,label rows")->required();
    m->add_option("--threshold", threshold, "classification threshold");

    CLI::App* s = app.add_subcommand("synth", "Generate a synthetic dataset");
    add_common(s);
    s->add_option("--n", synth_n, "images per class");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        if (err.get_exit_code() == 0) return app.exit(err); // --help
        std::cerr << "usage: " << err.what() << "\n";
        return 2;
    }

    try {
        RunConfig cfg = load_run_config(config_path);
        // Flags override the config file.
        if (!manifest.empty()) cfg.manifest = manifest;
        if (!ontology.empty()) cfg.ontology = ontology;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
        if (threshold >= 0.0) cfg.threshold = threshold;
        if (fusion_threshold >= 0.0) cfg.fusion_threshold = fusion_threshold;
        if (max_epochs >= 0) cfg.train.max_epochs = static_cast<int>(max_epochs);
        if (batch_size >= 0) cfg.train.batch_size = static_cast<int>(batch_size);
        if (learning_rate >= 0.0) cfg.train.learning_rate = learning_rate;

        if (t->parsed()) cmd_train(cfg);
        else if (e->parsed()) cmd_evaluate(cfg);
        else if (d->parsed())
            cmd_diagnose(cfg, image,
                         age >= 0 ? std::optional<int>(age) : std::nullopt,
                         metadata);
        else if (m->parsed()) cmd_metrics(predictions, cfg.threshold);
        else if (s->parsed())
            cmd_synth(static_cast<int>(synth_n), cfg.train.seed, cfg.out_dir);
        return 0;
    } catch (const Error& err) {
        std::cerr << err.prefix() << ": " << err.what() << "\n";
        return err.exit_code();
    } catch (const std::exception& err) {
        std::cerr << "io: unexpected error: " << err.what() << "\n";
        return 4;
    }
}

} // namespace pneumo
