#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "intra/intra.hpp"

namespace fs = std::filesystem;
using namespace intra;

namespace {

std::size_t default_workers() {
    if (const char* env = std::getenv("INTRA_WORKERS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring INTRA_WORKERS='" << env << "'\n";
    }
    return 1;
}

/// One `--<key>` flag per configuration key. Values given on the command
/// line override the config file, which overrides the defaults.
struct ConfigFlags {
    std::string file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* cmd, bool with_file = true) {
        if (with_file) cmd->add_option("--config", file, "key = value configuration file");
        RunConfig defaults;
        defaults.workers = default_workers();
        for (const auto& key : RunConfig::keys()) {
            std::string flag = "--" + key;
            std::replace(flag.begin() + 2, flag.end(), '_', '-');
            options[key] = cmd->add_option(flag, values[key], "config key " + key)->default_str(defaults.get(key));
        }
        options["deterministic"]->expected(0, 1)->default_str("false");
    }

    RunConfig resolve() const {
        RunConfig rc;
        rc.workers = default_workers();
        if (!file.empty()) rc.apply_text(read_text_file(file), file);
        for (const auto& key : RunConfig::keys()) {
            const CLI::Option* o = options.at(key);
            if (o->count() == 0) continue;
            std::string v = values.at(key);
            if (key == "deterministic" && v.empty()) v = "true";
            try {
                rc.set(key, v);
            } catch (const ConfigError& e) {
                throw ConfigError(std::string("flag ") + o->get_name() + ": " + e.what());
            }
        }
        return rc;
    }
};

void print_progress_header() { std::cout << history_header() << std::endl; }

int cmd_train(const std::string& data, const std::string& category, const fs::path& out, const std::string& history, const ConfigFlags& flags) {
    const RunConfig rc = flags.resolve();
    const std::size_t workers = rc.effective_workers();
    const Dataset ds = load_category(data, category, rc.image_size, workers);
    const std::vector<Image> images = ds.train_images();
    IntraModel<float> model(rc.model(3), rc.seed);
    TrainConfig tc = TrainConfig::from(rc);
    tc.on_epoch = [](const EpochRecord& r) { std::cout << history_line(r) << std::endl; };
    print_progress_header();
    const TrainResult result = train(model, std::span<const Image>(images), tc);
    const ReferenceDiff ref = build_reference(model, std::span<const Image>(images), {.batch_size = 64, .workers = workers});
    save_checkpoint(out, Checkpoint::from(rc, model, ref));
    const fs::path hist = history.empty() ? fs::path(out.string() + ".history.csv") : fs::path(history);
    write_history(hist, result.history);
    std::cerr << "best epoch " << result.best_epoch << ", validation loss " << result.best_val << "; wrote " << out << " and " << hist << "\n";
    return 0;
}

int cmd_reconstruct(const fs::path& ckpt_path, const fs::path& image_path, const fs::path& out_dir, std::size_t workers) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const IntraModel<float> model = ckpt.model();
    const ModelConfig cfg = model.config();
    Image raw = read_png(image_path);
    if (cfg.channels == 3) raw = to_rgb(std::move(raw));
    const Image x = resize_bilinear(raw, cfg.image_size, cfg.image_size);
    const ScoringOptions opt{.batch_size = 64, .workers = workers};
    const Image recon = reconstruct_image(model, x, opt);
    fs::create_directories(out_dir);
    const std::string stem = image_path.stem().string();
    write_png(out_dir / (stem + "_reconstruction.png"), recon);
    if (!ckpt.reference) {
        std::cerr << "warning: checkpoint has no reference diff map; wrote the reconstruction only\n";
        return 0;
    }
    const AnomalyMap a = anomaly_from_diff(multiscale_diff(x, recon), ckpt.require_reference());
    const float peak = std::max(a.score, 1e-12f);
    write_png(out_dir / (stem + "_anomaly_map.png"), heat_map(map_at_resolution(a, raw.height, raw.width), peak));
    write_png(out_dir / (stem + "_triptych.png"), triptych(x, recon, heat_map(a.map, peak)));
    std::cout << "score = " << detail::format_double(a.score) << "\n";
    return 0;
}

int cmd_evaluate(const fs::path& ckpt_path, const std::string& data, const std::string& category, const fs::path& report, const std::string& scores,
                 const std::string& triptych_dir, std::size_t workers) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const ReferenceDiff& ref = ckpt.require_reference();
    const IntraModel<float> model = ckpt.model();
    const Dataset ds = load_category(data, category, model.config().image_size, workers);
    const ScoringOptions opt{.batch_size = 64, .workers = workers};
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<AnomalyMap> maps = score_samples(model, ref, ds.test, opt);
    EvaluationReport rep = evaluate_maps(ds.category, ds.test, maps);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.config_text = checkpoint_config_text(ckpt);
    write_text_file(report, rep.to_text());
    if (!scores.empty()) write_text_file(scores, rep.scores_csv());
    if (!triptych_dir.empty()) {
        float peak = 1e-12f;
        for (const auto& m : maps) peak = std::max(peak, m.score);
        for (std::size_t i = 0; i < ds.test.size(); ++i) {
            const fs::path p = fs::path(triptych_dir) / (ds.test[i].name + ".png");
            fs::create_directories(p.parent_path());
            const Image recon = reconstruct_image(model, ds.test[i].image, opt);
            write_png(p, triptych(ds.test[i].image, recon, heat_map(maps[i].map, peak)));
        }
    }
    std::cout << "image_auc = " << detail::format_optional(rep.image_auc) << "\n";
    std::cout << "pixel_auc = " << detail::format_optional(rep.pixel_auc) << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double step) {
    ModelGradcheckOptions opt;
    opt.seed = seed;
    opt.step = step;
    const ModelConfig cfg = toy_gradcheck_config();
    const GradientComparison g = check_model_gradient(cfg, opt);
    const auto specs = parameter_specs(cfg);
    std::cout << "max_relative_error = " << detail::format_double(g.max_tensor_relative_error) << "\n";
    std::cout << "worst_tensor = " << specs.at(g.worst_tensor_by_norm).name << "\n";
    std::cout << "max_elementwise_relative_error = " << detail::format_double(g.max_relative_error) << "\n";
    std::cout << "parameters_compared = " << g.compared << "\n";
    if (!(g.max_tensor_relative_error < 1e-4)) throw NumericError("gradient check failed: relative error " + std::to_string(g.max_tensor_relative_error) + " >= 1e-4");
    return 0;
}

struct SynthArgs {
    std::string out;
    std::string category = "synthetic";
    std::uint64_t seed = 1;
    std::size_t train = 20, test_normal = 10, test_defect = 10, size = 64, channels = 3;
    double phase_jitter = SyntheticTexture::kDefaultPhaseJitter;
};

int cmd_synth(const SynthArgs& a) {
    Dataset ds = generate_synthetic(a.seed, a.train, a.test_normal, a.test_defect, a.size, a.channels, a.phase_jitter);
    ds.category = a.category;
    write_dataset(a.out, ds);
    std::cout << "wrote " << ds.train.size() << " training and " << ds.test.size() << " test images to " << (fs::path(a.out) / a.category) << "\n";
    return 0;
}

int cmd_select_size(const std::string& data, const std::string& category, const std::vector<std::size_t>& sizes, std::size_t epochs, const ConfigFlags& flags) {
    const RunConfig rc = flags.resolve();
    const std::size_t workers = rc.effective_workers();
    auto images_at = [&](std::size_t size) { return load_category(data, category, size, workers).train_images(); };
    const SizeSelection sel = select_image_size(images_at, sizes, epochs, rc);
    for (std::size_t i = 0; i < sel.sizes.size(); ++i) std::cout << "size_" << sel.sizes[i] << "_loss = " << detail::format_double(sel.smoothed_losses[i]) << "\n";
    std::cout << "chosen_size = " << sel.chosen << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transformer inpainting anomaly detection: train, score and evaluate image categories"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(36);

    std::string data, category, out, history, ckpt, image, out_dir, report, scores, triptychs;
    std::size_t workers = default_workers();
    std::uint64_t seed = 1;
    bool deterministic = false;
    double step = 1e-3;

    auto* train = app.add_subcommand("train", "train a model on <data>/<category>/train/good and store it with its reference diff map");
    train->add_option("--data", data, "dataset root (MVTec AD layout)")->required();
    train->add_option("--category", category, "category directory under --data")->required();
    train->add_option("--out", out, "checkpoint file to write")->required();
    train->add_option("--history", history, "per-epoch CSV history (default: <out>.history.csv)");
    ConfigFlags train_flags;
    train_flags.attach(train);

    auto* recon = app.add_subcommand("reconstruct", "write the reconstruction, anomaly map and triptych of one image");
    recon->add_option("--ckpt", ckpt, "checkpoint file")->required();
    recon->add_option("--image", image, "PNG image")->required()->check(CLI::ExistingFile);
    recon->add_option("--out-dir", out_dir, "output directory")->required();
    recon->add_option("--workers", workers, "worker threads (env INTRA_WORKERS)")->capture_default_str();
    recon->add_option("--seed", seed, "accepted for uniformity; scoring draws no random numbers")->capture_default_str();
    recon->add_flag("--deterministic", deterministic, "force one worker")->capture_default_str();

    auto* eval = app.add_subcommand("evaluate", "score the test split and write an evaluation report");
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data, "dataset root (MVTec AD layout)")->required();
    eval->add_option("--category", category, "category directory under --data")->required();
    eval->add_option("--report", report, "report file (key = value lines)")->required();
    eval->add_option("--scores", scores, "optional per-image score table (CSV)");
    eval->add_option("--triptych-dir", triptychs, "optional directory for original | reconstruction | heat map images");
    eval->add_option("--workers", workers, "worker threads (env INTRA_WORKERS)")->capture_default_str();
    eval->add_option("--seed", seed, "accepted for uniformity; scoring draws no random numbers")->capture_default_str();
    eval->add_flag("--deterministic", deterministic, "force one worker")->capture_default_str();

    auto* grad = app.add_subcommand("gradcheck", "compare backpropagated gradients of the toy model with finite differences");
    grad->add_option("--seed", seed, "initialisation and data seed")->capture_default_str();
    grad->add_option("--step", step, "central-difference step")->capture_default_str();
    grad->add_flag("--deterministic", deterministic, "accepted for uniformity; the check is single-threaded")->capture_default_str();

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "write a synthetic texture dataset in the MVTec AD layout");
    synth->add_option("--out", sa.out, "dataset root to write")->required();
    synth->add_option("--seed", sa.seed, "dataset seed")->capture_default_str();
    synth->add_option("--category", sa.category, "category name")->capture_default_str();
    synth->add_option("--train", sa.train, "normal training images")->capture_default_str();
    synth->add_option("--test-normal", sa.test_normal, "normal test images")->capture_default_str();
    synth->add_option("--test-defect", sa.test_defect, "defective test images")->capture_default_str();
    synth->add_option("--size", sa.size, "image side in pixels")->capture_default_str();
    synth->add_option("--channels", sa.channels, "1 or 3")->capture_default_str();
    synth->add_option("--phase-jitter", sa.phase_jitter, "per-image phase variation in radians")->capture_default_str();
    synth->add_flag("--deterministic", deterministic, "accepted for uniformity; generation is single-threaded")->capture_default_str();

    std::vector<std::size_t> sizes{256, 320, 512};
    std::size_t epochs = 200;
    auto* sel = app.add_subcommand("select-size", "train one model per candidate size and pick the working resolution");
    sel->add_option("--data", data, "dataset root (MVTec AD layout)")->required();
    sel->add_option("--category", category, "category directory under --data")->required();
    sel->add_option("--sizes", sizes, "ascending candidate sizes")->delimiter(',')->capture_default_str();
    sel->add_option("--epochs", epochs, "epochs per candidate")->capture_default_str();
    ConfigFlags sel_flags;
    sel_flags.attach(sel);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (deterministic) workers = 1;
        if (*train) return cmd_train(data, category, out, history, train_flags);
        if (*recon) return cmd_reconstruct(ckpt, image, out_dir, workers);
        if (*eval) return cmd_evaluate(ckpt, data, category, report, scores, triptychs, workers);
        if (*grad) return cmd_gradcheck(seed, step);
        if (*synth) return cmd_synth(sa);
        if (*sel) return cmd_select_size(data, category, sizes, epochs, sel_flags);
    } catch (const intra::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
