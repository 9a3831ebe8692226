#include "commands.hpp"

#include "cli_config.hpp"

#include "corefusion/checkpoint.hpp"
#include "corefusion/data.hpp"
#include "corefusion/error.hpp"
#include "corefusion/metrics.hpp"
#include "corefusion/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <optional>
#include <ostream>

namespace corefusion::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool overwrite = false;

    std::string data;
    std::optional<int> count;
    std::optional<int> size;
    std::optional<int> height;
    std::optional<int> width;
    std::optional<double> val_fraction;

    std::optional<double> beta;
    std::optional<double> lr;
    std::optional<int> batch_size;
    std::optional<int> epochs;
    std::optional<int> steps;
    std::optional<int> eval_every;
    std::optional<double> modality_dropout;
    std::string betas;

    std::string checkpoint;
    std::string split = "val";
    std::string path = "all";
};

CliConfig build_config(const Overrides& o)
{
    CliConfig cfg;
    if (!o.config.empty())
        load_config_file(o.config, cfg);
    if (o.seed) {
        cfg.data.seed = *o.seed;
        cfg.model.seed = *o.seed;
        cfg.train.seed = *o.seed;
    }
    if (!o.data.empty())
        cfg.data.root = o.data;
    if (o.count)
        cfg.data.count = *o.count;
    if (o.size)
        cfg.data.height = cfg.data.width = *o.size;
    if (o.height)
        cfg.data.height = *o.height;
    if (o.width)
        cfg.data.width = *o.width;
    if (o.val_fraction)
        cfg.data.val_fraction = *o.val_fraction;
    if (o.beta)
        cfg.train.loss_weights.beta = *o.beta;
    if (o.lr)
        cfg.train.learning_rate = *o.lr;
    if (o.batch_size)
        cfg.train.batch_size = *o.batch_size;
    if (o.epochs)
        cfg.train.max_epochs = *o.epochs;
    if (o.steps)
        cfg.train.max_steps = *o.steps > 0 ? std::optional<int>(*o.steps) : std::nullopt;
    if (o.eval_every)
        cfg.train.eval_every = *o.eval_every;
    if (o.modality_dropout)
        cfg.train.modality_dropout = *o.modality_dropout;
    if (!o.betas.empty())
        cfg.betas = parse_real_list(o.betas);
    cfg.validate();
    return cfg;
}

DatasetManifest require_dataset(const CliConfig& cfg)
{
    if (cfg.data.root.empty())
        throw UsageError("no dataset given; pass --data or set data.root");
    if (!fs::is_regular_file(cfg.data.root / "manifest.json"))
        throw UsageError("dataset not found: " + (cfg.data.root / "manifest.json").string());
    try {
        return load_manifest(cfg.data.root);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

fs::path require_out(const Overrides& o)
{
    if (o.out.empty())
        throw UsageError("--out is required");
    return resolve_output_dir(o.out, o.overwrite);
}

void save_resolved_config(const fs::path& dir, const CliConfig& cfg)
{
    std::ofstream f(dir / "config.ini");
    write_config_file(f, cfg);
    if (!f)
        fail(ErrorCode::io, "cannot write " + (dir / "config.ini").string());
}

int cmd_generate(const Overrides& o, std::ostream& out)
{
    const CliConfig cfg = build_config(o);
    const fs::path dir = require_out(o);
    const DatasetManifest m = generate_synthetic_dataset(dir, cfg.data.seed, cfg.data.count, cfg.data.height,
                                                         cfg.data.width, GenerateOptions{cfg.data.val_fraction});
    out << "dataset " << dir.string() << ": " << m.scenes.size() << " scenes (" << m.train.size() << " train, "
        << m.val.size() << " val), " << m.height << "x" << m.width << ", seed " << m.seed << '\n';
    return exit_ok;
}

int cmd_train(const Overrides& o, std::ostream& out)
{
    const CliConfig cfg = build_config(o);
    const DatasetManifest manifest = require_dataset(cfg);
    const fs::path dir = require_out(o);
    fs::create_directories(dir);
    save_resolved_config(dir, cfg);

    TrainOptions opts;
    opts.checkpoint_dir = dir;
    opts.on_epoch = [&out](const EpochRecord& r) {
        out << "epoch " << r.epoch << " loss " << r.loss.total << " train_ssim " << r.train_ssim;
        if (r.val_ssim == r.val_ssim)
            out << " val_ssim " << r.val_ssim << " val_psnr " << r.val_psnr;
        out << '\n';
    };
    const TrainResult res = train(cfg.model, cfg.train, manifest, opts);
    write_train_log_csv(dir / "train_log.csv", res.log);
    out << "best epoch " << res.best_epoch << " val_ssim " << res.best_val_ssim << " val_psnr " << res.best_val_psnr
        << "\noutputs in " << dir.string() << '\n';
    return exit_ok;
}

int cmd_eval(const Overrides& o, std::ostream& out)
{
    const CliConfig cfg = build_config(o);
    const DatasetManifest manifest = require_dataset(cfg);
    if (o.checkpoint.empty())
        throw UsageError("--checkpoint is required");
    if (!fs::is_regular_file(o.checkpoint))
        throw UsageError("checkpoint not found: " + o.checkpoint);
    Split split;
    std::vector<InferencePath> paths;
    try {
        split = parse_split(o.split);
        if (o.path == "all")
            paths = {InferencePath::full, InferencePath::thermal_only, InferencePath::rgb_only};
        else
            paths = {parse_inference_path(o.path)};
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const fs::path dir = require_out(o);

    const Parameters params = load_checkpoint(o.checkpoint);
    std::vector<MetricsReport> reports;
    for (InferencePath p : paths) {
        reports.push_back(evaluate(params, manifest, split, p));
        out << to_string(p) << ": ssim " << reports.back().mean_ssim << " psnr " << reports.back().mean_psnr_db
            << " (" << reports.back().n_samples << " samples)\n";
    }
    fs::create_directories(dir);
    write_reports_csv(dir / "metrics.csv", reports);
    write_reports_json(dir / "metrics.json", reports);
    out << "outputs in " << dir.string() << '\n';
    return exit_ok;
}

int cmd_sweep(const Overrides& o, std::ostream& out)
{
    const CliConfig cfg = build_config(o);
    const DatasetManifest manifest = require_dataset(cfg);
    const fs::path dir = require_out(o);
    fs::create_directories(dir);
    save_resolved_config(dir, cfg);

    SweepOptions opts;
    opts.checkpoint_dir = dir;
    opts.on_row = [&out](const SweepRow& r) {
        out << "beta " << format_beta(r.beta) << ": best epoch " << r.best_epoch << " full " << r.full.val_ssim
            << " thermal_only " << r.thermal_only.val_ssim << " rgb_only " << r.rgb_only.val_ssim << '\n';
    };
    const std::vector<SweepRow> rows = sweep_beta(cfg.model, cfg.train, cfg.betas, manifest, opts);
    write_sweep_csv(dir / "sweep.csv", rows);
    write_curves_csv(dir / "curves.csv", rows);
    out << "outputs in " << dir.string() << '\n';
    return exit_ok;
}

} // namespace

fs::path resolve_output_dir(const fs::path& requested, bool overwrite)
{
    if (overwrite || !fs::exists(requested))
        return requested;
    if (!fs::is_directory(requested))
        throw UsageError("output path exists and is not a directory: " + requested.string());
    if (fs::is_empty(requested))
        return requested;

    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "run-%Y%m%dT%H%M%SZ", &tm);
    fs::path candidate = requested / stamp;
    for (int i = 1; fs::exists(candidate); ++i)
        candidate = requested / (std::string(stamp) + "-" + std::to_string(i));
    return candidate;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Guided thermal super-resolution: data generation, training, evaluation and beta sweeps",
                 "corefusion"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("--config", o.config, "Configuration file");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--seed", o.seed, "Seed for data generation, initialization and training");
    app.add_flag("--overwrite", o.overwrite, "Write into --out even when it is not empty");

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
    gen->add_option("--count", o.count, "Number of scenes");
    gen->add_option("--size", o.size, "Square image size (multiple of 8)");
    gen->add_option("--height", o.height, "Image height (multiple of 8)");
    gen->add_option("--width", o.width, "Image width (multiple of 8)");
    gen->add_option("--val-fraction", o.val_fraction, "Fraction of scenes assigned to validation");

    auto add_training = [&o](CLI::App* cmd) {
        cmd->add_option("--data", o.data, "Dataset directory");
        cmd->add_option("--lr", o.lr, "Learning rate");
        cmd->add_option("--batch-size", o.batch_size, "Batch size");
        cmd->add_option("--epochs", o.epochs, "Maximum number of epochs");
        cmd->add_option("--steps", o.steps, "Maximum number of optimizer steps (0 = unlimited)");
        cmd->add_option("--eval-every", o.eval_every, "Validation interval in epochs");
        cmd->add_option("--modality-dropout", o.modality_dropout, "Probability of a thermal-only training step");
    };
    auto* tr = app.add_subcommand("train", "Train a model");
    add_training(tr);
    tr->add_option("--beta", o.beta, "Contrastive loss weight");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--data", o.data, "Dataset directory");
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
    ev->add_option("--split", o.split, "train or val");
    ev->add_option("--path", o.path, "full, thermal-only, rgb-only or all");

    auto* sw = app.add_subcommand("sweep", "Train once per contrastive weight and evaluate every inference path");
    add_training(sw);
    sw->add_option("--betas", o.betas, "Comma-separated contrastive weights");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    }

    try {
        if (gen->parsed())
            return cmd_generate(o, out);
        if (tr->parsed())
            return cmd_train(o, out);
        if (ev->parsed())
            return cmd_eval(o, out);
        return cmd_sweep(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::config ? exit_usage : exit_runtime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_runtime;
    }
}

} // namespace corefusion::cli
