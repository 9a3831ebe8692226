#include "corefusion/trainer.hpp"

#include "corefusion/checkpoint.hpp"
#include "corefusion/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace corefusion {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_csv(const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        fail(ErrorCode::io, "cannot write " + path.string());
    return out;
}

struct BatchInputs {
    Tensor rgb;
    Tensor lr;
    Tensor target;
    std::vector<ImageTensor> hr01;
    std::vector<std::string> ids;
};

BatchInputs assemble(std::span<const SamplePair> pairs, std::span<const std::size_t> idx, std::mt19937_64& rng)
{
    std::bernoulli_distribution coin(0.5);
    std::vector<ImageTensor> rgb, lr, target;
    BatchInputs b;
    for (std::size_t i : idx) {
        const bool fh = coin(rng);
        const bool fv = coin(rng);
        SamplePair p = augment_flip(pairs[i], fh, fv);
        rgb.push_back(std::move(p.hr_rgb));
        lr.push_back(std::move(p.lr_thermal));
        target.push_back(normalize(p.hr_thermal));
        b.hr01.push_back(std::move(p.hr_thermal));
        b.ids.push_back(std::move(p.scene_id));
    }
    b.rgb = stack(rgb);
    b.lr = stack(lr);
    b.target = stack(target);
    return b;
}

void add_breakdown(LossBreakdown& acc, const LossBreakdown& x)
{
    acc.mse += x.mse;
    acc.psnr_loss += x.psnr_loss;
    acc.ssim_loss += x.ssim_loss;
    acc.contrastive += x.contrastive;
    acc.total += x.total;
}

void scale_breakdown(LossBreakdown& acc, double s)
{
    acc.mse *= s;
    acc.psnr_loss *= s;
    acc.ssim_loss *= s;
    acc.contrastive *= s;
    acc.total *= s;
}

void check_finite(const Parameters& params)
{
    for (const auto& p : params.params)
        if (!p.value.all_finite())
            fail(ErrorCode::non_finite, "parameter " + p.name + " became non-finite");
}

} // namespace

void TrainConfig::validate() const
{
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::config, "learning_rate must be positive");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, ErrorCode::config, "adam_beta1 must lie in [0, 1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, ErrorCode::config, "adam_beta2 must lie in [0, 1)");
    require(adam_epsilon > 0.0, ErrorCode::config, "adam_epsilon must be positive");
    require(batch_size >= 1, ErrorCode::config, "batch_size must be at least 1");
    require(max_epochs >= 1, ErrorCode::config, "max_epochs must be at least 1");
    require(!max_steps || *max_steps >= 1, ErrorCode::config, "max_steps must be at least 1");
    require(eval_every >= 1, ErrorCode::config, "eval_every must be at least 1");
    require(modality_dropout >= 0.0 && modality_dropout <= 1.0, ErrorCode::config,
            "modality_dropout must lie in [0, 1]");
    loss_weights.validate();
    if (loss_weights.beta > 0.0)
        require(batch_size >= 2, ErrorCode::config, "contrastive training needs batch_size >= 2");
}

void TrainLog::append(const EpochRecord& record)
{
    if (!records_.empty())
        require(record.epoch > records_.back().epoch, ErrorCode::precondition,
                "training log epochs must be strictly increasing");
    records_.push_back(record);
}

void adam_step(Parameters& params, const Gradients& grads, AdamState& state, const TrainConfig& config)
{
    require(grads.size() == params.params.size(), ErrorCode::shape_mismatch, "gradient count does not match parameters");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require(grads[i].shape() == params.params[i].value.shape(), ErrorCode::shape_mismatch,
                "gradient shape mismatch for " + params.params[i].name);
        if (!grads[i].all_finite())
            fail(ErrorCode::non_finite, "non-finite gradient for parameter " + params.params[i].name);
    }
    if (state.m.empty()) {
        for (const auto& p : params.params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    require(state.m.size() == params.params.size(), ErrorCode::shape_mismatch, "optimizer state does not match parameters");

    ++state.step;
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, double(state.step));
    const double c2 = 1.0 - std::pow(b2, double(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto w = params.params[i].value.span();
        auto g = grads[i].span();
        auto m = state.m[i].span();
        auto v = state.v[i].span();
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double mh = m[k] / c1;
            const double vh = v[k] / c2;
            w[k] -= config.learning_rate * mh / (std::sqrt(vh) + config.adam_epsilon);
        }
    }
}

double dataset_mse(const Parameters& params, std::span<const SamplePair> pairs)
{
    require(!pairs.empty(), ErrorCode::precondition, "dataset_mse needs at least one sample");
    double acc = 0.0;
    for (const auto& p : pairs) {
        const ImageTensor pred = predict(params, p, InferencePath::full);
        const ImageTensor target = normalize(p.hr_thermal);
        double s = 0.0;
        const auto a = pred.values();
        const auto b = target.values();
        for (std::size_t k = 0; k < a.size(); ++k)
            s += (a[k] - b[k]) * (a[k] - b[k]);
        acc += s / double(a.size());
    }
    return acc / double(pairs.size());
}

TrainResult train_pairs(const ModelConfig& model, const TrainConfig& config, std::span<const SamplePair> train_set,
                        std::span<const SamplePair> val_set, const TrainOptions& options)
{
    model.validate();
    config.validate();
    require(train_set.size() >= std::size_t(config.batch_size), ErrorCode::config,
            "training split has " + std::to_string(train_set.size()) + " samples, fewer than batch_size " +
                std::to_string(config.batch_size));
    require(!val_set.empty(), ErrorCode::config, "validation split is empty");
    for (const auto& p : train_set)
        validate_pair(p);
    for (const auto& p : val_set)
        validate_pair(p);

    TrainResult result;
    Parameters params = init_parameters(model);
    AdamState adam;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    result.initial_train_mse = dataset_mse(params, train_set);
    result.best_val_ssim = -std::numeric_limits<double>::infinity();
    result.best_params = params;

    if (!options.checkpoint_dir.empty())
        std::filesystem::create_directories(options.checkpoint_dir);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = std::size_t(config.batch_size);
    const std::size_t steps_per_epoch = train_set.size() / bs;
    long total_steps = 0;
    bool stop = false;

    for (int epoch = 1; epoch <= config.max_epochs && !stop; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossBreakdown epoch_loss;
        double ssim_sum = 0.0;
        double psnr_sum = 0.0;
        std::size_t n_scored = 0;
        std::size_t n_steps = 0;

        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            if (config.max_steps && total_steps >= *config.max_steps) {
                stop = true;
                break;
            }
            const bool thermal_only = config.modality_dropout > 0.0 && unit(rng) < config.modality_dropout;
            BatchInputs batch = assemble(train_set, std::span(order).subspan(s * bs, bs), rng);

            ad::Graph g;
            ParameterBinding bind(g, params, true);
            std::vector<NormStatsUpdate> stats;
            ForwardContext ctx{bind, ad::BatchNormMode::training, &stats};
            const ad::Var lr = g.constant(std::move(batch.lr));
            GraphLoss loss;
            ad::Var pred;
            if (thermal_only) {
                pred = forward_single(ctx, Encoder::thermal, lr);
                loss = total_loss(g, pred, batch.target, std::nullopt, config.loss_weights, model.temperature);
            } else {
                const ad::Var rgb = g.constant(std::move(batch.rgb));
                GraphFullOutput out = forward_full(ctx, rgb, lr);
                pred = out.pred;
                loss = total_loss(g, pred, batch.target, std::pair{out.z_rgb, out.z_thermal}, config.loss_weights,
                                  model.temperature);
            }
            if (!std::isfinite(loss.breakdown.total))
                fail(ErrorCode::non_finite, "loss became non-finite at epoch " + std::to_string(epoch));

            const Tensor& pv = g.value(pred);
            for (std::size_t k = 0; k < bs; ++k) {
                const SampleMetrics m = score(unstack(pv, int(k)), batch.hr01[k], batch.ids[k]);
                ssim_sum += m.ssim;
                psnr_sum += m.psnr;
                ++n_scored;
            }

            g.backward(loss.total);
            adam_step(params, bind.gradients(), adam, config);
            apply_norm_stats(params, stats);
            check_finite(params);

            add_breakdown(epoch_loss, loss.breakdown);
            ++n_steps;
            ++total_steps;
        }
        if (n_steps == 0)
            break;

        EpochRecord rec;
        rec.epoch = epoch;
        scale_breakdown(epoch_loss, 1.0 / double(n_steps));
        rec.loss = epoch_loss;
        rec.train_ssim = ssim_sum / double(n_scored);
        rec.train_psnr = psnr_sum / double(n_scored);
        rec.val_ssim = kNaN;
        rec.val_psnr = kNaN;

        const bool last = epoch == config.max_epochs || stop ||
                          (config.max_steps && total_steps >= *config.max_steps);
        if (epoch % config.eval_every == 0 || last) {
            const MetricsReport val = evaluate_pairs(params, val_set, InferencePath::full);
            rec.val_ssim = val.mean_ssim;
            rec.val_psnr = val.mean_psnr_db;
            if (val.mean_ssim > result.best_val_ssim) {
                result.best_val_ssim = val.mean_ssim;
                result.best_val_psnr = val.mean_psnr_db;
                result.best_epoch = epoch;
                result.best_params = params;
                if (!options.checkpoint_dir.empty())
                    save_checkpoint(options.checkpoint_dir / "best.ckpt", params);
            }
            if (!options.checkpoint_dir.empty())
                save_checkpoint(options.checkpoint_dir / "last.ckpt", params);
        }
        result.log.append(rec);
        if (options.on_epoch)
            options.on_epoch(rec);
        if (last)
            break;
    }

    result.final_train_mse = dataset_mse(params, train_set);
    result.final_params = std::move(params);
    return result;
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const DatasetManifest& manifest,
                  const TrainOptions& options)
{
    validate_manifest(manifest);
    const std::vector<SamplePair> tr = load_split(manifest, Split::train);
    const std::vector<SamplePair> va = load_split(manifest, Split::val);
    return train_pairs(model, config, tr, va, options);
}

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log)
{
    std::ofstream out = open_csv(path);
    out << "epoch,train_ssim,train_psnr,val_ssim,val_psnr,mse,psnr_loss,ssim_loss,contrastive,total\n";
    for (const auto& r : log.records()) {
        out << r.epoch << ',' << fmt(r.train_ssim) << ',' << fmt(r.train_psnr) << ','
            << (std::isnan(r.val_ssim) ? std::string() : fmt(r.val_ssim)) << ','
            << (std::isnan(r.val_psnr) ? std::string() : fmt(r.val_psnr)) << ',' << fmt(r.loss.mse) << ','
            << fmt(r.loss.psnr_loss) << ',' << fmt(r.loss.ssim_loss) << ',' << fmt(r.loss.contrastive) << ','
            << fmt(r.loss.total) << '\n';
    }
    if (!out)
        fail(ErrorCode::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------

const PathMetrics& SweepRow::path(InferencePath p) const
{
    switch (p) {
    case InferencePath::full: return full;
    case InferencePath::thermal_only: return thermal_only;
    case InferencePath::rgb_only: return rgb_only;
    }
    return full;
}

std::string format_beta(double beta)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", beta);
    return buf;
}

std::vector<SweepRow> sweep_beta(const ModelConfig& model, const TrainConfig& base, std::span<const double> betas,
                                 const DatasetManifest& manifest, const SweepOptions& options)
{
    require(!betas.empty(), ErrorCode::config, "sweep needs at least one beta");
    for (double b : betas)
        require(b >= 0.0 && std::isfinite(b), ErrorCode::config, "sweep betas must be finite and non-negative");
    validate_manifest(manifest);
    const std::vector<SamplePair> tr = load_split(manifest, Split::train);
    const std::vector<SamplePair> va = load_split(manifest, Split::val);

    std::vector<SweepRow> rows;
    for (double beta : betas) {
        TrainConfig cfg = base;
        cfg.loss_weights.beta = beta;
        TrainOptions topt;
        if (!options.checkpoint_dir.empty())
            topt.checkpoint_dir = options.checkpoint_dir / ("beta_" + format_beta(beta));
        TrainResult res = train_pairs(model, cfg, tr, va, topt);

        SweepRow row;
        row.beta = beta;
        row.best_epoch = res.best_epoch;
        row.best_val_ssim = res.best_val_ssim;
        row.best_val_psnr = res.best_val_psnr;
        for (InferencePath p : {InferencePath::full, InferencePath::thermal_only, InferencePath::rgb_only}) {
            const MetricsReport t = evaluate_pairs(res.best_params, tr, p);
            const MetricsReport v = evaluate_pairs(res.best_params, va, p);
            PathMetrics m{t.mean_ssim, t.mean_psnr_db, v.mean_ssim, v.mean_psnr_db};
            if (p == InferencePath::full)
                row.full = m;
            else if (p == InferencePath::thermal_only)
                row.thermal_only = m;
            else
                row.rgb_only = m;
        }
        row.log = std::move(res.log);
        if (options.on_row)
            options.on_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows)
{
    require(!rows.empty(), ErrorCode::precondition, "no sweep rows to write");
    std::ofstream out = open_csv(path);
    out << "row,beta,path,best_epoch,train_ssim,train_psnr,val_ssim,val_psnr\n";
    auto line = [&](const char* kind, const SweepRow& r, InferencePath p) {
        const PathMetrics& m = r.path(p);
        out << kind << ',' << fmt(r.beta) << ',' << to_string(p) << ',' << r.best_epoch << ',' << fmt(m.train_ssim)
            << ',' << fmt(m.train_psnr) << ',' << fmt(m.val_ssim) << ',' << fmt(m.val_psnr) << '\n';
    };
    const SweepRow* best = &rows[0];
    for (const auto& r : rows) {
        for (InferencePath p : {InferencePath::full, InferencePath::thermal_only, InferencePath::rgb_only})
            line("result", r, p);
        if (r.full.val_ssim > best->full.val_ssim)
            best = &r;
    }
    line("summary", *best, InferencePath::full);
    if (!out)
        fail(ErrorCode::io, "failed writing " + path.string());
}

void write_curves_csv(const std::filesystem::path& path, std::span<const SweepRow> rows)
{
    std::ofstream out = open_csv(path);
    out << "beta,epoch,split,metric,value\n";
    for (const auto& r : rows) {
        for (const auto& e : r.log.records()) {
            const std::string b = fmt(r.beta);
            out << b << ',' << e.epoch << ",train,ssim," << fmt(e.train_ssim) << '\n';
            out << b << ',' << e.epoch << ",train,psnr," << fmt(e.train_psnr) << '\n';
            if (!std::isnan(e.val_ssim)) {
                out << b << ',' << e.epoch << ",val,ssim," << fmt(e.val_ssim) << '\n';
                out << b << ',' << e.epoch << ",val,psnr," << fmt(e.val_psnr) << '\n';
            }
            out << b << ',' << e.epoch << ",train,loss," << fmt(e.loss.total) << '\n';
        }
    }
    if (!out)
        fail(ErrorCode::io, "failed writing " + path.string());
}

} // namespace corefusion
