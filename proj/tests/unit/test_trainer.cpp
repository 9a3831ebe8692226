#include "corefusion/checkpoint.hpp"
#include "corefusion/error.hpp"
#include "corefusion/trainer.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace corefusion;

namespace {

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        out.push_back(line);
    return out;
}

Gradients filled(const Parameters& p, double v)
{
    Gradients g;
    for (const auto& t : p.params) {
        Tensor x(t.value.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = v;
        g.push_back(std::move(x));
    }
    return g;
}

ErrorCode error_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::io;
}

TrainConfig quick_config()
{
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 4;
    c.max_epochs = 2;
    c.seed = 3;
    return c;
}

struct Splits {
    std::vector<SamplePair> train;
    std::vector<SamplePair> val;
};

Splits small_splits(int n_train = 8, int n_val = 2, int size = 32)
{
    auto all = synthesize_pairs(5, n_train + n_val, size, size);
    Splits s;
    s.train.assign(all.begin(), all.begin() + n_train);
    s.val.assign(all.begin() + n_train, all.end());
    return s;
}

} // namespace

TEST_CASE("adam first step moves every parameter by lr")
{
    Parameters p = init_parameters(testing::small_model());
    const Parameters before = p;
    AdamState st;
    TrainConfig c;
    adam_step(p, filled(p, 1.0), st, c);
    CHECK(st.step == 1);
    const double expected = c.learning_rate / (1.0 + c.adam_epsilon);
    for (std::size_t k = 0; k < p.params.size(); ++k)
        for (std::size_t i = 0; i < p.params[k].value.size(); ++i)
            CHECK(before.params[k].value[i] - p.params[k].value[i] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(p.buffers == before.buffers);
}

TEST_CASE("adam matches the scalar oracle over several steps")
{
    Parameters p = init_parameters(testing::small_model());
    AdamState st;
    TrainConfig c;
    c.learning_rate = 0.01;
    c.adam_beta1 = 0.8;
    c.adam_beta2 = 0.99;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    const std::size_t k = 3;
    std::vector<oracle::AdamScalar> ref(p.params[k].value.size());
    std::vector<double> expect(p.params[k].value.data(), p.params[k].value.data() + p.params[k].value.size());
    for (int t = 0; t < 6; ++t) {
        Gradients g = filled(p, 0.0);
        for (std::size_t i = 0; i < g[k].size(); ++i) {
            g[k][i] = nd(rng);
            expect[i] = ref[i].step(expect[i], g[k][i], c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon);
        }
        adam_step(p, g, st, c);
    }
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(testing::rel_err(p.params[k].value[i], expect[i]) < 1e-12);
}

TEST_CASE("adam rejects non-finite gradients before updating")
{
    Parameters p = init_parameters(testing::small_model());
    const Parameters before = p;
    AdamState st;
    Gradients g = filled(p, 0.5);
    g[7][2] = std::nan("");
    try {
        adam_step(p, g, st, TrainConfig{});
        FAIL("expected a non_finite error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_finite);
        CHECK(std::string(e.what()).find(p.params[7].name) != std::string::npos);
    }
    CHECK(p == before);
    CHECK(st.step == 0);
    g[7][2] = INFINITY;
    CHECK(error_of([&] { adam_step(p, g, st, TrainConfig{}); }) == ErrorCode::non_finite);
}

TEST_CASE("train config validation")
{
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        return error_of([&] { c.validate(); });
    };
    CHECK_NOTHROW(TrainConfig{}.validate());
    CHECK(bad([](TrainConfig& c) { c.learning_rate = 0.0; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) { c.batch_size = 0; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) { c.max_epochs = 0; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) { c.max_steps = 0; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) { c.eval_every = 0; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) { c.modality_dropout = 1.5; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) { c.adam_beta1 = 1.0; }) == ErrorCode::config);
    CHECK(bad([](TrainConfig& c) {
              c.batch_size = 1;
              c.loss_weights.beta = 0.1;
          }) == ErrorCode::config);
    TrainConfig single;
    single.batch_size = 1;
    single.loss_weights.beta = 0.0;
    CHECK_NOTHROW(single.validate());

    const Splits s = small_splits(2, 1);
    TrainConfig c = quick_config();
    CHECK(error_of([&] { train_pairs(testing::small_model(), c, s.train, s.val); }) == ErrorCode::config);
    c.batch_size = 2;
    CHECK(error_of([&] { train_pairs(testing::small_model(), c, s.train, {}); }) == ErrorCode::config);
}

TEST_CASE("train log epochs strictly increase")
{
    auto at = [](int epoch) {
        EpochRecord r;
        r.epoch = epoch;
        return r;
    };
    TrainLog log;
    log.append(at(1));
    log.append(at(3));
    CHECK_THROWS_AS(log.append(at(3)), Error);
    CHECK_THROWS_AS(log.append(at(2)), Error);
    CHECK(log.size() == 2);
}

TEST_CASE("training is deterministic and logs every epoch")
{
    const Splits s = small_splits();
    TrainConfig c = quick_config();
    c.max_epochs = 3;
    c.eval_every = 2;
    c.loss_weights.beta = 0.0;
    const auto dir = testing::scratch_dir("trainer_det");

    std::vector<int> seen;
    TrainOptions opts{dir / "a", [&](const EpochRecord& r) { seen.push_back(r.epoch); }};
    const TrainResult a = train_pairs(testing::small_model(), c, s.train, s.val, opts);
    const TrainResult b = train_pairs(testing::small_model(), c, s.train, s.val, {dir / "b", {}});

    CHECK(seen == std::vector<int>{1, 2, 3});
    REQUIRE(a.log.size() == 3);
    CHECK(std::isnan(a.log.records()[0].val_ssim));
    CHECK(!std::isnan(a.log.records()[1].val_ssim));
    CHECK(!std::isnan(a.log.records()[2].val_ssim));
    for (const auto& r : a.log.records())
        CHECK(r.loss.contrastive == 0.0);

    CHECK(a.final_params == b.final_params);
    CHECK(a.best_params == b.best_params);
    write_train_log_csv(dir / "a.csv", a.log);
    write_train_log_csv(dir / "b.csv", b.log);
    const std::string csv = slurp(dir / "a.csv");
    CHECK(csv == slurp(dir / "b.csv"));
    const auto rows = lines(csv);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "epoch,train_ssim,train_psnr,val_ssim,val_psnr,mse,psnr_loss,ssim_loss,contrastive,total");
    CHECK(rows[1].find(",,,") != std::string::npos);

    CHECK(sha256_hex(dir / "a" / "last.ckpt") == sha256_hex(dir / "b" / "last.ckpt"));
    CHECK(load_checkpoint(dir / "a" / "best.ckpt") == a.best_params);
    CHECK(load_checkpoint(dir / "a" / "last.ckpt") == a.final_params);
    CHECK((a.best_epoch == 2 || a.best_epoch == 3));
    CHECK(a.best_val_ssim == a.log.records()[std::size_t(a.best_epoch - 1)].val_ssim);

    TrainConfig other = c;
    other.seed = 4;
    CHECK(!(train_pairs(testing::small_model(), other, s.train, s.val).final_params == a.final_params));
}

TEST_CASE("max_steps caps training")
{
    const Splits s = small_splits();
    TrainConfig c = quick_config();
    c.max_epochs = 10;
    c.max_steps = 3;
    const TrainResult r = train_pairs(testing::small_model(), c, s.train, s.val);
    // Two steps per epoch, so the third step lands in epoch 2.
    REQUIRE(r.log.size() == 2);
    CHECK(!std::isnan(r.log.records()[1].val_ssim));
}

TEST_CASE("thermal-only steps leave the rgb encoder untouched")
{
    const Splits s = small_splits();
    TrainConfig c = quick_config();
    c.modality_dropout = 1.0;
    const TrainResult r = train_pairs(testing::small_model(), c, s.train, s.val);
    const Parameters init = init_parameters(testing::small_model());
    std::size_t rgb = 0, thermal_changed = 0;
    for (std::size_t k = 0; k < init.params.size(); ++k) {
        if (init.params[k].owner == Submodule::rgb_encoder) {
            ++rgb;
            CHECK(r.final_params.params[k].value == init.params[k].value);
        }
        if (init.params[k].owner == Submodule::thermal_encoder && !(r.final_params.params[k].value == init.params[k].value))
            ++thermal_changed;
    }
    CHECK(rgb > 0);
    CHECK(thermal_changed > 0);
}

TEST_CASE("training reduces the reconstruction error")
{
    const Splits s = small_splits(8, 2, 32);
    TrainConfig c = quick_config();
    c.max_epochs = 1000;
    c.max_steps = 200;
    c.eval_every = 50;
    const TrainResult r = train_pairs(testing::small_model(), c, s.train, s.val);
    INFO("initial " << r.initial_train_mse << " final " << r.final_train_mse);
    CHECK(r.final_train_mse <= 0.5 * r.initial_train_mse);
    CHECK(r.final_train_mse == doctest::Approx(dataset_mse(r.final_params, s.train)).epsilon(1e-14));
}

TEST_CASE("beta sweep")
{
    const auto root = testing::scratch_dir("trainer_sweep");
    const DatasetManifest manifest = generate_synthetic_dataset(root / "data", 9, 10, 32, 32);
    TrainConfig c = quick_config();
    c.max_epochs = 1;

    SUBCASE("csv layout")
    {
        const std::vector<double> betas{0.0, 0.1};
        std::vector<double> seen;
        const auto rows = sweep_beta(testing::small_model(), c, betas, manifest,
                                     {root / "ckpt", [&](const SweepRow& r) { seen.push_back(r.beta); }});
        CHECK(seen == betas);
        REQUIRE(rows.size() == 2);
        CHECK(std::filesystem::exists(root / "ckpt" / ("beta_" + format_beta(0.1)) / "best.ckpt"));
        CHECK(rows[0].log.records()[0].loss.contrastive == 0.0);
        CHECK(rows[1].log.records()[0].loss.contrastive > 0.0);

        write_sweep_csv(root / "sweep.csv", rows);
        const auto text = lines(slurp(root / "sweep.csv"));
        REQUIRE(text.size() == 1 + betas.size() * 3 + 1);
        CHECK(text[0] == "row,beta,path,best_epoch,train_ssim,train_psnr,val_ssim,val_psnr");
        CHECK(text[1].rfind("result,0,full,", 0) == 0);
        CHECK(text[2].rfind("result,0,thermal_only,", 0) == 0);
        CHECK(text[3].rfind("result,0,rgb_only,", 0) == 0);
        CHECK(text.back().rfind("summary,", 0) == 0);

        write_curves_csv(root / "curves.csv", rows);
        CHECK(lines(slurp(root / "curves.csv"))[0] == "beta,epoch,split,metric,value");
    }

    SUBCASE("single beta equals a direct run")
    {
        c.loss_weights.beta = 0.7;
        const std::vector<double> betas{0.0};
        const auto rows = sweep_beta(testing::small_model(), c, betas, manifest);
        TrainConfig direct_cfg = c;
        direct_cfg.loss_weights.beta = 0.0;
        const TrainResult direct = train(testing::small_model(), direct_cfg, manifest);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].best_epoch == direct.best_epoch);
        CHECK(rows[0].best_val_ssim == direct.best_val_ssim);
        for (auto p : {InferencePath::full, InferencePath::thermal_only, InferencePath::rgb_only}) {
            const MetricsReport tr = evaluate(direct.best_params, manifest, Split::train, p);
            const MetricsReport va = evaluate(direct.best_params, manifest, Split::val, p);
            CHECK(rows[0].path(p).train_ssim == tr.mean_ssim);
            CHECK(rows[0].path(p).train_psnr == tr.mean_psnr_db);
            CHECK(rows[0].path(p).val_ssim == va.mean_ssim);
            CHECK(rows[0].path(p).val_psnr == va.mean_psnr_db);
        }
    }
}

TEST_CASE("format_beta")
{
    CHECK(format_beta(0.0) == "0");
    CHECK(format_beta(0.001) == "0.001");
    CHECK(format_beta(1.0) == "1");
}
