#include "cli_config.hpp"
#include "commands.hpp"

#include "corefusion/checkpoint.hpp"
#include "corefusion/error.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace corefusion;
using namespace corefusion::cli;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args)
{
    args.insert(args.begin(), "corefusion");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text)
{
    std::ofstream(p, std::ios::trunc) << text;
}

std::size_t count_lines(const fs::path& p)
{
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);)
        ++n;
    return n;
}

const char* kSmallModel = "[model]\n"
                          "depth = 2\n"
                          "widths = 4,8\n"
                          "blocks_per_level = 1\n"
                          "projection_dim = 8\n"
                          "norm_groups = 2\n"
                          "[train]\n"
                          "batch_size = 4\n"
                          "max_epochs = 1\n"
                          "learning_rate = 0.001\n";

/// A small dataset and config shared by the command tests.
struct Fixture {
    fs::path root = testing::scratch_dir("cli");
    fs::path data = root / "data";
    fs::path config = root / "small.ini";

    Fixture()
    {
        write(config, kSmallModel);
        const Outcome g = invoke({"generate", "--out", data.string(), "--count", "10", "--size", "32", "--seed", "3"});
        REQUIRE(g.code == exit_ok);
    }

    Outcome train(const fs::path& out, std::vector<std::string> extra = {})
    {
        std::vector<std::string> args{"--config", config.string(), "train", "--data", data.string(), "--out",
                                      out.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return invoke(args);
    }
};

} // namespace

TEST_CASE("config file parsing")
{
    const auto dir = testing::scratch_dir("cli_config");
    CliConfig cfg;

    write(dir / "a.toml", "[model]\nwidths = [4, 8]\ndepth = 2\n[data]\nroot = \"some/where\"\n"
                          "[sweep]\nbetas = [0, 0.5]\n[train]\nmax_steps = 0\n");
    load_config_file(dir / "a.toml", cfg);
    CHECK(cfg.model.widths == std::vector<int>{4, 8});
    CHECK(cfg.data.root == fs::path("some/where"));
    CHECK(cfg.betas == std::vector<double>{0.0, 0.5});
    CHECK(!cfg.train.max_steps);

    auto code_for = [&](const std::string& text) {
        write(dir / "bad.ini", text);
        CliConfig c;
        try {
            load_config_file(dir / "bad.ini", c);
            c.validate();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::io;
    };
    CHECK(code_for("[model]\ncolour = 3\n") == ErrorCode::config);
    CHECK(code_for("[optimizer]\nlr = 3\n") == ErrorCode::config);
    CHECK(code_for("[train]\nlearning_rate = fast\n") == ErrorCode::config);
    CHECK(code_for("[train]\nbatch_size = 0\n") == ErrorCode::config);
    CHECK(code_for("[data]\nsize = 30\n") == ErrorCode::config);

    CliConfig round;
    round.model.depth = 3;
    round.model.widths = {4, 8, 16};
    round.train.learning_rate = 3e-4;
    round.train.max_steps = 17;
    round.train.loss_weights.beta = 0.25;
    round.betas = {0.0, 1.0};
    {
        std::ofstream f(dir / "round.ini");
        write_config_file(f, round);
    }
    CliConfig back;
    load_config_file(dir / "round.ini", back);
    CHECK(back.model == round.model);
    CHECK(back.train.learning_rate == round.train.learning_rate);
    CHECK(back.train.max_steps == round.train.max_steps);
    CHECK(back.train.loss_weights.beta == 0.25);
    CHECK(back.betas == round.betas);

    CHECK(parse_real_list("0, 0.001,1") == std::vector<double>{0.0, 0.001, 1.0});
    CHECK_THROWS_AS(parse_real_list("0,x"), Error);
}

TEST_CASE("output directory resolution")
{
    const auto dir = testing::scratch_dir("cli_out");
    CHECK(resolve_output_dir(dir / "fresh", false) == dir / "fresh");
    CHECK(resolve_output_dir(dir, false) == dir);
    write(dir / "file.txt", "x");
    const fs::path stamped = resolve_output_dir(dir, false);
    CHECK(stamped.parent_path() == dir);
    CHECK(stamped.filename().string().rfind("run-", 0) == 0);
    CHECK(resolve_output_dir(dir, true) == dir);
}

TEST_CASE("usage errors")
{
    CHECK(invoke({"--help"}).code == exit_ok);
    CHECK(invoke({}).code == exit_usage);
    CHECK(invoke({"frobnicate"}).code == exit_usage);
    const auto dir = testing::scratch_dir("cli_usage");
    CHECK(invoke({"generate", "--out", (dir / "d").string(), "--size", "30"}).code == exit_usage);
    CHECK(invoke({"generate", "--out", (dir / "d").string(), "--count", "abc"}).code == exit_usage);
    CHECK(invoke({"train", "--out", (dir / "t").string()}).code == exit_usage);
    CHECK(invoke({"train", "--data", (dir / "missing").string(), "--out", (dir / "t").string()}).code == exit_usage);
    CHECK(invoke({"train", "--data", (dir / "missing").string()}).code == exit_usage);
    write(dir / "bad.ini", "[train]\nwarp = 9\n");
    CHECK(invoke({"--config", (dir / "bad.ini").string(), "generate", "--out", (dir / "g").string()}).code ==
          exit_usage);
    CHECK(invoke({"--config", (dir / "nope.ini").string(), "generate", "--out", (dir / "g").string()}).code ==
          exit_usage);
    CHECK(invoke({"eval", "--data", (dir / "missing").string()}).code == exit_usage);
}

TEST_CASE("train, eval and sweep commands")
{
    Fixture fx;
    CHECK(fs::exists(fx.data / "manifest.json"));

    const fs::path run1 = fx.root / "run";
    const Outcome t = fx.train(run1, {"--beta", "0.5"});
    REQUIRE_MESSAGE(t.code == exit_ok, t.err);
    CHECK(fs::exists(run1 / "best.ckpt"));
    CHECK(fs::exists(run1 / "last.ckpt"));
    CHECK(count_lines(run1 / "train_log.csv") == 2);

    CliConfig resolved;
    load_config_file(run1 / "config.ini", resolved);
    CHECK(resolved.train.loss_weights.beta == 0.5);
    CHECK(resolved.model.widths == std::vector<int>{4, 8});

    SUBCASE("a non-empty output directory gets a run-stamped subdirectory")
    {
        const Outcome again = fx.train(run1);
        REQUIRE(again.code == exit_ok);
        int stamped = 0;
        for (const auto& e : fs::directory_iterator(run1))
            if (e.is_directory() && e.path().filename().string().rfind("run-", 0) == 0)
                ++stamped;
        CHECK(stamped == 1);
        CliConfig second;
        for (const auto& e : fs::directory_iterator(run1))
            if (e.is_directory())
                load_config_file(e.path() / "config.ini", second);
        CHECK(second.train.loss_weights.beta == TrainConfig{}.loss_weights.beta);

        CHECK(fx.train(run1, {"--overwrite"}).code == exit_ok);
        CHECK(slurp(run1 / "train_log.csv") != "");
    }

    SUBCASE("training is reproducible")
    {
        REQUIRE(fx.train(fx.root / "repeat", {"--beta", "0.5"}).code == exit_ok);
        CHECK(slurp(run1 / "train_log.csv") == slurp(fx.root / "repeat" / "train_log.csv"));
        CHECK(sha256_hex(run1 / "last.ckpt") == sha256_hex(fx.root / "repeat" / "last.ckpt"));
    }

    SUBCASE("eval")
    {
        const std::string ckpt = (run1 / "best.ckpt").string();
        const Outcome all = invoke({"eval", "--data", fx.data.string(), "--checkpoint", ckpt, "--out",
                                    (fx.root / "eval").string()});
        REQUIRE_MESSAGE(all.code == exit_ok, all.err);
        CHECK(fs::exists(fx.root / "eval" / "metrics.json"));
        const std::string csv = slurp(fx.root / "eval" / "metrics.csv");
        for (const char* p : {"summary,full,", "summary,thermal_only,", "summary,rgb_only,"})
            CHECK(csv.find(p) != std::string::npos);

        // Without any rgb images, the thermal-only path still runs and the full path fails.
        const fs::path stripped = fx.root / "stripped";
        fs::copy(fx.data, stripped, fs::copy_options::recursive);
        for (const auto& e : fs::recursive_directory_iterator(stripped))
            if (e.path().filename() == "rgb.png")
                fs::remove(e.path());
        const Outcome th = invoke({"eval", "--data", stripped.string(), "--checkpoint", ckpt, "--path",
                                   "thermal-only", "--out", (fx.root / "eval_t").string()});
        REQUIRE_MESSAGE(th.code == exit_ok, th.err);
        const std::string th_csv = slurp(fx.root / "eval_t" / "metrics.csv");
        const auto line_of = [](const std::string& text, const std::string& prefix) {
            const auto at = text.find(prefix);
            return at == std::string::npos ? std::string{} : text.substr(at, text.find('\n', at) - at);
        };
        CHECK(line_of(th_csv, "summary,thermal_only,") == line_of(csv, "summary,thermal_only,"));
        CHECK(invoke({"eval", "--data", stripped.string(), "--checkpoint", ckpt, "--path", "full", "--out",
                      (fx.root / "eval_f").string()})
                  .code == exit_runtime);

        CHECK(invoke({"eval", "--data", fx.data.string(), "--checkpoint", ckpt, "--path", "sideways", "--out",
                      (fx.root / "eval_x").string()})
                  .code == exit_usage);
        CHECK(invoke({"eval", "--data", fx.data.string(), "--checkpoint", (fx.root / "none.ckpt").string(), "--out",
                      (fx.root / "eval_x").string()})
                  .code == exit_usage);

        const fs::path corrupt = fx.root / "corrupt.ckpt";
        fs::copy_file(run1 / "best.ckpt", corrupt);
        {
            std::fstream f(corrupt, std::ios::in | std::ios::out | std::ios::binary);
            f.seekp(std::streamoff(fs::file_size(corrupt) / 2));
            f.put('\x5a');
        }
        const Outcome bad = invoke({"eval", "--data", fx.data.string(), "--checkpoint", corrupt.string(), "--out",
                                    (fx.root / "eval_c").string()});
        CHECK(bad.code == exit_runtime);
        CHECK(bad.err.find("checksum") != std::string::npos);
    }

    SUBCASE("sweep")
    {
        const Outcome s = invoke({"--config", fx.config.string(), "sweep", "--data", fx.data.string(), "--betas",
                                  "0,0.1", "--out", (fx.root / "sweep").string()});
        REQUIRE_MESSAGE(s.code == exit_ok, s.err);
        CHECK(count_lines(fx.root / "sweep" / "sweep.csv") == 1 + 2 * 3 + 1);
        CHECK(fs::exists(fx.root / "sweep" / "curves.csv"));
        CHECK(fs::exists(fx.root / "sweep" / "beta_0.1" / "best.ckpt"));
    }
}
