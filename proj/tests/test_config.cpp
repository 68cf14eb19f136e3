#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include <filesystem>

#include "handeye/config.hpp"
#include "handeye/eval.hpp"

using namespace handeye;
using namespace handeye::config;

TEST_CASE("defaults carry the published hyperparameters") {
    const RunConfig c;
    CHECK(c.finetune.beta == doctest::Approx(0.8));
    CHECK(c.finetune.task_batch == 64);
    CHECK(c.finetune.perception_batch == 256);
    CHECK(c.finetune.real_fraction == doctest::Approx(0.75));
    CHECK(c.finetune.eps == doctest::Approx(0.1));
    CHECK(c.control.eps == doctest::Approx(0.1));
    CHECK(c.control.gamma == doctest::Approx(0.9));
    CHECK(c.n_pseudo_real == 1418);
    CHECK(c.eval_trials == 400);
    CHECK(c.perception.batch_size == 256);
    CHECK(c.perception.real_fraction == doctest::Approx(0.75));
    CHECK(c.control_seeds == 3);
}

TEST_CASE("parse: grammar basics") {
    const std::string text =
        "# comment\n"
        "; alt comment\n"
        "\n"
        "[run]\n"
        "seed = 42\n"
        "out = /tmp/xyz\n"
        "[control]\n"
        "  total_steps =  1234  \n";
    const auto c = parse_config(text);
    CHECK(c.seed == 42);
    CHECK(c.out == "/tmp/xyz");
    CHECK(c.control.total_steps == 1234);
    // Untouched keys keep defaults.
    CHECK(c.finetune.beta == doctest::Approx(0.8));
}

TEST_CASE("parse: errors carry line numbers and key names") {
    CHECK_THROWS_WITH_AS(parse_config("[nope]\nkey = 1\n"), doctest::Contains("unknown key"),
                         UsageError);
    CHECK_THROWS_WITH_AS(parse_config("[run]\nbogus = 1\n"), doctest::Contains("run.bogus"),
                         UsageError);
    CHECK_THROWS_WITH_AS(parse_config("seed = 1\n"), doctest::Contains("outside a section"),
                         UsageError);
    CHECK_THROWS_WITH_AS(parse_config("[run]\nseed\n"), doctest::Contains("expected key = value"),
                         UsageError);
    CHECK_THROWS_WITH_AS(parse_config("[run\nseed = 1\n"), doctest::Contains("malformed section"),
                         UsageError);
    CHECK_THROWS_WITH_AS(parse_config("[run]\nseed = abc\n"),
                         doctest::Contains("expects an unsigned integer"), UsageError);
    CHECK_THROWS_WITH_AS(parse_config("[finetune]\nbeta = squirrel\n"),
                         doctest::Contains("expects a number"), UsageError);
}

TEST_CASE("round trip: parse(serialize(c)) == c for a perturbed config") {
    RunConfig c;
    c.seed = 7;
    c.out = "runs/exp9";
    c.camera_center_x = 0.125;
    c.perturbation.noise_sigma = 0.03125;
    c.n_sim = 100;
    c.perception.steps = 17;
    c.perception.lr_start = 0.7071067811865476;
    c.control.total_steps = 55555;
    c.control.gamma = 0.875;
    c.control_seeds = 2;
    c.finetune.beta = 0.6;
    c.finetune.steps = 9;
    c.eval_trials = 25;
    const auto text = serialize_config(c);
    const auto back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.seed == c.seed);
    CHECK(back.out == c.out);
    CHECK(back.camera_center_x == c.camera_center_x);
    CHECK(back.perturbation.noise_sigma == c.perturbation.noise_sigma);
    CHECK(back.perception.lr_start == c.perception.lr_start);
    CHECK(back.control.total_steps == c.control.total_steps);
    CHECK(back.control_seeds == c.control_seeds);
    CHECK(back.finetune.beta == c.finetune.beta);
    CHECK(back.eval_trials == c.eval_trials);
}

TEST_CASE("round trip: default config is a fixed point") {
    const RunConfig c;
    const auto text = serialize_config(c);
    CHECK(serialize_config(parse_config(text)) == text);
}

TEST_CASE("config_hash: stable under round trip, sensitive to changes") {
    const RunConfig a;
    RunConfig b;
    const auto ha = config_hash(a);
    CHECK(ha == config_hash(parse_config(serialize_config(a))));
    CHECK(ha == config_hash(b));
    b.seed = 1;
    CHECK(config_hash(b) != ha);
    RunConfig c;
    c.finetune.beta = 0.79999999;
    CHECK(config_hash(c) != ha);
}

TEST_CASE("environment overrides") {
    RunConfig c;
    std::vector<std::string> storage{
        "HANDEYE_RUN_SEED=99",
        "HANDEYE_CONTROL_TOTAL_STEPS=777",
        "HANDEYE_PERCEPTION_LR_START=0.5",
        "HANDEYE_FINETUNE_REAL_FRACTION=0.75",
        "PATH=/usr/bin",   // ignored: no prefix
        "HANDEYEX_FOO=1",  // ignored: prefix must be followed by SECTION_KEY
    };
    std::vector<char*> envp;
    for (auto& s : storage) envp.push_back(s.data());
    envp.push_back(nullptr);
    apply_env_overrides(c, envp.data());
    CHECK(c.seed == 99);
    CHECK(c.control.total_steps == 777);
    CHECK(c.perception.lr_start == doctest::Approx(0.5));

    std::vector<std::string> bad{"HANDEYE_CONTROL_NOPE=3"};
    std::vector<char*> benvp{bad[0].data(), nullptr};
    RunConfig d;
    CHECK_THROWS_WITH_AS(apply_env_overrides(d, benvp.data()),
                         doctest::Contains("unknown key"), UsageError);
}

TEST_CASE("load_config reads files and surfaces IO failures") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "handeye_config_test";
    fs::create_directories(dir);
    const auto path = (dir / "run.ini").string();
    {
        RunConfig c;
        c.seed = 31;
        eval::save_text(serialize_config(c), path);
    }
    const auto c = load_config(path);
    CHECK(c.seed == 31);
    CHECK_THROWS_AS(load_config((dir / "missing.ini").string()), DataError);
    fs::remove_all(dir);
}
