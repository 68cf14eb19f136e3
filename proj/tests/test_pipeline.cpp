#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "handeye/pipeline.hpp"

using namespace handeye;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A configuration small enough for an end-to-end smoke run in seconds.
config::RunConfig tiny_config(const std::string& out) {
    config::RunConfig c;
    c.seed = 5;
    c.out = out;
    c.n_sim = 6;
    c.n_pseudo_real = 40;
    c.perception.steps = 3;
    c.perception.batch_size = 8;
    c.perception.real_fraction = 0.75;
    c.perception.log_every = 1;
    c.control.total_steps = 400;
    c.control.warmup = 50;
    c.control.batch_size = 16;
    c.control.target_sync = 50;
    c.control.eval_every = 200;
    c.control.eval_episodes = 2;
    c.control.log_every = 100;
    c.control_seeds = 2;
    c.finetune.steps = 3;
    c.finetune.task_batch = 4;
    c.finetune.perception_batch = 16;
    c.finetune.warmup = 8;
    c.finetune.replay_capacity = 64;
    c.finetune.target_sync = 2;
    c.finetune.eval_every = 2;
    c.finetune.eval_episodes = 1;
    c.finetune.log_every = 1;
    c.eval_trials = 3;
    return c;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("paths: fixed artifact layout under the output directory") {
    pipeline::Paths p{"/runs/x"};
    CHECK(p.dataset() == "/runs/x/dataset.bin");
    CHECK(p.perception_ckpt() == "/runs/x/checkpoints/perception.ckpt");
    CHECK(p.control_curve(2) == "/runs/x/logs/control_curve_s2.csv");
    CHECK(p.trials_csv("cr") == "/runs/x/reports/trials_cr.csv");
    CHECK(p.manifest() == "/runs/x/manifest.json");
}

TEST_CASE("require_artifact names the producing command") {
    CHECK_THROWS_WITH_AS(
        pipeline::require_artifact("/nonexistent/ds.bin", "dataset", "gen-data"),
        doctest::Contains("run `gen-data` first"), DataError);
}

TEST_CASE("gen-data: idempotent, refuses silent overwrite, force replaces") {
    TempDir tmp("handeye_pipe_gendata");
    auto cfg = tiny_config((tmp.path / "run").string());
    const auto path = pipeline::stage_gen_data(cfg, false);
    REQUIRE(fs::exists(path));
    const auto bytes1 = slurp(path);

    // Re-run, same config: byte-identical, no error.
    CHECK(pipeline::stage_gen_data(cfg, false) == path);
    CHECK(slurp(path) == bytes1);

    // Changed config: refuses without force, replaces with force.
    auto cfg2 = cfg;
    cfg2.seed = 6;
    CHECK_THROWS_WITH_AS(pipeline::stage_gen_data(cfg2, false), doctest::Contains("--force"),
                         UsageError);
    CHECK(slurp(path) == bytes1);
    pipeline::stage_gen_data(cfg2, true);
    CHECK(slurp(path) != bytes1);
}

TEST_CASE("training stages demand their prerequisites") {
    TempDir tmp("handeye_pipe_prereq");
    auto cfg = tiny_config((tmp.path / "run").string());
    CHECK_THROWS_WITH_AS(pipeline::stage_train_perception(cfg), doctest::Contains("gen-data"),
                         DataError);
    pipeline::stage_gen_data(cfg, false);
    CHECK_THROWS_WITH_AS(pipeline::stage_train_finetune(cfg),
                         doctest::Contains("train perception"), DataError);
    pipeline::stage_train_perception(cfg);
    CHECK_THROWS_WITH_AS(pipeline::stage_train_finetune(cfg), doctest::Contains("train control"),
                         DataError);
}

TEST_CASE("variant_policy: unknown name lists the valid ones") {
    TempDir tmp("handeye_pipe_variant");
    auto cfg = tiny_config((tmp.path / "run").string());
    std::vector<nn::Network<float>> keep;
    CHECK_THROWS_WITH_AS(pipeline::variant_policy("bogus", cfg, keep),
                         doctest::Contains("initial, finetuned, cr"), UsageError);
}

TEST_CASE("end-to-end smoke: all stages, reports, manifest, determinism") {
    TempDir tmp("handeye_pipe_e2e");
    auto cfg = tiny_config((tmp.path / "runA").string());

    pipeline::stage_gen_data(cfg, false);
    pipeline::stage_train_perception(cfg);
    pipeline::stage_train_control(cfg);
    pipeline::stage_train_finetune(cfg);
    const auto outcome = pipeline::stage_eval(cfg, {});
    pipeline::write_manifest(cfg);

    pipeline::Paths p{cfg.out};
    for (const auto& path :
         {p.dataset(), p.perception_ckpt(), p.control_ckpt(), p.ft_perception_ckpt(),
          p.ft_control_ckpt(), p.perception_curve(), p.control_selection(), p.finetune_curve(),
          p.summary_csv(), p.summary_json(), p.comparison_csv(), p.manifest()})
        CHECK(fs::exists(path));
    CHECK(fs::exists(p.control_curve(0)));
    CHECK(fs::exists(p.control_curve(1)));

    REQUIRE(outcome.summaries.size() == 3);
    CHECK(outcome.summaries[0].first == "Initial");
    CHECK(outcome.summaries[1].first == "Fine-tuned");
    CHECK(outcome.summaries[2].first == "CR");
    CHECK(outcome.failed_trials == 0);

    // Summary CSV row order mirrors the canonical variant order.
    const auto rows = eval::parse_summary_csv(slurp(p.summary_csv()));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].first == "Initial");
    CHECK(rows[2].first == "CR");

    // Manifest: valid-looking JSON with a checksum per artifact.
    const auto manifest = slurp(p.manifest());
    CHECK(manifest.find("\"config_hash\"") != std::string::npos);
    CHECK(manifest.find("\"seed\": 5") != std::string::npos);
    CHECK(manifest.find("dataset.bin") != std::string::npos);
    CHECK(manifest.find("checkpoints/perception.ckpt") != std::string::npos);

    // Same config in a fresh directory: byte-identical checkpoints + reports.
    auto cfgB = cfg;
    cfgB.out = (tmp.path / "runB").string();
    pipeline::stage_gen_data(cfgB, false);
    pipeline::stage_train_perception(cfgB);
    pipeline::stage_train_control(cfgB);
    pipeline::stage_train_finetune(cfgB);
    pipeline::stage_eval(cfgB, {});
    pipeline::Paths pb{cfgB.out};
    CHECK(slurp(p.dataset()) == slurp(pb.dataset()));
    CHECK(slurp(p.perception_ckpt()) == slurp(pb.perception_ckpt()));
    CHECK(slurp(p.control_ckpt()) == slurp(pb.control_ckpt()));
    CHECK(slurp(p.ft_perception_ckpt()) == slurp(pb.ft_perception_ckpt()));
    CHECK(slurp(p.ft_control_ckpt()) == slurp(pb.ft_control_ckpt()));
    CHECK(slurp(p.summary_csv()) == slurp(pb.summary_csv()));
    CHECK(slurp(p.trials_csv("initial")) == slurp(pb.trials_csv("initial")));
}

TEST_CASE("stage_eval: single-variant subset writes no comparison") {
    TempDir tmp("handeye_pipe_single");
    auto cfg = tiny_config((tmp.path / "run").string());
    pipeline::stage_gen_data(cfg, false);
    // CR only needs the control checkpoint.
    pipeline::stage_train_control(cfg);
    const auto outcome = pipeline::stage_eval(cfg, {"cr"});
    REQUIRE(outcome.summaries.size() == 1);
    CHECK(outcome.summaries[0].first == "CR");
    pipeline::Paths p{cfg.out};
    CHECK(fs::exists(p.trials_csv("cr")));
    CHECK(fs::exists(p.summary_csv()));
    CHECK_FALSE(fs::exists(p.comparison_csv()));
    // Unknown variants inside a request list are rejected up front.
    CHECK_THROWS_AS(pipeline::stage_eval(cfg, {"cr", "nope"}), UsageError);
}
