// handeye: dataset generation, module training, end-to-end fine-tuning, and
// evaluation campaigns for the modular hand-eye reaching stack.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "handeye/config.hpp"
#include "handeye/pipeline.hpp"

namespace {

using namespace handeye;

constexpr const char* kUsage = R"(usage: handeye <command> [options]

commands:
  gen-data              build the perception dataset (sim + pseudo-real)
  train <stage>         train one stage: perception | control | finetune
  eval                  run evaluation campaigns and write reports
  pipeline              gen-data + all training stages + eval

options:
  --config <path>       load a config file (sectioned key = value text)
  --seed <uint>         override [run] seed
  --out <dir>           override [run] out (artifact directory)
  --variants <list>     eval only: comma-separated subset of initial,finetuned,cr
  --force               allow gen-data to replace a differing dataset file
  --help                show this message

Environment variables HANDEYE_<SECTION>_<KEY> override config keys (applied
after the file, before flags), e.g. HANDEYE_EVAL_TRIALS=100.

exit codes: 0 ok, 1 usage error, 2 data error, 3 divergence)";

struct CliArgs {
    std::string command;
    std::string stage;
    std::string config_path;
    std::vector<std::string> variants;
    bool force = false;
    bool has_seed = false;
    std::uint64_t seed = 0;
    std::string out;
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto end = comma == std::string::npos ? s.size() : comma;
        if (end > start) out.push_back(s.substr(start, end - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

CliArgs parse_args(int argc, char** argv) {
    CliArgs a;
    std::vector<std::string> args(argv + 1, argv + argc);
    std::size_t i = 0;
    auto need_value = [&](const std::string& flag) -> std::string {
        if (i + 1 >= args.size()) throw UsageError(flag + " requires a value");
        return args[++i];
    };
    for (; i < args.size(); ++i) {
        const std::string& s = args[i];
        if (s == "--help" || s == "-h") {
            std::puts(kUsage);
            std::exit(0);
        } else if (s == "--config") {
            a.config_path = need_value(s);
        } else if (s == "--seed") {
            a.seed = config::detail::parse_u64("--seed", need_value(s));
            a.has_seed = true;
        } else if (s == "--out") {
            a.out = need_value(s);
        } else if (s == "--variants") {
            a.variants = split_csv(need_value(s));
        } else if (s == "--force") {
            a.force = true;
        } else if (!s.empty() && s[0] == '-') {
            throw UsageError("unknown option '" + s + "' (see --help)");
        } else if (a.command.empty()) {
            a.command = s;
        } else if (a.command == "train" && a.stage.empty()) {
            a.stage = s;
        } else {
            throw UsageError("unexpected argument '" + s + "' (see --help)");
        }
    }
    if (a.command.empty()) throw UsageError("missing command (see --help)");
    return a;
}

extern "C" char** environ;

int run(int argc, char** argv) {
    const CliArgs a = parse_args(argc, argv);
    config::RunConfig cfg;
    if (!a.config_path.empty()) cfg = config::load_config(a.config_path);
    config::apply_env_overrides(cfg, environ);
    if (a.has_seed) cfg.seed = a.seed;
    if (!a.out.empty()) cfg.out = a.out;

    if (a.command == "gen-data") {
        const auto path = pipeline::stage_gen_data(cfg, a.force);
        pipeline::write_manifest(cfg);
        std::printf("dataset: %s (checksum %llu)\n", path.c_str(),
                    static_cast<unsigned long long>(file_checksum(path)));
    } else if (a.command == "train") {
        if (a.stage == "perception") {
            const auto path = pipeline::stage_train_perception(cfg);
            std::printf("perception checkpoint: %s\n", path.c_str());
        } else if (a.stage == "control") {
            const auto path = pipeline::stage_train_control(cfg);
            std::printf("control checkpoint: %s\n", path.c_str());
        } else if (a.stage == "finetune") {
            const auto [pp, cp] = pipeline::stage_train_finetune(cfg);
            std::printf("fine-tuned checkpoints: %s, %s\n", pp.c_str(), cp.c_str());
        } else {
            throw UsageError("train expects a stage: perception | control | finetune");
        }
        pipeline::write_manifest(cfg);
    } else if (a.command == "eval") {
        const auto outcome = pipeline::stage_eval(cfg, a.variants);
        pipeline::write_manifest(cfg);
        for (const auto& [name, s] : outcome.summaries)
            std::printf("%-10s  d_med %.3f cm (%.3f px)  d_q3 %.3f cm  rbar %.3f\n", name.c_str(),
                        s.d_med_cm, s.d_med_px, s.d_q3_cm, s.rbar);
        if (outcome.failed_trials > 0) {
            std::fprintf(stderr, "%d trial(s) failed\n", outcome.failed_trials);
            return 2;
        }
    } else if (a.command == "pipeline") {
        pipeline::stage_gen_data(cfg, a.force);
        pipeline::write_manifest(cfg);
        std::puts("[1/5] dataset ready");
        pipeline::stage_train_perception(cfg);
        pipeline::write_manifest(cfg);
        std::puts("[2/5] perception trained");
        pipeline::stage_train_control(cfg);
        pipeline::write_manifest(cfg);
        std::puts("[3/5] control trained");
        pipeline::stage_train_finetune(cfg);
        pipeline::write_manifest(cfg);
        std::puts("[4/5] fine-tuned");
        const auto outcome = pipeline::stage_eval(cfg, {});
        pipeline::write_manifest(cfg);
        std::puts("[5/5] evaluated");
        for (const auto& [name, s] : outcome.summaries)
            std::printf("%-10s  d_med %.3f cm (%.3f px)  d_q3 %.3f cm  rbar %.3f\n", name.c_str(),
                        s.d_med_cm, s.d_med_px, s.d_q3_cm, s.rbar);
        if (outcome.failed_trials > 0) {
            std::fprintf(stderr, "%d trial(s) failed\n", outcome.failed_trials);
            return 2;
        }
    } else {
        throw UsageError("unknown command '" + a.command + "' (see --help)");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const handeye::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const handeye::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const handeye::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
