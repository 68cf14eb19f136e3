#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/config.hpp"
#include "handeye/control.hpp"
#include "handeye/eval.hpp"
#include "handeye/finetune.hpp"
#include "handeye/nn.hpp"
#include "handeye/perception.hpp"
#include "handeye/render.hpp"
#include "handeye/rng.hpp"

namespace handeye::pipeline {

// Fixed artifact layout under the run's output directory.
struct Paths {
    std::string out;

    std::string dataset() const { return join("dataset.bin"); }
    std::string perception_ckpt() const { return join("checkpoints/perception.ckpt"); }
    std::string control_ckpt() const { return join("checkpoints/control.ckpt"); }
    std::string ft_perception_ckpt() const { return join("checkpoints/finetuned_perception.ckpt"); }
    std::string ft_control_ckpt() const { return join("checkpoints/finetuned_control.ckpt"); }
    std::string perception_curve() const { return join("logs/perception_curve.csv"); }
    std::string control_curve(int candidate) const {
        return join("logs/control_curve_s" + std::to_string(candidate) + ".csv");
    }
    std::string control_selection() const { return join("logs/control_selection.csv"); }
    std::string finetune_curve() const { return join("logs/finetune_curve.csv"); }
    std::string trials_csv(const std::string& variant) const {
        return join("reports/trials_" + variant + ".csv");
    }
    std::string summary_csv() const { return join("reports/summary.csv"); }
    std::string summary_json() const { return join("reports/summary.json"); }
    std::string comparison_csv() const { return join("reports/comparison.csv"); }
    std::string manifest() const { return join("manifest.json"); }

    std::string join(const std::string& rel) const {
        return (std::filesystem::path(out) / rel).string();
    }
};

// Per-stage RNG streams derived from the run seed.
inline constexpr std::uint64_t kDatasetStream = 1;
inline constexpr std::uint64_t kPerceptionStream = 101;
inline constexpr std::uint64_t kControlStreamBase = 201;
inline constexpr std::uint64_t kControlSelectStream = 280;
inline constexpr std::uint64_t kFinetuneStream = 301;
inline constexpr std::uint64_t kEvalStream = 401;

inline void ensure_parent_dirs(const Paths& p) {
    namespace fs = std::filesystem;
    fs::create_directories(p.out);
    fs::create_directories(fs::path(p.out) / "checkpoints");
    fs::create_directories(fs::path(p.out) / "logs");
    fs::create_directories(fs::path(p.out) / "reports");
}

inline bool exists(const std::string& path) { return std::filesystem::exists(path); }

inline void require_artifact(const std::string& path, const std::string& what,
                             const std::string& produced_by) {
    if (!exists(path))
        throw DataError(what + " not found at " + path + "; run `" + produced_by + "` first");
}

// --- gen-data --------------------------------------------------------------
// Deterministic given the config; an existing byte-identical file is left in
// place, a differing one is only replaced with force.
inline std::string stage_gen_data(const config::RunConfig& cfg, bool force) {
    Paths p{cfg.out};
    ensure_parent_dirs(p);
    const auto ds = vision::build_dataset(cfg.n_sim, cfg.n_pseudo_real,
                                          Rng::derive(cfg.seed, kDatasetStream), cfg.camera(),
                                          cfg.perturbation);
    const auto bytes = vision::serialize_dataset(ds);
    if (exists(p.dataset())) {
        auto r = ByteReader::from_file(p.dataset());
        std::vector<std::uint8_t> old(r.remaining());
        r.get_bytes(old.data(), old.size());
        if (old == bytes) return p.dataset();  // idempotent rerun
        if (!force)
            throw UsageError("dataset at " + p.dataset() +
                             " differs from this configuration; pass --force to overwrite");
    }
    ByteWriter w;
    w.put_bytes(bytes.data(), bytes.size());
    w.write_file(p.dataset());
    return p.dataset();
}

// --- train perception ------------------------------------------------------
inline std::string stage_train_perception(const config::RunConfig& cfg) {
    Paths p{cfg.out};
    ensure_parent_dirs(p);
    require_artifact(p.dataset(), "dataset", "gen-data");
    const auto ds = vision::load_dataset(p.dataset());
    auto pcfg = cfg.perception;
    pcfg.seed = Rng::derive(cfg.seed, kPerceptionStream);
    const auto res = perception::train_perception(ds, pcfg);
    nn::save_checkpoint(res.net, pcfg.seed, p.perception_ckpt());
    perception::save_curve_csv(res.curve, p.perception_curve());
    return p.perception_ckpt();
}

// --- train control ---------------------------------------------------------
// Trains `control_seeds` candidates and keeps the one with the best greedy
// mean accumulated reward; the selection table records every candidate.
inline std::string stage_train_control(const config::RunConfig& cfg) {
    Paths p{cfg.out};
    ensure_parent_dirs(p);
    if (cfg.control_seeds < 1) throw UsageError("control.seeds must be >= 1");
    const auto arm = sim::ArmModel{};
    const auto cam = cfg.camera();
    double best_rbar = -1.0;
    int best_k = -1;
    std::uint64_t best_seed = 0;
    nn::Network<float> best_net = control::make_control_net<float>();
    std::string selection = "candidate,seed,rbar,updates\n";
    for (int k = 0; k < cfg.control_seeds; ++k) {
        auto ccfg = cfg.control;
        ccfg.seed = Rng::derive(cfg.seed, kControlStreamBase + static_cast<std::uint64_t>(k));
        const auto res = control::train_control(ccfg, arm, cam);
        Rng eval_rng(Rng::derive(cfg.seed, kControlSelectStream + static_cast<std::uint64_t>(k)));
        const double rbar = control::greedy_rbar(res.net, arm, cam, 100, eval_rng);
        control::save_control_curve_csv(res.curve, p.control_curve(k));
        selection += std::to_string(k) + ',' + std::to_string(ccfg.seed) + ',' +
                     eval::format_double(rbar) + ',' + std::to_string(res.updates) + '\n';
        if (rbar > best_rbar) {
            best_rbar = rbar;
            best_k = k;
            best_seed = ccfg.seed;
            best_net = res.net;
        }
    }
    selection += "selected," + std::to_string(best_k) + ',' + eval::format_double(best_rbar) + ",\n";
    eval::save_text(selection, p.control_selection());
    nn::save_checkpoint(best_net, best_seed, p.control_ckpt());
    return p.control_ckpt();
}

// --- train finetune --------------------------------------------------------
inline std::pair<std::string, std::string> stage_train_finetune(const config::RunConfig& cfg) {
    Paths p{cfg.out};
    ensure_parent_dirs(p);
    require_artifact(p.dataset(), "dataset", "gen-data");
    require_artifact(p.perception_ckpt(), "perception checkpoint", "train perception");
    require_artifact(p.control_ckpt(), "control checkpoint", "train control");
    const auto ds = vision::load_dataset(p.dataset());
    tune::CombinedPolicy initial{nn::load_checkpoint(p.perception_ckpt()),
                                 nn::load_checkpoint(p.control_ckpt())};
    auto fcfg = cfg.finetune;
    fcfg.seed = Rng::derive(cfg.seed, kFinetuneStream);
    const auto res = tune::finetune(initial, ds, fcfg, sim::ArmModel{}, cfg.camera());
    if (res.aborted && res.best_step < 0)
        throw DivergenceError("fine-tuning diverged before any evaluation snapshot");
    nn::save_checkpoint(res.policy.perception, fcfg.seed, p.ft_perception_ckpt());
    nn::save_checkpoint(res.policy.control, fcfg.seed, p.ft_control_ckpt());
    tune::save_finetune_curve_csv(res.curve, p.finetune_curve());
    return {p.ft_perception_ckpt(), p.ft_control_ckpt()};
}

// --- eval ------------------------------------------------------------------
inline const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names{"initial", "finetuned", "cr"};
    return names;
}

inline std::string variant_label(const std::string& v) {
    if (v == "initial") return "Initial";
    if (v == "finetuned") return "Fine-tuned";
    return "CR";
}

inline sim::Policy variant_policy(const std::string& variant, const config::RunConfig& cfg,
                                  std::vector<nn::Network<float>>& keep_alive) {
    Paths p{cfg.out};
    const auto cam = cfg.camera();
    const auto arm = sim::ArmModel{};
    if (variant == "initial" || variant == "finetuned") {
        const bool ft = variant == "finetuned";
        const auto pp = ft ? p.ft_perception_ckpt() : p.perception_ckpt();
        const auto cp = ft ? p.ft_control_ckpt() : p.control_ckpt();
        require_artifact(pp, "perception checkpoint", ft ? "train finetune" : "train perception");
        require_artifact(cp, "control checkpoint", ft ? "train finetune" : "train control");
        keep_alive.push_back(nn::load_checkpoint(pp));
        auto& pnet = keep_alive.back();
        keep_alive.push_back(nn::load_checkpoint(cp));
        auto& cnet = keep_alive.back();
        return [&pnet, &cnet, cam, arm](const sim::SceneState& s) {
            vision::ImageFrame f = vision::render(s, cam, arm);
            for (auto& px : f.px) px = vision::pixel_to_float(vision::quantize_pixel(px));
            return control::greedy_action(
                tune::combined_q(pnet, cnet, perception::frame_tensor<float>(f)));
        };
    }
    if (variant == "cr") {
        require_artifact(p.control_ckpt(), "control checkpoint", "train control");
        keep_alive.push_back(nn::load_checkpoint(p.control_ckpt()));
        auto& cnet = keep_alive.back();
        return control::make_greedy_policy(cnet, cam, arm);
    }
    std::string valid;
    for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw UsageError("unknown variant '" + variant + "'; valid names: " + valid);
}

struct EvalOutcome {
    std::vector<std::pair<std::string, eval::CampaignSummary>> summaries;  // (label, summary)
    int failed_trials = 0;
};

// Shared-seed campaigns per requested variant, reported in the fixed
// Initial / Fine-tuned / CR order.
inline EvalOutcome stage_eval(const config::RunConfig& cfg, std::vector<std::string> variants) {
    Paths p{cfg.out};
    ensure_parent_dirs(p);
    if (variants.empty()) variants = variant_names();
    // Canonical report order regardless of request order; duplicates dropped.
    std::vector<std::string> ordered;
    for (const auto& canon : variant_names())
        for (const auto& v : variants)
            if (v == canon && std::find(ordered.begin(), ordered.end(), v) == ordered.end())
                ordered.push_back(v);
    for (const auto& v : variants)
        if (std::find(ordered.begin(), ordered.end(), v) == ordered.end()) {
            std::vector<nn::Network<float>> tmp;
            variant_policy(v, cfg, tmp);  // throws the usage error naming valid variants
        }

    const std::uint64_t campaign_seed = Rng::derive(cfg.seed, kEvalStream);
    EvalOutcome out;
    for (const auto& v : ordered) {
        std::vector<nn::Network<float>> keep_alive;
        const auto policy = variant_policy(v, cfg, keep_alive);
        const auto reports = eval::run_campaign(policy, cfg.eval_trials, campaign_seed,
                                                sim::ArmModel{}, cfg.camera());
        eval::save_text(eval::raw_csv(reports), p.trials_csv(v));
        const auto summary = eval::summarize(reports);
        out.failed_trials += summary.failed;
        out.summaries.emplace_back(variant_label(v), summary);
    }
    eval::save_text(eval::summary_csv(out.summaries), p.summary_csv());
    eval::save_text(eval::summary_json(out.summaries), p.summary_json());
    if (out.summaries.size() > 1) {
        std::string cmp = "baseline,candidate,d_med_decrease_pct,rbar_increase_pct\n";
        for (std::size_t i = 0; i < out.summaries.size(); ++i)
            for (std::size_t j = i + 1; j < out.summaries.size(); ++j) {
                const auto c = eval::compare(out.summaries[i].second, out.summaries[j].second);
                cmp += out.summaries[i].first + ',' + out.summaries[j].first + ',' +
                       (c.d_med_decrease_pct ? eval::format_double(*c.d_med_decrease_pct) : "") +
                       ',' + (c.rbar_increase_pct ? eval::format_double(*c.rbar_increase_pct) : "") +
                       '\n';
            }
        eval::save_text(cmp, p.comparison_csv());
    }
    return out;
}

// --- manifest --------------------------------------------------------------
// Records the effective config hash, the seed, and a checksum for every
// artifact present, which pins a run for byte-identical reproduction.
inline void write_manifest(const config::RunConfig& cfg) {
    Paths p{cfg.out};
    std::vector<std::pair<std::string, std::string>> artifacts;
    auto add = [&](const std::string& path) {
        if (exists(path))
            artifacts.emplace_back(std::filesystem::path(path).lexically_relative(p.out).string(),
                                   std::to_string(file_checksum(path)));
    };
    add(p.dataset());
    add(p.perception_ckpt());
    add(p.control_ckpt());
    add(p.ft_perception_ckpt());
    add(p.ft_control_ckpt());
    add(p.perception_curve());
    add(p.control_selection());
    add(p.finetune_curve());
    for (int k = 0; k < cfg.control_seeds; ++k) add(p.control_curve(k));
    for (const auto& v : variant_names()) add(p.trials_csv(v));
    add(p.summary_csv());
    add(p.summary_json());
    add(p.comparison_csv());

    std::string j = "{\n";
    j += "  \"config_hash\": \"" + std::to_string(config::config_hash(cfg)) + "\",\n";
    j += "  \"seed\": " + std::to_string(cfg.seed) + ",\n";
    j += "  \"artifacts\": {\n";
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
        j += "    \"" + eval::json_escape(artifacts[i].first) + "\": " + artifacts[i].second;
        j += i + 1 < artifacts.size() ? ",\n" : "\n";
    }
    j += "  }\n}\n";
    eval::save_text(j, p.manifest());
}

}  // namespace handeye::pipeline
