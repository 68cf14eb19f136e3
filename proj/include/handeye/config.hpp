#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/control.hpp"
#include "handeye/finetune.hpp"
#include "handeye/perception.hpp"
#include "handeye/render.hpp"

namespace handeye::config {

// Whole-run configuration, grouped to mirror the pipeline stages. Per-module
// RNG seeds are not configuration: every stage derives its own streams from
// [run] seed.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "runs/default";

    double camera_center_x = 0.0;
    double camera_center_y = 0.0;

    vision::PerturbationSpec perturbation{};

    int n_sim = 1418;
    int n_pseudo_real = 1418;

    perception::PerceptionTrainConfig perception{};
    control::QLearningConfig control{};
    int control_seeds = 3;
    tune::FinetuneConfig finetune{};

    int eval_trials = 400;

    vision::Camera camera() const { return vision::Camera{{camera_center_x, camera_center_y}}; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw UsageError("config: key '" + key + "' expects a number, got '" + v + "'");
    return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw UsageError("config: key '" + key + "' expects an integer, got '" + v + "'");
    return x;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos)
        throw UsageError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    return x;
}

// One settable leaf: applies a textual value to a RunConfig.
using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["run.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.seed = parse_u64(k, v);
        };
        t["run.out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; };
        t["camera.center_x"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.camera_center_x = parse_double(k, v);
        };
        t["camera.center_y"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.camera_center_y = parse_double(k, v);
        };
        t["perturbation.noise_sigma"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perturbation.noise_sigma = parse_double(k, v);
        };
        t["perturbation.brightness_range"] = [](RunConfig& c, const std::string& k,
                                                const std::string& v) {
            c.perturbation.brightness_range = parse_double(k, v);
        };
        t["perturbation.thickness_delta"] = [](RunConfig& c, const std::string& k,
                                               const std::string& v) {
            c.perturbation.thickness_delta = static_cast<int>(parse_int(k, v));
        };
        t["perturbation.translation_px"] = [](RunConfig& c, const std::string& k,
                                              const std::string& v) {
            c.perturbation.translation_px = static_cast<int>(parse_int(k, v));
        };
        t["dataset.n_sim"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.n_sim = static_cast<int>(parse_int(k, v));
        };
        t["dataset.n_pseudo_real"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.n_pseudo_real = static_cast<int>(parse_int(k, v));
        };
        t["perception.steps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.steps = static_cast<int>(parse_int(k, v));
        };
        t["perception.batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.batch_size = static_cast<int>(parse_int(k, v));
        };
        t["perception.real_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.real_fraction = parse_double(k, v);
        };
        t["perception.lr_start"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.lr_start = parse_double(k, v);
        };
        t["perception.lr_end"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.lr_end = parse_double(k, v);
        };
        t["perception.val_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.val_fraction = parse_double(k, v);
        };
        t["perception.log_every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.perception.log_every = static_cast<int>(parse_int(k, v));
        };
        t["control.total_steps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.total_steps = static_cast<long>(parse_int(k, v));
        };
        t["control.batch_size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.batch_size = static_cast<int>(parse_int(k, v));
        };
        t["control.gamma"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.gamma = parse_double(k, v);
        };
        t["control.eps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.eps = parse_double(k, v);
        };
        t["control.lr_start"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.lr_start = parse_double(k, v);
        };
        t["control.lr_end"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.lr_end = parse_double(k, v);
        };
        t["control.target_sync"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.target_sync = static_cast<int>(parse_int(k, v));
        };
        t["control.replay_capacity"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.replay_capacity = static_cast<std::size_t>(parse_int(k, v));
        };
        t["control.warmup"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.warmup = static_cast<int>(parse_int(k, v));
        };
        t["control.log_every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.log_every = static_cast<long>(parse_int(k, v));
        };
        t["control.eval_every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.eval_every = static_cast<long>(parse_int(k, v));
        };
        t["control.eval_episodes"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control.eval_episodes = static_cast<int>(parse_int(k, v));
        };
        t["control.seeds"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.control_seeds = static_cast<int>(parse_int(k, v));
        };
        t["finetune.steps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.steps = static_cast<int>(parse_int(k, v));
        };
        t["finetune.beta"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.beta = parse_double(k, v);
        };
        t["finetune.task_batch"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.task_batch = static_cast<int>(parse_int(k, v));
        };
        t["finetune.perception_batch"] = [](RunConfig& c, const std::string& k,
                                            const std::string& v) {
            c.finetune.perception_batch = static_cast<int>(parse_int(k, v));
        };
        t["finetune.real_fraction"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.real_fraction = parse_double(k, v);
        };
        t["finetune.gamma"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.gamma = parse_double(k, v);
        };
        t["finetune.eps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.eps = parse_double(k, v);
        };
        t["finetune.lr_start"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.lr_start = parse_double(k, v);
        };
        t["finetune.lr_end"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.lr_end = parse_double(k, v);
        };
        t["finetune.warmup"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.warmup = static_cast<int>(parse_int(k, v));
        };
        t["finetune.replay_capacity"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.replay_capacity = static_cast<std::size_t>(parse_int(k, v));
        };
        t["finetune.target_sync"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.target_sync = static_cast<int>(parse_int(k, v));
        };
        t["finetune.eval_every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.eval_every = static_cast<int>(parse_int(k, v));
        };
        t["finetune.eval_episodes"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.eval_episodes = static_cast<int>(parse_int(k, v));
        };
        t["finetune.log_every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.finetune.log_every = static_cast<int>(parse_int(k, v));
        };
        t["eval.trials"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.eval_trials = static_cast<int>(parse_int(k, v));
        };
        return t;
    }();
    return table;
}

inline void apply(RunConfig& cfg, const std::string& section, const std::string& key,
                  const std::string& value) {
    const std::string full = section + "." + key;
    const auto& t = setters();
    const auto it = t.find(full);
    if (it == t.end()) throw UsageError("config: unknown key '" + full + "'");
    it->second(cfg, full, value);
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Sectioned key-value text: blank lines and lines starting with '#' or ';'
// are ignored; '[name]' opens a section; 'key = value' assigns. Unknown
// sections or keys are usage errors.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']' || s.size() < 3)
                throw UsageError("config line " + std::to_string(lineno) + ": malformed section");
            section = detail::trim(s.substr(1, s.size() - 2));
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw UsageError("config line " + std::to_string(lineno) + ": key outside a section");
        detail::apply(cfg, section, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    auto reader = ByteReader::from_file(path);
    std::string text(reader.remaining(), '\0');
    reader.get_bytes(text.data(), text.size());
    return parse_config(text);
}

// Canonical text form: every key in a fixed order, doubles at full precision,
// so parse(serialize(c)) reproduces c exactly.
inline std::string serialize_config(const RunConfig& c) {
    using detail::fmt;
    std::string o;
    o += "[run]\n";
    o += "seed = " + std::to_string(c.seed) + "\n";
    o += "out = " + c.out + "\n\n";
    o += "[camera]\n";
    o += "center_x = " + fmt(c.camera_center_x) + "\n";
    o += "center_y = " + fmt(c.camera_center_y) + "\n\n";
    o += "[perturbation]\n";
    o += "noise_sigma = " + fmt(c.perturbation.noise_sigma) + "\n";
    o += "brightness_range = " + fmt(c.perturbation.brightness_range) + "\n";
    o += "thickness_delta = " + std::to_string(c.perturbation.thickness_delta) + "\n";
    o += "translation_px = " + std::to_string(c.perturbation.translation_px) + "\n\n";
    o += "[dataset]\n";
    o += "n_sim = " + std::to_string(c.n_sim) + "\n";
    o += "n_pseudo_real = " + std::to_string(c.n_pseudo_real) + "\n\n";
    o += "[perception]\n";
    o += "steps = " + std::to_string(c.perception.steps) + "\n";
    o += "batch_size = " + std::to_string(c.perception.batch_size) + "\n";
    o += "real_fraction = " + fmt(c.perception.real_fraction) + "\n";
    o += "lr_start = " + fmt(c.perception.lr_start) + "\n";
    o += "lr_end = " + fmt(c.perception.lr_end) + "\n";
    o += "val_fraction = " + fmt(c.perception.val_fraction) + "\n";
    o += "log_every = " + std::to_string(c.perception.log_every) + "\n\n";
    o += "[control]\n";
    o += "total_steps = " + std::to_string(c.control.total_steps) + "\n";
    o += "batch_size = " + std::to_string(c.control.batch_size) + "\n";
    o += "gamma = " + fmt(c.control.gamma) + "\n";
    o += "eps = " + fmt(c.control.eps) + "\n";
    o += "lr_start = " + fmt(c.control.lr_start) + "\n";
    o += "lr_end = " + fmt(c.control.lr_end) + "\n";
    o += "target_sync = " + std::to_string(c.control.target_sync) + "\n";
    o += "replay_capacity = " + std::to_string(c.control.replay_capacity) + "\n";
    o += "warmup = " + std::to_string(c.control.warmup) + "\n";
    o += "log_every = " + std::to_string(c.control.log_every) + "\n";
    o += "eval_every = " + std::to_string(c.control.eval_every) + "\n";
    o += "eval_episodes = " + std::to_string(c.control.eval_episodes) + "\n";
    o += "seeds = " + std::to_string(c.control_seeds) + "\n\n";
    o += "[finetune]\n";
    o += "steps = " + std::to_string(c.finetune.steps) + "\n";
    o += "beta = " + fmt(c.finetune.beta) + "\n";
    o += "task_batch = " + std::to_string(c.finetune.task_batch) + "\n";
    o += "perception_batch = " + std::to_string(c.finetune.perception_batch) + "\n";
    o += "real_fraction = " + fmt(c.finetune.real_fraction) + "\n";
    o += "gamma = " + fmt(c.finetune.gamma) + "\n";
    o += "eps = " + fmt(c.finetune.eps) + "\n";
    o += "lr_start = " + fmt(c.finetune.lr_start) + "\n";
    o += "lr_end = " + fmt(c.finetune.lr_end) + "\n";
    o += "warmup = " + std::to_string(c.finetune.warmup) + "\n";
    o += "replay_capacity = " + std::to_string(c.finetune.replay_capacity) + "\n";
    o += "target_sync = " + std::to_string(c.finetune.target_sync) + "\n";
    o += "eval_every = " + std::to_string(c.finetune.eval_every) + "\n";
    o += "eval_episodes = " + std::to_string(c.finetune.eval_episodes) + "\n";
    o += "log_every = " + std::to_string(c.finetune.log_every) + "\n\n";
    o += "[eval]\n";
    o += "trials = " + std::to_string(c.eval_trials) + "\n";
    return o;
}

inline std::uint64_t config_hash(const RunConfig& c) {
    const std::string s = serialize_config(c);
    return fnv1a(s.data(), s.size());
}

// Environment overrides: HANDEYE_<SECTION>_<KEY> (upper case; the first
// underscore after the section separates section from key). Applied after the
// config file, before command-line flags.
inline void apply_env_overrides(RunConfig& cfg, char** envp) {
    static const char* kPrefix = "HANDEYE_";
    for (char** e = envp; e && *e; ++e) {
        const std::string entry(*e);
        if (entry.rfind(kPrefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        const std::string name = entry.substr(8, eq - 8);
        const std::string value = entry.substr(eq + 1);
        const auto us = name.find('_');
        if (us == std::string::npos)
            throw UsageError("env override " + entry.substr(0, eq) + ": expected HANDEYE_SECTION_KEY");
        auto lower = [](std::string s) {
            for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            return s;
        };
        detail::apply(cfg, lower(name.substr(0, us)), lower(name.substr(us + 1)), value);
    }
}

}  // namespace handeye::config
