#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/render.hpp"
#include "handeye/rng.hpp"
#include "handeye/sim.hpp"

namespace handeye::eval {

// Pixels per centimetre at the fixed camera scale (42 px/m).
inline constexpr double kPxPerCm = vision::kScale / 100.0;

struct TrialReport {
    int trial_id = 0;
    double d = 0.0;           // final end-effector/target distance, metres
    double acc_reward = 0.0;  // mean per-step reward, in [0,1]
    std::vector<double> trace;  // post-action distance after every step
    bool failed = false;
};

// Each trial draws its task from a per-trial derived stream, so equal-seed
// campaigns present the same task sequence to every policy. A policy that
// throws marks its trial failed and the campaign continues.
inline std::vector<TrialReport> run_campaign(const sim::Policy& policy, int n, std::uint64_t seed,
                                             const sim::ArmModel& arm = sim::ArmModel{},
                                             const vision::Camera& cam = vision::Camera{}) {
    if (n < 1) throw UsageError("run_campaign: need at least one trial");
    sim::Workspace ws{cam.center, cam.half_extent()};
    std::vector<TrialReport> reports;
    reports.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng trng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
        TrialReport rep;
        rep.trial_id = i;
        const auto task = sim::sample_task(arm, ws, trng);
        try {
            const auto episode = sim::run_episode(arm, policy, task, sim::kEpisodeHorizon);
            double acc = 0.0;
            rep.trace.reserve(episode.size());
            for (const auto& t : episode) {
                acc += t.r;
                rep.trace.push_back(sim::distance_to_target(t.after));
            }
            rep.d = rep.trace.back();
            rep.acc_reward = acc / static_cast<double>(episode.size());
        } catch (const UsageError&) {
            throw;  // campaign misconfiguration, not a policy fault
        } catch (const std::exception&) {
            rep.failed = true;
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

struct CampaignSummary {
    int n = 0;       // trials included in the statistics
    int failed = 0;  // trials excluded after policy failure
    double d_med_cm = 0.0;
    double d_q3_cm = 0.0;
    double d_med_px = 0.0;
    double d_q3_px = 0.0;
    double rbar = 0.0;
    std::vector<double> outliers_cm;  // box-plot outliers beyond 1.5 x IQR
};

// Linear-interpolation quantile (type 7) over an ascending sample.
inline double quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw UsageError("quantile: empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("quantile: p must lie in [0,1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline CampaignSummary summarize(const std::vector<TrialReport>& reports,
                                 double px_per_cm = kPxPerCm) {
    CampaignSummary s;
    std::vector<double> d_cm;
    double acc = 0.0;
    for (const auto& r : reports) {
        if (r.failed) {
            ++s.failed;
            continue;
        }
        d_cm.push_back(r.d * 100.0);
        acc += r.acc_reward;
    }
    if (d_cm.empty()) throw DataError("summarize: no successful trials");
    s.n = static_cast<int>(d_cm.size());
    std::sort(d_cm.begin(), d_cm.end());
    const double q1 = quantile(d_cm, 0.25);
    s.d_med_cm = quantile(d_cm, 0.5);
    s.d_q3_cm = quantile(d_cm, 0.75);
    s.d_med_px = s.d_med_cm * px_per_cm;
    s.d_q3_px = s.d_q3_cm * px_per_cm;
    s.rbar = acc / s.n;
    const double iqr = s.d_q3_cm - q1;
    for (double v : d_cm)
        if (v < q1 - 1.5 * iqr || v > s.d_q3_cm + 1.5 * iqr) s.outliers_cm.push_back(v);
    return s;
}

// Percentage deltas between equal-seed campaigns: how much smaller b's median
// distance is than a's, and how much bigger b's mean reward is than a's.
struct CompareResult {
    std::optional<double> d_med_decrease_pct;
    std::optional<double> rbar_increase_pct;
};

inline CompareResult compare(const CampaignSummary& a, const CampaignSummary& b) {
    CompareResult c;
    if (a.d_med_cm != 0.0) c.d_med_decrease_pct = (a.d_med_cm - b.d_med_cm) / a.d_med_cm * 100.0;
    if (a.rbar != 0.0) c.rbar_increase_pct = (b.rbar - a.rbar) / a.rbar * 100.0;
    return c;
}

// ---------------------------------------------------------------------------
// Report files. CSV schemas are stable; JSON mirrors the same fields.

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string raw_csv(const std::vector<TrialReport>& reports) {
    std::string out = "trial_id,d_m,d_cm,d_px,acc_reward\n";
    for (const auto& r : reports) {
        if (r.failed) continue;
        out += std::to_string(r.trial_id) + ',' + format_double(r.d) + ',' +
               format_double(r.d * 100.0) + ',' + format_double(r.d * 100.0 * kPxPerCm) + ',' +
               format_double(r.acc_reward) + '\n';
    }
    return out;
}

inline std::vector<TrialReport> parse_raw_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "trial_id,d_m,d_cm,d_px,acc_reward")
        throw DataError("parse_raw_csv: bad header");
    std::vector<TrialReport> reports;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrialReport r;
        double d_cm = 0.0, d_px = 0.0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &r.trial_id, &r.d, &d_cm, &d_px,
                        &r.acc_reward) != 5)
            throw DataError("parse_raw_csv: bad row: " + line);
        reports.push_back(std::move(r));
    }
    return reports;
}

inline std::string summary_csv(const std::vector<std::pair<std::string, CampaignSummary>>& rows) {
    std::string out = "nets,d_med_cm,d_med_px,d_q3_cm,d_q3_px,rbar\n";
    for (const auto& [name, s] : rows) {
        out += name + ',' + format_double(s.d_med_cm) + ',' + format_double(s.d_med_px) + ',' +
               format_double(s.d_q3_cm) + ',' + format_double(s.d_q3_px) + ',' +
               format_double(s.rbar) + '\n';
    }
    return out;
}

inline std::vector<std::pair<std::string, CampaignSummary>> parse_summary_csv(
    const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "nets,d_med_cm,d_med_px,d_q3_cm,d_q3_px,rbar")
        throw DataError("parse_summary_csv: bad header");
    std::vector<std::pair<std::string, CampaignSummary>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("parse_summary_csv: bad row: " + line);
        CampaignSummary s;
        if (std::sscanf(line.c_str() + comma + 1, "%lf,%lf,%lf,%lf,%lf", &s.d_med_cm, &s.d_med_px,
                        &s.d_q3_cm, &s.d_q3_px, &s.rbar) != 5)
            throw DataError("parse_summary_csv: bad row: " + line);
        rows.emplace_back(line.substr(0, comma), s);
    }
    return rows;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

inline std::string raw_json(const std::vector<TrialReport>& reports) {
    std::string out = "{\n  \"trials\": [\n";
    bool first = true;
    for (const auto& r : reports) {
        if (!first) out += ",\n";
        first = false;
        out += "    {\"trial_id\": " + std::to_string(r.trial_id) +
               ", \"failed\": " + (r.failed ? "true" : "false");
        if (!r.failed)
            out += ", \"d_m\": " + format_double(r.d) + ", \"d_cm\": " + format_double(r.d * 100.0) +
                   ", \"d_px\": " + format_double(r.d * 100.0 * kPxPerCm) +
                   ", \"acc_reward\": " + format_double(r.acc_reward);
        out += "}";
    }
    out += "\n  ]\n}\n";
    return out;
}

inline std::string summary_json(const std::vector<std::pair<std::string, CampaignSummary>>& rows) {
    std::string out = "{\n  \"summaries\": [\n";
    bool first = true;
    for (const auto& [name, s] : rows) {
        if (!first) out += ",\n";
        first = false;
        out += "    {\"nets\": \"" + json_escape(name) + "\", \"n\": " + std::to_string(s.n) +
               ", \"failed\": " + std::to_string(s.failed) +
               ", \"d_med_cm\": " + format_double(s.d_med_cm) +
               ", \"d_med_px\": " + format_double(s.d_med_px) +
               ", \"d_q3_cm\": " + format_double(s.d_q3_cm) +
               ", \"d_q3_px\": " + format_double(s.d_q3_px) +
               ", \"rbar\": " + format_double(s.rbar) + ", \"outliers_cm\": [";
        for (std::size_t i = 0; i < s.outliers_cm.size(); ++i) {
            if (i) out += ", ";
            out += format_double(s.outliers_cm[i]);
        }
        out += "]}";
    }
    out += "\n  ]\n}\n";
    return out;
}

inline void save_text(const std::string& text, const std::string& path) {
    ByteWriter w;
    w.put_bytes(text.data(), text.size());
    w.write_file(path);
}

}  // namespace handeye::eval
