#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/nn.hpp"
#include "handeye/render.hpp"
#include "handeye/rng.hpp"
#include "handeye/sim.hpp"

namespace handeye::control {

inline constexpr int kStateDim = 5;
inline constexpr int kActionCount = sim::ReachAction::kCount;

inline std::vector<nn::LayerSpec> control_layers() {
    return {
        nn::LayerSpec::dense(kStateDim, 64, nn::Act::relu),
        nn::LayerSpec::dense(64, 64, nn::Act::relu),
        nn::LayerSpec::dense(64, kActionCount, nn::Act::linear),
    };
}

template <typename T>
nn::Network<T> make_control_net() {
    return nn::Network<T>(control_layers(), {kStateDim});
}

inline nn::Network<float> init_control_net(std::uint64_t seed) {
    auto net = make_control_net<float>();
    Rng rng(Rng::derive(seed, 0));
    net.init_glorot(rng);
    return net;
}

template <typename T>
nn::Tensor<T> theta_tensor(const vision::ThetaVec& theta) {
    nn::Tensor<T> t({kStateDim});
    for (int i = 0; i < kStateDim; ++i) t.data[static_cast<std::size_t>(i)] = static_cast<T>(theta[static_cast<std::size_t>(i)]);
    return t;
}

template <typename T>
std::array<T, kActionCount> q_values(const nn::Network<T>& net, const vision::ThetaVec& theta) {
    const auto out = net.forward(theta_tensor<T>(theta));
    std::array<T, kActionCount> q;
    for (int i = 0; i < kActionCount; ++i) q[static_cast<std::size_t>(i)] = out.data[static_cast<std::size_t>(i)];
    return q;
}

// Argmax by value, ties to the lowest canonical id.
template <typename T>
sim::ReachAction greedy_action(const std::array<T, kActionCount>& q) {
    int best = 0;
    for (int i = 1; i < kActionCount; ++i)
        if (q[static_cast<std::size_t>(i)] > q[static_cast<std::size_t>(best)]) best = i;
    return sim::ReachAction::from_id(best);
}

template <typename T>
T bellman_target(T r, const std::array<T, kActionCount>& next_q, T gamma, bool terminal) {
    if (!(gamma >= T(0) && gamma < T(1))) throw UsageError("bellman_target: gamma must lie in [0,1)");
    if (terminal) return r;
    return r + gamma * *std::max_element(next_q.begin(), next_q.end());
}

// One replay record; thetas are the normalized bottleneck vectors.
struct Transition {
    std::array<float, kStateDim> theta;
    std::array<float, kStateDim> theta_next;
    float r = 0.0f;
    std::uint8_t action = 0;
    std::uint8_t terminal = 0;
};

template <typename Rec>
class ReplayRing {
  public:
    explicit ReplayRing(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw UsageError("ReplayRing: capacity must be positive");
    }

    void push(const Rec& t) {
        if (items_.size() < capacity_) {
            items_.push_back(t);
        } else {
            items_[cursor_] = t;
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Rec& operator[](std::size_t i) const { return items_[i]; }

    std::vector<Rec> sample(int m, Rng& rng) const {
        if (m < 1) throw UsageError("ReplayRing: batch size must be >= 1");
        if (items_.empty()) throw UsageError("ReplayRing: cannot sample from an empty buffer");
        std::vector<Rec> out;
        out.reserve(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i)
            out.push_back(items_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(items_.size())))]);
        return out;
    }

    // Index draw, for records too heavy to copy into a batch vector.
    std::vector<std::size_t> sample_indices(int m, Rng& rng) const {
        if (m < 1) throw UsageError("ReplayRing: batch size must be >= 1");
        if (items_.empty()) throw UsageError("ReplayRing: cannot sample from an empty buffer");
        std::vector<std::size_t> out;
        out.reserve(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i)
            out.push_back(static_cast<std::size_t>(rng.uniform_int(static_cast<int>(items_.size()))));
        return out;
    }

  private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Rec> items_;
};

using ReplayBuffer = ReplayRing<Transition>;

template <typename T>
struct TdResult {
    T loss = T(0);
    std::vector<T> grads;
    // dL_q/dTheta_t per sample, 1/m factor included, so the rows sum to the
    // total derivative at the bottleneck.
    std::vector<std::array<T, kStateDim>> bottleneck_grads;
    T mean_max_q = T(0);
};

// L_q = 1/(2m) sum_j (Q(theta_j, a_j) - y_j)^2 with y_j from the frozen
// target net; gradient flows only through Q(theta_j, a_j).
template <typename T>
TdResult<T> td_loss(const nn::Network<T>& net, const nn::Network<T>& target_net,
                    const std::vector<Transition>& batch, T gamma) {
    const int m = static_cast<int>(batch.size());
    if (m < 1) throw UsageError("td_loss: empty batch");
    TdResult<T> res;
    res.grads.assign(net.param_count(), T(0));
    res.bottleneck_grads.resize(batch.size());
    const T invm = T(1) / static_cast<T>(m);
    nn::Tape<T> tape;
    nn::Tensor<T> upstream({kActionCount});
    nn::Tensor<T> input_grad;
    double loss = 0.0, mmq = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto& tr = batch[j];
        if (tr.action >= kActionCount) throw DataError("td_loss: bad action id in transition");
        nn::Tensor<T> s({kStateDim}), s2({kStateDim});
        for (int i = 0; i < kStateDim; ++i) {
            s.data[static_cast<std::size_t>(i)] = static_cast<T>(tr.theta[static_cast<std::size_t>(i)]);
            s2.data[static_cast<std::size_t>(i)] = static_cast<T>(tr.theta_next[static_cast<std::size_t>(i)]);
        }
        const auto q = net.forward(s, &tape);
        std::array<T, kActionCount> next_q;
        if (tr.terminal) {
            next_q.fill(T(0));
        } else {
            const auto nq = target_net.forward(s2);
            for (int i = 0; i < kActionCount; ++i) next_q[static_cast<std::size_t>(i)] = nq.data[static_cast<std::size_t>(i)];
        }
        const T y = bellman_target(static_cast<T>(tr.r), next_q, gamma, tr.terminal != 0);
        const T diff = q.data[tr.action] - y;
        loss += static_cast<double>(diff) * static_cast<double>(diff);
        mmq += static_cast<double>(*std::max_element(q.data.begin(), q.data.end()));
        for (auto& u : upstream.data) u = T(0);
        upstream.data[tr.action] = diff * invm;
        net.backward(tape, upstream, res.grads, &input_grad);
        for (int i = 0; i < kStateDim; ++i) res.bottleneck_grads[j][static_cast<std::size_t>(i)] = input_grad.data[static_cast<std::size_t>(i)];
    }
    res.loss = static_cast<T>(0.5 * loss / m);
    res.mean_max_q = static_cast<T>(mmq / m);
    return res;
}

// Epsilon first, then the phase branch: random with probability eps, the
// kinematic oracle while guided, greedy on the net's Q-values afterwards.
inline sim::ReachAction behavior_action(const nn::Network<float>& net, const sim::ArmModel& arm,
                                        const sim::SceneState& s, const vision::Camera& cam,
                                        double eps, bool guided, Rng& rng) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw UsageError("behavior_action: eps must lie in [0,1]");
    if (eps > 0.0 && rng.uniform() < eps)
        return sim::ReachAction::from_id(rng.uniform_int(kActionCount));
    if (guided) return sim::guided_action(arm, s);
    return greedy_action(q_values(net, vision::normalize_theta(s, cam, arm)));
}

struct QLearningConfig {
    double gamma = 0.9;
    double lr_start = 0.01;
    double lr_end = 0.001;
    int batch_size = 64;
    double eps = 0.1;
    int target_sync = 1000;       // updates between target-net syncs
    std::size_t replay_capacity = 50000;
    int warmup = 1000;            // transitions stored before updates begin
    long total_steps = 200000;    // environment steps; guided for the first half
    int log_every = 1000;         // environment steps between log rows
    int eval_every = 20000;       // environment steps between greedy R-bar snapshots
    int eval_episodes = 20;
    std::uint64_t seed = 0;
};

struct ControlCurveRow {
    long env_step = 0;
    double loss = 0.0;
    double mean_max_q = 0.0;
    double rbar_snapshot = -1.0;  // last greedy evaluation; -1 before the first
};

struct ControlTrainResult {
    nn::Network<float> net;
    std::vector<ControlCurveRow> curve;
    long updates = 0;
};

// Greedy policy over ground-truth normalized Theta (the CR-style baseline).
inline sim::Policy make_greedy_policy(const nn::Network<float>& net, const vision::Camera& cam,
                                      const sim::ArmModel& arm) {
    return [&net, cam, arm](const sim::SceneState& s) {
        return greedy_action(q_values(net, vision::normalize_theta(s, cam, arm)));
    };
}

inline double greedy_rbar(const nn::Network<float>& net, const sim::ArmModel& arm,
                          const vision::Camera& cam, int episodes, Rng& rng) {
    sim::Workspace ws{cam.center, cam.half_extent()};
    const auto policy = make_greedy_policy(net, cam, arm);
    double acc = 0.0;
    for (int e = 0; e < episodes; ++e) {
        const auto start = sim::sample_task(arm, ws, rng);
        const auto episode = sim::run_episode(arm, policy, start, sim::kEpisodeHorizon);
        double r = 0.0;
        for (const auto& t : episode) r += t.r;
        acc += r / sim::kEpisodeHorizon;
    }
    return acc / episodes;
}

// Q-learning on ground-truth Theta: fixed-horizon episodes feed the replay
// ring; one 64-sample update per environment step once warm, target net
// synced every target_sync updates.
inline ControlTrainResult train_control(const QLearningConfig& cfg,
                                        const sim::ArmModel& arm = sim::ArmModel{},
                                        const vision::Camera& cam = vision::Camera{}) {
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw UsageError("train_control: gamma must lie in [0,1)");
    if (!(cfg.eps >= 0.0 && cfg.eps <= 1.0)) throw UsageError("train_control: eps must lie in [0,1]");
    if (cfg.batch_size < 1) throw UsageError("train_control: batch size must be >= 1");

    ControlTrainResult res;
    res.net = init_control_net(cfg.seed);
    auto target = res.net;
    ReplayBuffer replay(cfg.replay_capacity);
    Rng act_rng(Rng::derive(cfg.seed, 1));
    Rng replay_rng(Rng::derive(cfg.seed, 2));
    Rng task_rng(Rng::derive(cfg.seed, 3));
    Rng eval_rng(Rng::derive(cfg.seed, 4));
    sim::Workspace ws{cam.center, cam.half_extent()};

    // Total updates, for the linear lr ramp.
    const long planned_updates = std::max<long>(1, cfg.total_steps - std::min<long>(cfg.total_steps, cfg.warmup));

    sim::SceneState scene{};
    int step_in_episode = 0;
    bool scene_ready = false;
    double last_loss = 0.0, last_mmq = 0.0, last_rbar = -1.0;
    for (long env_step = 0; env_step < cfg.total_steps; ++env_step) {
        if (!scene_ready) {
            scene = sim::sample_task(arm, ws, task_rng);
            step_in_episode = 0;
            scene_ready = true;
        }
        const bool guided = env_step < cfg.total_steps / 2;
        const auto a = behavior_action(res.net, arm, scene, cam, cfg.eps, guided, act_rng);
        const auto next = sim::apply_action(arm, scene, a);
        const bool terminal = step_in_episode == sim::kEpisodeHorizon - 1;
        Transition tr;
        const auto th = vision::normalize_theta(scene, cam, arm);
        const auto th2 = vision::normalize_theta(next, cam, arm);
        for (int i = 0; i < kStateDim; ++i) {
            tr.theta[static_cast<std::size_t>(i)] = static_cast<float>(th[static_cast<std::size_t>(i)]);
            tr.theta_next[static_cast<std::size_t>(i)] = static_cast<float>(th2[static_cast<std::size_t>(i)]);
        }
        tr.r = static_cast<float>(sim::reward(next));
        tr.action = static_cast<std::uint8_t>(a.id);
        tr.terminal = terminal ? 1 : 0;
        replay.push(tr);
        scene = next;
        ++step_in_episode;
        if (terminal) scene_ready = false;

        if (replay.size() >= static_cast<std::size_t>(std::max(cfg.warmup, cfg.batch_size))) {
            const auto batch = replay.sample(cfg.batch_size, replay_rng);
            const auto td = td_loss(res.net, target, batch, static_cast<float>(cfg.gamma));
            if (!std::isfinite(static_cast<double>(td.loss)))
                throw DivergenceError("train_control: L_q non-finite at env step " +
                                      std::to_string(env_step));
            const double frac = planned_updates <= 1
                                    ? 0.0
                                    : static_cast<double>(res.updates) / (planned_updates - 1);
            const double lr = cfg.lr_start + (cfg.lr_end - cfg.lr_start) * std::min(1.0, frac);
            nn::sgd_step(res.net, td.grads, static_cast<float>(lr));
            ++res.updates;
            last_loss = static_cast<double>(td.loss);
            last_mmq = static_cast<double>(td.mean_max_q);
            if (cfg.target_sync > 0 && res.updates % cfg.target_sync == 0) target = res.net;
        }

        if (cfg.eval_every > 0 && (env_step + 1) % cfg.eval_every == 0)
            last_rbar = greedy_rbar(res.net, arm, cam, cfg.eval_episodes, eval_rng);
        if (cfg.log_every > 0 && ((env_step + 1) % cfg.log_every == 0 || env_step + 1 == cfg.total_steps))
            res.curve.push_back({env_step + 1, last_loss, last_mmq, last_rbar});
    }
    return res;
}

inline void save_control_curve_csv(const std::vector<ControlCurveRow>& curve,
                                   const std::string& path) {
    std::string out = "env_step,loss,mean_max_q,rbar_snapshot\n";
    char line[128];
    for (const auto& row : curve) {
        std::snprintf(line, sizeof(line), "%ld,%.9g,%.9g,%.9g\n", row.env_step, row.loss,
                      row.mean_max_q, row.rbar_snapshot);
        out += line;
    }
    ByteWriter w;
    w.put_bytes(out.data(), out.size());
    w.write_file(path);
}

}  // namespace handeye::control
