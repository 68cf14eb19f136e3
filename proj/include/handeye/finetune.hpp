#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/control.hpp"
#include "handeye/nn.hpp"
#include "handeye/perception.hpp"
#include "handeye/render.hpp"
#include "handeye/rng.hpp"
#include "handeye/sim.hpp"

namespace handeye::tune {

inline constexpr int kBottleneckDim = perception::kThetaDim;

struct CombinedPolicy {
    nn::Network<float> perception;
    nn::Network<float> control;
};

inline void check_bottleneck(const std::vector<int>& p_out, const std::vector<int>& c_in) {
    std::size_t pn = 1, cn = 1;
    for (int d : p_out) pn *= static_cast<std::size_t>(d);
    for (int d : c_in) cn *= static_cast<std::size_t>(d);
    if (pn != kBottleneckDim || cn != kBottleneckDim)
        throw UsageError("CombinedPolicy: bottleneck must be 5-dimensional on both sides");
}

template <typename T>
std::array<T, control::kActionCount> combined_q(const nn::Network<T>& pnet,
                                                const nn::Network<T>& cnet,
                                                const nn::Tensor<T>& frame) {
    const auto theta = pnet.forward(frame);
    nn::Tensor<T> bottleneck({kBottleneckDim});
    if (theta.size() != kBottleneckDim)
        throw UsageError("combined_q: perception output is not the 5-dim bottleneck");
    bottleneck.data = theta.data;
    const auto q = cnet.forward(bottleneck);
    std::array<T, control::kActionCount> out;
    for (int i = 0; i < control::kActionCount; ++i) out[static_cast<std::size_t>(i)] = q.data[static_cast<std::size_t>(i)];
    return out;
}

inline std::array<float, control::kActionCount> combined_q(const CombinedPolicy& policy,
                                                           const vision::ImageFrame& frame) {
    return combined_q(policy.perception, policy.control, perception::frame_tensor<float>(frame));
}

// delta_L = beta * delta_Lp + (1 - beta) * delta_Lq^BN, element-wise; the
// endpoints return the corresponding input unchanged.
template <typename T>
std::vector<T> mix_gradients(const std::vector<T>& gp, const std::vector<T>& gq_bn, double beta) {
    if (gp.size() != gq_bn.size())
        throw UsageError("mix_gradients: gradient sets differ in size (" +
                         std::to_string(gp.size()) + " vs " + std::to_string(gq_bn.size()) + ")");
    if (!(beta >= 0.0 && beta <= 1.0)) throw UsageError("mix_gradients: beta must lie in [0,1]");
    if (beta == 1.0) return gp;
    if (beta == 0.0) return gq_bn;
    std::vector<T> out(gp.size());
    const T b = static_cast<T>(beta);
    const T c = static_cast<T>(1.0 - beta);
    for (std::size_t i = 0; i < gp.size(); ++i) out[i] = b * gp[i] + c * gq_bn[i];
    return out;
}

// One image-bearing transition, generic over scalar type so the end-to-end
// gradient path can be checked in double on miniature nets.
template <typename T>
struct FrameTransition {
    nn::Tensor<T> frame;
    nn::Tensor<T> frame_next;
    std::array<T, kBottleneckDim> theta_truth{};
    T r = T(0);
    std::uint8_t action = 0;
    bool terminal = false;
};

template <typename T>
struct TaskBackprop {
    T loss_q = T(0);
    std::vector<T> control_grads;
    // delta_Lq^BN over perception parameters: the bottleneck input-gradient
    // of L_q backpropagated through the perception net.
    std::vector<T> perception_grads;
    T mean_max_q = T(0);
};

// Theta_t = perceive(I_t) live with a tape; Bellman targets run I_{t+1}
// through the CURRENT perception net and the frozen target control net with
// gradients blocked. Control gradients flow only through Q(Theta_t, a_t).
template <typename T>
TaskBackprop<T> backprop_task_to_perception(const nn::Network<T>& pnet, const nn::Network<T>& cnet,
                                            const nn::Network<T>& target_cnet,
                                            const std::vector<FrameTransition<T>>& batch,
                                            T gamma) {
    const int m = static_cast<int>(batch.size());
    if (m < 1) throw UsageError("backprop_task_to_perception: empty batch");
    check_bottleneck(pnet.output_shape(), cnet.input_shape());
    TaskBackprop<T> res;
    res.control_grads.assign(cnet.param_count(), T(0));
    res.perception_grads.assign(pnet.param_count(), T(0));
    const T invm = T(1) / static_cast<T>(m);
    nn::Tape<T> ptape, ctape;
    nn::Tensor<T> upstream_c({control::kActionCount});
    nn::Tensor<T> bottleneck({kBottleneckDim});
    nn::Tensor<T> bn_grad;
    double loss = 0.0, mmq = 0.0;
    for (const auto& tr : batch) {
        if (tr.action >= control::kActionCount)
            throw DataError("backprop_task_to_perception: bad action id");
        const auto theta_t = pnet.forward(tr.frame, &ptape);
        bottleneck.data = theta_t.data;
        const auto q = cnet.forward(bottleneck, &ctape);
        std::array<T, control::kActionCount> next_q;
        if (tr.terminal) {
            next_q.fill(T(0));
        } else {
            const auto theta_next = pnet.forward(tr.frame_next);
            nn::Tensor<T> bn2({kBottleneckDim});
            bn2.data = theta_next.data;
            const auto nq = target_cnet.forward(bn2);
            for (int i = 0; i < control::kActionCount; ++i) next_q[static_cast<std::size_t>(i)] = nq.data[static_cast<std::size_t>(i)];
        }
        const T y = control::bellman_target(tr.r, next_q, gamma, tr.terminal);
        const T diff = q.data[tr.action] - y;
        loss += static_cast<double>(diff) * static_cast<double>(diff);
        mmq += static_cast<double>(*std::max_element(q.data.begin(), q.data.end()));
        for (auto& u : upstream_c.data) u = T(0);
        upstream_c.data[tr.action] = diff * invm;
        cnet.backward(ctape, upstream_c, res.control_grads, &bn_grad);
        nn::Tensor<T> up_p({kBottleneckDim});
        up_p.data = bn_grad.data;
        pnet.backward(ptape, up_p, res.perception_grads);
    }
    res.loss_q = static_cast<T>(0.5 * loss / m);
    res.mean_max_q = static_cast<T>(mmq / m);
    return res;
}

// Replay record with quantized frames; 14 KB per entry keeps a 5k-entry ring
// around 70 MB.
struct ImageTransition {
    std::array<std::uint8_t, vision::kPixelCount> frame;
    std::array<std::uint8_t, vision::kPixelCount> frame_next;
    std::array<float, kBottleneckDim> theta_truth;
    float r = 0.0f;
    std::uint8_t action = 0;
    std::uint8_t terminal = 0;
};

using ImageReplay = control::ReplayRing<ImageTransition>;

// Stored frame bytes to the perception net's input representation — the
// same inverted-contrast mapping frame_tensor applies, so replayed frames
// and dataset frames agree bit for bit.
template <typename T>
nn::Tensor<T> dequantize_frame(const std::array<std::uint8_t, vision::kPixelCount>& px) {
    nn::Tensor<T> t({1, vision::kResolution, vision::kResolution});
    for (int i = 0; i < vision::kPixelCount; ++i)
        t.data[static_cast<std::size_t>(i)] =
            static_cast<T>(1.0f - vision::pixel_to_float(px[static_cast<std::size_t>(i)]));
    return t;
}

struct FinetuneConfig {
    double beta = 0.8;
    int task_batch = 64;
    int perception_batch = 256;
    double real_fraction = 0.75;
    double lr_start = 0.01;
    double lr_end = 0.001;
    double gamma = 0.9;
    double eps = 0.1;
    int steps = 2000;
    int env_steps_per_update = 1;
    int warmup = 2000;
    std::size_t replay_capacity = 5000;
    int target_sync = 500;
    int eval_every = 200;
    int eval_episodes = 20;
    int log_every = 20;
    bool instrument = false;
    std::uint64_t seed = 0;

    int pseudo_real_per_batch() const { return perception_batch - task_batch; }

    void validate() const {
        if (!(beta >= 0.0 && beta <= 1.0)) throw UsageError("finetune: beta must lie in [0,1]");
        if (task_batch < 1 || perception_batch < task_batch)
            throw UsageError("finetune: need perception_batch >= task_batch >= 1");
        if (static_cast<int>(std::lround(perception_batch * real_fraction)) !=
            pseudo_real_per_batch())
            throw UsageError("finetune: real_fraction inconsistent with batch sizes");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("finetune: gamma must lie in [0,1)");
        if (!(eps >= 0.0 && eps <= 1.0)) throw UsageError("finetune: eps must lie in [0,1]");
        if (steps < 0 || warmup < 0) throw UsageError("finetune: steps and warmup must be >= 0");
    }
};

struct FinetuneCurveRow {
    int step = 0;
    double loss_p = 0.0;
    double loss_q = 0.0;
    double rbar_snapshot = -1.0;
    double dmed_snapshot = -1.0;
};

// Per-step consumption record for batch-accounting checks; filled when
// FinetuneConfig::instrument is set.
struct StepAccounting {
    int task_transitions = 0;
    int perception_sim = 0;
    int perception_pseudo_real = 0;
    std::vector<std::uint64_t> task_frame_hashes;
    std::vector<std::uint64_t> perception_sim_hashes;
};

struct FinetuneResult {
    CombinedPolicy policy;
    std::vector<FinetuneCurveRow> curve;
    std::vector<StepAccounting> accounting;
    double best_rbar = -1.0;
    int best_step = -1;
    long env_steps = 0;
    bool aborted = false;
};

// Greedy combined policy over the canonical camera path: render, quantize to
// the camera's 8-bit output, act on the dequantized frame.
inline sim::Policy make_combined_policy(const CombinedPolicy& policy, const vision::Camera& cam,
                                        const sim::ArmModel& arm) {
    return [&policy, cam, arm](const sim::SceneState& s) {
        vision::ImageFrame f = vision::render(s, cam, arm);
        for (auto& p : f.px) p = vision::pixel_to_float(vision::quantize_pixel(p));
        return control::greedy_action(combined_q(policy, f));
    };
}

struct EvalSnapshot {
    double rbar = 0.0;
    double d_med = 0.0;
};

inline EvalSnapshot snapshot_eval(const CombinedPolicy& policy, const sim::ArmModel& arm,
                                  const vision::Camera& cam, int episodes, Rng& rng) {
    sim::Workspace ws{cam.center, cam.half_extent()};
    const auto pol = make_combined_policy(policy, cam, arm);
    std::vector<double> finals;
    double acc = 0.0;
    for (int e = 0; e < episodes; ++e) {
        const auto task = sim::sample_task(arm, ws, rng);
        const auto episode = sim::run_episode(arm, pol, task, sim::kEpisodeHorizon);
        double r = 0.0;
        for (const auto& t : episode) r += t.r;
        acc += r / sim::kEpisodeHorizon;
        finals.push_back(sim::distance_to_target(episode.back().after));
    }
    std::sort(finals.begin(), finals.end());
    const std::size_t n = finals.size();
    EvalSnapshot s;
    s.rbar = acc / episodes;
    s.d_med = n % 2 ? finals[n / 2] : 0.5 * (finals[n / 2 - 1] + finals[n / 2]);
    return s;
}

namespace detail {

// Rollout state machine: renders the scene, acts through the combined policy
// (eps-random), stores the quantized frame pair with the ground-truth theta.
class RolloutCollector {
  public:
    RolloutCollector(const sim::ArmModel& arm, const vision::Camera& cam, double eps,
                     std::uint64_t seed)
        : arm_(arm), cam_(cam), ws_{cam.center, cam.half_extent()}, eps_(eps),
          act_rng_(Rng::derive(seed, 1)), task_rng_(Rng::derive(seed, 3)) {}

    void step(const CombinedPolicy& policy, ImageReplay& replay) {
        if (!scene_ready_) {
            scene_ = sim::sample_task(arm_, ws_, task_rng_);
            step_in_episode_ = 0;
            frame_ = quantized_render(scene_);
            scene_ready_ = true;
        }
        sim::ReachAction a{};
        if (eps_ > 0.0 && act_rng_.uniform() < eps_) {
            a = sim::ReachAction::from_id(act_rng_.uniform_int(control::kActionCount));
        } else {
            a = control::greedy_action(
                combined_q(policy.perception, policy.control, dequantize_frame<float>(frame_)));
        }
        const auto next = sim::apply_action(arm_, scene_, a);
        const auto frame_next = quantized_render(next);
        ImageTransition tr;
        tr.frame = frame_;
        tr.frame_next = frame_next;
        const auto th = vision::normalize_theta(scene_, cam_, arm_);
        for (int i = 0; i < kBottleneckDim; ++i) tr.theta_truth[static_cast<std::size_t>(i)] = static_cast<float>(th[static_cast<std::size_t>(i)]);
        tr.r = static_cast<float>(sim::reward(next));
        tr.action = static_cast<std::uint8_t>(a.id);
        tr.terminal = step_in_episode_ == sim::kEpisodeHorizon - 1 ? 1 : 0;
        replay.push(tr);
        scene_ = next;
        frame_ = frame_next;
        ++step_in_episode_;
        if (tr.terminal) scene_ready_ = false;
    }

  private:
    std::array<std::uint8_t, vision::kPixelCount> quantized_render(const sim::SceneState& s) const {
        const auto f = vision::render(s, cam_, arm_);
        std::array<std::uint8_t, vision::kPixelCount> out;
        for (int i = 0; i < vision::kPixelCount; ++i) out[static_cast<std::size_t>(i)] = vision::quantize_pixel(f.px[static_cast<std::size_t>(i)]);
        return out;
    }

    sim::ArmModel arm_;
    vision::Camera cam_;
    sim::Workspace ws_;
    double eps_;
    Rng act_rng_;
    Rng task_rng_;
    sim::SceneState scene_{};
    std::array<std::uint8_t, vision::kPixelCount> frame_{};
    int step_in_episode_ = 0;
    bool scene_ready_ = false;
};

}  // namespace detail

// One fine-tuning update against an already-warm replay: sample the task
// batch, update control with delta_Lq, then update perception with
// mix_gradients over a perception batch of the same 64 sim frames plus 192
// dataset pseudo-real frames.
struct StepOutcome {
    double loss_p = 0.0;
    double loss_q = 0.0;
};

inline StepOutcome finetune_step(CombinedPolicy& policy, nn::Network<float>& target_control,
                                 const ImageReplay& replay,
                                 const std::vector<const vision::DatasetItem*>& pseudo_real_pool,
                                 const FinetuneConfig& cfg, double lr, Rng& replay_rng,
                                 Rng& batch_rng, StepAccounting* accounting) {
    if (replay.size() < static_cast<std::size_t>(std::max(cfg.warmup, cfg.task_batch)))
        throw UsageError("finetune_step: replay not warm yet");
    const auto idx = replay.sample_indices(cfg.task_batch, replay_rng);

    std::vector<FrameTransition<float>> batch;
    batch.reserve(idx.size());
    for (auto i : idx) {
        const auto& tr = replay[i];
        FrameTransition<float> ft;
        ft.frame = dequantize_frame<float>(tr.frame);
        ft.frame_next = dequantize_frame<float>(tr.frame_next);
        ft.theta_truth = tr.theta_truth;
        ft.r = tr.r;
        ft.action = tr.action;
        ft.terminal = tr.terminal != 0;
        batch.push_back(std::move(ft));
    }

    const auto task = backprop_task_to_perception(policy.perception, policy.control,
                                                  target_control, batch,
                                                  static_cast<float>(cfg.gamma));
    if (!std::isfinite(static_cast<double>(task.loss_q)))
        throw DivergenceError("finetune_step: L_q non-finite");
    if (lr > 0.0) nn::sgd_step(policy.control, task.control_grads, static_cast<float>(lr));

    // Perception batch: the task batch's own sim frames plus the pseudo-real
    // draw, all weighted equally inside L_p.
    const int n_real = cfg.pseudo_real_per_batch();
    std::vector<vision::DatasetItem> task_items(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto& tr = replay[idx[j]];
        task_items[j].domain = vision::Domain::sim;
        task_items[j].px = tr.frame;
        task_items[j].theta = tr.theta_truth;
    }
    if (static_cast<int>(pseudo_real_pool.size()) < n_real)
        throw DataError("finetune_step: pseudo-real pool smaller than " + std::to_string(n_real));
    std::vector<std::size_t> real_idx(pseudo_real_pool.size());
    for (std::size_t j = 0; j < real_idx.size(); ++j) real_idx[j] = j;
    perception::PerceptionBatch pbatch;
    pbatch.items.reserve(static_cast<std::size_t>(cfg.perception_batch));
    for (int j = 0; j < n_real; ++j) {
        const int n = static_cast<int>(real_idx.size());
        std::swap(real_idx[static_cast<std::size_t>(j)], real_idx[static_cast<std::size_t>(j + batch_rng.uniform_int(n - j))]);
        pbatch.items.push_back(pseudo_real_pool[real_idx[static_cast<std::size_t>(j)]]);
    }
    for (const auto& it : task_items) pbatch.items.push_back(&it);
    pbatch.n_sim = static_cast<int>(task_items.size());
    pbatch.n_pseudo_real = n_real;

    const auto lp = perception::perception_loss(policy.perception, pbatch);
    if (!std::isfinite(static_cast<double>(lp.loss)))
        throw DivergenceError("finetune_step: L_p non-finite");
    const auto mixed = mix_gradients(lp.grads, task.perception_grads, cfg.beta);
    if (lr > 0.0) nn::sgd_step(policy.perception, mixed, static_cast<float>(lr));

    if (accounting) {
        accounting->task_transitions = static_cast<int>(idx.size());
        accounting->perception_sim = pbatch.n_sim;
        accounting->perception_pseudo_real = pbatch.n_pseudo_real;
        for (auto i : idx)
            accounting->task_frame_hashes.push_back(fnv1a(replay[i].frame.data(), replay[i].frame.size()));
        for (const auto& it : task_items)
            accounting->perception_sim_hashes.push_back(fnv1a(it.px.data(), it.px.size()));
    }
    return {static_cast<double>(lp.loss), static_cast<double>(task.loss_q)};
}

// Warm-up rollouts, then `steps` alternating rollout/update iterations;
// returns the best-R-bar checkpoint over the periodic snapshots (the
// pre-fine-tuning policy included). On divergence the best snapshot so far
// is kept and the result is marked aborted.
inline FinetuneResult finetune(const CombinedPolicy& initial, const vision::Dataset& ds,
                               const FinetuneConfig& cfg,
                               const sim::ArmModel& arm = sim::ArmModel{},
                               const vision::Camera& cam = vision::Camera{}) {
    cfg.validate();
    check_bottleneck(initial.perception.output_shape(), initial.control.input_shape());
    FinetuneResult res;
    res.policy = initial;
    if (cfg.steps == 0) return res;

    std::vector<const vision::DatasetItem*> pseudo_real_pool;
    for (const auto& it : ds.items)
        if (it.domain == vision::Domain::pseudo_real) pseudo_real_pool.push_back(&it);

    auto target_control = res.policy.control;
    ImageReplay replay(cfg.replay_capacity);
    detail::RolloutCollector collector(arm, cam, cfg.eps, cfg.seed);
    Rng replay_rng(Rng::derive(cfg.seed, 2));
    Rng eval_rng(Rng::derive(cfg.seed, 4));
    Rng batch_rng(Rng::derive(cfg.seed, 5));

    const std::size_t warm = static_cast<std::size_t>(std::max(cfg.warmup, cfg.task_batch));
    while (replay.size() < warm) {
        collector.step(res.policy, replay);
        ++res.env_steps;
    }

    const auto snap0 = snapshot_eval(res.policy, arm, cam, cfg.eval_episodes, eval_rng);
    res.best_rbar = snap0.rbar;
    res.best_step = 0;
    auto best_p = res.policy.perception.get_params();
    auto best_c = res.policy.control.get_params();
    res.curve.push_back({0, 0.0, 0.0, snap0.rbar, snap0.d_med});

    long updates = 0;
    for (int step = 1; step <= cfg.steps; ++step) {
        for (int k = 0; k < cfg.env_steps_per_update; ++k) {
            collector.step(res.policy, replay);
            ++res.env_steps;
        }
        const double frac = cfg.steps <= 1 ? 0.0 : static_cast<double>(step - 1) / (cfg.steps - 1);
        const double lr = cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac;
        StepAccounting acct;
        StepOutcome out;
        try {
            out = finetune_step(res.policy, target_control, replay, pseudo_real_pool, cfg, lr,
                                replay_rng, batch_rng, cfg.instrument ? &acct : nullptr);
        } catch (const DivergenceError&) {
            res.aborted = true;
            break;
        }
        if (cfg.instrument) res.accounting.push_back(std::move(acct));
        ++updates;
        if (cfg.target_sync > 0 && updates % cfg.target_sync == 0)
            target_control = res.policy.control;

        double rbar = -1.0, dmed = -1.0;
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            const auto snap = snapshot_eval(res.policy, arm, cam, cfg.eval_episodes, eval_rng);
            rbar = snap.rbar;
            dmed = snap.d_med;
            if (snap.rbar > res.best_rbar) {
                res.best_rbar = snap.rbar;
                res.best_step = step;
                best_p = res.policy.perception.get_params();
                best_c = res.policy.control.get_params();
            }
        }
        if ((cfg.log_every > 0 && step % cfg.log_every == 0) || step == cfg.steps || rbar >= 0.0)
            res.curve.push_back({step, out.loss_p, out.loss_q, rbar, dmed});
    }

    res.policy.perception.set_params(best_p);
    res.policy.control.set_params(best_c);
    return res;
}

inline void save_finetune_curve_csv(const std::vector<FinetuneCurveRow>& curve,
                                    const std::string& path) {
    std::string out = "step,loss_p,loss_q,rbar_snapshot,dmed_snapshot\n";
    char line[160];
    for (const auto& row : curve) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", row.step, row.loss_p,
                      row.loss_q, row.rbar_snapshot, row.dmed_snapshot);
        out += line;
    }
    ByteWriter w;
    w.put_bytes(out.data(), out.size());
    w.write_file(path);
}

}  // namespace handeye::tune
