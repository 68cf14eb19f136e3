#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/nn.hpp"
#include "handeye/render.hpp"
#include "handeye/rng.hpp"

namespace handeye::perception {

inline constexpr int kThetaDim = 5;

// conv 8x8/4, conv 4x4/2, conv 3x3/1 (84 -> 20 -> 9 -> 7 spatial), then a
// sigmoid head so predictions land in (0,1)^5 like the normalized targets.
inline std::vector<nn::LayerSpec> perception_layers() {
    return {
        nn::LayerSpec::conv(1, 8, 8, 4, nn::Act::relu),
        nn::LayerSpec::conv(8, 16, 4, 2, nn::Act::relu),
        nn::LayerSpec::conv(16, 16, 3, 1, nn::Act::relu),
        nn::LayerSpec::dense(16 * 7 * 7, kThetaDim, nn::Act::sigmoid),
    };
}

template <typename T>
nn::Network<T> make_perception_net() {
    return nn::Network<T>(perception_layers(), {1, vision::kResolution, vision::kResolution});
}

inline nn::Network<float> init_perception_net(std::uint64_t seed) {
    auto net = make_perception_net<float>();
    Rng rng(Rng::derive(seed, 0));
    net.init_glorot(rng);
    return net;
}

// The net consumes inverted contrast (1 - pixel): the white background maps
// to 0, so conv activations are sparse and driven by the drawn strokes
// instead of being dominated by a constant background term. Purely an input
// representation of y(I); frames themselves keep white = 1.
template <typename T>
nn::Tensor<T> frame_tensor(const vision::ImageFrame& f) {
    nn::Tensor<T> t({1, vision::kResolution, vision::kResolution});
    for (int i = 0; i < vision::kPixelCount; ++i)
        t.data[static_cast<std::size_t>(i)] = static_cast<T>(1.0f - f.px[static_cast<std::size_t>(i)]);
    return t;
}

template <typename T>
nn::Tensor<T> frame_tensor(const vision::DatasetItem& it) {
    nn::Tensor<T> t({1, vision::kResolution, vision::kResolution});
    for (int i = 0; i < vision::kPixelCount; ++i)
        t.data[static_cast<std::size_t>(i)] =
            static_cast<T>(1.0f - vision::pixel_to_float(it.px[static_cast<std::size_t>(i)]));
    return t;
}

template <typename T>
vision::ThetaVec perceive(const nn::Network<T>& net, const nn::Tensor<T>& input) {
    const auto out = net.forward(input);
    vision::ThetaVec theta;
    for (int i = 0; i < kThetaDim; ++i) theta[static_cast<std::size_t>(i)] = static_cast<double>(out.data[static_cast<std::size_t>(i)]);
    return theta;
}

inline vision::ThetaVec perceive(const nn::Network<float>& net, const vision::ImageFrame& f) {
    return perceive(net, frame_tensor<float>(f));
}

struct PerceptionBatch {
    std::vector<const vision::DatasetItem*> items;
    int n_sim = 0;
    int n_pseudo_real = 0;

    int size() const { return static_cast<int>(items.size()); }
};

inline PerceptionBatch batch_of(const std::vector<const vision::DatasetItem*>& pool) {
    PerceptionBatch b;
    b.items = pool;
    for (const auto* it : pool)
        (it->domain == vision::Domain::sim ? b.n_sim : b.n_pseudo_real) += 1;
    return b;
}

// round(m * real_fraction) pseudo-real plus the remainder sim, each drawn
// uniformly without replacement inside its domain, then the combined order
// is shuffled. Draw order from rng is fixed: pseudo-real picks, sim picks,
// final shuffle.
inline PerceptionBatch make_mixed_batch(const std::vector<const vision::DatasetItem*>& pool, int m,
                                        double real_fraction, Rng& rng) {
    if (m < 1) throw UsageError("make_mixed_batch: batch size must be >= 1");
    if (!(real_fraction >= 0.0 && real_fraction <= 1.0))
        throw UsageError("make_mixed_batch: real fraction must lie in [0,1]");
    const int want_real = static_cast<int>(std::lround(m * real_fraction));
    const int want_sim = m - want_real;

    std::vector<const vision::DatasetItem*> by_domain[2];
    for (const auto* it : pool) by_domain[static_cast<int>(it->domain)].push_back(it);
    auto& sims = by_domain[0];
    auto& reals = by_domain[1];
    if (static_cast<int>(reals.size()) < want_real)
        throw DataError("make_mixed_batch: need " + std::to_string(want_real) +
                        " pseudo-real samples, pool has " + std::to_string(reals.size()));
    if (static_cast<int>(sims.size()) < want_sim)
        throw DataError("make_mixed_batch: need " + std::to_string(want_sim) +
                        " sim samples, pool has " + std::to_string(sims.size()));

    PerceptionBatch b;
    b.items.reserve(static_cast<std::size_t>(m));
    auto draw = [&rng, &b](std::vector<const vision::DatasetItem*>& from, int k) {
        for (int j = 0; j < k; ++j) {
            const int n = static_cast<int>(from.size());
            std::swap(from[static_cast<std::size_t>(j)],
                      from[static_cast<std::size_t>(j + rng.uniform_int(n - j))]);
            b.items.push_back(from[static_cast<std::size_t>(j)]);
        }
    };
    draw(reals, want_real);
    draw(sims, want_sim);
    for (int j = m - 1; j > 0; --j)
        std::swap(b.items[static_cast<std::size_t>(j)],
                  b.items[static_cast<std::size_t>(rng.uniform_int(j + 1))]);
    b.n_sim = want_sim;
    b.n_pseudo_real = want_real;
    return b;
}

inline PerceptionBatch make_mixed_batch(const vision::Dataset& ds, int m, double real_fraction,
                                        Rng& rng) {
    std::vector<const vision::DatasetItem*> pool;
    pool.reserve(ds.items.size());
    for (const auto& it : ds.items) pool.push_back(&it);
    return make_mixed_batch(pool, m, real_fraction, rng);
}

template <typename T>
struct LossGrad {
    T loss = T(0);
    std::vector<T> grads;
};

// L_p = 1/(2m) sum_j ||y(I_j) - theta_j||^2, gradients per backprop.
template <typename T>
LossGrad<T> perception_loss(const nn::Network<T>& net, const PerceptionBatch& batch) {
    const int m = batch.size();
    if (m < 1) throw UsageError("perception_loss: empty batch");
    LossGrad<T> r;
    r.grads.assign(net.param_count(), T(0));
    const T invm = T(1) / static_cast<T>(m);
    nn::Tape<T> tape;
    nn::Tensor<T> upstream({kThetaDim});
    double loss = 0.0;
    for (const auto* it : batch.items) {
        const auto input = frame_tensor<T>(*it);
        const auto out = net.forward(input, &tape);
        for (int k = 0; k < kThetaDim; ++k) {
            const T diff = out.data[static_cast<std::size_t>(k)] - static_cast<T>(it->theta[static_cast<std::size_t>(k)]);
            loss += static_cast<double>(diff) * static_cast<double>(diff);
            upstream.data[static_cast<std::size_t>(k)] = diff * invm;
        }
        net.backward(tape, upstream, r.grads);
    }
    r.loss = static_cast<T>(0.5 * loss / m);
    return r;
}

inline double mean_abs_error(const nn::Network<float>& net,
                             const std::vector<const vision::DatasetItem*>& pool) {
    if (pool.empty()) throw UsageError("mean_abs_error: empty pool");
    double acc = 0.0;
    for (const auto* it : pool) {
        const auto theta = perceive(net, frame_tensor<float>(*it));
        for (int k = 0; k < kThetaDim; ++k)
            acc += std::abs(theta[static_cast<std::size_t>(k)] - static_cast<double>(it->theta[static_cast<std::size_t>(k)]));
    }
    return acc / (static_cast<double>(pool.size()) * kThetaDim);
}

struct PerceptionTrainConfig {
    int steps = 2000;
    int batch_size = 256;
    double real_fraction = 0.75;
    // Vanilla SGD through the sigmoid head leaves tiny per-parameter
    // gradients; this range is what actually moves the loss on the default
    // dataset (lower rates plateau immediately, >4 diverges).
    double lr_start = 2.0;
    double lr_end = 0.2;
    double val_fraction = 0.1;
    int log_every = 20;
    std::uint64_t seed = 0;
};

struct CurveRow {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct PerceptionTrainResult {
    nn::Network<float> net;
    std::vector<CurveRow> curve;
    // Pointers into the dataset passed to train_perception.
    std::vector<const vision::DatasetItem*> train_pool;
    std::vector<const vision::DatasetItem*> val_pool;
};

inline double linear_lr(double lr_start, double lr_end, int step, int steps) {
    if (steps <= 1) return lr_start;
    return lr_start + (lr_end - lr_start) * (static_cast<double>(step) / (steps - 1));
}

// Deterministic held-out split: item i goes to validation when the running
// count floor((i+1)*f) advances, which spreads the split evenly over both
// domains without consuming rng state.
inline void split_pools(const vision::Dataset& ds, double val_fraction,
                        std::vector<const vision::DatasetItem*>& train,
                        std::vector<const vision::DatasetItem*>& val) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw UsageError("split_pools: validation fraction must lie in [0,1)");
    train.clear();
    val.clear();
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        const auto before = static_cast<std::size_t>(static_cast<double>(i) * val_fraction);
        const auto after = static_cast<std::size_t>(static_cast<double>(i + 1) * val_fraction);
        (after > before ? val : train).push_back(&ds.items[i]);
    }
}

inline PerceptionTrainResult train_perception(const vision::Dataset& ds,
                                              const PerceptionTrainConfig& cfg) {
    PerceptionTrainResult res;
    res.net = init_perception_net(cfg.seed);
    split_pools(ds, cfg.val_fraction, res.train_pool, res.val_pool);
    Rng batch_rng(Rng::derive(cfg.seed, 1));
    for (int step = 0; step < cfg.steps; ++step) {
        const auto batch =
            make_mixed_batch(res.train_pool, cfg.batch_size, cfg.real_fraction, batch_rng);
        const auto lg = perception_loss(res.net, batch);
        if (!std::isfinite(static_cast<double>(lg.loss)))
            throw DivergenceError("train_perception: L_p non-finite at step " +
                                  std::to_string(step));
        const double lr = linear_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps);
        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps - 1))
            res.curve.push_back({step, static_cast<double>(lg.loss), lr});
        nn::sgd_step(res.net, lg.grads, static_cast<float>(lr));
    }
    return res;
}

inline void save_curve_csv(const std::vector<CurveRow>& curve, const std::string& path) {
    std::string out = "step,loss,lr\n";
    char line[96];
    for (const auto& row : curve) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", row.step, row.loss, row.lr);
        out += line;
    }
    ByteWriter w;
    w.put_bytes(out.data(), out.size());
    w.write_file(path);
}

}  // namespace handeye::perception
