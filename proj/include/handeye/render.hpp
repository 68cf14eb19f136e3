#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/rng.hpp"
#include "handeye/sim.hpp"

namespace handeye::vision {

inline constexpr int kResolution = 84;          // px per side
inline constexpr double kScale = 42.0;          // px per meter; 84 px spans 2.0 m
inline constexpr int kPixelCount = kResolution * kResolution;

// Gray levels, white background. Links darkest, target and end-effector
// marker at distinct mid grays so the two discs stay separable.
inline constexpr float kBackgroundGray = 1.0f;
inline constexpr float kLinkGray = 0.1f;
inline constexpr float kTargetGray = 0.3f;
inline constexpr float kEndEffectorGray = 0.6f;

inline constexpr int kLinkWidthPx = 2;
inline constexpr int kTargetRadiusPx = 3;
inline constexpr int kEndEffectorRadiusPx = 2;

enum class Domain : std::uint8_t { sim = 0, pseudo_real = 1 };

struct ImageFrame {
    std::array<float, kPixelCount> px{};
    Domain domain = Domain::sim;

    float& at(int row, int col) { return px[static_cast<std::size_t>(row) * kResolution + col]; }
    float at(int row, int col) const { return px[static_cast<std::size_t>(row) * kResolution + col]; }
};

struct Camera {
    sim::Vec2 center{0.0, 0.0};  // arm base sits here

    double half_extent() const { return kResolution / kScale / 2.0; }
};

struct PerturbationSpec {
    double noise_sigma = 0.05;       // additive Gaussian, per pixel
    double brightness_range = 0.1;   // uniform offset in [-range, +range]
    int thickness_delta = 1;         // stroke/disc thickness shift in {-d..+d} px
    int translation_px = 2;          // whole-scene shift in {-t..+t} px per axis

    void validate() const {
        if (noise_sigma < 0.0 || brightness_range < 0.0 || thickness_delta < 0 ||
            translation_px < 0)
            throw DataError("PerturbationSpec: perturbation magnitudes must be non-negative");
        if (brightness_range > 1.0 || noise_sigma > 1.0)
            throw DataError("PerturbationSpec: perturbation magnitudes exceed the pixel range");
    }

    static PerturbationSpec none() { return PerturbationSpec{0.0, 0.0, 0, 0}; }
};

// (col, row); row 0 is the top of the image, +y in the world points up.
inline std::array<int, 2> world_to_pixel(const Camera& cam, const sim::Vec2& p) {
    const double h = cam.half_extent();
    const int col = static_cast<int>(std::lround((p[0] - (cam.center[0] - h)) * kScale));
    const int row = static_cast<int>(std::lround(((cam.center[1] + h) - p[1]) * kScale));
    return {col, row};
}

namespace detail {

inline void stamp(ImageFrame& f, int col, int row, int size, float value) {
    const int lo = -((size - 1) / 2);
    const int hi = size / 2;
    for (int dr = lo; dr <= hi; ++dr)
        for (int dc = lo; dc <= hi; ++dc) {
            const int r = row + dr;
            const int c = col + dc;
            if (r >= 0 && r < kResolution && c >= 0 && c < kResolution) f.at(r, c) = value;
        }
}

// Integer Bresenham stroke, no anti-aliasing; each visited pixel is widened
// by stamping a width x width block.
inline void stroke(ImageFrame& f, std::array<int, 2> p0, std::array<int, 2> p1, int width,
                   float value, int dx_off, int dy_off) {
    int x0 = p0[0] + dx_off, y0 = p0[1] + dy_off;
    const int x1 = p1[0] + dx_off, y1 = p1[1] + dy_off;
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        stamp(f, x0, y0, width, value);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) { err += dy; x0 += sx; }
        if (e2 <= dx) { err += dx; y0 += sy; }
    }
}

inline void fill_disc(ImageFrame& f, std::array<int, 2> c, int radius, float value, int dx_off,
                      int dy_off) {
    const int col = c[0] + dx_off, row = c[1] + dy_off;
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius) {
                const int r = row + dr, cc = col + dc;
                if (r >= 0 && r < kResolution && cc >= 0 && cc < kResolution) f.at(r, cc) = value;
            }
}

inline ImageFrame rasterize(const sim::ArmModel& arm, const sim::SceneState& s, const Camera& cam,
                            int thickness_delta, int dx_off, int dy_off) {
    ImageFrame f;
    f.px.fill(kBackgroundGray);
    const int link_w = std::max(1, kLinkWidthPx + thickness_delta);
    const int target_r = std::max(1, kTargetRadiusPx + thickness_delta);
    const int ee_r = std::max(1, kEndEffectorRadiusPx + thickness_delta);
    const auto pts = sim::chain_points(arm, s.q);
    for (int i = 0; i < 3; ++i)
        stroke(f, world_to_pixel(cam, pts[i]), world_to_pixel(cam, pts[i + 1]), link_w, kLinkGray,
               dx_off, dy_off);
    fill_disc(f, world_to_pixel(cam, s.target), target_r, kTargetGray, dx_off, dy_off);
    fill_disc(f, world_to_pixel(cam, pts[3]), ee_r, kEndEffectorGray, dx_off, dy_off);
    return f;
}

}  // namespace detail

// Deterministic rasterization of the clean simulation domain. Content
// outside the viewport is clipped, never an error.
inline ImageFrame render(const sim::SceneState& s, const Camera& cam,
                         const sim::ArmModel& arm = sim::ArmModel{}) {
    return detail::rasterize(arm, s, cam, 0, 0, 0);
}

// Clean render followed by seeded perturbations. Draw order from rng is
// fixed: x shift, y shift, thickness delta, brightness offset, then one
// Gaussian per pixel in row-major order.
inline ImageFrame render_pseudo_real(const sim::SceneState& s, const Camera& cam,
                                     const PerturbationSpec& spec, Rng& rng,
                                     const sim::ArmModel& arm = sim::ArmModel{}) {
    spec.validate();
    const int dx = spec.translation_px == 0
                       ? 0
                       : rng.uniform_int(2 * spec.translation_px + 1) - spec.translation_px;
    const int dy = spec.translation_px == 0
                       ? 0
                       : rng.uniform_int(2 * spec.translation_px + 1) - spec.translation_px;
    const int dt = spec.thickness_delta == 0
                       ? 0
                       : rng.uniform_int(2 * spec.thickness_delta + 1) - spec.thickness_delta;
    const double bright =
        spec.brightness_range == 0.0 ? 0.0 : rng.uniform(-spec.brightness_range, spec.brightness_range);
    ImageFrame f = detail::rasterize(arm, s, cam, dt, dx, dy);
    f.domain = Domain::pseudo_real;
    for (auto& p : f.px) {
        double v = p + bright;
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        p = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return f;
}

// Theta = [x*_x, x*_y, q1, q2, q3], each component mapped linearly to [0,1]:
// target coordinates over the viewport bounds, joints over their limits.
using ThetaVec = std::array<double, 5>;

inline ThetaVec normalize_theta(const sim::SceneState& s, const Camera& cam,
                                const sim::ArmModel& arm = sim::ArmModel{}) {
    const double h = cam.half_extent();
    ThetaVec t;
    t[0] = (s.target[0] - (cam.center[0] - h)) / (2.0 * h);
    t[1] = (s.target[1] - (cam.center[1] - h)) / (2.0 * h);
    for (int i = 0; i < 3; ++i) {
        const auto& lim = arm.joint_limits[i];
        t[2 + i] = (s.q[i] - lim[0]) / (lim[1] - lim[0]);
    }
    return t;
}

inline std::pair<sim::Vec2, sim::Joints> denormalize_theta(const ThetaVec& t, const Camera& cam,
                                                           const sim::ArmModel& arm = sim::ArmModel{}) {
    for (double v : t)
        if (!(v >= 0.0 && v <= 1.0))
            throw DataError("denormalize_theta: component outside [0,1]");
    const double h = cam.half_extent();
    sim::Vec2 target{cam.center[0] - h + t[0] * 2.0 * h, cam.center[1] - h + t[1] * 2.0 * h};
    sim::Joints q;
    for (int i = 0; i < 3; ++i) {
        const auto& lim = arm.joint_limits[i];
        q[i] = lim[0] + t[2 + i] * (lim[1] - lim[0]);
    }
    return {target, q};
}

// Labeled dataset of frames and their ground-truth bottleneck vectors.
// Pixels are stored quantized to 8 bits; training reads them back through
// pixel_to_float, so the file is the single source of truth for inputs.
struct DatasetItem {
    Domain domain = Domain::sim;
    std::array<std::uint8_t, kPixelCount> px{};
    std::array<float, 5> theta{};
};

struct Dataset {
    std::uint64_t seed = 0;
    std::uint32_t n_sim = 0;
    std::uint32_t n_pseudo_real = 0;
    Camera camera;
    PerturbationSpec perturbation;
    std::vector<DatasetItem> items;
};

inline std::uint8_t quantize_pixel(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}
inline float pixel_to_float(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

inline DatasetItem make_item(const ImageFrame& f, const ThetaVec& theta) {
    DatasetItem it;
    it.domain = f.domain;
    for (int i = 0; i < kPixelCount; ++i) it.px[static_cast<std::size_t>(i)] = quantize_pixel(f.px[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 5; ++i) it.theta[static_cast<std::size_t>(i)] = static_cast<float>(theta[static_cast<std::size_t>(i)]);
    return it;
}

// Scenes come from sample_task; item i uses the derived stream (seed, i) so
// generation order never affects content.
inline Dataset build_dataset(std::uint32_t n_sim, std::uint32_t n_pseudo_real, std::uint64_t seed,
                             const Camera& cam = Camera{},
                             const PerturbationSpec& spec = PerturbationSpec{},
                             const sim::ArmModel& arm = sim::ArmModel{}) {
    spec.validate();
    Dataset ds;
    ds.seed = seed;
    ds.n_sim = n_sim;
    ds.n_pseudo_real = n_pseudo_real;
    ds.camera = cam;
    ds.perturbation = spec;
    ds.items.reserve(n_sim + n_pseudo_real);
    sim::Workspace ws{cam.center, cam.half_extent()};
    for (std::uint32_t i = 0; i < n_sim + n_pseudo_real; ++i) {
        Rng rng(Rng::derive(seed, i));
        const sim::SceneState s = sim::sample_task(arm, ws, rng);
        const ThetaVec theta = normalize_theta(s, cam, arm);
        const ImageFrame f = i < n_sim ? render(s, cam, arm)
                                       : render_pseudo_real(s, cam, spec, rng, arm);
        ds.items.push_back(make_item(f, theta));
    }
    return ds;
}

inline constexpr std::uint32_t kDatasetMagic = 0x53444548;  // "HEDS"
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline Dataset read_dataset(ByteReader& r) {
    if (r.get<std::uint32_t>() != kDatasetMagic) throw DataError("dataset: bad magic");
    if (r.get<std::uint32_t>() != kDatasetVersion) throw DataError("dataset: unsupported version");
    Dataset ds;
    ds.seed = r.get<std::uint64_t>();
    ds.n_sim = r.get<std::uint32_t>();
    ds.n_pseudo_real = r.get<std::uint32_t>();
    ds.camera.center[0] = r.get<double>();
    ds.camera.center[1] = r.get<double>();
    ds.perturbation.noise_sigma = r.get<double>();
    ds.perturbation.brightness_range = r.get<double>();
    ds.perturbation.thickness_delta = static_cast<int>(r.get<std::int32_t>());
    ds.perturbation.translation_px = static_cast<int>(r.get<std::int32_t>());
    const std::uint64_t n = static_cast<std::uint64_t>(ds.n_sim) + ds.n_pseudo_real;
    ds.items.resize(n);
    for (auto& it : ds.items) {
        const auto tag = r.get<std::uint8_t>();
        if (tag > 1) throw DataError("dataset: bad domain tag");
        it.domain = static_cast<Domain>(tag);
        r.get_bytes(it.px.data(), it.px.size());
        for (float& t : it.theta) t = r.get<float>();
    }
    if (r.remaining() != 0) throw DataError("dataset: trailing bytes");
    return ds;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
    ByteWriter w;
    w.put<std::uint32_t>(kDatasetMagic);
    w.put<std::uint32_t>(kDatasetVersion);
    w.put<std::uint64_t>(ds.seed);
    w.put<std::uint32_t>(ds.n_sim);
    w.put<std::uint32_t>(ds.n_pseudo_real);
    w.put<double>(ds.camera.center[0]);
    w.put<double>(ds.camera.center[1]);
    w.put<double>(ds.perturbation.noise_sigma);
    w.put<double>(ds.perturbation.brightness_range);
    w.put<std::int32_t>(ds.perturbation.thickness_delta);
    w.put<std::int32_t>(ds.perturbation.translation_px);
    for (const auto& it : ds.items) {
        w.put<std::uint8_t>(static_cast<std::uint8_t>(it.domain));
        w.put_bytes(it.px.data(), it.px.size());
        for (float t : it.theta) w.put<float>(t);
    }
    return w.bytes();
}

inline Dataset deserialize_dataset(std::vector<std::uint8_t> buf) {
    ByteReader r(std::move(buf));
    return detail::read_dataset(r);
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    ByteWriter w;
    const auto bytes = serialize_dataset(ds);
    w.put_bytes(bytes.data(), bytes.size());
    w.write_file(path);
}

inline Dataset load_dataset(const std::string& path) {
    auto r = ByteReader::from_file(path);
    return detail::read_dataset(r);
}

}  // namespace handeye::vision
