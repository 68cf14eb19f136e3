// Minimal feed-forward substrate: 2-D convolution and dense layers with
// relu/sigmoid/linear activations, tape-based backpropagation, a flat
// parameter view (layer-major, weights then bias, row-major within each
// tensor), plain SGD, and a central finite-difference gradient oracle.
//
// Everything is templated on the scalar type: training runs in float,
// the oracle and gradient checks run the same code in double.

#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "handeye/common.hpp"
#include "handeye/rng.hpp"

namespace handeye::nn {

enum class Act : uint8_t { linear = 0, relu = 1, sigmoid = 2 };
enum class Kind : uint8_t { conv = 0, dense = 1 };

struct LayerSpec {
    Kind kind = Kind::dense;
    Act act = Act::linear;
    // conv fields
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 1;
    // dense fields
    int in_dim = 0, out_dim = 0;

    static LayerSpec conv(int in_ch, int out_ch, int kernel, int stride, Act act) {
        LayerSpec s;
        s.kind = Kind::conv;
        s.act = act;
        s.in_ch = in_ch;
        s.out_ch = out_ch;
        s.kernel = kernel;
        s.stride = stride;
        return s;
    }

    static LayerSpec dense(int in_dim, int out_dim, Act act) {
        LayerSpec s;
        s.kind = Kind::dense;
        s.act = act;
        s.in_dim = in_dim;
        s.out_dim = out_dim;
        return s;
    }
};

template <typename T>
struct Tensor {
    std::vector<int> shape;  // {c,h,w} for conv activations, {n} for dense
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        data.assign(n, T(0));
    }

    size_t size() const { return data.size(); }
    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Forward record: activations a0 (= input) .. aL (= output). Output of layer
// i is the input of layer i+1; a conv->dense boundary is a flat view of the
// same buffer. This is all backward needs, forward is never re-run.
template <typename T>
struct Tape {
    std::vector<Tensor<T>> acts;
    bool valid = false;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + ")";
}

template <typename T>
class Network {
  public:
    Network() = default;

    Network(std::vector<LayerSpec> specs, std::vector<int> input_shape)
        : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
        build();
    }

    const std::vector<LayerSpec>& layers() const { return specs_; }
    const std::vector<int>& input_shape() const { return input_shape_; }
    const std::vector<int>& output_shape() const { return shapes_.back(); }
    size_t param_count() const { return nparams_; }

    // Uniform [-r, r], r = sqrt(6 / (fan_in + fan_out)). Draws happen in
    // double and are cast, so float and double nets with one seed agree to
    // float rounding.
    void init_glorot(Rng& rng) {
        for (auto& L : layers_) {
            double fan_in, fan_out;
            if (L.spec.kind == Kind::conv) {
                fan_in = static_cast<double>(L.spec.in_ch) * L.spec.kernel * L.spec.kernel;
                fan_out = static_cast<double>(L.spec.out_ch) * L.spec.kernel * L.spec.kernel;
            } else {
                fan_in = L.spec.in_dim;
                fan_out = L.spec.out_dim;
            }
            const double r = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& w : L.w) w = static_cast<T>(rng.uniform(-r, r));
            for (auto& b : L.b) b = T(0);
        }
    }

    std::vector<T> get_params() const {
        std::vector<T> out;
        out.reserve(nparams_);
        for (const auto& L : layers_) {
            out.insert(out.end(), L.w.begin(), L.w.end());
            out.insert(out.end(), L.b.begin(), L.b.end());
        }
        return out;
    }

    void set_params(const std::vector<T>& p) {
        if (p.size() != nparams_)
            throw UsageError("set_params: expected " + std::to_string(nparams_) + " values, got " +
                             std::to_string(p.size()));
        size_t off = 0;
        for (auto& L : layers_) {
            std::copy(p.begin() + off, p.begin() + off + L.w.size(), L.w.begin());
            off += L.w.size();
            std::copy(p.begin() + off, p.begin() + off + L.b.size(), L.b.begin());
            off += L.b.size();
        }
    }

    template <typename U>
    Network<U> cast() const {
        Network<U> out(specs_, input_shape_);
        const auto p = get_params();
        std::vector<U> q(p.size());
        for (size_t i = 0; i < p.size(); ++i) q[i] = static_cast<U>(p[i]);
        out.set_params(q);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& input, Tape<T>* tape = nullptr) const {
        check_input(input);
        if (tape) {
            tape->acts.clear();
            tape->acts.reserve(layers_.size() + 1);
            tape->acts.push_back(input);
        }
        Tensor<T> cur = input;
        for (size_t i = 0; i < layers_.size(); ++i) {
            cur = layer_forward(layers_[i], cur, shapes_[i + 1]);
            if (tape) tape->acts.push_back(cur);
        }
        if (tape) tape->valid = true;
        return cur;
    }

    // Accumulates parameter gradients into grad_acc (flat layout identical to
    // get_params). input_grad, when requested, receives dLoss/dInput — the
    // hook that carries the task loss through a bottleneck into an upstream
    // net.
    void backward(const Tape<T>& tape, const Tensor<T>& upstream, std::vector<T>& grad_acc,
                  Tensor<T>* input_grad = nullptr) const {
        if (!tape.valid || tape.acts.size() != layers_.size() + 1)
            throw UsageError("backward: stale or missing tape");
        if (upstream.size() != tape.acts.back().size())
            throw UsageError("backward: upstream gradient shape " + shape_str(upstream.shape) +
                             " does not match output " + shape_str(tape.acts.back().shape));
        if (grad_acc.size() != nparams_)
            throw UsageError("backward: gradient accumulator has wrong length");

        std::vector<T> delta = upstream.data;
        std::vector<T> delta_prev;
        for (size_t li = layers_.size(); li-- > 0;) {
            const auto& L = layers_[li];
            const auto& a_in = tape.acts[li];
            const auto& a_out = tape.acts[li + 1];
            // d/dz through the activation, using the stored post-activation.
            for (size_t i = 0; i < delta.size(); ++i) delta[i] *= act_deriv(L.spec.act, a_out.data[i]);

            delta_prev.assign(a_in.size(), T(0));
            if (L.spec.kind == Kind::dense) {
                dense_backward(L, a_in.data, delta, grad_acc, delta_prev);
            } else {
                conv_backward(L, a_in.data, shapes_[li], shapes_[li + 1], delta, grad_acc, delta_prev);
            }
            delta.swap(delta_prev);
        }
        if (input_grad) {
            *input_grad = Tensor<T>(input_shape_);
            input_grad->data = delta;
        }
    }

    uint64_t params_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& L : layers_) {
            h = fnv1a(L.w.data(), L.w.size() * sizeof(T), h);
            h = fnv1a(L.b.data(), L.b.size() * sizeof(T), h);
        }
        return h;
    }

  private:
    struct Layer {
        LayerSpec spec;
        std::vector<T> w, b;
        size_t w_off = 0, b_off = 0;  // offsets into the flat view
    };

    void build() {
        shapes_.clear();
        shapes_.push_back(input_shape_);
        nparams_ = 0;
        for (size_t i = 0; i < specs_.size(); ++i) {
            const auto& s = specs_[i];
            const auto& in = shapes_.back();
            const std::string where = "layer " + std::to_string(i);
            Layer L;
            L.spec = s;
            if (s.kind == Kind::conv) {
                if (s.kernel < 1 || s.stride < 1 || s.in_ch < 1 || s.out_ch < 1)
                    throw UsageError(where + " (conv): kernel/stride/channels must be positive");
                if (in.size() != 3)
                    throw UsageError(where + " (conv): needs a (c,h,w) input, got " + shape_str(in));
                if (in[0] != s.in_ch)
                    throw UsageError(where + " (conv): expects " + std::to_string(s.in_ch) +
                                     " input channels, got " + std::to_string(in[0]));
                const int oh = (in[1] - s.kernel) / s.stride + 1;
                const int ow = (in[2] - s.kernel) / s.stride + 1;
                if (in[1] < s.kernel || in[2] < s.kernel || oh < 1 || ow < 1)
                    throw UsageError(where + " (conv): kernel " + std::to_string(s.kernel) +
                                     " does not fit input " + shape_str(in));
                L.w.assign(static_cast<size_t>(s.out_ch) * s.in_ch * s.kernel * s.kernel, T(0));
                L.b.assign(static_cast<size_t>(s.out_ch), T(0));
                shapes_.push_back({s.out_ch, oh, ow});
            } else {
                if (s.in_dim < 1 || s.out_dim < 1)
                    throw UsageError(where + " (dense): dimensions must be positive");
                size_t flat = 1;
                for (int d : in) flat *= static_cast<size_t>(d);
                if (flat != static_cast<size_t>(s.in_dim))
                    throw UsageError(where + " (dense): expects input of " + std::to_string(s.in_dim) +
                                     " values, got " + shape_str(in));
                L.w.assign(static_cast<size_t>(s.out_dim) * s.in_dim, T(0));
                L.b.assign(static_cast<size_t>(s.out_dim), T(0));
                shapes_.push_back({s.out_dim});
            }
            L.w_off = nparams_;
            nparams_ += L.w.size();
            L.b_off = nparams_;
            nparams_ += L.b.size();
            layers_.push_back(std::move(L));
        }
    }

    void check_input(const Tensor<T>& in) const {
        if (in.shape != input_shape_)
            throw UsageError("forward: input shape " + shape_str(in.shape) + " does not match network input " +
                             shape_str(input_shape_));
    }

    static T act_apply(Act a, T z) {
        switch (a) {
            case Act::relu: return z > T(0) ? z : T(0);
            case Act::sigmoid: return T(1) / (T(1) + std::exp(-z));
            default: return z;
        }
    }

    // Derivative expressed through the post-activation value.
    static T act_deriv(Act a, T out) {
        switch (a) {
            case Act::relu: return out > T(0) ? T(1) : T(0);
            case Act::sigmoid: return out * (T(1) - out);
            default: return T(1);
        }
    }

    Tensor<T> layer_forward(const Layer& L, const Tensor<T>& in, const std::vector<int>& out_shape) const {
        Tensor<T> out(out_shape);
        if (L.spec.kind == Kind::dense) {
            const int ni = L.spec.in_dim, no = L.spec.out_dim;
            for (int o = 0; o < no; ++o) {
                T acc = L.b[o];
                const T* wrow = &L.w[static_cast<size_t>(o) * ni];
                const T* x = in.data.data();
                for (int i = 0; i < ni; ++i) acc += wrow[i] * x[i];
                out.data[o] = act_apply(L.spec.act, acc);
            }
        } else {
            const int ic = L.spec.in_ch, oc = L.spec.out_ch, k = L.spec.kernel, s = L.spec.stride;
            const int ih = in.shape[1], iw = in.shape[2];
            const int oh = out_shape[1], ow = out_shape[2];
            for (int o = 0; o < oc; ++o) {
                const T* wbase = &L.w[static_cast<size_t>(o) * ic * k * k];
                for (int oy = 0; oy < oh; ++oy) {
                    T* orow = &out.data[(static_cast<size_t>(o) * oh + oy) * ow];
                    for (int ox = 0; ox < ow; ++ox) orow[ox] = L.b[o];
                    for (int c = 0; c < ic; ++c) {
                        for (int ky = 0; ky < k; ++ky) {
                            const T* irow = &in.data[(static_cast<size_t>(c) * ih + oy * s + ky) * iw];
                            const T* wrow = &wbase[(static_cast<size_t>(c) * k + ky) * k];
                            for (int ox = 0; ox < ow; ++ox) {
                                const T* ip = irow + ox * s;
                                T acc = T(0);
                                for (int kx = 0; kx < k; ++kx) acc += wrow[kx] * ip[kx];
                                orow[ox] += acc;
                            }
                        }
                    }
                }
                T* oplane = &out.data[static_cast<size_t>(o) * oh * ow];
                for (int i = 0; i < oh * ow; ++i) oplane[i] = act_apply(L.spec.act, oplane[i]);
            }
        }
        return out;
    }

    void dense_backward(const Layer& L, const std::vector<T>& x, const std::vector<T>& dz,
                        std::vector<T>& grad_acc, std::vector<T>& dx) const {
        const int ni = L.spec.in_dim, no = L.spec.out_dim;
        T* dw = &grad_acc[L.w_off];
        T* db = &grad_acc[L.b_off];
        for (int o = 0; o < no; ++o) {
            const T g = dz[o];
            db[o] += g;
            T* dwrow = &dw[static_cast<size_t>(o) * ni];
            const T* wrow = &L.w[static_cast<size_t>(o) * ni];
            for (int i = 0; i < ni; ++i) {
                dwrow[i] += g * x[i];
                dx[i] += g * wrow[i];
            }
        }
    }

    void conv_backward(const Layer& L, const std::vector<T>& x, const std::vector<int>& in_shape,
                       const std::vector<int>& out_shape, const std::vector<T>& dz, std::vector<T>& grad_acc,
                       std::vector<T>& dx) const {
        const int ic = L.spec.in_ch, oc = L.spec.out_ch, k = L.spec.kernel, s = L.spec.stride;
        const int ih = in_shape[1], iw = in_shape[2];
        const int oh = out_shape[1], ow = out_shape[2];
        T* dw = &grad_acc[L.w_off];
        T* db = &grad_acc[L.b_off];
        for (int o = 0; o < oc; ++o) {
            const T* wbase = &L.w[static_cast<size_t>(o) * ic * k * k];
            T* dwbase = &dw[static_cast<size_t>(o) * ic * k * k];
            for (int oy = 0; oy < oh; ++oy) {
                const T* grow = &dz[(static_cast<size_t>(o) * oh + oy) * ow];
                for (int ox = 0; ox < ow; ++ox) db[o] += grow[ox];
                for (int c = 0; c < ic; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const T* irow = &x[(static_cast<size_t>(c) * ih + oy * s + ky) * iw];
                        T* dirow = &dx[(static_cast<size_t>(c) * ih + oy * s + ky) * iw];
                        const T* wrow = &wbase[(static_cast<size_t>(c) * k + ky) * k];
                        T* dwrow = &dwbase[(static_cast<size_t>(c) * k + ky) * k];
                        for (int ox = 0; ox < ow; ++ox) {
                            const T g = grow[ox];
                            const T* ip = irow + ox * s;
                            T* dip = dirow + ox * s;
                            for (int kx = 0; kx < k; ++kx) {
                                dwrow[kx] += g * ip[kx];
                                dip[kx] += g * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<LayerSpec> specs_;
    std::vector<int> input_shape_;
    std::vector<Layer> layers_;
    std::vector<std::vector<int>> shapes_;  // activation shapes, input first
    size_t nparams_ = 0;
};

// params' = params - lr * grads. Refuses non-finite gradients so a divergence
// can never silently corrupt a parameter set.
template <typename T>
void sgd_apply(std::vector<T>& params, const std::vector<T>& grads, T lr) {
    if (params.size() != grads.size()) throw UsageError("sgd_apply: parameter/gradient size mismatch");
    if (!(lr > T(0))) throw UsageError("sgd_apply: learning rate must be positive");
    for (const T g : grads)
        if (!std::isfinite(static_cast<double>(g))) throw DivergenceError("sgd_apply: non-finite gradient");
    for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

template <typename T>
void sgd_step(Network<T>& net, const std::vector<T>& grads, T lr) {
    auto p = net.get_params();
    sgd_apply(p, grads, lr);
    net.set_params(p);
}

// Central difference (f(p+h) - f(p-h)) / 2h per parameter. loss_fn may run
// any number of forwards; the net is restored exactly before returning.
inline std::vector<double> finite_diff_grad(Network<double>& net,
                                            const std::function<double(const Network<double>&)>& loss_fn,
                                            double h = 1e-4) {
    auto p = net.get_params();
    std::vector<double> grad(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        net.set_params(p);
        const double fp = loss_fn(net);
        p[i] = orig - h;
        net.set_params(p);
        const double fm = loss_fn(net);
        p[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw DivergenceError("finite_diff_grad: non-finite loss");
        grad[i] = (fp - fm) / (2.0 * h);
    }
    net.set_params(p);
    return grad;
}

// Spec'd convenience form: scalar loss over the forward output of one input.
inline std::vector<double> finite_diff_grad(Network<double>& net, const Tensor<double>& input,
                                            const std::function<double(const Tensor<double>&)>& out_loss,
                                            double h = 1e-4) {
    return finite_diff_grad(
        net, [&](const Network<double>& n) { return out_loss(n.forward(input)); }, h);
}

// --- checkpoint container -------------------------------------------------
//
// Versioned binary, little-endian, byte-stable for identical state:
//   "HENC" u32(version) u64(seed)
//   u32(n input dims) i32[] input shape
//   u32(n layers)     per layer: u8 kind, u8 act, i32 in_ch,out_ch,kernel,stride,in_dim,out_dim
//   u64(n params)     f32[] flat parameters

inline constexpr uint32_t kCheckpointVersion = 1;

inline void serialize_net(ByteWriter& w, const Network<float>& net) {
    const auto& in = net.input_shape();
    w.put<uint32_t>(static_cast<uint32_t>(in.size()));
    for (int d : in) w.put<int32_t>(d);
    const auto& specs = net.layers();
    w.put<uint32_t>(static_cast<uint32_t>(specs.size()));
    for (const auto& s : specs) {
        w.put<uint8_t>(static_cast<uint8_t>(s.kind));
        w.put<uint8_t>(static_cast<uint8_t>(s.act));
        w.put<int32_t>(s.in_ch);
        w.put<int32_t>(s.out_ch);
        w.put<int32_t>(s.kernel);
        w.put<int32_t>(s.stride);
        w.put<int32_t>(s.in_dim);
        w.put<int32_t>(s.out_dim);
    }
    const auto p = net.get_params();
    w.put<uint64_t>(p.size());
    w.put_bytes(p.data(), p.size() * sizeof(float));
}

inline Network<float> deserialize_net(ByteReader& r) {
    const auto ndim = r.get<uint32_t>();
    std::vector<int> in(ndim);
    for (auto& d : in) d = r.get<int32_t>();
    const auto nlayers = r.get<uint32_t>();
    std::vector<LayerSpec> specs(nlayers);
    for (auto& s : specs) {
        s.kind = static_cast<Kind>(r.get<uint8_t>());
        s.act = static_cast<Act>(r.get<uint8_t>());
        s.in_ch = r.get<int32_t>();
        s.out_ch = r.get<int32_t>();
        s.kernel = r.get<int32_t>();
        s.stride = r.get<int32_t>();
        s.in_dim = r.get<int32_t>();
        s.out_dim = r.get<int32_t>();
    }
    Network<float> net(specs, in);
    const auto n = r.get<uint64_t>();
    if (n != net.param_count()) throw DataError("checkpoint parameter count mismatch");
    std::vector<float> p(n);
    r.get_bytes(p.data(), n * sizeof(float));
    net.set_params(p);
    return net;
}

inline std::vector<uint8_t> checkpoint_bytes(const Network<float>& net, uint64_t seed) {
    ByteWriter w;
    w.put_bytes("HENC", 4);
    w.put<uint32_t>(kCheckpointVersion);
    w.put<uint64_t>(seed);
    serialize_net(w, net);
    return w.bytes();
}

inline void save_checkpoint(const Network<float>& net, uint64_t seed, const std::string& path) {
    ByteWriter w;
    w.put_bytes("HENC", 4);
    w.put<uint32_t>(kCheckpointVersion);
    w.put<uint64_t>(seed);
    serialize_net(w, net);
    w.write_file(path);
}

inline Network<float> load_checkpoint(const std::string& path, uint64_t* seed_out = nullptr) {
    auto r = ByteReader::from_file(path);
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::string(magic, 4) != "HENC") throw DataError("not a network checkpoint: " + path);
    if (r.get<uint32_t>() != kCheckpointVersion) throw DataError("unsupported checkpoint version: " + path);
    const auto seed = r.get<uint64_t>();
    if (seed_out) *seed_out = seed;
    return deserialize_net(r);
}

}  // namespace handeye::nn
