#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "handeye/nn.hpp"
#include "handeye/rng.hpp"

using namespace handeye;
using namespace handeye::nn;

namespace {

Network<double> random_net(std::vector<LayerSpec> specs, std::vector<int> input_shape,
                           std::uint64_t seed) {
    Network<double> net(std::move(specs), std::move(input_shape));
    Rng rng(seed);
    net.init_glorot(rng);
    return net;
}

}  // namespace

TEST_CASE("layer spec validation") {
    CHECK_THROWS_AS(Network<float>({LayerSpec::conv(1, 1, 0, 1, Act::linear)}, {1, 4, 4}),
                    UsageError);
    CHECK_THROWS_AS(Network<float>({LayerSpec::conv(1, 1, 3, 0, Act::linear)}, {1, 4, 4}),
                    UsageError);
    CHECK_THROWS_AS(Network<float>({LayerSpec::dense(0, 3, Act::linear)}, {0}), UsageError);
    // Conv output must keep at least one pixel: kernel larger than input fails.
    CHECK_THROWS_AS(Network<float>({LayerSpec::conv(1, 1, 5, 1, Act::linear)}, {1, 4, 4}),
                    UsageError);
    // Channel mismatch is reported against the offending layer.
    CHECK_THROWS_WITH_AS(Network<float>({LayerSpec::conv(2, 1, 2, 1, Act::linear)}, {1, 4, 4}),
                         doctest::Contains("layer 0"), UsageError);
}

TEST_CASE("conv output spatial size follows floor((in - kernel)/stride) + 1") {
    const Network<float> net({LayerSpec::conv(1, 8, 8, 4, Act::relu),
                              LayerSpec::conv(8, 16, 4, 2, Act::relu),
                              LayerSpec::conv(16, 16, 3, 1, Act::relu)},
                             {1, 84, 84});
    CHECK(net.output_shape() == std::vector<int>{16, 7, 7});
}

TEST_CASE("identity dense layer maps v to v") {
    Network<float> net({LayerSpec::dense(3, 3, Act::linear)}, {3});
    std::vector<float> params(net.param_count(), 0.0f);
    // Row-major weights first, then biases: set the diagonal.
    for (int i = 0; i < 3; ++i) params[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(i)] = 1.0f;
    net.set_params(params);
    Tensor<float> in({3});
    in.data = {0.5f, -2.0f, 7.25f};
    const auto out = net.forward(in);
    CHECK(out.data == in.data);
}

TEST_CASE("zero-weight conv layer is a constant map of its bias") {
    Network<float> net({LayerSpec::conv(1, 2, 2, 1, Act::linear)}, {1, 3, 3});
    std::vector<float> params(net.param_count(), 0.0f);
    params[net.param_count() - 2] = 1.25f;  // bias of channel 0
    params[net.param_count() - 1] = -3.0f;  // bias of channel 1
    net.set_params(params);
    Tensor<float> in({1, 3, 3});
    in.data = {9, 8, 7, 6, 5, 4, 3, 2, 1};
    const auto out = net.forward(in);
    REQUIRE(out.shape == std::vector<int>{2, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(out.data[static_cast<std::size_t>(i)] == 1.25f);
    for (int i = 4; i < 8; ++i) CHECK(out.data[static_cast<std::size_t>(i)] == -3.0f);
}

TEST_CASE("hand-evaluated 2x2 convolution") {
    Network<float> net({LayerSpec::conv(1, 1, 2, 1, Act::linear)}, {1, 2, 2});
    // Weights [[1,0],[0,1]], bias 0.
    net.set_params({1, 0, 0, 1, 0});
    Tensor<float> in({1, 2, 2});
    in.data = {1, 2, 3, 4};
    const auto out = net.forward(in);
    REQUIRE(out.shape == std::vector<int>{1, 1, 1});
    CHECK(out.data[0] == 5.0f);
}

TEST_CASE("forward rejects mismatched input shapes") {
    Network<float> net({LayerSpec::dense(4, 2, Act::linear)}, {4});
    Tensor<float> in({3});
    CHECK_THROWS_AS(net.forward(in), UsageError);
}

TEST_CASE("linear layer backward: dW = g x^T, db = g, dx = W^T g") {
    Network<double> net({LayerSpec::dense(2, 2, Act::linear)}, {2});
    const std::vector<double> w = {1.0, 2.0, 3.0, 4.0, 0.5, -0.5};  // rows of W, then b
    net.set_params(w);
    Tensor<double> x({2});
    x.data = {5.0, -1.0};
    Tape<double> tape;
    net.forward(x, &tape);
    Tensor<double> g({2});
    g.data = {0.25, -2.0};
    std::vector<double> grads(net.param_count(), 0.0);
    Tensor<double> dx;
    net.backward(tape, g, grads, &dx);
    // dW row o = g[o] * x
    CHECK(grads[0] == doctest::Approx(0.25 * 5.0));
    CHECK(grads[1] == doctest::Approx(0.25 * -1.0));
    CHECK(grads[2] == doctest::Approx(-2.0 * 5.0));
    CHECK(grads[3] == doctest::Approx(-2.0 * -1.0));
    // db = g
    CHECK(grads[4] == doctest::Approx(0.25));
    CHECK(grads[5] == doctest::Approx(-2.0));
    // dx = W^T g
    CHECK(dx.data[0] == doctest::Approx(1.0 * 0.25 + 3.0 * -2.0));
    CHECK(dx.data[1] == doctest::Approx(2.0 * 0.25 + 4.0 * -2.0));
}

TEST_CASE("zero upstream gives zero gradients and zero input gradient") {
    auto net = random_net({LayerSpec::conv(1, 2, 2, 1, Act::relu), LayerSpec::dense(8, 3, Act::sigmoid)},
                          {1, 3, 3}, 42);
    Tensor<double> in({1, 3, 3});
    Rng rng(7);
    for (auto& v : in.data) v = rng.uniform();
    Tape<double> tape;
    net.forward(in, &tape);
    Tensor<double> up({3});
    std::vector<double> grads(net.param_count(), 0.0);
    Tensor<double> dx;
    net.backward(tape, up, grads, &dx);
    for (double v : grads) CHECK(v == 0.0);
    for (double v : dx.data) CHECK(v == 0.0);
}

TEST_CASE("backward without a tape is a usage error") {
    auto net = random_net({LayerSpec::dense(2, 2, Act::linear)}, {2}, 1);
    Tape<double> tape;  // never filled
    Tensor<double> up({2});
    std::vector<double> grads(net.param_count(), 0.0);
    CHECK_THROWS_AS(net.backward(tape, up, grads), UsageError);
}

TEST_CASE("backward matches finite differences on a random 2-layer net") {
    auto net = random_net({LayerSpec::conv(1, 2, 3, 2, Act::relu), LayerSpec::dense(8, 4, Act::sigmoid)},
                          {1, 5, 5}, 914);  // seed chosen away from relu kinks
    Tensor<double> in({1, 5, 5});
    Rng rng(3);
    for (auto& v : in.data) v = rng.uniform();
    // Quadratic loss 0.5*sum(y^2): smooth, nontrivial gradient.
    Tape<double> tape;
    const auto out = net.forward(in, &tape);
    Tensor<double> up(out.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) up.data[i] = out.data[i];
    std::vector<double> grads(net.param_count(), 0.0);
    net.backward(tape, up, grads);
    const auto fd = finite_diff_grad(net, [&in](const Network<double>& n) {
        const auto y = n.forward(in);
        double acc = 0.0;
        for (double v : y.data) acc += v * v;
        return 0.5 * acc;
    });
    REQUIRE(fd.size() == grads.size());
    int bad = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double denom = std::max(1e-8, std::abs(fd[i]) + std::abs(grads[i]));
        if (std::abs(fd[i] - grads[i]) / denom > 1e-4) ++bad;
    }
    CHECK(bad == 0);
}

TEST_CASE("finite_diff_grad on f(theta) = theta^2 at theta = 3") {
    Network<double> net({LayerSpec::dense(1, 1, Act::linear)}, {1});
    net.set_params({3.0, 0.0});
    const auto fd = finite_diff_grad(net, [](const Network<double>& n) {
        const double w = n.get_params()[0];
        return w * w;
    });
    CHECK(std::abs(fd[0] - 6.0) < 1e-6);
    CHECK(fd[1] == 0.0);  // constant in the bias
}

TEST_CASE("finite_diff_grad of a constant function is zero") {
    auto net = random_net({LayerSpec::dense(3, 2, Act::relu)}, {3}, 5);
    const auto fd = finite_diff_grad(net, [](const Network<double>&) { return 4.25; });
    for (double v : fd) CHECK(v == 0.0);
}

TEST_CASE("finite_diff_grad rejects non-finite losses") {
    auto net = random_net({LayerSpec::dense(2, 1, Act::linear)}, {2}, 6);
    CHECK_THROWS_AS(finite_diff_grad(
                        net, [](const Network<double>&) { return std::numeric_limits<double>::quiet_NaN(); }),
                    DivergenceError);
}

TEST_CASE("five-parameter net: backward matches the oracle under a quadratic loss") {
    auto net = random_net({LayerSpec::dense(2, 1, Act::sigmoid), LayerSpec::dense(1, 1, Act::linear)},
                          {2}, 77);
    REQUIRE(net.param_count() == 5);
    Tensor<double> in({2});
    in.data = {0.3, -0.9};
    Tape<double> tape;
    const auto out = net.forward(in, &tape);
    Tensor<double> up({1});
    up.data = {out.data[0] - 0.25};
    std::vector<double> grads(net.param_count(), 0.0);
    net.backward(tape, up, grads);
    const auto fd = finite_diff_grad(net, [&in](const Network<double>& n) {
        const double y = n.forward(in).data[0];
        return 0.5 * (y - 0.25) * (y - 0.25);
    });
    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double denom = std::max(1e-8, std::abs(fd[i]) + std::abs(grads[i]));
        CHECK(std::abs(fd[i] - grads[i]) / denom < 1e-4);
    }
}

TEST_CASE("sgd_apply arithmetic and error handling") {
    std::vector<float> p{1.0f, 2.0f};
    sgd_apply(p, {0.0f, 0.0f}, 0.01f);
    CHECK(p == std::vector<float>{1.0f, 2.0f});

    std::vector<float> q{1.0f};
    sgd_apply(q, {2.0f}, 0.5f);
    CHECK(q[0] == 0.0f);

    // Twice with lr equals once with 2*lr on constant gradients.
    std::vector<double> a{1.0, -2.0, 3.0}, b = a;
    const std::vector<double> g{0.5, 0.25, -1.0};
    sgd_apply(a, g, 0.1);
    sgd_apply(a, g, 0.1);
    sgd_apply(b, g, 0.2);
    for (int i = 0; i < 3; ++i) CHECK(a[static_cast<std::size_t>(i)] == doctest::Approx(b[static_cast<std::size_t>(i)]).epsilon(1e-12));

    std::vector<float> r{1.0f};
    CHECK_THROWS_AS(sgd_apply(r, {1.0f, 2.0f}, 0.1f), UsageError);
    CHECK_THROWS_AS(sgd_apply(r, {1.0f}, 0.0f), UsageError);
    CHECK_THROWS_AS(sgd_apply(r, {1.0f}, -0.5f), UsageError);
    CHECK_THROWS_AS(sgd_apply(r, {std::numeric_limits<float>::infinity()}, 0.1f), DivergenceError);
    CHECK(r[0] == 1.0f);  // refused update leaves parameters untouched
}

TEST_CASE("forward/backward round trip keeps the parameter shape") {
    auto net = random_net({LayerSpec::conv(1, 2, 2, 1, Act::relu), LayerSpec::dense(8, 3, Act::linear)},
                          {1, 3, 3}, 12);
    const auto n0 = net.param_count();
    Tensor<double> in({1, 3, 3});
    Tape<double> tape;
    const auto out = net.forward(in, &tape);
    Tensor<double> up(out.shape);
    std::vector<double> grads(n0, 0.0);
    net.backward(tape, up, grads);
    CHECK(net.param_count() == n0);
    CHECK(net.get_params().size() == n0);
}

TEST_CASE("determinism: same seed gives bit-identical outputs and gradients") {
    auto make = [] {
        return random_net({LayerSpec::conv(1, 2, 3, 2, Act::relu), LayerSpec::dense(8, 3, Act::sigmoid)},
                          {1, 5, 5}, 123);
    };
    auto n1 = make();
    auto n2 = make();
    CHECK(n1.get_params() == n2.get_params());
    Tensor<double> in({1, 5, 5});
    Rng rng(9);
    for (auto& v : in.data) v = rng.uniform();
    Tape<double> t1, t2;
    const auto o1 = n1.forward(in, &t1);
    const auto o2 = n2.forward(in, &t2);
    CHECK(o1.data == o2.data);
    Tensor<double> up(o1.shape);
    for (auto& v : up.data) v = 1.0;
    std::vector<double> g1(n1.param_count(), 0.0), g2(n2.param_count(), 0.0);
    n1.backward(t1, up, g1);
    n2.backward(t2, up, g2);
    CHECK(g1 == g2);
}

TEST_CASE("checkpoint round trip is byte-stable") {
    Network<float> net({LayerSpec::conv(1, 4, 3, 2, Act::relu), LayerSpec::dense(4, 2, Act::sigmoid)},
                       {1, 3, 3});
    Rng rng(55);
    net.init_glorot(rng);
    const auto bytes = checkpoint_bytes(net, 55);
    const auto bytes2 = checkpoint_bytes(net, 55);
    CHECK(bytes == bytes2);

    ByteReader r(bytes);
    char magic[4];
    r.get_bytes(magic, 4);
    CHECK(std::string(magic, 4) == "HENC");
    CHECK(r.get<std::uint32_t>() == kCheckpointVersion);
    CHECK(r.get<std::uint64_t>() == 55);
    auto loaded = deserialize_net(r);
    CHECK(loaded.get_params() == net.get_params());
    CHECK(loaded.params_hash() == net.params_hash());
    CHECK(checkpoint_bytes(loaded, 55) == bytes);
}

TEST_CASE("float/double cast preserves parameters exactly in the float direction") {
    Network<float> net({LayerSpec::dense(3, 2, Act::sigmoid)}, {3});
    Rng rng(8);
    net.init_glorot(rng);
    const auto dnet = net.cast<double>();
    const auto back = dnet.cast<float>();
    CHECK(back.get_params() == net.get_params());
}
