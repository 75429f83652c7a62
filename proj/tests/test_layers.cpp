#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pneumo/errors.hpp"
#include "pneumo/layers.hpp"

using namespace pneumo;

namespace {

// Forward pass of conv against the nested-loop oracle, random shapes.
void check_conv_against_oracle(SeededRng& rng) {
    const int n = 1 + static_cast<int>(rng.bounded(2));
    const int ic = 1 + static_cast<int>(rng.bounded(3));
    const int oc = 1 + static_cast<int>(rng.bounded(4));
    const int h = 3 + static_cast<int>(rng.bounded(4));
    const int w = 3 + static_cast<int>(rng.bounded(4));
    Conv2d<float> conv(ic, oc);
    conv.weights() = oracles::random_tensor<float>({oc, ic, 3, 3}, rng);
    conv.bias() = oracles::random_tensor<float>({oc}, rng);
    const Tensor x = oracles::random_tensor<float>({n, ic, h, w}, rng);
    const Tensor y = conv.forward(x, Mode::Eval);
    const Tensor ref = oracles::conv2d_ref(x, conv.weights(), conv.bias());
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double err = oracles::rel_err(y[i], ref[i]);
        CHECK(err < 1e-6);
    }
}

} // namespace

TEST_CASE("conv2d matches the nested-loop oracle on random instances") {
    SeededRng rng(101);
    for (int trial = 0; trial < 20; ++trial) check_conv_against_oracle(rng);
}

TEST_CASE("conv2d hand-computed 3x3 example with zero padding") {
    // Identity kernel (centre 1) must reproduce the input.
    Conv2d<float> conv(1, 1);
    conv.weights().fill(0.0f);
    conv.weights().at(0, 0, 1, 1) = 1.0f;
    const Tensor x = Tensor::from_data({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor y = conv.forward(x, Mode::Eval);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    // Shift kernel: weight at (0,0) pulls the up-left neighbour; border
    // pixels read the zero padding.
    Conv2d<float> shift(1, 1);
    shift.weights().fill(0.0f);
    shift.weights().at(0, 0, 0, 0) = 1.0f;
    const Tensor s = shift.forward(x, Mode::Eval);
    CHECK(s.at(0, 0, 0, 0) == 0.0f); // padding
    CHECK(s.at(0, 0, 1, 1) == 1.0f); // x(0,0)
    CHECK(s.at(0, 0, 1, 2) == 2.0f); // x(0,1)
}

TEST_CASE("conv2d bias is added to every output element") {
    Conv2d<float> conv(1, 2);
    conv.weights().fill(0.0f);
    conv.bias() = Tensor::from_data({2}, {0.5f, -1.5f});
    const Tensor x({1, 1, 3, 3}, 7.0f);
    const Tensor y = conv.forward(x, Mode::Eval);
    for (int i = 0; i < 9; ++i) {
        CHECK(y[static_cast<std::size_t>(i)] == 0.5f);
        CHECK(y[static_cast<std::size_t>(9 + i)] == -1.5f);
    }
}

TEST_CASE("conv2d validates input rank and channels") {
    Conv2d<float> conv(3, 4);
    CHECK_THROWS_AS(conv.forward(Tensor({1, 2, 5, 5}, 0.0f), Mode::Eval), ShapeError);
    CHECK_THROWS_AS(conv.forward(Tensor({3, 5, 5}, 0.0f), Mode::Eval), ShapeError);
    CHECK_THROWS_AS(Conv2d<float>(1, 1, 4), ShapeError); // even kernel
}

TEST_CASE("separable conv matches depthwise-then-pointwise oracle") {
    SeededRng rng(202);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng.bounded(2));
        const int ic = 1 + static_cast<int>(rng.bounded(3));
        const int oc = 1 + static_cast<int>(rng.bounded(4));
        const int h = 3 + static_cast<int>(rng.bounded(4));
        const int w = 3 + static_cast<int>(rng.bounded(4));
        SeparableConv2d<float> sep(ic, oc);
        sep.depthwise_weights() = oracles::random_tensor<float>({ic, 1, 3, 3}, rng);
        sep.pointwise_weights() = oracles::random_tensor<float>({oc, ic, 1, 1}, rng);
        sep.bias() = oracles::random_tensor<float>({oc}, rng);
        const Tensor x = oracles::random_tensor<float>({n, ic, h, w}, rng);
        const Tensor y = sep.forward(x, Mode::Eval);
        const Tensor ref = oracles::separable_ref(x, sep.depthwise_weights(),
                                                  sep.pointwise_weights(), sep.bias());
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.numel(); ++i)
            CHECK(oracles::rel_err(y[i], ref[i]) < 1e-6);
    }
}

TEST_CASE("separable conv uses far fewer parameters than a plain conv") {
    SeparableConv2d<float> sep(128, 256);
    std::size_t sep_params = 0;
    for (const auto* p : sep.params()) sep_params += p->numel();
    CHECK(sep_params == 128 * 9 + 256 * 128 + 256); // 34,176

    Conv2d<float> plain(128, 256);
    std::size_t plain_params = 0;
    for (const auto* p : plain.params()) plain_params += p->numel();
    CHECK(plain_params == 256 * 128 * 9 + 256); // 295,168
    CHECK(sep_params * 8 < plain_params);
}

TEST_CASE("maxpool halves dimensions with floor semantics") {
    SeededRng rng(303);
    MaxPool2x2<float> pool;
    const Tensor x = oracles::random_tensor<float>({2, 3, 5, 7}, rng);
    const Tensor y = pool.forward(x, Mode::Eval);
    CHECK(y.shape() == std::vector<int>{2, 3, 2, 3});
    const Tensor ref = oracles::maxpool_ref(x);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == ref[i]);
}

TEST_CASE("maxpool known example and gradient routing") {
    MaxPool2x2<float> pool;
    const Tensor x = Tensor::from_data({1, 1, 2, 4}, {1, 5, 2, 0,
                                                      3, 4, 8, 6});
    const Tensor y = pool.forward(x, Mode::Train);
    CHECK(y.at(0, 0, 0, 0) == 5.0f);
    CHECK(y.at(0, 0, 0, 1) == 8.0f);

    const Tensor g = Tensor::from_data({1, 1, 1, 2}, {10.0f, 20.0f});
    const Tensor gx = pool.backward(g);
    const std::vector<float> expect = {0, 10, 0, 0,
                                       0, 0, 20, 0};
    for (std::size_t i = 0; i < gx.numel(); ++i) CHECK(gx[i] == expect[i]);
}

TEST_CASE("maxpool ties route the gradient to the first element in scan order") {
    MaxPool2x2<float> pool;
    const Tensor x({1, 1, 2, 2}, 3.0f); // all equal
    (void)pool.forward(x, Mode::Train);
    const Tensor gx = pool.backward(Tensor({1, 1, 1, 1}, 1.0f));
    CHECK(gx[0] == 1.0f);
    CHECK(gx[1] == 0.0f);
    CHECK(gx[2] == 0.0f);
    CHECK(gx[3] == 0.0f);
}

TEST_CASE("maxpool rejects inputs smaller than the window") {
    MaxPool2x2<float> pool;
    CHECK_THROWS_AS(pool.forward(Tensor({1, 1, 1, 4}, 0.0f), Mode::Eval), ShapeError);
    CHECK_THROWS_AS(pool.forward(Tensor({1, 1, 4, 1}, 0.0f), Mode::Eval), ShapeError);
}

TEST_CASE("batchnorm train mode normalizes with biased batch statistics") {
    BatchNorm2d<float> bn(1, 0.9f, 1e-5f);
    // One channel, batch of two 1x1 values {1, 3}: mean 2, biased var 1.
    const Tensor x = Tensor::from_data({2, 1, 1, 1}, {1.0f, 3.0f});
    const Tensor y = bn.forward(x, Mode::Train);
    const double inv = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-inv).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(inv).epsilon(1e-6));

    // Running statistics blend batch stats with momentum 0.9.
    CHECK(bn.running_mean()[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0).epsilon(1e-6));
    CHECK(bn.running_var()[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-6));
}

TEST_CASE("batchnorm eval mode uses running statistics and mutates nothing") {
    BatchNorm2d<float> bn(2);
    bn.running_mean() = Tensor::from_data({2}, {1.0f, -1.0f});
    bn.running_var() = Tensor::from_data({2}, {4.0f, 0.25f});
    bn.gamma() = Tensor::from_data({2}, {2.0f, 1.0f});
    bn.beta() = Tensor::from_data({2}, {0.0f, 5.0f});

    const Tensor x = Tensor::from_data({1, 2, 1, 1}, {3.0f, 0.0f});
    const Tensor y1 = bn.forward(x, Mode::Eval);
    // channel 0: 2 * (3-1)/sqrt(4+eps) + 0 ~= 2; channel 1: (0+1)/sqrt(.25+eps) + 5 ~= 7
    CHECK(y1[0] == doctest::Approx(2.0).epsilon(1e-4));
    CHECK(y1[1] == doctest::Approx(7.0).epsilon(1e-4));

    const Tensor y2 = bn.forward(x, Mode::Eval);
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
    CHECK(bn.running_mean()[0] == 1.0f); // untouched by Eval
    CHECK(bn.running_var()[1] == 0.25f);
}

TEST_CASE("batchnorm train mode requires at least two values per channel") {
    BatchNorm2d<float> bn(1);
    CHECK_THROWS_AS(bn.forward(Tensor({1, 1, 1, 1}, 0.0f), Mode::Train), ValueError);
    CHECK_NOTHROW(bn.forward(Tensor({1, 1, 1, 1}, 0.0f), Mode::Eval));
}

TEST_CASE("dropout is identity in eval mode and with rate zero") {
    SeededRng rng(404);
    const Tensor x = oracles::random_tensor<float>({4, 8}, rng);

    Dropout<float> d(0.5f);
    const Tensor y = d.forward(x, Mode::Eval);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    Dropout<float> d0(0.0f);
    SeededRng r2(1);
    const Tensor y0 = d0.forward(x, Mode::Train, &r2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y0[i] == x[i]);
    // rate 0 must not consume randomness
    SeededRng r3(1);
    CHECK(r2.next_u32() == r3.next_u32());
}

TEST_CASE("dropout train mode zeroes and rescales by the inverted rate") {
    SeededRng data_rng(405);
    const Tensor x = oracles::random_tensor<float>({100, 100}, data_rng, 0.5, 1.5);
    Dropout<float> d(0.7f);
    SeededRng rng(406);
    const Tensor y = d.forward(x, Mode::Train, &rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (y[i] == 0.0f) {
            ++zeros;
        } else {
            CHECK(y[i] == doctest::Approx(x[i] / 0.3f).epsilon(1e-6));
        }
    }
    // ~70% dropped
    const double frac = static_cast<double>(zeros) / static_cast<double>(x.numel());
    CHECK(frac > 0.67);
    CHECK(frac < 0.73);

    // Same seed, same mask.
    SeededRng rng2(406);
    Dropout<float> d2(0.7f);
    const Tensor y2 = d2.forward(x, Mode::Train, &rng2);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == y2[i]);
}

TEST_CASE("dropout validates its rate and train mode needs a generator") {
    CHECK_THROWS_AS(Dropout<float>(1.0f), ValueError);
    CHECK_THROWS_AS(Dropout<float>(-0.1f), ValueError);
    Dropout<float> d(0.5f);
    CHECK_THROWS_AS(d.forward(Tensor({2, 2}, 1.0f), Mode::Train, nullptr), ValueError);
}

TEST_CASE("dense layer equals x * W^T + b") {
    SeededRng rng(505);
    Dense<float> dense(4, 3);
    dense.weights() = oracles::random_tensor<float>({3, 4}, rng);
    dense.bias() = oracles::random_tensor<float>({3}, rng);
    const Tensor x = oracles::random_tensor<float>({5, 4}, rng);
    const Tensor y = dense.forward(x, Mode::Eval);
    REQUIRE(y.shape() == std::vector<int>{5, 3});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = dense.bias()[static_cast<std::size_t>(j)];
            for (int t = 0; t < 4; ++t)
                acc += static_cast<double>(x.at(i, t)) *
                       static_cast<double>(dense.weights().at(j, t));
            CHECK(y.at(i, j) == doctest::Approx(acc).epsilon(1e-6));
        }
    CHECK_THROWS_AS(dense.forward(Tensor({2, 5}, 0.0f), Mode::Eval), ShapeError);
}

TEST_CASE("relu clamps negatives and keeps positives") {
    ReLU<float> relu;
    const Tensor x = Tensor::from_data({5}, {-2.0f, -0.5f, 0.0f, 0.5f, 2.0f});
    const Tensor y = relu.forward(x, Mode::Train);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 0.0f);
    CHECK(y[2] == 0.0f);
    CHECK(y[3] == 0.5f);
    CHECK(y[4] == 2.0f);
    // Subgradient at 0 is 0 (strict x > 0 pass-through).
    const Tensor gx = relu.backward(Tensor({5}, 1.0f));
    CHECK(gx[0] == 0.0f);
    CHECK(gx[2] == 0.0f);
    CHECK(gx[3] == 1.0f);
}

TEST_CASE("sigmoid maps known values") {
    Sigmoid<float> sig;
    const Tensor x = Tensor::from_data({3}, {0.0f, 2.0f, -2.0f});
    const Tensor y = sig.forward(x, Mode::Eval);
    CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-6));
    CHECK(y[2] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))).epsilon(1e-6));
}

TEST_CASE("flatten reshapes (N,C,H,W) to (N,CHW) and back on backward") {
    Flatten<float> flat;
    SeededRng rng(606);
    const Tensor x = oracles::random_tensor<float>({2, 3, 4, 5}, rng);
    const Tensor y = flat.forward(x, Mode::Train);
    CHECK(y.shape() == std::vector<int>{2, 60});
    const Tensor gx = flat.backward(y);
    CHECK(gx.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(gx[i] == x[i]);
}

TEST_CASE("backward without a train-mode forward is an error") {
    Conv2d<float> conv(1, 1);
    const Tensor g({1, 1, 3, 3}, 1.0f);
    CHECK_THROWS_AS(conv.backward(g), ValueError);

    // Eval forward does not arm the cache.
    (void)conv.forward(Tensor({1, 1, 3, 3}, 1.0f), Mode::Eval);
    CHECK_THROWS_AS(conv.backward(g), ValueError);

    // The cache is one-shot: a second backward must fail.
    (void)conv.forward(Tensor({1, 1, 3, 3}, 1.0f), Mode::Train);
    CHECK_NOTHROW(conv.backward(g));
    CHECK_THROWS_AS(conv.backward(g), ValueError);
}
