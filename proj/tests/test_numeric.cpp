#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mcinr/adam.hpp"
#include "mcinr/matrix.hpp"

using namespace mcinr;

namespace {

template <class T>
Mat<T> make_mat(std::size_t r, std::size_t c, std::initializer_list<T> vals) {
    Mat<T> m(r, c);
    std::size_t i = 0;
    for (T v : vals) m.data[i++] = v;
    return m;
}

}  // namespace

TEST_SUITE_BEGIN("numeric");

TEST_CASE("linear_forward identity weight passes input through") {
    auto in = make_mat<float>(1, 2, {1.0f, 2.0f});
    auto w = make_mat<float>(2, 2, {1.0f, 0.0f, 0.0f, 1.0f});
    std::vector<float> b{0.0f, 0.0f};
    Mat<float> out = linear_forward<float>(in, w, b);
    CHECK(out.at(0, 0) == 1.0f);
    CHECK(out.at(0, 1) == 2.0f);
}

TEST_CASE("linear_forward zero input passes bias") {
    auto in = make_mat<float>(1, 2, {0.0f, 0.0f});
    auto w = make_mat<float>(2, 2, {4.0f, -2.0f, 7.0f, 0.5f});
    std::vector<float> b{3.0f, -1.0f};
    Mat<float> out = linear_forward<float>(in, w, b);
    CHECK(out.at(0, 0) == 3.0f);
    CHECK(out.at(0, 1) == -1.0f);
}

TEST_CASE("linear_forward matches hand matrix multiply") {
    auto in = make_mat<float>(1, 2, {1.0f, 1.0f});
    auto w = make_mat<float>(2, 2, {2.0f, 3.0f, 4.0f, 5.0f});
    std::vector<float> b{1.0f, 1.0f};
    Mat<float> out = linear_forward<float>(in, w, b);
    CHECK(out.at(0, 0) == doctest::Approx(7.0).epsilon(1e-7));
    CHECK(out.at(0, 1) == doctest::Approx(9.0).epsilon(1e-7));
}

TEST_CASE("linear_forward names both shapes on mismatch") {
    auto in = make_mat<float>(1, 3, {1.0f, 2.0f, 3.0f});
    auto w = make_mat<float>(2, 2, {1.0f, 0.0f, 0.0f, 1.0f});
    std::vector<float> b{0.0f, 0.0f};
    try {
        linear_forward<float>(in, w, b);
        FAIL("expected shape error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(1x3)") != std::string::npos);
        CHECK(msg.find("(2x2)") != std::string::npos);
    }
}

TEST_CASE("linear_forward rejects non-finite results") {
    auto in = make_mat<float>(1, 1, {std::numeric_limits<float>::infinity()});
    auto w = make_mat<float>(1, 1, {1.0f});
    std::vector<float> b{0.0f};
    CHECK_THROWS_AS(linear_forward<float>(in, w, b), std::runtime_error);
}

TEST_CASE("sine_forward known values") {
    auto z = make_mat<double>(1, 3, {0.0, std::numbers::pi / 60.0, 0.0});
    Mat<double> out30 = sine_forward(z, 30.0);
    CHECK(out30.at(0, 0) == 0.0);
    CHECK(out30.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

    auto z2 = make_mat<double>(1, 1, {0.1});
    Mat<double> out1 = sine_forward(z2, 1.0);
    CHECK(out1.at(0, 0) == doctest::Approx(0.0998334166).epsilon(1e-7));
}

TEST_CASE("sine_forward output always within [-1, 1]") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> dist(-50.0f, 50.0f);
    Mat<float> z(13, 17);
    for (auto& v : z.data) v = dist(rng);
    Mat<float> out = sine_forward(z, 30.0f);
    for (float v : out.data) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("sine_forward requires positive omega") {
    auto z = make_mat<float>(1, 1, {0.5f});
    CHECK_THROWS_AS(sine_forward(z, 0.0f), std::runtime_error);
}

TEST_CASE("layer_backward cosine factors at known points") {
    // 1x1 layer, w=1, b=0: out = sin(z), z = input.
    auto w = make_mat<double>(1, 1, {1.0});
    std::vector<double> b{0.0};

    auto in0 = make_mat<double>(1, 1, {0.0});
    LayerTape<double> tape;
    layer_forward<double>(in0, w, b, Activation::Sine, 1.0, tape);
    auto up = make_mat<double>(1, 1, {1.0});
    LayerGrads<double> g = layer_backward(up, tape, w);
    CHECK(g.weight.at(0, 0) == doctest::Approx(0.0));  // input 0: cos(0)*input = 0
    CHECK(g.bias[0] == doctest::Approx(1.0));          // cos(0) = 1

    auto in1 = make_mat<double>(1, 1, {1.0});
    layer_forward<double>(in1, w, b, Activation::Sine, 1.0, tape);
    g = layer_backward(up, tape, w);
    CHECK(g.weight.at(0, 0) == doctest::Approx(std::cos(1.0)).epsilon(1e-12));

    // z = pi/2: the cosine factor kills every gradient.
    auto inq = make_mat<double>(1, 1, {std::numbers::pi / 2.0});
    layer_forward<double>(inq, w, b, Activation::Sine, 1.0, tape);
    g = layer_backward(up, tape, w);
    CHECK(std::abs(g.weight.at(0, 0)) < 1e-15);
    CHECK(std::abs(g.bias[0]) < 1e-15);
}

TEST_CASE("layer_backward matches central finite differences") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const std::size_t batch = 3, in_f = 3, out_f = 4;
    Mat<double> input(batch, in_f), weight(in_f, out_f), upstream(batch, out_f);
    std::vector<double> bias(out_f);
    for (auto& v : input.data) v = dist(rng);
    for (auto& v : weight.data) v = dist(rng);
    for (auto& v : upstream.data) v = dist(rng);
    for (auto& v : bias) v = dist(rng);

    // Scalar objective: sum of upstream-weighted activated outputs.
    auto objective = [&](const Mat<double>& w_, const std::vector<double>& b_) {
        LayerTape<double> t;
        Mat<double> out = layer_forward<double>(input, w_, b_, Activation::Sine, 1.7, t);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * upstream.data[i];
        return s;
    };

    LayerTape<double> tape;
    layer_forward<double>(input, weight, bias, Activation::Sine, 1.7, tape);
    LayerGrads<double> g = layer_backward(upstream, tape, weight);

    const double h = 1e-5;
    for (std::size_t i = 0; i < weight.size(); ++i) {
        Mat<double> wp = weight, wm = weight;
        wp.data[i] += h;
        wm.data[i] -= h;
        const double fd = (objective(wp, bias) - objective(wm, bias)) / (2.0 * h);
        const double an = g.weight.data[i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-2});
        CHECK(std::abs(fd - an) / denom < 1e-6);
    }
    for (std::size_t i = 0; i < bias.size(); ++i) {
        std::vector<double> bp = bias, bm = bias;
        bp[i] += h;
        bm[i] -= h;
        const double fd = (objective(weight, bp) - objective(weight, bm)) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(g.bias[i]), 1e-2});
        CHECK(std::abs(fd - g.bias[i]) / denom < 1e-6);
    }
}

TEST_CASE("adam_step with zero gradients is a no-op") {
    std::vector<float> p{1.0f, -2.0f, 0.5f};
    std::vector<float> g{0.0f, 0.0f, 0.0f};
    std::vector<std::span<float>> params{std::span<float>(p)};
    AdamState<float> state = AdamState<float>::like(params);
    adam_step<float>(params, {std::span<const float>(g)}, state, 0.1f);
    CHECK(p[0] == 1.0f);
    CHECK(p[1] == -2.0f);
    CHECK(p[2] == 0.5f);
    CHECK(state.step_count == 1);
}

TEST_CASE("adam_step first step moves by about lr") {
    std::vector<float> p{1.0f};
    std::vector<float> g{1.0f};
    std::vector<std::span<float>> params{std::span<float>(p)};
    AdamState<float> state = AdamState<float>::like(params);
    adam_step<float>(params, {std::span<const float>(g)}, state, 0.1f);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam_step treats identical parameters identically") {
    std::vector<float> p{0.3f, 0.3f};
    std::vector<float> g{0.7f, 0.7f};
    std::vector<std::span<float>> params{std::span<float>(p)};
    AdamState<float> state = AdamState<float>::like(params);
    for (int i = 0; i < 5; ++i) {
        adam_step<float>(params, {std::span<const float>(g)}, state, 0.01f);
        CHECK(p[0] == p[1]);
    }
}

TEST_CASE("adam_step rejects non-finite gradients and shape mismatches") {
    std::vector<float> p{1.0f};
    std::vector<float> bad{std::numeric_limits<float>::quiet_NaN()};
    std::vector<std::span<float>> params{std::span<float>(p)};
    AdamState<float> state = AdamState<float>::like(params);
    CHECK_THROWS_AS(adam_step<float>(params, {std::span<const float>(bad)}, state, 0.1f),
                    std::runtime_error);

    std::vector<float> wrong{1.0f, 2.0f};
    CHECK_THROWS_AS(adam_step<float>(params, {std::span<const float>(wrong)}, state, 0.1f),
                    std::runtime_error);
}

TEST_CASE("forward ops are deterministic within a build") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Mat<float> a(9, 6), w(6, 8);
    std::vector<float> b(8);
    for (auto& v : a.data) v = dist(rng);
    for (auto& v : w.data) v = dist(rng);
    for (auto& v : b) v = dist(rng);
    Mat<float> o1 = linear_forward<float>(a, w, b);
    Mat<float> o2 = linear_forward<float>(a, w, b);
    CHECK(o1.data == o2.data);
}

TEST_SUITE_END();
