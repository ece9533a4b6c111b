#include <cmath>
#include <vector>

#include "birdrone/tensor.hpp"
#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace brd;
using Catch::Approx;

TEST_CASE("tensor construction and accessors") {
    Tensor<double> t(Shape{2, 3, 4, 5}, 1.5);
    REQUIRE(t.numel() == 120);
    REQUIRE(t.at(1, 2, 3, 4) == 1.5);
    t.at(0, 1, 2, 3) = -2.0;
    REQUIRE(t.at(0, 1, 2, 3) == -2.0);

    auto s = Tensor<double>::scalar(7.0);
    REQUIRE(s.value() == 7.0);
    REQUIRE_THROWS(t.value());

    auto v = Tensor<double>::from_vector(Shape{1, 1, 1, 3}, {1, 2, 3});
    REQUIRE(v.at(0, 0, 0, 2) == 3.0);
    REQUIRE_THROWS(Tensor<double>::from_vector(Shape{1, 1, 1, 3}, {1, 2}));
}

TEST_CASE("elementwise forward values") {
    auto a = Tensor<double>::from_vector(Shape{1, 1, 1, 4}, {1, -2, 3, 0.5});
    auto b = Tensor<double>::from_vector(Shape{1, 1, 1, 4}, {2, 5, -1, 0.25});

    auto check = [](const Tensor<double>& t, std::vector<double> want) {
        for (std::size_t i = 0; i < want.size(); ++i)
            REQUIRE(t.data()[i] == Approx(want[i]).margin(1e-15));
    };
    check(add(a, b), {3, 3, 2, 0.75});
    check(sub(a, b), {-1, -7, 4, 0.25});
    check(mul(a, b), {2, -10, -3, 0.125});
    check(div(a, b), {0.5, -0.4, -3, 2});
    check(minimum(a, b), {1, -2, -1, 0.25});
    check(maximum(a, b), {2, 5, 3, 0.5});
    check(add_scalar(a, 1.0), {2, -1, 4, 1.5});
    check(mul_scalar(a, -2.0), {-2, 4, -6, -1});
    check(clamp_max(a, 1.0), {1, -2, 1, 0.5});
    check(clamp_min(a, 0.0), {1, 0, 3, 0.5});
    check(square(a), {1, 4, 9, 0.25});

    REQUIRE(sum(a).value() == Approx(2.5));
    REQUIRE(mean(a).value() == Approx(0.625));
    REQUIRE(sigmoid(Tensor<double>::scalar(0.0)).value() == Approx(0.5));
    REQUIRE(silu(Tensor<double>::scalar(0.0)).value() == 0.0);
    REQUIRE(brd::exp(Tensor<double>::scalar(1.0)).value() == Approx(std::exp(1.0)));
    REQUIRE(brd::atan(Tensor<double>::scalar(1.0)).value() == Approx(std::atan(1.0)));
}

TEST_CASE("broadcast add over channels") {
    Tensor<double> x(Shape{2, 3, 2, 2}, 1.0);
    auto bias = Tensor<double>::from_vector(Shape{1, 3, 1, 1}, {10, 20, 30});
    bias.set_requires_grad(true);
    auto y = add(x, bias);
    REQUIRE(y.at(0, 0, 0, 0) == 11.0);
    REQUIRE(y.at(1, 1, 1, 0) == 21.0);
    REQUIRE(y.at(1, 2, 1, 1) == 31.0);

    auto loss = sum(mul(y, y));
    backward(loss);
    // d/dbias sum((1+b)^2) over n*h*w=8 cells per channel
    REQUIRE(bias.grad_data()[0] == Approx(8 * 2 * 11.0));
    REQUIRE(bias.grad_data()[2] == Approx(8 * 2 * 31.0));
}

TEST_CASE("chain rule through a diamond graph") {
    // y = x*x, z = y + y; dz/dx = 4x must accumulate across both paths
    auto x = Tensor<double>::scalar(3.0);
    x.set_requires_grad(true);
    auto y = mul(x, x);
    auto z = sum(add(y, y));
    backward(z);
    REQUIRE(x.grad_data()[0] == Approx(12.0));
}

TEST_CASE("backward handles deep chains without recursion issues") {
    auto x = Tensor<double>::scalar(1.0);
    x.set_requires_grad(true);
    Tensor<double> y = x;
    for (int i = 0; i < 20000; ++i) y = add_scalar(y, 0.0);
    backward(sum(y));
    REQUIRE(x.grad_data()[0] == 1.0);
}

TEST_CASE("NoGradGuard suppresses graph construction") {
    auto x = Tensor<double>::scalar(2.0);
    x.set_requires_grad(true);
    {
        NoGradGuard ng;
        auto y = mul(x, x);
        REQUIRE_FALSE(y.impl()->requires_grad);
    }
    auto y = mul(x, x);
    REQUIRE(y.impl()->requires_grad);
}

TEST_CASE("gradcheck on elementwise compositions") {
    Rng rng(11);
    Tensor<double> x = tensor_uniform<double>(Shape{1, 2, 3, 3}, rng, -2.0, 2.0);

    auto r1 = gradcheck_fn(x, [](Tensor<double>& t) {
        return sum(mul(sigmoid(t), silu(t)));
    });
    REQUIRE(r1 < 1e-7);

    auto r2 = gradcheck_fn(x, [](Tensor<double>& t) {
        return mean(square(add_scalar(brd::atan(t), 0.5)));
    });
    REQUIRE(r2 < 1e-7);

    auto r3 = gradcheck_fn(x, [](Tensor<double>& t) {
        return sum(div(brd::exp(mul_scalar(t, 0.3)), add_scalar(square(t), 2.0)));
    });
    REQUIRE(r3 < 1e-7);
}

TEST_CASE("gradcheck through reductions and reshaping ops") {
    Rng rng(12);
    Tensor<double> x = tensor_uniform<double>(Shape{2, 4, 4, 4}, rng, -1.0, 1.0);

    REQUIRE(gradcheck_fn(x, [](Tensor<double>& t) {
        return sum(square(global_avg_pool(t)));
    }) < 1e-7);
    REQUIRE(gradcheck_fn(x, [](Tensor<double>& t) {
        return sum(mul(channel_mean(t), channel_mean(t)));
    }) < 1e-7);
    REQUIRE(gradcheck_fn(x, [](Tensor<double>& t) {
        return sum(square(upsample_nearest2(t)));
    }) < 1e-7);
    REQUIRE(gradcheck_fn(x, [](Tensor<double>& t) {
        auto a = slice_channels(t, 0, 2);
        auto b = slice_channels(t, 2, 2);
        return sum(mul(a, b));
    }) < 1e-7);
    REQUIRE(gradcheck_fn(x, [](Tensor<double>& t) {
        return sum(square(concat_channels<double>({t, mul_scalar(t, 2.0)})));
    }) < 1e-7);
}

TEST_CASE("channel_max forward and subgradient") {
    auto x = Tensor<double>::from_vector(Shape{1, 3, 1, 2}, {1, 9, 4, 2, -5, 7});
    auto m = channel_max(x);
    REQUIRE(m.shape() == Shape{1, 1, 1, 2});
    REQUIRE(m.at(0, 0, 0, 0) == 4.0);
    REQUIRE(m.at(0, 0, 0, 1) == 9.0);

    x.set_requires_grad(true);
    backward(sum(channel_max(x)));
    // gradient lands only on the argmax channel per pixel
    std::vector<double> want = {0, 1, 1, 0, 0, 0};
    for (int i = 0; i < 6; ++i) REQUIRE(x.grad_data()[i] == want[i]);
}

TEST_CASE("concat and slice round trip") {
    Rng rng(13);
    auto a = tensor_uniform<double>(Shape{1, 2, 3, 3}, rng);
    auto b = tensor_uniform<double>(Shape{1, 5, 3, 3}, rng);
    auto cat = concat_channels<double>({a, b});
    REQUIRE(cat.shape().c == 7);
    auto a2 = slice_channels(cat, 0, 2);
    auto b2 = slice_channels(cat, 2, 5);
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a2.data()[i] == a.data()[i]);
    for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE(b2.data()[i] == b.data()[i]);
}

TEST_CASE("upsample_nearest2 layout") {
    auto x = Tensor<double>::from_vector(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = upsample_nearest2(x);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    REQUIRE(y.at(0, 0, 0, 0) == 1.0);
    REQUIRE(y.at(0, 0, 0, 1) == 1.0);
    REQUIRE(y.at(0, 0, 1, 1) == 1.0);
    REQUIRE(y.at(0, 0, 0, 2) == 2.0);
    REQUIRE(y.at(0, 0, 3, 3) == 4.0);
    REQUIRE(y.at(0, 0, 2, 1) == 3.0);
}

TEST_CASE("select extracts a scalar with gradient routing") {
    Rng rng(14);
    auto x = tensor_uniform<double>(Shape{1, 2, 2, 2}, rng);
    x.set_requires_grad(true);
    auto s = select(x, 0, 1, 0, 1);
    REQUIRE(s.value() == x.at(0, 1, 0, 1));
    backward(mul_scalar(s, 3.0));
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) {
                const double g = x.grad_data()[(static_cast<std::size_t>(c) * 2 + h) * 2 + w];
                if (c == 1 && h == 0 && w == 1)
                    REQUIRE(g == 3.0);
                else
                    REQUIRE(g == 0.0);
            }
}

TEST_CASE("bce_with_logits_sum matches the scalar formula") {
    auto logits = Tensor<double>::from_vector(Shape{1, 1, 1, 4}, {0.0, 2.0, -3.0, 0.7});
    auto targets = Tensor<double>::from_vector(Shape{1, 1, 1, 4}, {0.0, 1.0, 0.0, 1.0});
    auto weights = Tensor<double>::from_vector(Shape{1, 1, 1, 4}, {1.0, 4.0, 1.0, 2.0});

    auto ref = [](double x, double t) {
        // stable form: max(x,0) - x*t + log(1+exp(-|x|))
        return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    };
    double want = 0.0;
    const double xs[] = {0.0, 2.0, -3.0, 0.7}, ts[] = {0.0, 1.0, 0.0, 1.0},
                 ws[] = {1.0, 4.0, 1.0, 2.0};
    for (int i = 0; i < 4; ++i) want += ws[i] * ref(xs[i], ts[i]);

    REQUIRE(bce_with_logits_sum(logits, targets, weights).value() == Approx(want).epsilon(1e-12));

    // unweighted overload
    double want_unw = 0.0;
    for (int i = 0; i < 4; ++i) want_unw += ref(xs[i], ts[i]);
    REQUIRE(bce_with_logits_sum(logits, targets).value() == Approx(want_unw).epsilon(1e-12));

    // extreme logits stay finite
    auto big = Tensor<double>::from_vector(Shape{1, 1, 1, 2}, {500.0, -500.0});
    auto tgt = Tensor<double>::from_vector(Shape{1, 1, 1, 2}, {0.0, 1.0});
    REQUIRE(std::isfinite(bce_with_logits_sum(big, tgt).value()));
    REQUIRE(bce_with_logits_sum(big, tgt).value() == Approx(1000.0));

    REQUIRE(gradcheck_fn(logits, [&](Tensor<double>& t) {
        return bce_with_logits_sum(t, targets, weights);
    }) < 1e-7);
}

TEST_CASE("softmax_over sums to one and matches direct computation") {
    Rng rng(15);
    auto x = tensor_uniform<double>(Shape{1, 3, 2, 2}, rng, -3.0, 3.0);
    auto y = softmax_over(x, 1);
    for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) acc += y.at(0, c, h, w);
            REQUIRE(acc == Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("tensor_uniform is deterministic per seed and respects bounds") {
    Rng r1(77), r2(77), r3(78);
    auto a = tensor_uniform<double>(Shape{1, 1, 8, 8}, r1, -0.5, 0.25);
    auto b = tensor_uniform<double>(Shape{1, 1, 8, 8}, r2, -0.5, 0.25);
    auto c = tensor_uniform<double>(Shape{1, 1, 8, 8}, r3, -0.5, 0.25);
    bool same = true, differs = false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        same = same && a.data()[i] == b.data()[i];
        differs = differs || a.data()[i] != c.data()[i];
        REQUIRE(a.data()[i] >= -0.5);
        REQUIRE(a.data()[i] < 0.25);
    }
    REQUIRE(same);
    REQUIRE(differs);
}

TEST_CASE("zero_grad clears accumulated gradients") {
    auto x = Tensor<double>::scalar(2.0);
    x.set_requires_grad(true);
    backward(mul(x, x));
    REQUIRE(x.grad_data()[0] == Approx(4.0));
    x.zero_grad();
    backward(mul(x, x));
    REQUIRE(x.grad_data()[0] == Approx(4.0));
}
