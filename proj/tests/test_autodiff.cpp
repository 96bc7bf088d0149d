#include "cortexflow/autodiff.hpp"
#include "cortexflow/gradcheck.hpp"
#include "support/gradient_cases.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace cortexflow;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

}  // namespace

TEST_CASE("op gradients agree with finite differences") {
    for (const auto& c : testing::op_gradient_cases()) {
        CAPTURE(c.name);
        const auto r = gradient_check(c.fn, c.inputs, 1e-4, c.options);
        CHECK(r.passed);
        CHECK(r.max_relative_error < 1e-4);
    }
}

TEST_CASE("linear map gradient is exact") {
    const auto x = ad::Tensor::parameter({4, 3}, random_values(12, 1), "x");
    const auto w = ad::Tensor::parameter({3, 2}, random_values(6, 2), "w");
    const auto r = gradient_check([&] { return ad::sum(ad::matmul(x, w)); }, {x, w}, 1e-8);
    CHECK(r.passed);
    CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("a scaled gradient is detected") {
    const auto x = ad::Tensor::parameter({5, 3}, random_values(15, 3), "x");
    GradCheckOptions o;
    o.analytic_scale = 1.01;
    const auto r = gradient_check([&] { return ad::sum(ad::square(x)); }, {x}, 1e-4, o);
    CHECK_FALSE(r.passed);
    CHECK(r.max_relative_error == doctest::Approx(0.01).epsilon(1e-3));
}

TEST_CASE("kinks inside the stencil are redrawn") {
    // prelu(x) has a kink at 0; entry 0 sits within the 1e-5 stencil of it.
    const auto x = ad::Tensor::parameter({4}, {3e-6, 0.4, -0.7, 1.2}, "x");
    const auto a = ad::Tensor::constant({1}, {0.25});
    const auto fn = [&] { return ad::sum(ad::prelu(x, a)); };
    CHECK_FALSE(gradient_check(fn, {x}, 1e-4).passed);
    GradCheckOptions o;
    o.kink_threshold = 1e-5;
    const auto r = gradient_check(fn, {x}, 1e-4, o);
    CHECK(r.passed);
    CHECK(r.groups[0].kinks == 1);
    CHECK(r.groups[0].checked == 3);

    o.analytic_scale = 1.01;
    CHECK_FALSE(gradient_check(fn, {x}, 1e-4, o).passed);

    const auto y = ad::Tensor::parameter({1}, {-2e-6}, "y");
    o.analytic_scale = 1.0;
    const auto all = gradient_check([&] { return ad::sum(ad::prelu(y, a)); }, {y}, 1e-4, o);
    CHECK_FALSE(all.passed);
    CHECK(all.groups[0].checked == 0);
}

TEST_CASE("non-finite forward values are reported") {
    const auto x = ad::Tensor::parameter({2}, {0.0, 1.0}, "x");
    CHECK_THROWS_AS(gradient_check([&] { return ad::sum(ad::div(ad::Tensor::constant({2}, {1, 1}), x)); }, {x}, 1e-4),
                    std::runtime_error);
}

TEST_CASE("backward accumulates through shared nodes") {
    const auto x = ad::Tensor::parameter({1}, {3.0}, "x");
    const auto y = ad::mul(x, x);
    const auto z = ad::add(y, y);
    ad::backward(z);
    CHECK(x.grad()[0] == 12.0);
    ad::zero_grad({x});
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard skips the tape") {
    const auto x = ad::Tensor::parameter({2}, {1.0, 2.0}, "x");
    {
        ad::NoGradGuard g;
        CHECK_FALSE(ad::grad_enabled());
        const auto y = ad::square(x);
        CHECK(y.values() == std::vector<double>{1.0, 4.0});
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    CHECK(ad::grad_enabled());
    CHECK(ad::square(x).requires_grad());
}

TEST_CASE("trilinear sampling values") {
    // [nz, ny, nx, C] = [2, 2, 2, 1] holding value = x + 2y + 4z.
    std::vector<double> v(8);
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) v[(z * 2 + y) * 2 + x] = x + 2 * y + 4 * z;
    const auto vol = ad::Tensor::constant({2, 2, 2, 1}, v);
    const auto pts = ad::Tensor::from_points({Vec3(1, 0, 0), Vec3(0, 1, 1), Vec3(0.5, 0.5, 0.5), Vec3(0.25, 0, 1), Vec3(5, -3, 0)});
    const auto s = ad::trilinear_sample(vol, pts, Eigen::Matrix4d::Identity());
    CHECK(s.values()[0] == 1.0);
    CHECK(s.values()[1] == 6.0);
    CHECK(s.values()[2] == doctest::Approx(3.5));
    CHECK(s.values()[3] == doctest::Approx(4.25));
    CHECK(s.values()[4] == 1.0);

    Eigen::Matrix4d shift = Eigen::Matrix4d::Identity();
    shift(0, 3) = -10;
    const auto moved = ad::trilinear_sample(vol, ad::Tensor::from_points({Vec3(10.5, 0, 0)}), shift);
    CHECK(moved.values()[0] == doctest::Approx(0.5));
}

TEST_CASE("instance norm standardizes each channel") {
    const auto x = ad::Tensor::constant({4, 4, 4, 3}, random_values(192, 4));
    const auto y = ad::instance_norm(x);
    for (int c = 0; c < 3; ++c) {
        double m = 0, s = 0;
        for (int i = 0; i < 64; ++i) m += y.values()[i * 3 + c];
        m /= 64;
        for (int i = 0; i < 64; ++i) s += std::pow(y.values()[i * 3 + c] - m, 2);
        CHECK(std::abs(m) < 1e-12);
        CHECK(s / 64 == doctest::Approx(1.0).epsilon(1e-3));
    }
    const auto flat = ad::instance_norm(ad::Tensor::constant({2, 2, 2, 1}, std::vector<double>(8, 5.0)));
    for (double v : flat.values()) CHECK(v == 0.0);
}

TEST_CASE("conv3d with a centre tap is a channel mix") {
    const auto x = ad::Tensor::constant({3, 3, 3, 2}, random_values(54, 5));
    std::vector<double> w(27 * 2 * 1, 0.0);
    w[13 * 2 + 0] = 2.0;
    w[13 * 2 + 1] = -1.0;
    const auto y = ad::conv3d(x, ad::Tensor::constant({54, 1}, w), ad::Tensor::constant({1}, {0.5}));
    for (int i = 0; i < 27; ++i) CHECK(y.values()[i] == doctest::Approx(2 * x.values()[2 * i] - x.values()[2 * i + 1] + 0.5));
}

TEST_CASE("pooling and upsampling") {
    std::vector<double> v(64);
    std::iota(v.begin(), v.end(), 0.0);
    const auto x = ad::Tensor::constant({4, 4, 4, 1}, v);
    const auto p = ad::maxpool3d2(x);
    CHECK(p.shape() == std::vector<int>{2, 2, 2, 1});
    CHECK(p.values()[0] == 21.0);
    CHECK(p.values()[7] == 63.0);
    const auto u = ad::upsample3d2(p);
    CHECK(u.shape() == std::vector<int>{4, 4, 4, 1});
}

TEST_CASE("thread count does not change results at one thread") {
    const auto x = ad::Tensor::constant({8, 8, 8, 4}, random_values(2048, 6));
    const auto w = ad::Tensor::constant({108, 4}, random_values(432, 7));
    const auto b = ad::Tensor::constant({4}, random_values(4, 8));
    ad::set_num_threads(1);
    const auto a = ad::conv3d(x, w, b).values();
    CHECK(ad::conv3d(x, w, b).values() == a);
    ad::set_num_threads(3);
    const auto c = ad::conv3d(x, w, b).values();
    ad::set_num_threads(1);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(c[i] == doctest::Approx(a[i]).epsilon(1e-12));
}
