#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "crisisfuse/checkpoint.hpp"
#include "crisisfuse/gradcheck.hpp"
#include "crisisfuse/ops.hpp"

using namespace crisisfuse;
using Td = Tensor<double>;
using Tf = Tensor<float>;

namespace {

Td randn(Shape shape, Rng& rng, bool grad = true)
{
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Td(std::move(shape), std::move(v), grad);
}

std::vector<double> ones_like(const Td& t) { return std::vector<double>(t.numel(), 1.0); }

// Fixed random readout so the checked scalar depends on every output.
std::vector<double> readout(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> w(n);
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    return w;
}

GradCheckReport check(std::vector<NamedTensor> params, const std::function<Td()>& out, double tol)
{
    GradCheckOptions opts;
    opts.tolerance = tol;
    return gradient_check(params, [&] {
        const auto y = out();
        const auto w = readout(y.numel(), 5);
        return weighted_sum(y, std::span<const double>(w));
    }, opts);
}

}  // namespace

TEST_SUITE("tensor")
{
    TEST_CASE("tensor construction enforces length and finiteness")
    {
        Tf t(Shape{2, 3}, 1.5f);
        CHECK(t.numel() == 6);
        CHECK(t.rank() == 2);
        CHECK_THROWS_AS(Tf(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
        CHECK_THROWS_AS(Tf(Shape{1}, std::vector<float>{NAN}), NumericError);
        CHECK_THROWS_AS(Tf(Shape{0, 2}), DimensionError);
    }

    TEST_CASE("dense forward")
    {
        Tf x(Shape{1, 2}, {1, 2});
        Tf eye(Shape{2, 2}, {1, 0, 0, 1});
        Tf zero(Shape{2}, {0, 0});
        auto y = dense(x, eye, zero);
        CHECK(y.values() == std::vector<float>{1, 2});

        Tf w(Shape{2, 2}, {1, 0, 2, 1});
        Tf b(Shape{2}, {1, 1});
        CHECK(dense(x, w, b).values() == std::vector<float>{6, 3});
    }

    TEST_CASE("dense shape mismatch names both shapes")
    {
        Tf x(Shape{1, 3});
        Tf w(Shape{2, 2});
        Tf b(Shape{2});
        try {
            dense(x, w, b);
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[1,3]") != std::string::npos);
            CHECK(msg.find("[2,2]") != std::string::npos);
        }
    }

    TEST_CASE("dense gradient of sum wrt W matches finite differences")
    {
        Rng rng(1);
        auto x = randn({3, 4}, rng);
        auto w = randn({4, 2}, rng);
        auto b = randn({2}, rng);
        GradCheckOptions opts;
        opts.tolerance = 1e-5;
        const auto report = gradient_check({{"x", x}, {"W", w}, {"b", b}}, [&] { return sum(dense(x, w, b)); }, opts);
        CHECK(report.passed());
        CHECK(report.max_rel_error() <= 1e-5);
    }

    TEST_CASE("conv1d forward")
    {
        Tf x(Shape{1, 4, 1}, {1, 2, 3, 4});
        Tf k(Shape{1, 2, 1}, {1, 1});
        Tf b(Shape{1}, {0});
        CHECK(conv1d(x, k, b).values() == std::vector<float>{3, 5, 7});
        CHECK(conv1d(x, k, b).shape() == Shape{1, 3, 1});

        Tf zk(Shape{1, 2, 1}, 0.0f);
        Tf c(Shape{1}, {2.5f});
        const auto y = conv1d(x, zk, c);
        for (float v : y.values()) CHECK(v == 2.5f);
    }

    TEST_CASE("conv1d too short names L and W")
    {
        Tf x(Shape{1, 2, 1});
        Tf k(Shape{1, 3, 1});
        Tf b(Shape{1});
        try {
            conv1d(x, k, b);
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("L=2") != std::string::npos);
            CHECK(msg.find('3') != std::string::npos);
        }
    }

    TEST_CASE("conv1d gradients")
    {
        Rng rng(2);
        auto x = randn({1, 7, 3}, rng);
        auto k = randn({2, 3, 3}, rng);
        auto b = randn({2}, rng);
        const auto r = check({{"x", x}, {"k", k}, {"b", b}}, [&] { return conv1d(x, k, b); }, 1e-5);
        CHECK(r.passed());
    }

    TEST_CASE("maxpool1d")
    {
        Tf x(Shape{1, 3, 1}, {3, 5, 7});
        CHECK(maxpool1d(x, 2).values() == std::vector<float>{5});
        CHECK(maxpool1d(x, 1).values() == x.values());
        CHECK_THROWS_AS(maxpool1d(x, 4), DimensionError);
        CHECK_THROWS_AS(maxpool1d(x, 0), ParameterError);
    }

    TEST_CASE("maxpool1d routes gradient to the first maximum")
    {
        Td x(Shape{1, 4, 1}, {2, 2, 1, 5}, true);
        backward(sum(maxpool1d(x, 2)));
        CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 0, 0, 1});

        Rng rng(3);
        auto y = randn({2, 9, 3}, rng);
        CHECK(check({{"x", y}}, [&] { return maxpool1d(y, 3); }, 1e-4).passed());
    }

    TEST_CASE("conv2d hand values with zero padding")
    {
        Tf x(Shape{1, 1, 3, 3}, 1.0f);
        Tf k(Shape{1, 1, 3, 3}, 1.0f);
        Tf b(Shape{1}, 0.0f);
        const auto y = conv2d(x, k, b);
        CHECK(y.values() == std::vector<float>{4, 6, 4, 6, 9, 6, 4, 6, 4});

        Tf zk(Shape{2, 1, 3, 3}, 0.0f);
        Tf c(Shape{2}, {1.5f, -2.0f});
        const auto z = conv2d(x, zk, c);
        for (std::size_t i = 0; i < 9; ++i) {
            CHECK(z.values()[i] == 1.5f);
            CHECK(z.values()[9 + i] == -2.0f);
        }
        CHECK_THROWS_AS(conv2d(Tf(Shape{1, 2, 3, 3}), k, b), DimensionError);
    }

    TEST_CASE("conv2d gradients on 2x2x5x5")
    {
        Rng rng(4);
        auto x = randn({2, 2, 5, 5}, rng);
        auto k = randn({3, 2, 3, 3}, rng);
        auto b = randn({3}, rng);
        CHECK(check({{"x", x}, {"k", k}, {"b", b}}, [&] { return conv2d(x, k, b); }, 1e-5).passed());
    }

    TEST_CASE("maxpool2d")
    {
        Tf x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
        CHECK(maxpool2d(x).values() == std::vector<float>{4});
        Tf c(Shape{1, 2, 4, 4}, 0.25f);
        const auto pooled = maxpool2d(c);
        for (float v : pooled.values()) CHECK(v == 0.25f);
        CHECK_THROWS_AS(maxpool2d(Tf(Shape{1, 1, 3, 4})), DimensionError);

        Rng rng(5);
        auto y = randn({2, 2, 4, 6}, rng);
        CHECK(check({{"x", y}}, [&] { return maxpool2d(y); }, 1e-5).passed());
    }

    TEST_CASE("relu values, subgradient and idempotence")
    {
        Td x(Shape{3}, {-1, 0, 2}, true);
        const auto y = relu(x);
        CHECK(y.values() == std::vector<double>{0, 0, 2});
        backward(sum(y));
        CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1});

        Rng rng(6);
        auto r = randn({4, 5}, rng, false);
        CHECK(relu(relu(r)).values() == relu(r).values());
    }

    TEST_CASE("dropout")
    {
        Rng rng(7);
        Tf x(Shape{4, 8}, 3.0f);
        CHECK(dropout(x, 0.0, true, rng).values() == x.values());
        CHECK(dropout(x, 0.7, false, rng).values() == x.values());
        CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ParameterError);

        Tf ones(Shape{100000}, 1.0f);
        const auto y = dropout(ones, 0.5, true, rng);
        const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / 1e5;
        CHECK(std::fabs(mean - 1.0) < 0.01);
        for (float v : y.values()) CHECK((v == 0.0f || v == 2.0f));
    }

    TEST_CASE("dropout in inference does not consume the generator")
    {
        Rng a(8), b(8);
        Tf x(Shape{2, 2}, 1.0f);
        dropout(x, 0.5, false, a);
        CHECK(a.next() == b.next());
    }

    TEST_CASE("batchnorm forward and running statistics")
    {
        Tf x(Shape{3, 1}, {1, 2, 3});
        Tf g(Shape{1}, 1.0f);
        Tf be(Shape{1}, 0.0f);
        BatchNormState<float> st(1);
        const auto y = batchnorm(x, g, be, st, true);
        CHECK(y.values()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
        CHECK(y.values()[1] == doctest::Approx(0.0).epsilon(1e-3));
        CHECK(y.values()[2] == doctest::Approx(1.2247).epsilon(1e-3));
        CHECK(st.running_mean.values()[0] == doctest::Approx(0.2));
        CHECK(st.running_var.values()[0] == doctest::Approx(0.9 + 0.1 * (2.0 / 3.0)));

        Tf c(Shape{4, 1}, 5.0f);
        const auto flat = batchnorm(c, g, be, st, true);
        for (float v : flat.values()) CHECK(v == 0.0f);

        CHECK_THROWS_AS(batchnorm(Tf(Shape{1, 1}), g, be, st, true), DimensionError);
        CHECK_NOTHROW(batchnorm(Tf(Shape{1, 1}), g, be, st, false));
    }

    TEST_CASE("batchnorm inference uses running statistics")
    {
        Tf x(Shape{2, 1}, {3, 3});
        Tf g(Shape{1}, 2.0f);
        Tf be(Shape{1}, 1.0f);
        BatchNormState<float> st(1);
        st.running_mean.values()[0] = 1.0f;
        st.running_var.values()[0] = 4.0f;
        const auto y = batchnorm(x, g, be, st, false);
        CHECK(y.values()[0] == doctest::Approx(2.0f * 2.0f / std::sqrt(4.0f + 1e-5f) + 1.0f));
    }

    TEST_CASE("batchnorm gradients wrt x, gamma, beta")
    {
        Rng rng(9);
        auto x = randn({5, 3}, rng);
        auto g = randn({3}, rng);
        auto b = randn({3}, rng);
        CHECK(check({{"x", x}, {"gamma", g}, {"beta", b}},
                    [&] {
                        BatchNormState<double> st(3);
                        return batchnorm(x, g, b, st, true);
                    },
                    1e-4)
                  .passed());
    }

    TEST_CASE("concat and slice")
    {
        Tf a(Shape{2, 1000}, 1.0f);
        Tf b(Shape{2, 1000}, 2.0f);
        const auto c = concat<float>({a, b});
        CHECK(c.shape() == Shape{2, 2000});
        CHECK(slice(c, 0, 1000).values() == a.values());
        CHECK(slice(c, 1000, 2000).values() == b.values());
        CHECK(concat<float>({a}).values() == a.values());
        CHECK_THROWS_AS(concat<float>({}), DimensionError);
        CHECK_THROWS_AS(concat<float>({a, Tf(Shape{3, 4})}), DimensionError);

        Rng rng(10);
        auto x = randn({2, 3}, rng);
        auto y = randn({2, 4}, rng);
        CHECK(check({{"x", x}, {"y", y}}, [&] { return concat<double>({x, y}); }, 1e-5).passed());
    }

    TEST_CASE("softmax cross-entropy")
    {
        Tf zero(Shape{1, 2}, {0, 0});
        const std::vector<int> l0{0};
        CHECK(softmax_cross_entropy(zero, l0).loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
        Tf big(Shape{1, 2}, {100, 0});
        const auto r = softmax_cross_entropy(big, l0);
        CHECK(std::isfinite(r.loss.item()));
        CHECK(r.loss.item() <= 1e-6);

        Rng rng(11);
        auto logits = randn({4, 3}, rng);
        const std::vector<int> labels{0, 2, 1, 2};
        const auto ce = softmax_cross_entropy(logits, labels);
        CHECK(ce.loss.item() >= 0.0);
        for (std::size_t n = 0; n < 4; ++n) {
            double s = 0;
            for (std::size_t k = 0; k < 3; ++k) s += ce.probabilities.values()[n * 3 + k];
            CHECK(std::fabs(s - 1.0) < 1e-6);
        }
        backward(ce.loss);
        for (std::size_t n = 0; n < 4; ++n) {
            for (std::size_t k = 0; k < 3; ++k) {
                const double expected =
                    (ce.probabilities.values()[n * 3 + k] - (labels[n] == int(k) ? 1.0 : 0.0)) / 4.0;
                CHECK(logits.grad()[n * 3 + k] == doctest::Approx(expected).epsilon(1e-12));
            }
        }
        const std::vector<int> bad{0, 3, 1, 1};
        try {
            softmax_cross_entropy(logits, bad);
            FAIL("expected LabelError");
        } catch (const LabelError& e) {
            CHECK(std::string(e.what()).find("index 1") != std::string::npos);
        }
    }

    TEST_CASE("backward contracts")
    {
        Td x(Shape{2, 2}, {1, 2, 3, 4}, true);
        backward(sum(x));
        for (double g : x.grad()) CHECK(g == 1.0);

        Td unused(Shape{2}, {1, 1}, true);
        unused.zero_grad();
        Td y(Shape{2}, {1, 2}, true);
        backward(sum_squares(y));
        for (double g : unused.grad()) CHECK(g == 0.0);

        CHECK_THROWS_AS(backward(relu(x)), ContractError);
    }

    TEST_CASE("dense-relu chain gradients")
    {
        Rng rng(12);
        auto x = randn({3, 4}, rng);
        auto w1 = randn({4, 5}, rng);
        auto b1 = randn({5}, rng);
        auto w2 = randn({5, 2}, rng);
        auto b2 = randn({2}, rng);
        const auto r = check({{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}},
                             [&] { return dense(relu(dense(x, w1, b1)), w2, b2); }, 1e-5);
        CHECK(r.passed());
    }

    TEST_CASE("embedding padding rows are zero and get no gradient")
    {
        Td table(Shape{4, 2}, {9, 9, 1, 2, 3, 4, 5, 6}, true);
        const std::vector<std::int32_t> ids{2, 0, 3, 1};
        const auto e = embedding(table, std::span<const std::int32_t>(ids), 2, 2);
        CHECK(e.values() == std::vector<double>{3, 4, 0, 0, 5, 6, 1, 2});
        backward(sum(e));
        CHECK(table.grad()[0] == 0.0);
        CHECK(table.grad()[1] == 0.0);
        CHECK(table.grad()[4] == 1.0);
        const std::vector<std::int32_t> bad{7};
        CHECK_THROWS_AS(embedding(table, std::span<const std::int32_t>(bad), 1, 1), DimensionError);
    }

    TEST_CASE("gradient_check on a quadratic and on a wrong gradient")
    {
        Rng rng(13);
        auto x = randn({6}, rng);
        GradCheckOptions opts;
        opts.tolerance = 1e-8;
        CHECK(gradient_check({{"x", x}}, [&] { return sum_squares(x); }, opts).passed());

        // A loss whose backward ignores the second factor disagrees with the numbers.
        opts.tolerance = 1e-4;
        const auto report = gradient_check(
            {{"x", x}},
            [&] {
                const auto d = x.detach();
                std::vector<double> w(d.values().begin(), d.values().end());
                return weighted_sum(x, std::span<const double>(w));
            },
            opts);
        CHECK_FALSE(report.passed());
        CHECK(report.params[0].name == "x");
    }

    TEST_CASE("forward is deterministic without dropout")
    {
        Rng rng(14);
        auto x = randn({2, 3}, rng, false);
        auto w = randn({3, 3}, rng, false);
        auto b = randn({3}, rng, false);
        CHECK(relu(dense(x, w, b)).values() == relu(dense(x, w, b)).values());
    }

    TEST_CASE("checkpoint byte layout and round trip")
    {
        Checkpoint ck;
        ck.put("a", Shape{2}, {1.0f, -2.5f});
        ck.put("layer/w", Shape{1, 3}, {0.5f, 0.25f, 0.125f});
        const auto bytes = ck.serialize();
        CHECK(bytes.substr(0, 4) == "CFCK");
        CHECK(static_cast<unsigned char>(bytes[4]) == 1);
        CHECK(static_cast<unsigned char>(bytes[5]) == 0);
        CHECK(static_cast<unsigned char>(bytes[6]) == 2);
        // first entry: name length 1, "a", dtype 0, rank 1, dim 2, two floats
        CHECK(static_cast<unsigned char>(bytes[10]) == 1);
        CHECK(bytes[14] == 'a');
        CHECK(bytes[15] == 0);
        CHECK(bytes[16] == 1);
        CHECK(static_cast<unsigned char>(bytes[17]) == 2);
        float first = 0;
        std::memcpy(&first, bytes.data() + 21, 4);
        CHECK(first == 1.0f);

        const auto back = Checkpoint::deserialize(bytes);
        CHECK(back.serialize() == bytes);
        CHECK(back.find("layer/w")->shape == Shape{1, 3});
        CHECK_THROWS_AS(Checkpoint::deserialize("XXXX"), FormatError);
        CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 1)), FormatError);
    }
}
