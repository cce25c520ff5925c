#include <cmath>
#include <vector>

#include "doctest.h"
#include "exprfuse/errors.hpp"
#include "exprfuse/kernels.hpp"
#include "exprfuse/ops.hpp"
#include "support/gradcheck.hpp"

using namespace exprfuse;
using exprfuse::testing::check_gradients;
using exprfuse::testing::random_tensor;

namespace {

std::vector<double> as_vector(Var v) { return {v.value().begin(), v.value().end()}; }

}  // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("tensor rejects inconsistent shapes") {
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{0, 3}), DimensionError);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul examples") {
    Tape tape;
    auto eye = tape.constant({2, 2}, {1, 0, 0, 1});
    auto m = tape.constant({2, 2}, {1, 2, 3, 4});
    CHECK(as_vector(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});

    auto row = tape.constant({1, 2}, {1, 2});
    auto col = tape.constant({2, 1}, {3, 4});
    auto prod = matmul(row, col);
    CHECK(prod.shape() == Shape{1, 1});
    CHECK(prod.value()[0] == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    auto a = tape.constant(Tensor({2, 3}));
    auto b = tape.constant(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto report = check_gradients([&](Tape& t) { return sum(matmul(t.bind(a), t.bind(b))); }, {&a, &b}, rng, 100);
    CHECK(report.probes == 20);
    CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("softmax examples") {
    Tape tape;
    CHECK(as_vector(softmax(tape.constant({2}, {0, 0}))) == std::vector<double>{0.5, 0.5});

    auto big = as_vector(softmax(tape.constant({3}, {1000, 1000, 1000})));
    for (double v : big) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto s = as_vector(softmax(tape.constant({3}, {1, 2, 3})));
    CHECK(std::abs(s[0] - 0.09003) < 1e-5);
    CHECK(std::abs(s[1] - 0.24473) < 1e-5);
    CHECK(std::abs(s[2] - 0.66524) < 1e-5);
}

TEST_CASE("softmax along a non-trailing axis") {
    Tape tape;
    // columns of [[0, 1], [0, 1]] are constant -> each column softmax is uniform
    auto y = as_vector(softmax(tape.constant({2, 2}, {0, 1, 0, 1}), 0));
    for (double v : y) CHECK(v == 0.5);
    CHECK_THROWS_AS(softmax(tape.constant({2, 2}, {0, 1, 0, 1}), 2), DimensionError);
}

TEST_CASE("softmax rows normalize and ignore constant shifts") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tape;
        Tensor x = random_tensor({4, 7}, rng, -50, 50, false);
        Tensor shifted = x;
        const double c = rng.uniform(-100, 100);
        for (double& v : shifted.mutable_values()) v += c;
        auto y = softmax(tape.constant(x));
        auto ys = softmax(tape.constant(shifted));
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                total += y.value()[r * 7 + j];
                CHECK(std::abs(y.value()[r * 7 + j] - ys.value()[r * 7 + j]) < 1e-12);
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("concat_last examples") {
    Tape tape;
    auto x = tape.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    std::vector<Var> single{x};
    CHECK(as_vector(concat_last(single)) == as_vector(x));

    Tensor a({2, 2, 888}, true);
    Tensor b({2, 2, 888}, true);
    Tensor c({2, 2, 888}, true);
    std::vector<Var> three{tape.bind(a), tape.bind(b), tape.bind(c)};
    CHECK(concat_last(three).shape() == Shape{2, 2, 2664});

    Tensor p = Tensor::filled({2, 3}, 1.0, true);
    Tensor q = Tensor::filled({2, 5}, 2.0, true);
    Tape t2;
    std::vector<Var> two{t2.bind(p), t2.bind(q)};
    t2.backward(sum(concat_last(two)));
    for (double g : p.grad()) CHECK(g == 1.0);
    for (double g : q.grad()) CHECK(g == 1.0);

    auto bad = tape.constant(Tensor({3, 2}));
    std::vector<Var> mismatched{x, bad};
    CHECK_THROWS_AS(concat_last(mismatched), DimensionError);
}

TEST_CASE("concat then slice at the same offsets is the identity") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tape tape;
        const std::size_t rows = 1 + rng.below(4);
        std::vector<Var> parts;
        std::vector<std::size_t> widths;
        for (std::size_t i = 0; i < 1 + rng.below(4); ++i) {
            widths.push_back(1 + rng.below(6));
            parts.push_back(tape.constant(random_tensor({rows, widths.back()}, rng, -1, 1, false)));
        }
        auto joined = concat_last(parts);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            CHECK(as_vector(slice_last(joined, offset, widths[i])) == as_vector(parts[i]));
            offset += widths[i];
        }
    }
}

TEST_CASE("dropout examples") {
    Rng rng(99);
    Tape tape;
    Tensor ones = Tensor::filled({100000}, 1.0);
    auto x = tape.constant(ones);
    CHECK(as_vector(dropout(x, 0.5, false, rng)) == as_vector(x));
    CHECK(as_vector(dropout(x, 0.0, true, rng)) == as_vector(x));
    auto y = dropout(x, 0.5, true, rng);
    double total = 0.0;
    for (double v : y.value()) {
        CHECK((v == 0.0 || v == 2.0));
        total += v;
    }
    const double m = total / 100000.0;
    CHECK(m >= 0.98);
    CHECK(m <= 1.02);
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, false, rng), ConfigError);
}

TEST_CASE("dropout is deterministic for a seed") {
    Tape tape;
    auto x = tape.constant(Tensor::filled({64}, 1.0));
    Rng r1(7);
    Rng r2(7);
    CHECK(as_vector(dropout(x, 0.3, true, r1)) == as_vector(dropout(x, 0.3, true, r2)));
}

TEST_CASE("layer_norm examples") {
    Tape tape;
    auto gain = tape.constant(Tensor::filled({4}, 1.0));
    auto bias = tape.constant(Tensor({4}));
    for (double v : layer_norm(tape.constant(Tensor::filled({4}, 3.5)), gain, bias, 1e-5).value()) CHECK(v == 0.0);

    auto g2 = tape.constant(Tensor::filled({2}, 1.0));
    auto b2 = tape.constant(Tensor({2}));
    auto y = as_vector(layer_norm(tape.constant({2}, {1, 3}), g2, b2, 1e-14));
    CHECK(std::abs(y[0] + 1.0) < 1e-12);
    CHECK(std::abs(y[1] - 1.0) < 1e-12);
    CHECK_THROWS_AS(layer_norm(tape.constant({2}, {1, 3}), g2, b2, 0.0), ConfigError);
}

TEST_CASE("layer_norm output is standardized before the affine map") {
    Rng rng(8);
    Tape tape;
    auto x = tape.constant(random_tensor({5, 16}, rng, -3, 3, false));
    auto y = layer_norm(x, tape.constant(Tensor::filled({16}, 1.0)), tape.constant(Tensor({16})), 1e-12);
    for (std::size_t r = 0; r < 5; ++r) {
        double mu = 0.0;
        double sq = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mu += y.value()[r * 16 + j];
        mu /= 16;
        for (std::size_t j = 0; j < 16; ++j) sq += (y.value()[r * 16 + j] - mu) * (y.value()[r * 16 + j] - mu);
        CHECK(std::abs(mu) < 1e-12);
        CHECK(std::abs(sq / 16 - 1.0) < 1e-9);
    }
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(21);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor w = random_tensor({3, 6}, rng, -1, 1, false);
    auto report = check_gradients(
        [&](Tape& t) { return sum(mul(layer_norm(t.bind(x), t.bind(g), t.bind(b), 1e-5), t.constant(w))); },
        {&x, &g, &b}, rng, 6);
    CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("backward examples") {
    Tensor x({3}, {1, 2, 3}, true);
    {
        Tape tape;
        auto v = tape.bind(x);
        tape.backward(sum(mul(v, v)));
    }
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});

    // A second backward on the same tape accumulates again.
    x.clear_grad();
    Tape tape;
    auto v = tape.bind(x);
    auto loss = sum(mul(v, v));
    tape.backward(loss);
    tape.backward(loss);
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{4, 8, 12});

    Tensor unused({2}, {5, 6}, true);
    Tape t2;
    t2.bind(unused);
    t2.backward(t2.constant({1}, {3.0}));
    REQUIRE(unused.has_grad());
    for (double gval : unused.grad()) CHECK(gval == 0.0);

    Tape t3;
    CHECK_THROWS_AS(t3.backward(t3.constant({2}, {1, 2})), ContractError);
}

TEST_CASE("elementwise and shape op gradients") {
    Rng rng(31);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor bias = random_tensor({5}, rng);
    auto fn = [&](Tape& t) {
        auto av = t.bind(a);
        auto bv = t.bind(b);
        auto h = relu(add(av, scale(bv, 0.7)));
        auto z = linear(mul(h, av), t.bind(w), t.bind(bias));
        return mean(softmax(reshape(z, {6, 5}), 0));
    };
    auto report = check_gradients(fn, {&a, &b, &w, &bias}, rng, 8);
    CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("batched matmul gradients in both layouts") {
    Rng rng(41);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 4, 5}, rng);
    Tensor bt = random_tensor({2, 5, 4}, rng);
    Tensor probe = random_tensor({2, 3, 5}, rng, -1, 1, false);
    auto plain = check_gradients([&](Tape& t) { return sum(mul(batched_matmul(t.bind(a), t.bind(b)), t.constant(probe))); },
                                 {&a, &b}, rng, 10);
    auto trans = check_gradients(
        [&](Tape& t) { return sum(mul(batched_matmul(t.bind(a), t.bind(bt), true), t.constant(probe))); }, {&a, &bt}, rng,
        10);
    CHECK(plain.max_relative_error < 1e-6);
    CHECK(trans.max_relative_error < 1e-6);
}

TEST_CASE("conv and pooling gradients") {
    Rng rng(51);
    Tensor x = random_tensor({2, 4, 4, 2}, rng);
    Tensor w = random_tensor({3 * 3 * 2, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor probe = random_tensor({2, 2, 2, 3}, rng, -1, 1, false);
    auto report = check_gradients(
        [&](Tape& t) { return sum(mul(max_pool(conv2d_same(t.bind(x), t.bind(w), t.bind(b), 3), 2), t.constant(probe))); },
        {&x, &w, &b}, rng, 8);
    CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("non-finite forward values are reported") {
    Tape tape;
    auto x = tape.constant({1}, {1e308});
    CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}

}  // TEST_SUITE

TEST_SUITE("kernels") {

TEST_CASE("OpenMP kernels match the serial reference bitwise") {
    Rng rng(1234);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t m = 1 + rng.below(90);
        const std::size_t n = 1 + rng.below(90);
        const std::size_t k = 1 + rng.below(150);
        auto fill = [&](std::size_t count) {
            std::vector<double> v(count);
            for (double& x : v) x = rng.uniform(-1, 1);
            return v;
        };
        const auto a = fill(m * k);
        const auto b_nn = fill(k * n);
        const auto b_nt = fill(n * k);
        const auto a_tn = fill(k * m);
        const auto seed_c = fill(m * n);

        auto run = [&](auto kernel, const std::vector<double>& lhs, const std::vector<double>& rhs) {
            std::vector<double> c = seed_c;
            kernel(kernels::GemmDims{m, n, k}, lhs, rhs, c);
            return c;
        };
        CHECK(run(kernels::serial::gemm_nn, a, b_nn) == run(kernels::omp::gemm_nn, a, b_nn));
        CHECK(run(kernels::serial::gemm_nt, a, b_nt) == run(kernels::omp::gemm_nt, a, b_nt));
        CHECK(run(kernels::serial::gemm_tn, a_tn, b_nn) == run(kernels::omp::gemm_tn, a_tn, b_nn));

        std::vector<double> s1(m * n);
        std::vector<double> s2(m * n);
        kernels::serial::softmax_rows(m, n, seed_c, s1);
        kernels::omp::softmax_rows(m, n, seed_c, s2);
        CHECK(s1 == s2);
    }
}

}  // TEST_SUITE
