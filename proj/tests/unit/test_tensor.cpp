#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "ricenet/tensor.hpp"

using namespace ricenet;
using ricenet::testing::random_tensor;

namespace {

// Independent reference for matmul: plain triple loop with j-inner accumulation.
Tensord triple_loop(const Tensord& a, const Tensord& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensord c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

Tensord identity(std::size_t n) {
    Tensord t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

}  // namespace

TEST_CASE("tensor construction enforces shape invariants") {
    CHECK_THROWS_AS(Tensorf({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensorf({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    Tensorf t({2, 3}, 1.5f);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.all_finite());
}

TEST_CASE("matmul") {
    const Tensord m({2, 2}, {1, 2, 3, 4});
    SUBCASE("identity") { CHECK(matmul(identity(2), m) == m); }
    SUBCASE("2x2 product") {
        const Tensord b({2, 2}, {5, 6, 7, 8});
        const Tensord expected = triple_loop(m, b);
        CHECK(expected == Tensord({2, 2}, {19, 22, 43, 50}));
        CHECK(matmul(m, b) == expected);
    }
    SUBCASE("mismatch names both shapes") {
        try {
            matmul(Tensord({2, 3}), Tensord({4, 2}));
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2, 3]") != std::string::npos);
            CHECK(msg.find("[4, 2]") != std::string::npos);
        }
    }
    SUBCASE("random shapes agree with triple loop") {
        Rng rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(7), n = 1 + rng.below(7);
            const auto a = random_tensor({m, k}, rng);
            const auto b = random_tensor({k, n}, rng);
            CHECK(matmul(a, b) == triple_loop(a, b));
        }
    }
}

TEST_CASE("matmul properties") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        const auto a = random_tensor({8, 8}, rng);
        const auto b = random_tensor({8, 8}, rng);
        const auto c = random_tensor({8, 8}, rng);
        CHECK(matmul(identity(8), a) == a);
        CHECK(matmul(a, identity(8)) == a);
        const auto left = matmul(matmul(a, b), c);
        const auto right = matmul(a, matmul(b, c));
        double worst = 0.0;
        for (std::size_t i = 0; i < left.size(); ++i) worst = std::max(worst, std::abs(left[i] - right[i]));
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("elementwise operations") {
    const Tensord a({3}, {1, 2, 3});
    CHECK(add(a, Tensord({3})) == a);
    CHECK(scale(a, 2.0) == Tensord({3}, {2, 4, 6}));
    CHECK(mul(Tensord({2}, {1, 2}), Tensord({2}, {3, 4})) == Tensord({2}, {3, 8}));
    CHECK(sub(a, a) == Tensord({3}));
    CHECK(map(a, std::function<double(double)>([](double x) { return x * x; })) == Tensord({3}, {1, 4, 9}));
    CHECK_THROWS_AS(add(a, Tensord({4})), ShapeError);
    CHECK_THROWS_AS(mul(Tensord({3, 1}), a), ShapeError);

    SUBCASE("bias row broadcast") {
        const Tensord m({2, 2}, {1, 2, 3, 4});
        CHECK(add_row_bias(m, Tensord({2}, {10, 20})) == Tensord({2, 2}, {11, 22, 13, 24}));
        CHECK_THROWS_AS(add_row_bias(m, Tensord({3})), ShapeError);
    }

    SUBCASE("add and mul commute bit-exactly") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            const auto x = random_tensor<float>({4, 5}, rng, -100, 100);
            const auto y = random_tensor<float>({4, 5}, rng, -100, 100);
            CHECK(bit_identical(add(x, y), add(y, x)));
            CHECK(bit_identical(mul(x, y), mul(y, x)));
        }
    }
}

TEST_CASE("reshape") {
    const Tensorf a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensorf flat = a.reshape({6});
    CHECK(flat.shape() == Shape{6});
    CHECK(flat == Tensorf({6}, {1, 2, 3, 4, 5, 6}));
    CHECK(Tensorf({1, 4, 4, 2}).reshape({1, 32}).shape() == Shape{1, 32});
    CHECK_THROWS_AS(a.reshape({4}), ShapeError);

    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const auto t = random_tensor<float>({3, 4, 5}, rng);
        CHECK(bit_identical(t.reshape({12, 5}).reshape({3, 4, 5}), t));
    }
}
