// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cmega/errors.hpp"
#include "support.hpp"

using namespace cmega;
using namespace testsupport;

TEST_CASE("matmul agrees with the naive oracle") {
    RandomStream rng(1);
    for (int i = 0; i < 20; ++i) {
        const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
        const Mat a = random_mat(rng, m, k), b = random_mat(rng, k, n);
        const Mat want = matmul_oracle(a, b);
        CHECK(max_abs_diff(matmul(a, b), want) <= 1e-12);
        CHECK(max_abs_diff(matmul_bt(a, b.transposed()), want) <= 1e-12);
        CHECK(max_abs_diff(matmul_at(a.transposed(), b), want) <= 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched shapes") {
    CHECK_THROWS_AS(matmul(Mat(2, 3), Mat(2, 3)), ContractViolation);
}

TEST_CASE("identity and transpose") {
    const Mat a = Mat::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(matmul(a, Mat::identity(3)) == a);
    CHECK(a.transposed().transposed() == a);
    CHECK(a.transposed()(2, 1) == 6.0);
}

TEST_CASE("gaussian_of moments") {
    RandomStream rng(7);
    const auto v = gaussian_of(rng, 100000, 1.0);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / double(v.size()));
    CHECK(std::abs(mean) <= 0.02);
    CHECK(std::abs(sd - 1.0) <= 0.02);
}

TEST_CASE("gaussian_of scales exactly with sigma") {
    RandomStream a(7), b(7);
    const auto one = gaussian_of(a, 1000, 1.0);
    const auto two = gaussian_of(b, 1000, 2.0);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(two[i] == 2.0 * one[i]);
}

TEST_CASE("gaussian_of rejects non-positive sigma") {
    RandomStream rng(1);
    CHECK_THROWS_AS(gaussian_of(rng, 3, 0.0), ContractViolation);
}

TEST_CASE("random streams are reproducible and derived streams do not collide") {
    RandomStream a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    const RandomStream root(99);
    RandomStream s1 = root.derive("train/base"), s2 = root.derive("train/task/1");
    CHECK(s1.seed() != s2.seed());
    std::unordered_set<std::uint64_t> seen;
    const std::size_t n = std::size_t{1} << 20;
    seen.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) seen.insert(s1.next_u64());
    std::size_t collisions = 0;
    for (std::size_t i = 0; i < n; ++i) collisions += seen.count(s2.next_u64());
    CHECK(collisions == 0);
}

TEST_CASE("derive does not advance the parent") {
    RandomStream r(5);
    r.next_u64();
    const auto before = r.counter();
    (void)r.derive("x");
    CHECK(r.counter() == before);
    CHECK(r.derive("x").seed() == r.derive("x").seed());
    CHECK(r.derive(std::uint64_t{1}).seed() != r.derive(std::uint64_t{2}).seed());
}

TEST_CASE("uniform and below stay in range") {
    RandomStream r(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r.below(7) < 7);
    }
}

TEST_CASE("bilinear upsample 2x2 to 4x4") {
    const Mat m = Mat::from_rows({{0, 1}, {0, 1}});
    const Mat up = bilinear_upsample(m, 4, 4);
    const double cols[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) CHECK(up(y, x) == doctest::Approx(cols[x]).epsilon(1e-15));
}

TEST_CASE("bilinear upsample keeps constants and corners") {
    RandomStream rng(4);
    const Mat c(3, 5, 0.37);
    const Mat up = bilinear_upsample(c, 11, 17);
    for (double v : up.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));

    const Mat r = random_mat(rng, 3, 4);
    const Mat u = bilinear_upsample(r, 9, 10);
    CHECK(u(0, 0) == r(0, 0));
    CHECK(u(8, 9) == r(2, 3));
    CHECK(u(0, 9) == r(0, 3));
    CHECK(bilinear_upsample(r, 3, 4) == r);
}

TEST_CASE("gaussian blur matches a dense 2-D oracle and keeps the sum") {
    Mat impulse(24, 24);
    impulse(12, 12) = 1.0;
    const Mat b = gaussian_blur(impulse, 2.0);
    CHECK(max_abs_diff(b, blur_dense(impulse, 2.0)) <= 1e-12);
    CHECK(std::abs(sum(b) - 1.0) <= 1e-9);

    RandomStream rng(8);
    const Mat r = random_mat(rng, 10, 13, 0.0, 1.0);
    const Mat br = gaussian_blur(r, 4.0);
    CHECK(max_abs_diff(br, blur_dense(r, 4.0)) <= 1e-12);
    CHECK(std::abs(sum(br) - sum(r)) <= 1e-9);
}

TEST_CASE("gaussian blur with sigma 0 is the identity") {
    RandomStream rng(2);
    const Mat r = random_mat(rng, 5, 5);
    CHECK(gaussian_blur(r, 0.0) == r);
}

TEST_CASE("gaussian kernel is normalized and symmetric") {
    const auto k = gaussian_kernel(1.5);
    CHECK(k.size() == 2 * 5 + 1);
    CHECK(std::accumulate(k.begin(), k.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] == k[k.size() - 1 - i]);
}

TEST_CASE("reflect index repeats the edge sample") {
    CHECK(reflect_index(-1, 4) == 0);
    CHECK(reflect_index(-2, 4) == 1);
    CHECK(reflect_index(4, 4) == 3);
    CHECK(reflect_index(5, 4) == 2);
    for (long i = -20; i < 20; ++i) CHECK(reflect_index(i, 3) == mirror(i, 3));
}

TEST_CASE("mat arithmetic") {
    Mat a = Mat::from_rows({{1, 2}, {3, 4}});
    const Mat b = Mat::from_rows({{1, 1}, {1, 1}});
    CHECK((a + b)(1, 1) == 5.0);
    CHECK((a - b)(0, 0) == 0.0);
    CHECK((2.0 * a)(1, 0) == 6.0);
    CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(30.0)));
    CHECK(a.all_finite());
    a(0, 0) = std::nan("");
    CHECK_FALSE(a.all_finite());
}

TEST_CASE("matmul is associative to rounding") {
    RandomStream rng(6);
    for (int i = 0; i < 20; ++i) {
        const Mat a = random_mat(rng, 4, 6), b = random_mat(rng, 6, 5), c = random_mat(rng, 5, 3);
        const Mat left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
        CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(1.0, frobenius_norm(left)));
    }
}
