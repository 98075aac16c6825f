#include <doctest.h>

#include "aae/tensor.hpp"

using namespace aae;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul small known product") {
    Tensor a = Tensor::from_rows(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_rows(3, 2, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.rows == 2);
    CHECK(c.cols == 2);
    CHECK(c.at(0, 0) == 58);
    CHECK(c.at(0, 1) == 64);
    CHECK(c.at(1, 0) == 139);
    CHECK(c.at(1, 1) == 154);
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transpose") {
    Rng rng(3);
    Tensor a = Tensor::randn(4, 5, 1.0, rng);
    Tensor b = Tensor::randn(3, 5, 1.0, rng);
    Tensor c1 = matmul_nt(a, b);
    Tensor c2 = matmul(a, transpose(b));
    REQUIRE(c1.same_shape(c2));
    for (std::size_t i = 0; i < c1.size(); ++i)
        CHECK(c1.v[i] == doctest::Approx(c2.v[i]).epsilon(1e-12));

    Tensor d = Tensor::randn(5, 4, 1.0, rng);
    Tensor e = Tensor::randn(5, 3, 1.0, rng);
    Tensor f1 = matmul_tn(d, e);
    Tensor f2 = matmul(transpose(d), e);
    REQUIRE(f1.same_shape(f2));
    for (std::size_t i = 0; i < f1.size(); ++i)
        CHECK(f1.v[i] == doctest::Approx(f2.v[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch throws") {
    Tensor a(2, 3), b(2, 3);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("hcat and slice_cols round trip") {
    Rng rng(4);
    Tensor a = Tensor::randn(3, 2, 1.0, rng);
    Tensor b = Tensor::randn(3, 4, 1.0, rng);
    Tensor c = hcat(a, b);
    CHECK(c.cols == 6);
    Tensor a2 = slice_cols(c, 0, 2);
    Tensor b2 = slice_cols(c, 2, 6);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.v[i] == a2.v[i]);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(b.v[i] == b2.v[i]);
}

TEST_CASE("colsum / colmean / add_row_broadcast") {
    Tensor a = Tensor::from_rows(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor s = colsum(a);
    CHECK(s.v == std::vector<double>{5, 7, 9});
    Tensor m = colmean(a);
    CHECK(m.v == std::vector<double>{2.5, 3.5, 4.5});
    Tensor row = Tensor::from_rows(1, 3, {10, 20, 30});
    add_row_broadcast(a, row);
    CHECK(a.at(0, 0) == 11);
    CHECK(a.at(1, 2) == 36);
}

TEST_CASE("compensated sum survives cancellation-heavy input") {
    std::vector<double> xs;
    for (int i = 0; i < 1000; ++i) {
        xs.push_back(1e16);
        xs.push_back(1.0);
        xs.push_back(-1e16);
    }
    CHECK(compensated_sum(xs) == doctest::Approx(1000.0));
}

TEST_CASE("randn is deterministic given the stream") {
    Rng r1(11), r2(11);
    Tensor a = Tensor::randn(5, 5, 0.5, r1);
    Tensor b = Tensor::randn(5, 5, 0.5, r2);
    CHECK(a.v == b.v);
    CHECK(a.all_finite());
}

TEST_SUITE_END();
