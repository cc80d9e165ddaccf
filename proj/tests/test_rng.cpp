#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sbk/rng.hpp"

using sbk::RandomState;

TEST_CASE("same seed replays the same stream") {
    auto a = RandomState::from_seed(42);
    auto b = RandomState::from_seed(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("copied state replays from the copy point") {
    auto a = RandomState::from_seed(7);
    a.next_u64();
    a.next_u64();
    auto b = a;
    CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("split streams differ from parent and from each other") {
    auto root = RandomState::from_seed(1);
    auto s1 = root.split(1);
    auto s2 = root.split(2);
    auto r = root;
    CHECK(s1.next_u64() != s2.next_u64());
    CHECK(s1.next_u64() != r.next_u64());
}

TEST_CASE("uniform moments") {
    auto rng = RandomState::from_seed(123);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double u = rng.next_uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
        sum2 += u * u;
    }
    CHECK(std::fabs(sum / n - 0.5) < 0.005);
    CHECK(std::fabs(sum2 / n - 1.0 / 3.0) < 0.005);
}

TEST_CASE("gauss moments") {
    auto rng = RandomState::from_seed(99);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = rng.next_gauss();
        sum += z;
        sum2 += z * z;
    }
    CHECK(std::fabs(sum / n) < 0.01);
    CHECK(std::fabs(sum2 / n - 1.0) < 0.02);
}
