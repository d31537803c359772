#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>

#include "cdo/rng.hpp"

using cdo::SeededRng;

TEST_CASE("splitmix64 reference stream") {
    // First five outputs for seed 42, frozen from an independent
    // big-integer implementation of the reference algorithm.
    SeededRng rng(42);
    CHECK(rng.next_u64() == 0xbdd732262feb6e95ULL);
    CHECK(rng.next_u64() == 0x28efe333b266f103ULL);
    CHECK(rng.next_u64() == 0x47526757130f9f52ULL);
    CHECK(rng.next_u64() == 0x581ce1ff0e4ae394ULL);
    CHECK(rng.next_u64() == 0x09bc585a244823f2ULL);
}

TEST_CASE("uniform mapping is pinned") {
    SeededRng rng(42);
    CHECK(rng.uniform(0.0, 1.0) == 0.7415648787718233);
    CHECK(rng.uniform(0.0, 1.0) == 0.1599103928769201);
    CHECK(rng.uniform(0.0, 1.0) == 0.27860113025513866);
    CHECK(rng.uniform(0.0, 1.0) == 0.34419071652363753);

    SeededRng rng7(7);
    CHECK(rng7.uniform(-3.0, 5.0) == 0.11863798713017193);
}

TEST_CASE("same seed gives bitwise-identical streams") {
    SeededRng a(123456789);
    SeededRng b(123456789);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    SeededRng c(0xDEADBEEF), d(0xDEADBEEF);
    for (int i = 0; i < 100; ++i) {
        CHECK(c.uniform(0.0, 1.0) == d.uniform(0.0, 1.0));
        CHECK(c.normal(1.0, 2.0) == d.normal(1.0, 2.0));
    }
}

TEST_CASE("uniform sample mean over 1e4 draws") {
    SeededRng rng(20240601);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) sum += rng.uniform(0.0, 1.0);
    const double mean = sum / 10000.0;
    CHECK(mean == 0.49614092871511567);  // frozen from the reference stream
    CHECK(std::fabs(mean - 0.5) < 0.02);
}

TEST_CASE("uniform stays in range and rejects bad bounds") {
    SeededRng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(-2.5, 7.25);
        CHECK(v >= -2.5);
        CHECK(v < 7.25);
    }
    CHECK_THROWS_AS(rng.uniform(1.0, 1.0), cdo::ParamError);
    CHECK_THROWS_AS(rng.uniform(2.0, -2.0), cdo::ParamError);
}

TEST_CASE("normal degenerate and invalid std") {
    SeededRng rng(3);
    CHECK(rng.normal(4.25, 0.0) == 4.25);
    CHECK_THROWS_AS(rng.normal(0.0, -1.0), cdo::ParamError);
}

TEST_CASE("normal first draw matches reference within libm slack") {
    SeededRng rng(99);
    // Frozen from an independent Box-Muller evaluation; log/cos may differ
    // by ulps between libms, so this is a tolerance check.
    CHECK_THAT(rng.normal(0.0, 1.0),
               Catch::Matchers::WithinRel(1.6055122603257697, 1e-12));
}

TEST_CASE("normal sample statistics") {
    SeededRng rng(55);
    const int n = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal(2.0, 3.0);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::fabs(mean - 2.0) < 0.1);
    CHECK(std::fabs(std::sqrt(var) - 3.0) < 0.1);
}

TEST_CASE("derived sub-streams differ from each other and the master") {
    const std::uint64_t master = 1;
    SeededRng s0 = SeededRng::derive(master, 0);
    SeededRng s1 = SeededRng::derive(master, 1);
    SeededRng s0_again = SeededRng::derive(master, 0);
    const std::uint64_t a = s0.next_u64();
    const std::uint64_t b = s1.next_u64();
    CHECK(a != b);
    CHECK(a == s0_again.next_u64());
}

TEST_CASE("uniform_int covers range deterministically") {
    SeededRng rng(17);
    bool seen[5] = {false, false, false, false, false};
    for (int i = 0; i < 200; ++i) {
        const int v = rng.uniform_int(2, 6);
        REQUIRE(v >= 2);
        REQUIRE(v <= 6);
        seen[v - 2] = true;
    }
    for (bool s : seen) CHECK(s);
    CHECK_THROWS_AS(rng.uniform_int(3, 2), cdo::ParamError);
}
