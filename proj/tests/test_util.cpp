#include <catch2/catch_amalgamated.hpp>

#include "kernelblaze/rng.hpp"
#include "kernelblaze/taxonomy.hpp"
#include "kernelblaze/util.hpp"

using namespace kblaze;

TEST_CASE("slugify lowercases and collapses non-alphanumerics") {
    CHECK(slugify("DRAM Bandwidth Bound") == "dram_bandwidth_bound");
    CHECK(slugify("  weird--Name!!x ") == "weird_name_x");
    CHECK(slugify("already_slugged") == "already_slugged");
    CHECK(slugify("A") == "a");
    CHECK(slugify("___") == "");
}

TEST_CASE("format_float6 prints six significant digits") {
    CHECK(format_float6(1.0) == "1");
    CHECK(format_float6(1.5) == "1.5");
    CHECK(format_float6(0.0488) == "0.0488");
    CHECK(format_float6(362.29) == "362.29");
    CHECK(format_float6(9.419) == "9.419");
    CHECK(format_float6(1234567.0) == "1.23457e+06");
    CHECK(format_float6(0.3333333333333) == "0.333333");
}

// Golden values computed with an independent reference implementation of
// splitmix64 / xoshiro256**.
TEST_CASE("splitmix64 matches the reference stream") {
    std::uint64_t s = 0;
    CHECK(splitmix64_next(s) == 0xe220a8397b1dcdafULL);
    CHECK(splitmix64_next(s) == 0x6e789e6aa1b965f4ULL);
    CHECK(splitmix64_next(s) == 0x06c45d188009454fULL);
    CHECK(splitmix64_next(s) == 0xf88bb8a8724c81ecULL);

    std::uint64_t s42 = 42;
    CHECK(splitmix64_next(s42) == 0xbdd732262feb6e95ULL);
}

TEST_CASE("xoshiro256** matches the reference stream") {
    Rng rng(7);
    CHECK(rng.next_u64() == 0xb358faf74ef9765aULL);
    CHECK(rng.next_u64() == 0x475c3d964f482cd2ULL);
    CHECK(rng.next_u64() == 0xd6f1d349952c7996ULL);
    CHECK(rng.next_u64() == 0xfb2938731e807240ULL);
    CHECK(rng.next_u64() == 0xfda904ec7e540318ULL);
    CHECK(rng.next_u64() == 0xdf6e1ce3b6218c49ULL);

    Rng rng2(0xDEADBEEFULL);
    CHECK(rng2.next_u64() == 0xc5555444a74d7e83ULL);
}

TEST_CASE("uniform doubles are exact and in [0,1)") {
    Rng rng(7);
    CHECK(rng.uniform() == 0.7005764821796896);
    CHECK(rng.uniform() == 0.27875122947378428);
    CHECK(rng.uniform() == 0.83962746187641979);
    CHECK(rng.uniform() == 0.98109772501493508);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("fnv1a64 matches reference digests") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("matmul_l2") == 0x96dd900a296c5748ULL);
}

TEST_CASE("derive_seed separates coordinates") {
    const auto base = derive_seed(7, "task_a", 0, 0);
    CHECK(base == derive_seed(7, "task_a", 0, 0));
    CHECK(base != derive_seed(7, "task_a", 0, 1));
    CHECK(base != derive_seed(7, "task_a", 1, 0));
    CHECK(base != derive_seed(7, "task_b", 0, 0));
    CHECK(base != derive_seed(8, "task_a", 0, 0));
}

TEST_CASE("frozen clock pins timestamps") {
    const Clock frozen = Clock::frozen_at(kFrozenTimestamp);
    CHECK(frozen.now_rfc3339() == "2025-01-01T00:00:00Z");
    const Clock real = Clock::realtime();
    const std::string now = real.now_rfc3339();
    REQUIRE(now.size() == 20);
    CHECK(now[4] == '-');
    CHECK(now[10] == 'T');
    CHECK(now.back() == 'Z');
}

TEST_CASE("bottleneck label normalization") {
    CHECK(normalize_bottleneck_label("dram_bandwidth_bound") == "dram_bandwidth_bound");
    CHECK(normalize_bottleneck_label("tma_bound") == "x-tma_bound");
    CHECK(normalize_bottleneck_label("x-custom_thing") == "x-custom_thing");
    CHECK(normalize_bottleneck_label("TMA Bound!") == "x-tma_bound");
    CHECK(normalize_bottleneck_label("") == "x-unlabeled");
    CHECK(is_valid_bottleneck_label("balanced"));
    CHECK(is_valid_bottleneck_label("x-tma_bound"));
    CHECK_FALSE(is_valid_bottleneck_label("made_up_label"));
    CHECK_FALSE(is_valid_bottleneck_label("x-"));
}

TEST_CASE("event log collects warnings") {
    EventLog events;
    CHECK_FALSE(events.has("kb_size_cap"));
    events.warn("kb_size_cap", "too big");
    CHECK(events.has("kb_size_cap"));
    CHECK(events.entries.size() == 1);
}
