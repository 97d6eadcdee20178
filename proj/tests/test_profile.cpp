#include <catch2/catch_amalgamated.hpp>

#include "kernelblaze/profile.hpp"
#include "kernelblaze/rng.hpp"

using namespace kblaze;

namespace {

ProfileReport simple_report(std::vector<std::int64_t> cycles) {
    ProfileReport report;
    for (std::size_t i = 0; i < cycles.size(); ++i)
        report.kernels.push_back({"k", static_cast<std::int64_t>(i), cycles[i], {}, {}});
    return report;
}

ProfileReport random_report(Rng& rng, int max_invocations = 12) {
    ProfileReport report;
    const int n = 1 + static_cast<int>(rng.below(max_invocations));
    for (int i = 0; i < n; ++i) {
        KernelProfile k;
        k.kernel_name = "k" + std::to_string(rng.below(3));
        k.invocation_index = i;
        k.elapsed_cycles = 1 + static_cast<std::int64_t>(rng.below(1000000));
        // Grid-valued metrics so CSV round trips are exact.
        k.metrics["dram_throughput_pct"] = static_cast<double>(rng.below(1000)) / 10.0;
        k.stall_breakdown["long_scoreboard"] = static_cast<double>(rng.below(100)) / 100.0;
        report.kernels.push_back(std::move(k));
    }
    return report;
}

} // namespace

TEST_CASE("parse_profile_report reads the canonical format") {
    const std::string text =
        "kernel_name,invocation_index,elapsed_cycles,metric,value\n"
        "gemm,0,1200,dram_throughput_pct,87.5\n"
        "gemm,0,1200,stall.long_scoreboard,0.42\n"
        "gemm,1,800,dram_throughput_pct,80\n";
    const ProfileReport report = parse_profile_report(text);
    REQUIRE(report.kernels.size() == 2);
    CHECK(report.kernels[0].kernel_name == "gemm");
    CHECK(report.kernels[0].invocation_index == 0);
    CHECK(report.kernels[0].elapsed_cycles == 1200);
    CHECK(report.kernels[0].metrics.at("dram_throughput_pct") == 87.5);
    CHECK(report.kernels[0].stall_breakdown.at("long_scoreboard") == 0.42);
    CHECK(report.kernels[1].invocation_index == 1);
    CHECK(total_elapsed_cycles(report) == 2000);
}

TEST_CASE("parse_profile_report rejects bad input") {
    const std::string header = "kernel_name,invocation_index,elapsed_cycles,metric,value\n";
    SECTION("header only is empty") {
        CHECK_THROWS_MATCHES(parse_profile_report(header), Error,
                             Catch::Matchers::Predicate<Error>([](const Error& e) {
                                 return e.code() == ErrorCode::EmptyProfile;
                             }));
    }
    SECTION("negative cycles") {
        CHECK_THROWS_MATCHES(parse_profile_report(header + "k,0,-5,m,1\n"), Error,
                             Catch::Matchers::Predicate<Error>([](const Error& e) {
                                 return e.code() == ErrorCode::MalformedProfile;
                             }));
    }
    SECTION("zero cycles") {
        CHECK_THROWS(parse_profile_report(header + "k,0,0,m,1\n"));
    }
    SECTION("missing header") {
        CHECK_THROWS(parse_profile_report("k,0,5,m,1\n"));
    }
    SECTION("wrong column count") {
        CHECK_THROWS(parse_profile_report(header + "k,0,5,m\n"));
    }
    SECTION("non-contiguous invocation rows") {
        const std::string text = header + "k,0,5,m,1\nk,1,6,m,1\nk,0,5,m2,2\n";
        CHECK_THROWS_MATCHES(parse_profile_report(text), Error,
                             Catch::Matchers::Predicate<Error>([](const Error& e) {
                                 return e.code() == ErrorCode::MalformedProfile &&
                                        std::string(e.what()).find("contiguous") !=
                                            std::string::npos;
                             }));
    }
    SECTION("inconsistent cycles within an invocation") {
        const std::string text = header + "k,0,5,m,1\nk,0,6,m2,1\n";
        CHECK_THROWS(parse_profile_report(text));
    }
    SECTION("error carries the row locus") {
        try {
            parse_profile_report(header + "k,0,5,m,1\nk,1,bad,m,1\n");
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("row 3") != std::string::npos);
        }
    }
}

TEST_CASE("total_elapsed_cycles sums invocations") {
    CHECK(total_elapsed_cycles(simple_report({1000})) == 1000);
    CHECK(total_elapsed_cycles(simple_report({300, 700})) == 1000);
    CHECK_THROWS_MATCHES(total_elapsed_cycles(ProfileReport{}), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == ErrorCode::EmptyProfile;
                         }));

    SECTION("matches an independent summation oracle on random reports") {
        Rng rng(1234);
        for (int trial = 0; trial < 50; ++trial) {
            const ProfileReport report = random_report(rng, 50);
            std::int64_t oracle = 0;
            for (const auto& k : report.kernels) oracle += k.elapsed_cycles;
            CHECK(total_elapsed_cycles(report) == oracle);
        }
    }

    SECTION("permutation invariant") {
        Rng rng(99);
        ProfileReport report = random_report(rng, 20);
        const std::int64_t before = total_elapsed_cycles(report);
        std::reverse(report.kernels.begin(), report.kernels.end());
        CHECK(total_elapsed_cycles(report) == before);
    }
}

TEST_CASE("compute_reward is the cycle ratio") {
    CHECK(compute_reward(simple_report({1000}), simple_report({500})) == 2.0);
    CHECK(compute_reward(simple_report({500}), simple_report({1000})) == 0.5);
    const ProfileReport same = simple_report({123, 456});
    CHECK(compute_reward(same, same) == 1.0);

    SECTION("reciprocal property") {
        Rng rng(5);
        for (int trial = 0; trial < 100; ++trial) {
            const ProfileReport a = random_report(rng);
            const ProfileReport b = random_report(rng);
            const double forward = compute_reward(a, b);
            const double backward = compute_reward(b, a);
            CHECK(std::abs(forward * backward - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("speedup_vs_baseline divides baseline by candidate cycles") {
    CHECK(speedup_vs_baseline(2000, simple_report({1000})) == 2.0);
    CHECK(speedup_vs_baseline(1000, simple_report({400, 600})) == 1.0);
    SECTION("random fixture matches direct division") {
        Rng rng(77);
        for (int trial = 0; trial < 50; ++trial) {
            const ProfileReport report = random_report(rng);
            const std::int64_t baseline = 1 + static_cast<std::int64_t>(rng.below(10000000));
            CHECK(speedup_vs_baseline(baseline, report) ==
                  static_cast<double>(baseline) /
                      static_cast<double>(total_elapsed_cycles(report)));
        }
    }
}

TEST_CASE("profile CSV round trips") {
    Rng rng(31337);
    for (int trial = 0; trial < 25; ++trial) {
        const ProfileReport report = random_report(rng);
        const ProfileReport reparsed = parse_profile_report(profile_to_csv(report));
        REQUIRE(reparsed.kernels.size() == report.kernels.size());
        for (std::size_t i = 0; i < report.kernels.size(); ++i) {
            CHECK(reparsed.kernels[i].kernel_name == report.kernels[i].kernel_name);
            CHECK(reparsed.kernels[i].invocation_index == report.kernels[i].invocation_index);
            CHECK(reparsed.kernels[i].elapsed_cycles == report.kernels[i].elapsed_cycles);
            CHECK(reparsed.kernels[i].metrics == report.kernels[i].metrics);
            CHECK(reparsed.kernels[i].stall_breakdown == report.kernels[i].stall_breakdown);
        }
    }
    SECTION("emission is deterministic") {
        Rng rng2(1);
        const ProfileReport report = random_report(rng2);
        CHECK(profile_to_csv(report) == profile_to_csv(report));
    }
}
