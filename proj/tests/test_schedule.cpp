// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "tinydistill/schedule.hpp"

using namespace td;

TEST_CASE("cosine schedule endpoints", "[schedule]") {
  const double peak = 2e-5, min = 2e-6;
  REQUIRE(cosine_lr(0, 200, 1000, peak, min) == 0.0);
  REQUIRE(cosine_lr(200, 200, 1000, peak, min) == Catch::Approx(peak));
  REQUIRE(cosine_lr(1000, 200, 1000, peak, min) == Catch::Approx(min));
}

TEST_CASE("cosine schedule midpoint is the mean of peak and min", "[schedule]") {
  const double peak = 1e-3, min = 1e-5;
  REQUIRE(cosine_lr(600, 200, 1000, peak, min) ==
          Catch::Approx((peak + min) / 2.0).epsilon(1e-12));
}

TEST_CASE("cosine schedule is monotone non-increasing after warmup", "[schedule]") {
  const double peak = 3e-4, min = 1e-6;
  double prev = cosine_lr(50, 50, 500, peak, min);
  for (std::uint64_t s = 51; s <= 500; ++s) {
    double lr = cosine_lr(s, 50, 500, peak, min);
    REQUIRE(lr <= prev + 1e-18);
    prev = lr;
  }
}

TEST_CASE("cosine schedule rejects step beyond total", "[schedule]") {
  REQUIRE_THROWS_AS(cosine_lr(1001, 200, 1000, 1e-4, 1e-5), Error);
  REQUIRE_THROWS_AS(cosine_lr(10, 20, 10, 1e-4, 1e-5), Error); // warmup >= total
}

TEST_CASE("zero warmup starts at peak", "[schedule]") {
  REQUIRE(cosine_lr(0, 0, 100, 5e-4, 1e-5) == Catch::Approx(5e-4));
}
