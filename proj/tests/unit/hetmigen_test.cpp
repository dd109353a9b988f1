#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "osteovox/components.hpp"
#include "osteovox/errors.hpp"
#include "osteovox/hetmigen.hpp"

using namespace osteovox;
using namespace osteovox::hetmigen;

namespace {

GenerationParams one_phase(double vf, double threshold, double decay = 0.0, int radius = 0, bool cluster = true) {
  GenerationParams p;
  p.id = 1;
  p.n_phases = 1;
  p.target_vf = {vf};
  p.n_initial_seeds = 20;
  p.seed_increment = 5;
  p.seed_frequency = 10;
  p.proximity_radius = {radius};
  p.cluster_at_end = {cluster};
  p.growth_decay = {decay};
  p.growth_thresholds = {threshold};
  return p;
}

}  // namespace

TEST_SUITE("hetmigen csv") {
  TEST_CASE("schema round trip") {
    const auto rows = parse_params_csv("1,1,0.4,20,5,10,0,1,0.01,0.6\n");
    REQUIRE(rows.size() == 1);
    const auto& r = rows[0];
    CHECK(r.id == 1);
    CHECK(r.n_phases == 1);
    CHECK(r.target_vf == std::vector<double>{0.4});
    CHECK(r.n_initial_seeds == 20);
    CHECK(r.seed_increment == 5);
    CHECK(r.seed_frequency == 10);
    CHECK(r.proximity_radius == std::vector<int>{0});
    CHECK(r.cluster_at_end == std::vector<bool>{true});
    CHECK(r.growth_decay == std::vector<double>{0.01});
    CHECK(r.growth_thresholds == std::vector<double>{0.6});
  }

  TEST_CASE("empty input and comments") {
    CHECK(parse_params_csv("").empty());
    CHECK(parse_params_csv("# id,n_phases,...\n\n").empty());
  }

  TEST_CASE("negative increments and two phases") {
    const auto rows = parse_params_csv("7,2,0.2,0.3,5,-2,3,1,2,0,1,0.0,0.1,0.5,0.7\n");
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].seed_increment == -2);
    CHECK(rows[0].target_vf == std::vector<double>{0.2, 0.3});
    CHECK(rows[0].cluster_at_end == std::vector<bool>{false, true});
  }

  TEST_CASE("errors name line and column") {
    try {
      parse_params_csv("1,1,0.4,20,5,10,0,1,0.01,0.6\n2,1,1.5,20,5,10,0,1,0.01,0.6\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(e.column() == 3);
    }
    CHECK_THROWS_AS(parse_params_csv("1,1,0.4,abc,5,10,0,1,0.01,0.6"), ParseError);
    CHECK_THROWS_AS(parse_params_csv("1,1,0.4,20,5,0,0,1,0.01,0.6"), ParseError);
    CHECK_THROWS_AS(parse_params_csv("1,1,0.4,20,5,10,0,1,0.01,1.6"), ParseError);
    CHECK_THROWS_AS(parse_params_csv("1,2,0.6,0.5,20,5,10,0,0,1,1,0,0,0.5,0.5"), ParseError);
    CHECK_THROWS_AS(parse_params_csv("1,1,0.4,20,5,10,0,1,0.01"), ParseError);
  }
}

TEST_SUITE("hetmigen growth") {
  TEST_CASE("place_seeds") {
    const auto p = one_phase(0.4, 0.5);
    auto s = initial_state(p, Dims{16, 16, 16}, 3);
    place_seeds(s, p, 0);
    CHECK(s.grid.count(kMineral) == 0);
    place_seeds(s, p, 10);
    CHECK(s.grid.count(kMineral) == 10);
  }

  TEST_CASE("proximity rule keeps seeds apart or records a shortfall") {
    const auto p = one_phase(0.4, 0.5, 0.0, 3);
    auto s = initial_state(p, Dims{12, 12, 12}, 5);
    place_seeds(s, p, 40);
    const auto pts = oracle::points_of(s.grid, kMineral);
    CHECK(pts.size() + s.seed_shortfall[0] == 40);
    CHECK(s.seed_shortfall[0] > 0);  // at most 27 seeds fit at Chebyshev spacing 4 in 12^3
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) {
        const int cheb = std::max({std::abs(pts[i][0] - pts[j][0]), std::abs(pts[i][1] - pts[j][1]),
                                   std::abs(pts[i][2] - pts[j][2])});
        CHECK(cheb > 3);
      }
  }

  TEST_CASE("threshold zero leaves the grid unchanged") {
    const auto p = one_phase(0.4, 0.0);
    auto s = initial_state(p, Dims{10, 10, 10}, 1);
    place_seeds(s, p, 5);
    const VoxelGrid before = s.grid;
    grow_step(s, p);
    CHECK(s.grid == before);
    CHECK(s.iteration == 1);
  }

  TEST_CASE("threshold one grows the von Neumann ball") {
    const auto p = one_phase(0.9, 1.0);
    auto s = initial_state(p, Dims{21, 21, 21}, 1);
    s.grid.set(10, 10, 10, kMineral);
    for (int k = 1; k <= 6; ++k) {
      grow_step(s, p);
      std::size_t expected = 0;
      for (int z = 0; z < 21; ++z)
        for (int y = 0; y < 21; ++y)
          for (int x = 0; x < 21; ++x) {
            const bool inside = std::abs(x - 10) + std::abs(y - 10) + std::abs(z - 10) <= k;
            expected += inside;
            CHECK((s.grid.at(x, y, z) == kMineral) == inside);
          }
      CHECK(s.grid.count(kMineral) == expected);
    }
  }

  TEST_CASE("decay law") {
    const auto p = one_phase(0.4, 0.6, 0.05);
    auto s = initial_state(p, Dims{8, 8, 8}, 1);
    place_seeds(s, p, 3);
    for (int k = 1; k <= 10; ++k) {
      grow_step(s, p);
      CHECK(std::abs(s.current_thresholds[0] - 0.6 * std::exp(-0.05 * k)) <= 1e-12);
      CHECK(decayed_threshold(p, 1, k) == s.current_thresholds[0]);
    }
  }

  TEST_CASE("growth is monotone") {
    const auto p = one_phase(0.6, 0.3);
    auto s = initial_state(p, Dims{16, 16, 16}, 9);
    place_seeds(s, p, 8);
    std::size_t prev = s.grid.count(kMineral);
    for (int k = 0; k < 15; ++k) {
      grow_step(s, p);
      const std::size_t now = s.grid.count(kMineral);
      CHECK(now >= prev);
      prev = now;
    }
  }
}

TEST_SUITE("hetmigen clustering and generation") {
  TEST_CASE("apply_clustering") {
    VoxelGrid g(Dims{10, 1, 1}, {1, 1, 1, 1, 1, 0, 1, 1, 0, 0});
    const VoxelGrid c = apply_clustering(g, kMineral);
    CHECK(c.count(kMineral) == 5);
    CHECK(largest_component_fraction(c, kMineral) == 1.0);
    CHECK(volume_fraction(c, kMineral) <= volume_fraction(g, kMineral));

    VoxelGrid single(Dims{4, 1, 1}, {0, 1, 1, 0});
    CHECK(apply_clustering(single, kMineral) == single);
    CHECK_THROWS_AS(apply_clustering(VoxelGrid(Dims{3, 3, 3}), kMineral), DomainError);
  }

  TEST_CASE("documented example row hits its target and is clustered") {
    const auto p = parse_params_csv("1,1,0.4,20,5,10,0,1,0.01,0.6").front();
    const auto r = generate(p, 17, Dims{40, 40, 40});
    const double vf = volume_fraction(r.grid, kMineral);
    CHECK(vf >= 0.38);
    CHECK(vf <= 0.42);
    CHECK(largest_component_fraction(r.grid, kMineral) == 1.0);
    CHECK_FALSE(r.shortfall);
  }

  TEST_CASE("no seeds means an empty grid with a shortfall") {
    auto p = one_phase(0.3, 0.5);
    p.n_initial_seeds = 0;
    p.seed_increment = 0;
    const auto r = generate(p, 1, Dims{12, 12, 12});
    CHECK(r.grid.count(kMineral) == 0);
    CHECK(r.shortfall);
  }

  TEST_CASE("generation is deterministic") {
    const auto p = one_phase(0.3, 0.4, 0.01, 2);
    CHECK(generate(p, 99, Dims{20, 20, 20}).grid == generate(p, 99, Dims{20, 20, 20}).grid);
    CHECK_FALSE(generate(p, 99, Dims{20, 20, 20}).grid == generate(p, 100, Dims{20, 20, 20}).grid);
  }

  TEST_CASE("unclustered phases reach the target from below without overshoot") {
    const auto p = one_phase(0.25, 0.7, 0.0, 0, false);
    const auto r = generate(p, 4, Dims{24, 24, 24});
    CHECK(r.grid.count(kMineral) == static_cast<std::size_t>(std::llround(0.25 * 24 * 24 * 24)));
  }

  TEST_CASE("an exhausted iteration budget is reported") {
    const auto p = one_phase(0.5, 0.05);
    const auto r = generate(p, 4, Dims{16, 16, 16}, 2);
    CHECK(r.shortfall);
    CHECK(r.iterations == 2);
  }
}
