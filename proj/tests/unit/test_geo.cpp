#include <doctest.h>

#include "zonedesign/geo.hpp"
#include "zonedesign/synthetic.hpp"

#include <random>

using namespace zonedesign;
using geo::BeatZone;
using geo::Design;

namespace {

geo::CityGraph path3() {
  std::vector<geo::BeatSpec> beats{{"1", 1.0, {0, 0}, {}}, {"2", 1.0, {1, 0}, {}}, {"3", 1.0, {2, 0}, {}}};
  return geo::CityGraph(beats, {{"1", "2"}, {"2", "3"}});
}

}  // namespace

TEST_CASE("beat ids are indexed in lexicographic order") {
  std::vector<geo::BeatSpec> beats{{"b", 1.0, {1, 0}, {}}, {"a", 2.0, {0, 0}, {}}, {"c", 1.0, {2, 0}, {}}};
  geo::CityGraph city(beats, {{"a", "b"}, {"b", "c"}});
  CHECK(city.beat_id(0) == "a");
  CHECK(city.area(0) == 2.0);
  CHECK(city.require_index("c") == 2);
  CHECK(city.dist_sq(0, 2) == doctest::Approx(4.0));
  CHECK(city.dist_sq(2, 0) == city.dist_sq(0, 2));
  CHECK_THROWS_AS(city.require_index("zz"), geo::UnknownBeat);
}

TEST_CASE("city construction rejects bad inputs") {
  std::vector<geo::BeatSpec> beats{{"1", 1.0, {0, 0}, {}}, {"2", 1.0, {1, 0}, {}}};
  CHECK_THROWS_AS(geo::CityGraph(beats, {}), geo::GeoError);  // disconnected
  CHECK_THROWS_AS(geo::CityGraph(beats, {{"1", "1"}, {"1", "2"}}), geo::GeoError);
  beats[0].area_km2 = 0.0;
  CHECK_THROWS_AS(geo::CityGraph(beats, {{"1", "2"}}), geo::GeoError);
  std::vector<geo::BeatSpec> dup{{"1", 1.0, {0, 0}, {}}, {"1", 1.0, {1, 0}, {}}};
  CHECK_THROWS_AS(geo::CityGraph(dup, {{"1", "1"}}), geo::GeoError);
}

TEST_CASE("adjacency from polygons requires a shared edge of positive length") {
  auto grid = synthetic::grid_city(3, 3);
  std::vector<geo::BeatSpec> specs;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    specs.push_back({grid.beat_id(i), grid.area(i), grid.centroid(i), grid.geometry(i)});
  }
  auto derived = geo::CityGraph::from_geometry(specs);
  CHECK(derived.edges() == grid.edges());
  CHECK(derived.edges().size() == 12);
  // Diagonal neighbours only touch at a corner.
  CHECK_FALSE(derived.adjacent(0, 4));
  CHECK(geo::geometry_area(grid.geometry(4)) == doctest::Approx(1.0));
  CHECK(geo::geometry_centroid(grid.geometry(4)).x == doctest::Approx(1.5));
}

TEST_CASE("validate_design reports partition violations") {
  auto city = synthetic::grid_city(3, 3);
  std::vector<BeatZone> ok;
  for (std::size_t i = 0; i < 9; ++i) ok.push_back({city.beat_id(i), static_cast<int>(i % 3)});
  CHECK(geo::validate_design(city, ok, 3).ok());

  auto missing = ok;
  missing.pop_back();
  auto v = geo::validate_design(city, missing, 3);
  REQUIRE(v.violations.size() == 1);
  CHECK(v.violations[0].kind == geo::ViolationKind::unassigned_beat);
  CHECK(v.violations[0].beat == city.beat_id(8));

  auto twice = ok;
  twice.push_back({city.beat_id(0), 1});
  CHECK(geo::validate_design(city, twice, 3).violations.at(0).kind == geo::ViolationKind::multiply_assigned_beat);

  std::vector<BeatZone> empty_zone;
  for (std::size_t i = 0; i < 9; ++i) empty_zone.push_back({city.beat_id(i), static_cast<int>(i % 2)});
  v = geo::validate_design(city, empty_zone, 3);
  REQUIRE(v.violations.size() == 1);
  CHECK(v.violations[0].kind == geo::ViolationKind::empty_zone);
  CHECK(v.violations[0].zone == 2);

  auto unknown = ok;
  unknown.push_back({"999", 0});
  CHECK_THROWS_AS(geo::validate_design(city, unknown, 3), geo::UnknownBeat);
  CHECK_THROWS_AS(geo::make_design(city, missing, 3), geo::InvalidDesign);
}

TEST_CASE("design_diff counts and lists moves") {
  auto a = synthetic::column_bands(3, 3, 3);
  CHECK(geo::design_diff(a, a).count == 0);
  auto b = a.with_move(1, 0).with_move(5, 1);
  auto d = geo::design_diff(a, b);
  CHECK(d.count == 2);
  REQUIRE(d.moves.size() == 2);
  CHECK(d.moves[0].beat == 1);
  CHECK(d.moves[0].from == 1);
  CHECK(d.moves[0].to == 0);
  CHECK(geo::design_diff(b, a).count == 2);
  CHECK_THROWS_AS(geo::design_diff(a, Design({0, 1}, 2)), geo::InvalidDesign);
}

TEST_CASE("design_diff is a metric on random designs") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> z(0, 2);
  auto draw = [&] {
    for (;;) {
      std::vector<int> v(9);
      for (auto& x : v) x = z(rng);
      try {
        return Design(v, 3);
      } catch (const geo::InvalidDesign&) {
      }
    }
  };
  for (int t = 0; t < 200; ++t) {
    auto a = draw(), b = draw(), c = draw();
    CHECK(geo::shift_count(a, b) == geo::shift_count(b, a));
    CHECK(geo::shift_count(a, b) <= geo::shift_count(a, c) + geo::shift_count(c, b));
  }
}

TEST_CASE("contiguity by graph traversal") {
  auto path = path3();
  auto v = geo::is_contiguous(path, Design({0, 1, 0}, 2));
  CHECK_FALSE(v[0]);
  CHECK(v[1]);

  auto grid = synthetic::grid_city(3, 3);
  std::vector<int> z(9);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) z[synthetic::grid_index(r, c, 3)] = c < 2 ? 0 : 1;
  }
  auto both = geo::is_contiguous(grid, Design(z, 2));
  CHECK(both[0]);
  CHECK(both[1]);
  CHECK(geo::contiguous_without(grid, Design(z, 2), 0, 3) == true);
  CHECK_FALSE(geo::zone_contiguous(grid, std::vector<std::size_t>{0, 6}));
}

TEST_CASE("compactness bounds are inclusive") {
  auto grid = synthetic::grid_city(3, 3);
  geo::DesignConstraints c;
  c.n_max = 9;
  c.zeta1 = 3.0;
  c.zeta2 = 2.0;
  // Zone 0 = top row; l between its end beats is 4.
  std::vector<int> z(9, 1);
  z[0] = z[1] = z[2] = 0;
  auto compact = geo::is_compact(grid, Design(z, 2), c);
  CHECK_FALSE(compact[0]);

  c.zeta1 = 4.0;
  c.zeta2 = 4.0 / 3.0;
  compact = geo::is_compact(grid, Design(z, 2), c);
  CHECK(compact[0]);  // both bounds hit with equality

  std::vector<int> single(9, 1);
  single[4] = 0;
  CHECK(geo::is_compact(grid, Design(single, 2), c)[0]);
}

TEST_CASE("constraint parameters are checked") {
  geo::DesignConstraints c;
  c.zeta1 = c.zeta2 = 1.0;
  c.n_max = 2;
  CHECK_THROWS(c.check(9, 3));
  c.n_max = 3;
  CHECK_NOTHROW(c.check(9, 3));
  c.zeta2 = 0.0;
  CHECK_THROWS(c.check(9, 3));
}
