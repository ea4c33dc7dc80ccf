#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "sonomap/roads.hpp"
#include "sonomap/rng.hpp"

using namespace sonomap;

namespace {

RoadSegment seg(double x1, double y1, double x2, double y2, double aadt, double speed = 50.0,
                double truck = 10.0) {
  RoadSegment s;
  s.polyline = {{x1, y1}, {x2, y2}};
  s.aadt = aadt;
  s.speed = speed;
  s.truck_pct = truck;
  return s;
}

/// Brute force: test every cell of the full grid against every segment.
std::vector<RoadPixel> rasterize_oracle(const std::vector<RoadSegment>& segments,
                                        const BBox& bbox) {
  const double ps = RoadPixelTable::kPixelSize;
  const int nx = static_cast<int>(std::ceil(bbox.width() / ps - 1e-9));
  const int ny = static_cast<int>(std::ceil(bbox.height() / ps - 1e-9));
  std::vector<RoadPixel> out;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      const double cx = bbox.xmin + (ix + 0.5) * ps;
      const double cy = bbox.ymin + (iy + 0.5) * ps;
      const RoadSegment* best = nullptr;
      for (const auto& s : segments)
        if (point_polyline_distance(cx, cy, s) <= ps / 2.0)
          if (!best || best->aadt < s.aadt) best = &s;
      if (best) out.push_back({cx, cy, best->aadt, best->speed, best->truck_pct});
    }
  return out;
}

bool same_pixels(const std::vector<RoadPixel>& a, const std::vector<RoadPixel>& b) {
  if (a.size() != b.size()) return false;
  auto key = [](const RoadPixel& p) { return std::tuple(p.x, p.y, p.aadt, p.speed, p.truck_pct); };
  std::set<std::tuple<double, double, double, double, double>> sa, sb;
  for (const auto& p : a) sa.insert(key(p));
  for (const auto& p : b) sb.insert(key(p));
  return sa == sb;
}

}  // namespace

TEST_CASE("horizontal segment on an aligned grid covers one pixel row") {
  const BBox bbox{0.0, 0.0, 100.0, 100.0};
  const auto segs = std::vector<RoadSegment>{seg(0.0, 45.0, 100.0, 45.0, 5000.0)};
  const auto table = rasterize(segs, bbox);
  CHECK((table.pixels().size() == 10 || table.pixels().size() == 11));
  for (const auto& p : table.pixels()) {
    CHECK(p.y == 45.0);
    CHECK(p.aadt == 5000.0);
    CHECK(p.speed == 50.0);
  }
  CHECK(same_pixels(table.pixels(), rasterize_oracle(segs, bbox)));
}

TEST_CASE("rasterization matches the brute-force oracle on random scenes") {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    const BBox bbox{0.0, 0.0, 400.0, 300.0};
    std::vector<RoadSegment> segs;
    for (int k = 0; k < 6; ++k)
      segs.push_back(seg(rng.uniform(-50.0, 450.0), rng.uniform(-50.0, 350.0),
                         rng.uniform(-50.0, 450.0), rng.uniform(-50.0, 350.0),
                         rng.uniform(100.0, 20000.0), rng.uniform(30.0, 110.0),
                         rng.uniform(0.0, 40.0)));
    const auto table = rasterize(segs, bbox);
    CHECK(same_pixels(table.pixels(), rasterize_oracle(segs, bbox)));
  }
}

TEST_CASE("segment outside the bounding box is silently excluded") {
  const BBox bbox{0.0, 0.0, 100.0, 100.0};
  const auto table = rasterize({seg(500.0, 500.0, 600.0, 500.0, 1000.0)}, bbox);
  CHECK(table.pixels().empty());
  CHECK_THROWS_WITH(rasterize({}, bbox), Catch::Matchers::ContainsSubstring("no road segments"));
  CHECK_THROWS(rasterize({seg(0, 0, 1, 1, 10)}, BBox{0, 0, 0, 100}));
}

TEST_CASE("crossing segments resolve ties toward the larger AADT") {
  const BBox bbox{0.0, 0.0, 100.0, 100.0};
  const auto a = seg(0.0, 45.0, 100.0, 45.0, 1000.0, 40.0, 5.0);
  const auto b = seg(45.0, 0.0, 45.0, 100.0, 9000.0, 80.0, 25.0);
  const auto table = rasterize({a, b}, bbox);
  bool found = false;
  for (const auto& p : table.pixels())
    if (p.x == 45.0 && p.y == 45.0) {
      found = true;
      CHECK(p.aadt == 9000.0);
      CHECK(p.speed == 80.0);
    }
  CHECK(found);
  CHECK(same_pixels(table.pixels(), rasterize_oracle({a, b}, bbox)));
}

TEST_CASE("segment attribute validation") {
  CHECK_THROWS(rasterize({seg(0, 0, 10, 0, -5.0)}, BBox{0, 0, 100, 100}));
  CHECK_THROWS(rasterize({seg(0, 0, 10, 0, 5.0, 0.0)}, BBox{0, 0, 100, 100}));
  CHECK_THROWS(rasterize({seg(0, 0, 10, 0, 5.0, 50.0, 150.0)}, BBox{0, 0, 100, 100}));
}

TEST_CASE("hand-computed z-scores for a two-pixel table") {
  std::vector<RoadPixel> pixels{{100.0, 100.0, 100.0, 50.0, 10.0}, {120.0, 100.0, 300.0, 50.0, 10.0}};
  RoadPixelTable table(BBox{0, 0, 200, 200}, pixels);
  const auto sc = scale_attributes(table, {{110.0, 100.0}}, 600.0);
  CHECK(sc.mean[0] == Catch::Approx(200.0));
  CHECK(sc.sd[0] == Catch::Approx(100.0));  // population SD
  CHECK(sc.z(0, 100.0) == Catch::Approx(-1.0));
  CHECK(sc.z(0, 300.0) == Catch::Approx(1.0));
  // constant columns contribute zero
  CHECK(sc.sd[1] == 0.0);
  CHECK(sc.z(1, 50.0) == 0.0);
}

TEST_CASE("standardized columns have zero mean and unit variance") {
  Rng rng(77);
  std::vector<RoadSegment> segs;
  for (int k = 0; k < 5; ++k)
    segs.push_back(seg(rng.uniform(0.0, 900.0), rng.uniform(0.0, 900.0),
                       rng.uniform(100.0, 1000.0), rng.uniform(100.0, 1000.0),
                       rng.uniform(100.0, 30000.0), rng.uniform(30.0, 110.0),
                       rng.uniform(0.0, 40.0)));
  const BBox bbox{0, 0, 1000, 1000};
  const auto table = rasterize(segs, bbox);
  std::vector<std::array<double, 2>> sites{{200, 200}, {500, 600}, {800, 300}};
  const auto sc = scale_attributes(table, sites, 600.0);
  for (int f = 0; f < 4; ++f) {
    if (sc.sd[static_cast<std::size_t>(f)] == 0.0) continue;
    double zsum = 0.0, z2 = 0.0;
    int count = 0;
    for (const auto& s : sites)
      for (std::size_t i : table.within(s[0], s[1], 600.0)) {
        const auto& p = table.pixels()[i];
        const double raw = f == 0   ? p.aadt
                           : f == 1 ? p.speed
                           : f == 2 ? p.truck_pct
                                    : std::hypot(p.x - s[0], p.y - s[1]);
        const double z = sc.z(f, raw);
        zsum += z;
        z2 += z * z;
        ++count;
      }
    CHECK(std::abs(zsum / count) < 1e-9);
    CHECK(std::abs(std::sqrt(z2 / count) - 1.0) < 1e-9);
  }
}

TEST_CASE("covariate is zero beyond the radius and additive over pixel subsets") {
  const BBox bbox{0, 0, 2000, 2000};
  const auto table = rasterize({seg(0.0, 1000.0, 2000.0, 1000.0, 8000.0)}, bbox);
  std::vector<std::array<double, 2>> sites{{1000.0, 1100.0}};
  const auto sc = scale_attributes(table, sites, 600.0);

  CHECK(road_covariate(1000.0, 1700.0, table, sc).rc == 0.0);

  const auto all = road_covariate(1000.0, 1100.0, table, sc);
  // split pixels into two disjoint tables
  std::vector<RoadPixel> left, right;
  for (const auto& p : table.pixels()) (p.x < 1000.0 ? left : right).push_back(p);
  const RoadPixelTable tl(bbox, left), tr(bbox, right);
  const double sum = road_covariate(1000.0, 1100.0, tl, sc).rc +
                     road_covariate(1000.0, 1100.0, tr, sc).rc;
  CHECK(all.rc == Catch::Approx(sum).margin(1e-9));

  // removing a pixel farther than the radius changes nothing
  std::vector<RoadPixel> trimmed;
  for (const auto& p : table.pixels())
    if (std::hypot(p.x - 1000.0, p.y - 1100.0) <= 600.0) trimmed.push_back(p);
  const RoadPixelTable tt(bbox, trimmed);
  CHECK(road_covariate(1000.0, 1100.0, tt, sc).rc == Catch::Approx(all.rc).margin(1e-12));
}

TEST_CASE("transect away from a single road decays monotonically between dropouts") {
  const BBox bbox{0, 0, 3000, 2000};
  const auto table = rasterize({seg(0.0, 500.0, 3000.0, 500.0, 10000.0)}, bbox);
  std::vector<std::array<double, 2>> sites{{1500.0, 510.0}, {1500.0, 700.0}, {1500.0, 1050.0}};
  const auto sc = scale_attributes(table, sites, 600.0);

  double prev_rc = 0.0;
  std::vector<std::size_t> prev_set;
  bool first = true;
  for (double d = 10.0; d <= 600.0; d += 10.0) {
    const double qx = 1500.0, qy = 500.0 + d;
    const auto in = table.within(qx, qy, 600.0);
    const double rc = road_covariate(qx, qy, table, sc).rc;
    // brute-force oracle over all pixels
    double expect = 0.0;
    for (const auto& p : table.pixels()) {
      const double dist = std::hypot(p.x - qx, p.y - qy);
      if (dist <= 600.0)
        expect += sc.z(0, p.aadt) + sc.z(1, p.speed) + sc.z(2, p.truck_pct) - sc.z(3, dist);
    }
    CHECK(rc == Catch::Approx(expect).margin(1e-9));
    if (!first && in == prev_set) CHECK(rc < prev_rc);
    prev_rc = rc;
    prev_set = in;
    first = false;
  }
}

TEST_CASE("doubling AADT: invariant when re-standardized, increasing when constants are fixed") {
  Rng rng(13);
  const BBox bbox{0, 0, 1500, 1500};
  std::vector<RoadSegment> segs{seg(0, 400, 1500, 420, 2000.0, 60, 12),
                                seg(300, 0, 350, 1500, 12000.0, 90, 30)};
  const auto table = rasterize(segs, bbox);
  std::vector<std::array<double, 2>> sites{{400, 400}, {900, 500}};
  const auto sc = scale_attributes(table, sites, 600.0);
  const double rc0 = road_covariate(400, 400, table, sc).rc;

  std::vector<RoadSegment> doubled = segs;
  for (auto& s : doubled) s.aadt *= 2.0;
  const auto table2 = rasterize(doubled, bbox);
  const auto sc2 = scale_attributes(table2, sites, 600.0);
  CHECK(road_covariate(400, 400, table2, sc2).rc == Catch::Approx(rc0).margin(1e-9));
  CHECK(road_covariate(400, 400, table2, sc).rc > rc0);  // fixed constants
}

TEST_CASE("speed unit change leaves the covariate unchanged after scaling") {
  const BBox bbox{0, 0, 1500, 1500};
  std::vector<RoadSegment> kmh{seg(0, 700, 1500, 700, 4000.0, 50, 10),
                               seg(700, 0, 700, 1500, 9000.0, 100, 20)};
  std::vector<RoadSegment> ms = kmh;
  for (auto& s : ms) s.speed *= 1000.0 / 3600.0;
  std::vector<std::array<double, 2>> sites{{600, 650}, {1000, 800}};
  const auto ta = rasterize(kmh, bbox);
  const auto tb = rasterize(ms, bbox);
  const auto sa = scale_attributes(ta, sites, 600.0);
  const auto sb = scale_attributes(tb, sites, 600.0);
  CHECK(road_covariate(600, 650, ta, sa).rc ==
        Catch::Approx(road_covariate(600, 650, tb, sb).rc).margin(1e-9));
}

TEST_CASE("translation invariance of the whole pipeline") {
  const double dx = 12345.0, dy = -9876.0;
  const BBox bbox{0, 0, 1200, 1200};
  std::vector<RoadSegment> segs{seg(0, 300, 1200, 350, 3000, 70, 15),
                                seg(600, 0, 650, 1200, 15000, 100, 25)};
  std::vector<RoadSegment> moved = segs;
  for (auto& s : moved)
    for (auto& v : s.polyline) {
      v[0] += dx;
      v[1] += dy;
    }
  const BBox bbox2{bbox.xmin + dx, bbox.ymin + dy, bbox.xmax + dx, bbox.ymax + dy};
  std::vector<std::array<double, 2>> sites{{500, 400}, {800, 900}};
  std::vector<std::array<double, 2>> sites2;
  for (const auto& s : sites) sites2.push_back({s[0] + dx, s[1] + dy});

  const auto ta = rasterize(segs, bbox);
  const auto tb = rasterize(moved, bbox2);
  const auto sa = scale_attributes(ta, sites, 600.0);
  const auto sb = scale_attributes(tb, sites2, 600.0);
  for (const auto& q : sites)
    CHECK(road_covariate(q[0], q[1], ta, sa).rc ==
          Catch::Approx(road_covariate(q[0] + dx, q[1] + dy, tb, sb).rc).margin(1e-9));
}

TEST_CASE("prediction grid geometry and pointwise agreement") {
  const BBox bbox{0, 0, 1000, 1000};
  const auto table = rasterize({seg(0, 500, 1000, 500, 6000)}, bbox);
  std::vector<std::array<double, 2>> sites{{500, 520}};
  const auto sc = scale_attributes(table, sites, 600.0);
  const auto grid = prediction_grid(bbox, 250.0, table, sc);
  CHECK(grid.size() == 16);
  for (const auto& cell : grid)
    CHECK(cell.rc == road_covariate(cell.x, cell.y, table, sc).rc);

  // empty road table: all zeros
  const RoadPixelTable empty;
  const auto zeros = prediction_grid(bbox, 250.0, empty, RcScaling{});
  for (const auto& cell : zeros) CHECK(cell.rc == 0.0);

  CHECK_THROWS_WITH(prediction_grid(bbox, 1500.0, table, sc),
                    Catch::Matchers::ContainsSubstring("resolution larger"));
  CHECK_THROWS(prediction_grid(bbox, 0.0, table, sc));
}

TEST_CASE("segments csv and scaling round trip") {
  const std::string dir = "/tmp/sonomap_roads_test";
  std::filesystem::create_directories(dir);
  {
    CsvWriter w(dir + "/roads.csv");
    w.row({"segment_id", "x1", "y1", "x2", "y2", "aadt", "speed", "truck_pct"});
    w.row({"1", "0", "500", "1000", "500", "6000", "80", "12.5"});
    w.row({"2", "250", "0", "250", "1000", "900", "40", "3"});
  }
  const auto segs = read_segments_csv(dir + "/roads.csv");
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].aadt == 6000.0);
  CHECK(segs[1].polyline[1][1] == 1000.0);

  RcScaling sc;
  sc.mean = {1.0, 2.0, 3.0, 4.0};
  sc.sd = {0.5, 0.0, 1.5, 2.5};
  sc.radius = 450.0;
  write_scaling(dir + "/scaling.txt", sc);
  const auto back = read_scaling(dir + "/scaling.txt");
  CHECK(back.radius == 450.0);
  for (int f = 0; f < 4; ++f) {
    CHECK(back.mean[static_cast<std::size_t>(f)] == sc.mean[static_cast<std::size_t>(f)]);
    CHECK(back.sd[static_cast<std::size_t>(f)] == sc.sd[static_cast<std::size_t>(f)]);
  }
}
