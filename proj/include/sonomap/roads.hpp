#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sonomap/csv.hpp"

namespace sonomap {

struct BBox {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;
  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  bool degenerate() const { return !(width() > 0.0) || !(height() > 0.0); }
};

/// Road piece with traffic attributes; coordinates are planar meters.
struct RoadSegment {
  std::vector<std::array<double, 2>> polyline;
  double aadt = 0.0;       // vehicles/day
  double speed = 0.0;      // km/h
  double truck_pct = 0.0;  // percent trucks, 0..100

  void validate() const {
    if (polyline.size() < 2) throw std::invalid_argument("road segment needs >= 2 vertices");
    if (aadt < 0.0) throw std::invalid_argument("negative AADT");
    if (!(speed > 0.0)) throw std::invalid_argument("speed must be positive");
    if (truck_pct < 0.0 || truck_pct > 100.0)
      throw std::invalid_argument("truck percentage outside [0,100]");
  }
};

struct RoadPixel {
  double x = 0.0, y = 0.0;  // cell center
  double aadt = 0.0, speed = 0.0, truck_pct = 0.0;
};

inline double point_segment_distance(double px, double py, const std::array<double, 2>& a,
                                     const std::array<double, 2>& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - a[0]) * dx + (py - a[1]) * dy) / len2, 0.0, 1.0);
  const double cx = a[0] + t * dx, cy = a[1] + t * dy;
  return std::hypot(px - cx, py - cy);
}

inline double point_polyline_distance(double px, double py, const RoadSegment& seg) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v + 1 < seg.polyline.size(); ++v)
    best = std::min(best, point_segment_distance(px, py, seg.polyline[v], seg.polyline[v + 1]));
  return best;
}

/// Road attributes rasterized onto a fixed grid, with a coarse spatial index
/// for radius queries.
class RoadPixelTable {
 public:
  static constexpr double kPixelSize = 10.0;

  RoadPixelTable() = default;
  RoadPixelTable(BBox bbox, std::vector<RoadPixel> pixels, double bucket = 600.0)
      : bbox_(bbox), pixels_(std::move(pixels)), bucket_(bucket) {
    for (std::size_t i = 0; i < pixels_.size(); ++i)
      index_[key(pixels_[i].x, pixels_[i].y)].push_back(i);
  }

  const BBox& bbox() const { return bbox_; }
  const std::vector<RoadPixel>& pixels() const { return pixels_; }
  bool empty() const { return pixels_.empty(); }

  /// Indices of pixels with center within `radius` of (x, y).
  std::vector<std::size_t> within(double x, double y, double radius) const {
    std::vector<std::size_t> out;
    if (pixels_.empty()) return out;
    const int span = static_cast<int>(std::ceil(radius / bucket_));
    const auto [cx, cy] = cell(x, y);
    for (int ix = cx - span; ix <= cx + span; ++ix)
      for (int iy = cy - span; iy <= cy + span; ++iy) {
        const auto it = index_.find(pack(ix, iy));
        if (it == index_.end()) continue;
        for (std::size_t i : it->second) {
          const double d = std::hypot(pixels_[i].x - x, pixels_[i].y - y);
          if (d <= radius) out.push_back(i);
        }
      }
    std::sort(out.begin(), out.end());  // deterministic accumulation order
    return out;
  }

 private:
  std::pair<int, int> cell(double x, double y) const {
    return {static_cast<int>(std::floor(x / bucket_)), static_cast<int>(std::floor(y / bucket_))};
  }
  static std::int64_t pack(int ix, int iy) {
    return (static_cast<std::int64_t>(ix) << 32) ^ (static_cast<std::int64_t>(iy) & 0xffffffffLL);
  }
  std::int64_t key(double x, double y) const {
    const auto [ix, iy] = cell(x, y);
    return pack(ix, iy);
  }

  BBox bbox_;
  std::vector<RoadPixel> pixels_;
  double bucket_ = 600.0;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> index_;
};

/// Break roads into 10 x 10 m pixels: a cell joins the table when its center
/// lies within half a pixel of a polyline. Where several segments claim the
/// same cell, the one with the larger AADT supplies the attributes.
inline RoadPixelTable rasterize(const std::vector<RoadSegment>& segments, const BBox& bbox) {
  if (segments.empty()) throw std::invalid_argument("no road segments");
  if (bbox.degenerate()) throw std::invalid_argument("degenerate bounding box");
  for (const auto& s : segments) s.validate();

  const double ps = RoadPixelTable::kPixelSize;
  const double reach = ps / 2.0;
  const int nx = static_cast<int>(std::ceil(bbox.width() / ps - 1e-9));
  const int ny = static_cast<int>(std::ceil(bbox.height() / ps - 1e-9));

  std::unordered_map<std::int64_t, std::pair<std::size_t, double>> claims;  // cell -> (seg, dist)
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    double sx0 = seg.polyline[0][0], sx1 = sx0, sy0 = seg.polyline[0][1], sy1 = sy0;
    for (const auto& v : seg.polyline) {
      sx0 = std::min(sx0, v[0]);
      sx1 = std::max(sx1, v[0]);
      sy0 = std::min(sy0, v[1]);
      sy1 = std::max(sy1, v[1]);
    }
    const int ix0 = std::max(0, static_cast<int>(std::floor((sx0 - reach - ps - bbox.xmin) / ps)));
    const int ix1 = std::min(nx - 1, static_cast<int>(std::ceil((sx1 + reach + ps - bbox.xmin) / ps)));
    const int iy0 = std::max(0, static_cast<int>(std::floor((sy0 - reach - ps - bbox.ymin) / ps)));
    const int iy1 = std::min(ny - 1, static_cast<int>(std::ceil((sy1 + reach + ps - bbox.ymin) / ps)));
    for (int ix = ix0; ix <= ix1; ++ix)
      for (int iy = iy0; iy <= iy1; ++iy) {
        const double cx = bbox.xmin + (ix + 0.5) * ps;
        const double cy = bbox.ymin + (iy + 0.5) * ps;
        if (point_polyline_distance(cx, cy, seg) > reach) continue;
        const std::int64_t k = (static_cast<std::int64_t>(ix) << 32) ^
                               (static_cast<std::int64_t>(iy) & 0xffffffffLL);
        auto it = claims.find(k);
        if (it == claims.end() || segments[it->second.first].aadt < seg.aadt)
          claims[k] = {s, 0.0};
      }
  }

  std::vector<std::pair<std::int64_t, std::size_t>> ordered;
  ordered.reserve(claims.size());
  for (const auto& [k, v] : claims) ordered.emplace_back(k, v.first);
  std::sort(ordered.begin(), ordered.end());

  std::vector<RoadPixel> pixels;
  pixels.reserve(ordered.size());
  for (const auto& [k, s] : ordered) {
    const int ix = static_cast<int>(k >> 32);
    const int iy = static_cast<int>(k & 0xffffffffLL);
    RoadPixel p;
    p.x = bbox.xmin + (ix + 0.5) * ps;
    p.y = bbox.ymin + (iy + 0.5) * ps;
    p.aadt = segments[s].aadt;
    p.speed = segments[s].speed;
    p.truck_pct = segments[s].truck_pct;
    pixels.push_back(p);
  }
  return RoadPixelTable(bbox, std::move(pixels));
}

/// Standardization constants for the four covariate factors.
struct RcScaling {
  // order: aadt, speed, truck, distance
  std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> sd{0.0, 0.0, 0.0, 0.0};
  double radius = 600.0;

  double z(int factor, double v) const {
    const auto f = static_cast<std::size_t>(factor);
    if (sd[f] <= 0.0) return 0.0;  // constant column contributes nothing
    return (v - mean[f]) / sd[f];
  }
};

struct CovariateValue {
  double x = 0.0, y = 0.0;
  double rc = 0.0;
};

/// Global z-scoring over all (site, pixel-within-radius) pairs.
inline RcScaling scale_attributes(const RoadPixelTable& table,
                                  const std::vector<std::array<double, 2>>& sites,
                                  double radius = 600.0) {
  if (table.empty()) throw std::invalid_argument("empty road pixel table");
  if (sites.empty()) throw std::invalid_argument("no site locations");
  std::array<std::vector<double>, 4> cols;
  for (const auto& s : sites) {
    for (std::size_t i : table.within(s[0], s[1], radius)) {
      const RoadPixel& p = table.pixels()[i];
      cols[0].push_back(p.aadt);
      cols[1].push_back(p.speed);
      cols[2].push_back(p.truck_pct);
      cols[3].push_back(std::hypot(p.x - s[0], p.y - s[1]));
    }
  }
  RcScaling sc;
  sc.radius = radius;
  if (cols[0].empty()) {
    warn("no road pixels within radius of any site; covariate will be zero");
    return sc;
  }
  static const char* names[4] = {"aadt", "speed", "truck", "distance"};
  for (int f = 0; f < 4; ++f) {
    const auto& v = cols[static_cast<std::size_t>(f)];
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    const double sd = std::sqrt(s2 / static_cast<double>(v.size()));
    sc.mean[static_cast<std::size_t>(f)] = m;
    sc.sd[static_cast<std::size_t>(f)] = sd;
    if (sd <= 0.0) warn(std::string("constant ") + names[f] + " column; factor contributes 0");
  }
  return sc;
}

/// Sum of standardized AADT + speed + truck - distance over pixels within
/// the radius. Zero when no pixel is in range.
inline CovariateValue road_covariate(double x, double y, const RoadPixelTable& table,
                                     const RcScaling& scaling) {
  CovariateValue out;
  out.x = x;
  out.y = y;
  double acc = 0.0;
  for (std::size_t i : table.within(x, y, scaling.radius)) {
    const RoadPixel& p = table.pixels()[i];
    const double dist = std::hypot(p.x - x, p.y - y);
    acc += scaling.z(0, p.aadt) + scaling.z(1, p.speed) + scaling.z(2, p.truck_pct) -
           scaling.z(3, dist);
  }
  out.rc = acc;
  return out;
}

/// Covariate evaluated at the center of each cell of a regular grid.
inline std::vector<CovariateValue> prediction_grid(const BBox& bbox, double resolution,
                                                   const RoadPixelTable& table,
                                                   const RcScaling& scaling) {
  if (!(resolution > 0.0)) throw std::invalid_argument("resolution must be positive");
  if (bbox.degenerate()) throw std::invalid_argument("degenerate bounding box");
  if (resolution > bbox.width() || resolution > bbox.height())
    throw std::invalid_argument("resolution larger than bounding box extent");
  const int nx = static_cast<int>(std::ceil(bbox.width() / resolution - 1e-9));
  const int ny = static_cast<int>(std::ceil(bbox.height() / resolution - 1e-9));
  std::vector<CovariateValue> out;
  out.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      out.push_back(road_covariate(bbox.xmin + (ix + 0.5) * resolution,
                                   bbox.ymin + (iy + 0.5) * resolution, table, scaling));
  return out;
}

inline std::vector<RoadSegment> read_segments_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int cx1 = t.column("x1"), cy1 = t.column("y1"), cx2 = t.column("x2"),
            cy2 = t.column("y2"), ca = t.column("aadt"), cs = t.column("speed"),
            cp = t.column("truck_pct");
  std::vector<RoadSegment> segs;
  segs.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    RoadSegment s;
    s.polyline = {{to_double(r[static_cast<std::size_t>(cx1)]), to_double(r[static_cast<std::size_t>(cy1)])},
                  {to_double(r[static_cast<std::size_t>(cx2)]), to_double(r[static_cast<std::size_t>(cy2)])}};
    s.aadt = to_double(r[static_cast<std::size_t>(ca)]);
    s.speed = to_double(r[static_cast<std::size_t>(cs)]);
    s.truck_pct = to_double(r[static_cast<std::size_t>(cp)]);
    s.validate();
    segs.push_back(std::move(s));
  }
  return segs;
}

inline void write_scaling(const std::string& path, const RcScaling& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write scaling file: " + path);
  static const char* names[4] = {"aadt", "speed", "truck", "distance"};
  out << "radius = " << format_double(s.radius) << "\n";
  for (int f = 0; f < 4; ++f) {
    out << names[f] << "_mean = " << format_double(s.mean[static_cast<std::size_t>(f)]) << "\n";
    out << names[f] << "_sd = " << format_double(s.sd[static_cast<std::size_t>(f)]) << "\n";
  }
}

inline RcScaling read_scaling(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scaling file: " + path);
  RcScaling s;
  static const char* names[4] = {"aadt", "speed", "truck", "distance"};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    const double v = to_double(line.substr(eq + 1).erase(0, line.substr(eq + 1).find_first_not_of(" \t")));
    if (key == "radius") s.radius = v;
    for (int f = 0; f < 4; ++f) {
      if (key == std::string(names[f]) + "_mean") s.mean[static_cast<std::size_t>(f)] = v;
      if (key == std::string(names[f]) + "_sd") s.sd[static_cast<std::size_t>(f)] = v;
    }
  }
  return s;
}

}  // namespace sonomap
