#include "zonedesign/geo.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <sstream>

namespace zonedesign::geo {

namespace {

double signed_area(const Ring& ring) {
  double s = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

struct Segment {
  Point a, b;
};

std::vector<Segment> segments(const BeatGeometry& g) {
  std::vector<Segment> out;
  for (const auto& ring : g.parts) {
    for (std::size_t i = 0; i < ring.size(); ++i) {
      out.push_back({ring[i], ring[(i + 1) % ring.size()]});
    }
  }
  return out;
}

double overlap_length(const Segment& s, const Segment& t, double tol) {
  const double dx = s.b.x - s.a.x;
  const double dy = s.b.y - s.a.y;
  const double len = std::hypot(dx, dy);
  if (len <= tol) return 0.0;
  const double ux = dx / len;
  const double uy = dy / len;
  // Perpendicular distance of both endpoints of t from the line through s.
  auto off = [&](const Point& p) { return std::abs((p.x - s.a.x) * uy - (p.y - s.a.y) * ux); };
  if (off(t.a) > tol || off(t.b) > tol) return 0.0;
  auto proj = [&](const Point& p) { return (p.x - s.a.x) * ux + (p.y - s.a.y) * uy; };
  double t0 = proj(t.a);
  double t1 = proj(t.b);
  if (t0 > t1) std::swap(t0, t1);
  return std::min(len, t1) - std::max(0.0, t0);
}

}  // namespace

double ring_area(const Ring& ring) { return std::abs(signed_area(ring)); }

Point ring_centroid(const Ring& ring) {
  const double a = signed_area(ring);
  if (std::abs(a) < 1e-15) {
    Point c;
    for (const auto& p : ring) {
      c.x += p.x;
      c.y += p.y;
    }
    if (!ring.empty()) {
      c.x /= static_cast<double>(ring.size());
      c.y /= static_cast<double>(ring.size());
    }
    return c;
  }
  double cx = 0.0, cy = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % n];
    const double cross = p.x * q.y - q.x * p.y;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

double geometry_area(const BeatGeometry& g) {
  double s = 0.0;
  for (const auto& r : g.parts) s += ring_area(r);
  return s;
}

Point geometry_centroid(const BeatGeometry& g) {
  double total = 0.0;
  Point c;
  for (const auto& r : g.parts) {
    const double a = ring_area(r);
    const Point rc = ring_centroid(r);
    c.x += a * rc.x;
    c.y += a * rc.y;
    total += a;
  }
  if (total <= 0.0) return g.parts.empty() ? Point{} : ring_centroid(g.parts.front());
  return {c.x / total, c.y / total};
}

bool share_boundary(const BeatGeometry& a, const BeatGeometry& b, double tol) {
  const auto sa = segments(a);
  const auto sb = segments(b);
  for (const auto& s : sa) {
    for (const auto& t : sb) {
      if (overlap_length(s, t, tol) > tol) return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// CityGraph

CityGraph::CityGraph(std::vector<BeatSpec> beats,
                     const std::vector<std::pair<std::string, std::string>>& adjacency) {
  if (beats.empty()) throw GeoError("city has no beats");
  std::sort(beats.begin(), beats.end(),
            [](const BeatSpec& a, const BeatSpec& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < beats.size(); ++i) {
    if (beats[i].id == beats[i - 1].id) throw GeoError("duplicate beat id: " + beats[i].id);
  }
  const std::size_t n = beats.size();
  ids_.reserve(n);
  for (auto& b : beats) {
    if (!(b.area_km2 > 0.0) || !std::isfinite(b.area_km2)) {
      throw GeoError("beat " + b.id + " has non-positive area");
    }
    ids_.push_back(b.id);
    area_.push_back(b.area_km2);
    centroid_.push_back(b.centroid);
    geometry_.push_back(std::move(b.geometry));
  }
  dist_sq_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = centroid_[i].x - centroid_[j].x;
      const double dy = centroid_[i].y - centroid_[j].y;
      dist_sq_[i * n + j] = dist_sq_[j * n + i] = dx * dx + dy * dy;
    }
  }

  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [a, b] : adjacency) {
    const std::size_t i = require_index(a);
    const std::size_t j = require_index(b);
    if (i == j) throw GeoError("self-adjacency for beat " + a);
    pairs.insert({std::min(i, j), std::max(i, j)});
  }
  edges_.assign(pairs.begin(), pairs.end());
  nbrs_.assign(n, {});
  for (const auto& [i, j] : edges_) {
    nbrs_[i].push_back(j);
    nbrs_[j].push_back(i);
  }
  for (auto& v : nbrs_) std::sort(v.begin(), v.end());

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (!zone_contiguous(*this, all)) throw GeoError("beat adjacency graph is not connected");
}

CityGraph CityGraph::from_geometry(std::vector<BeatSpec> beats) {
  std::vector<std::pair<std::string, std::string>> adjacency;
  for (std::size_t i = 0; i < beats.size(); ++i) {
    for (std::size_t j = i + 1; j < beats.size(); ++j) {
      if (share_boundary(beats[i].geometry, beats[j].geometry)) {
        adjacency.emplace_back(beats[i].id, beats[j].id);
      }
    }
  }
  return CityGraph(std::move(beats), adjacency);
}

std::optional<std::size_t> CityGraph::index_of(const std::string& id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::size_t CityGraph::require_index(const std::string& id) const {
  auto idx = index_of(id);
  if (!idx) throw UnknownBeat(id);
  return *idx;
}

bool CityGraph::adjacent(std::size_t i, std::size_t j) const {
  const auto& v = nbrs_[i];
  return std::binary_search(v.begin(), v.end(), j);
}

double CityGraph::dist(std::size_t i, std::size_t j) const { return std::sqrt(dist_sq(i, j)); }

bool CityGraph::has_geometry() const {
  return std::all_of(geometry_.begin(), geometry_.end(),
                     [](const BeatGeometry& g) { return !g.empty(); });
}

// ---------------------------------------------------------------------------
// Design

Design::Design(std::vector<int> zone_of, int zone_count)
    : zone_of_(std::move(zone_of)), zone_count_(zone_count) {
  if (zone_count_ < 1) throw InvalidDesign("zone count must be positive");
  std::vector<std::size_t> sizes(static_cast<std::size_t>(zone_count_), 0);
  for (std::size_t i = 0; i < zone_of_.size(); ++i) {
    const int z = zone_of_[i];
    if (z < 0 || z >= zone_count_) {
      throw InvalidDesign("beat index " + std::to_string(i) + " assigned to zone out of range");
    }
    ++sizes[static_cast<std::size_t>(z)];
  }
  for (int k = 0; k < zone_count_; ++k) {
    if (sizes[static_cast<std::size_t>(k)] == 0) {
      throw InvalidDesign("zone " + std::to_string(k + 1) + " is empty");
    }
  }
}

std::vector<std::size_t> Design::members(int zone) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < zone_of_.size(); ++i) {
    if (zone_of_[i] == zone) out.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> Design::zones() const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(zone_count_));
  for (std::size_t i = 0; i < zone_of_.size(); ++i) {
    out[static_cast<std::size_t>(zone_of_[i])].push_back(i);
  }
  return out;
}

std::size_t Design::zone_size(int zone) const {
  return static_cast<std::size_t>(std::count(zone_of_.begin(), zone_of_.end(), zone));
}

Design Design::with_move(std::size_t beat, int zone) const {
  auto next = zone_of_;
  next.at(beat) = zone;
  return Design(std::move(next), zone_count_);
}

// ---------------------------------------------------------------------------
// Validation

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::unassigned_beat: return "unassigned beat";
    case ViolationKind::multiply_assigned_beat: return "multiply assigned beat";
    case ViolationKind::zone_out_of_range: return "zone out of range";
    case ViolationKind::empty_zone: return "empty zone";
  }
  return "unknown";
}

std::string Violation::message() const {
  std::ostringstream os;
  os << to_string(kind);
  if (!beat.empty()) os << " " << beat;
  if (zone >= 0) os << " (zone " << zone + 1 << ")";
  return os.str();
}

DesignValidation validate_design(const CityGraph& city, std::span<const BeatZone> assignment,
                                 int zone_count) {
  DesignValidation result;
  std::vector<std::vector<int>> seen(city.size());
  std::vector<std::size_t> zone_sizes(static_cast<std::size_t>(std::max(zone_count, 0)), 0);
  for (const auto& bz : assignment) {
    const std::size_t i = city.require_index(bz.beat);
    seen[i].push_back(bz.zone);
  }
  for (std::size_t i = 0; i < city.size(); ++i) {
    if (seen[i].empty()) {
      result.violations.push_back({ViolationKind::unassigned_beat, city.beat_id(i), -1});
      continue;
    }
    if (seen[i].size() > 1) {
      result.violations.push_back(
          {ViolationKind::multiply_assigned_beat, city.beat_id(i), seen[i].front()});
    }
    for (int z : seen[i]) {
      if (z < 0 || z >= zone_count) {
        result.violations.push_back({ViolationKind::zone_out_of_range, city.beat_id(i), z});
      } else {
        ++zone_sizes[static_cast<std::size_t>(z)];
      }
    }
  }
  for (int k = 0; k < zone_count; ++k) {
    if (zone_sizes[static_cast<std::size_t>(k)] == 0) {
      result.violations.push_back({ViolationKind::empty_zone, "", k});
    }
  }
  return result;
}

DesignValidation validate_design(const CityGraph& city, const Design& design) {
  if (design.beat_count() != city.size()) {
    throw InvalidDesign("design covers " + std::to_string(design.beat_count()) +
                        " beats but city has " + std::to_string(city.size()));
  }
  std::vector<BeatZone> raw;
  raw.reserve(city.size());
  for (std::size_t i = 0; i < city.size(); ++i) raw.push_back({city.beat_id(i), design.zone_of(i)});
  return validate_design(city, raw, design.zone_count());
}

Design make_design(const CityGraph& city, std::span<const BeatZone> assignment, int zone_count) {
  auto v = validate_design(city, assignment, zone_count);
  if (!v.ok()) {
    std::string msg = "invalid design:";
    for (const auto& x : v.violations) msg += " [" + x.message() + "]";
    throw InvalidDesign(msg);
  }
  std::vector<int> zone_of(city.size(), -1);
  for (const auto& bz : assignment) zone_of[city.require_index(bz.beat)] = bz.zone;
  return Design(std::move(zone_of), zone_count);
}

DesignDiff design_diff(const Design& a, const Design& b) {
  if (a.beat_count() != b.beat_count() || a.zone_count() != b.zone_count()) {
    throw InvalidDesign("design_diff: designs differ in beat set or zone count");
  }
  DesignDiff d;
  for (std::size_t i = 0; i < a.beat_count(); ++i) {
    if (a.zone_of(i) != b.zone_of(i)) d.moves.push_back({i, a.zone_of(i), b.zone_of(i)});
  }
  d.count = d.moves.size();
  return d;
}

std::size_t shift_count(const Design& a, const Design& b) {
  if (a.beat_count() != b.beat_count()) throw InvalidDesign("shift_count: beat sets differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.beat_count(); ++i) n += a.zone_of(i) != b.zone_of(i);
  return n;
}

// ---------------------------------------------------------------------------
// Contiguity & compactness

bool zone_contiguous(const CityGraph& city, std::span<const std::size_t> members) {
  if (members.size() <= 1) return true;
  std::vector<char> in(city.size(), 0);
  for (auto i : members) in[i] = 1;
  std::vector<char> seen(city.size(), 0);
  std::queue<std::size_t> q;
  q.push(members.front());
  seen[members.front()] = 1;
  std::size_t reached = 1;
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    for (auto v : city.neighbors(u)) {
      if (in[v] && !seen[v]) {
        seen[v] = 1;
        ++reached;
        q.push(v);
      }
    }
  }
  return reached == members.size();
}

bool contiguous_without(const CityGraph& city, const Design& design, int zone, std::size_t removed) {
  std::vector<std::size_t> m;
  for (std::size_t i = 0; i < design.beat_count(); ++i) {
    if (i != removed && design.zone_of(i) == zone) m.push_back(i);
  }
  return zone_contiguous(city, m);
}

std::vector<bool> is_contiguous(const CityGraph& city, const Design& design) {
  if (design.beat_count() != city.size()) throw InvalidDesign("design does not match city");
  std::vector<bool> out;
  for (const auto& m : design.zones()) out.push_back(zone_contiguous(city, m));
  return out;
}

void DesignConstraints::check(std::size_t beat_count, int zone_count) const {
  const std::size_t min_n = (beat_count + static_cast<std::size_t>(zone_count) - 1) /
                            static_cast<std::size_t>(zone_count);
  if (n_max < min_n) {
    throw std::invalid_argument("n_max must be at least ceil(I/K) = " + std::to_string(min_n));
  }
  if (!(zeta1 > 0.0) || !(zeta2 > 0.0)) throw std::invalid_argument("zeta1 and zeta2 must be > 0");
  for (const auto& [beat, zone] : pinned) {
    if (beat >= beat_count || zone < 0 || zone >= zone_count) {
      throw std::invalid_argument("pin out of range");
    }
  }
}

ZoneShape zone_shape(const CityGraph& city, std::span<const std::size_t> members) {
  ZoneShape s;
  for (std::size_t a = 0; a < members.size(); ++a) {
    s.area += city.area(members[a]);
    for (std::size_t b = a + 1; b < members.size(); ++b) {
      s.max_dist_sq = std::max(s.max_dist_sq, city.dist_sq(members[a], members[b]));
    }
  }
  return s;
}

bool shape_ok(const ZoneShape& shape, double zeta1, double zeta2) {
  return shape.max_dist_sq <= zeta1 && shape.max_dist_sq <= zeta2 * shape.area;
}

std::vector<bool> is_compact(const CityGraph& city, const Design& design,
                             const DesignConstraints& constraints) {
  std::vector<bool> out;
  for (const auto& m : design.zones()) {
    out.push_back(shape_ok(zone_shape(city, m), constraints.zeta1, constraints.zeta2));
  }
  return out;
}

}  // namespace zonedesign::geo
