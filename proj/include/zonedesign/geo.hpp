#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zonedesign::geo {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Closed ring without the repeated final vertex.
using Ring = std::vector<Point>;

/// A beat footprint: one or more outer rings (MultiPolygon parts). Holes are ignored.
struct BeatGeometry {
  std::vector<Ring> parts;
  bool empty() const { return parts.empty(); }
};

double ring_area(const Ring& ring);
Point ring_centroid(const Ring& ring);
double geometry_area(const BeatGeometry& g);
Point geometry_centroid(const BeatGeometry& g);

/// True iff the two footprints share a boundary segment of positive length.
bool share_boundary(const BeatGeometry& a, const BeatGeometry& b, double tol = 1e-9);

class GeoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input record for one beat, in any order; CityGraph sorts by id.
struct BeatSpec {
  std::string id;
  double area_km2 = 0.0;
  Point centroid;
  BeatGeometry geometry;
};

/// The districting substrate: beats, adjacency, areas and squared centroid
/// distances. Beat indices follow the lexicographic order of ids.
class CityGraph {
 public:
  CityGraph(std::vector<BeatSpec> beats,
            const std::vector<std::pair<std::string, std::string>>& adjacency);

  /// Adjacency derived from shared polygon boundaries.
  static CityGraph from_geometry(std::vector<BeatSpec> beats);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& beat_ids() const { return ids_; }
  const std::string& beat_id(std::size_t i) const { return ids_.at(i); }
  std::optional<std::size_t> index_of(const std::string& id) const;
  std::size_t require_index(const std::string& id) const;

  const std::vector<std::size_t>& neighbors(std::size_t i) const { return nbrs_[i]; }
  bool adjacent(std::size_t i, std::size_t j) const;
  /// Unordered adjacency pairs (i < j), sorted.
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }

  double area(std::size_t i) const { return area_[i]; }
  const Point& centroid(std::size_t i) const { return centroid_[i]; }
  double dist_sq(std::size_t i, std::size_t j) const { return dist_sq_[i * size() + j]; }
  double dist(std::size_t i, std::size_t j) const;
  const BeatGeometry& geometry(std::size_t i) const { return geometry_[i]; }
  bool has_geometry() const;

 private:
  std::vector<std::string> ids_;
  std::vector<double> area_;
  std::vector<Point> centroid_;
  std::vector<BeatGeometry> geometry_;
  std::vector<double> dist_sq_;
  std::vector<std::vector<std::size_t>> nbrs_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
};

/// Beat-to-zone assignment over K zones; zones are 0-based internally.
/// Invariants: every zone index is in [0, K) and every zone is non-empty.
class Design {
 public:
  Design() = default;
  Design(std::vector<int> zone_of, int zone_count);

  std::size_t beat_count() const { return zone_of_.size(); }
  int zone_count() const { return zone_count_; }
  int zone_of(std::size_t beat) const { return zone_of_[beat]; }
  const std::vector<int>& assignment() const { return zone_of_; }
  std::vector<std::size_t> members(int zone) const;
  std::vector<std::vector<std::size_t>> zones() const;
  std::size_t zone_size(int zone) const;

  /// Returns a copy with one beat reassigned; throws if that empties a zone.
  Design with_move(std::size_t beat, int zone) const;

  bool operator==(const Design&) const = default;

 private:
  std::vector<int> zone_of_;
  int zone_count_ = 0;
};

class InvalidDesign : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an assignment references a beat the city does not know.
class UnknownBeat : public std::runtime_error {
 public:
  explicit UnknownBeat(std::string beat)
      : std::runtime_error("unknown beat id: " + beat), beat_(std::move(beat)) {}
  const std::string& beat() const { return beat_; }

 private:
  std::string beat_;
};

struct BeatZone {
  std::string beat;
  int zone = 0;  // 0-based
};

enum class ViolationKind { unassigned_beat, multiply_assigned_beat, zone_out_of_range, empty_zone };

std::string to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string beat;  // empty for empty_zone
  int zone = -1;     // -1 for unassigned_beat
  std::string message() const;
};

struct DesignValidation {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks the partition constraint for a raw beat/zone list. Unknown beat ids
/// throw UnknownBeat (a structural error, not a violation).
DesignValidation validate_design(const CityGraph& city, std::span<const BeatZone> assignment,
                                 int zone_count);
DesignValidation validate_design(const CityGraph& city, const Design& design);

/// Builds a Design from a raw list; throws InvalidDesign listing violations.
Design make_design(const CityGraph& city, std::span<const BeatZone> assignment, int zone_count);

struct BeatMove {
  std::size_t beat;
  int from;
  int to;
};

struct DesignDiff {
  std::size_t count = 0;
  std::vector<BeatMove> moves;
};

DesignDiff design_diff(const Design& a, const Design& b);
std::size_t shift_count(const Design& a, const Design& b);

std::vector<bool> is_contiguous(const CityGraph& city, const Design& design);
bool zone_contiguous(const CityGraph& city, std::span<const std::size_t> members);
/// Connectivity of a zone after removing one member, without copying the design.
bool contiguous_without(const CityGraph& city, const Design& design, int zone, std::size_t removed);

struct DesignConstraints {
  std::size_t max_shifts = 0;
  std::vector<std::pair<std::size_t, int>> pinned;  // (beat, zone)
  std::set<std::pair<int, int>> forbidden_transfers;  // (zone_from, zone_to)
  std::size_t n_max = 0;
  double zeta1 = 0.0;
  double zeta2 = 0.0;

  /// Throws std::invalid_argument when parameters break their invariants.
  void check(std::size_t beat_count, int zone_count) const;
};

struct ZoneShape {
  double max_dist_sq = 0.0;
  double area = 0.0;
};

ZoneShape zone_shape(const CityGraph& city, std::span<const std::size_t> members);
bool shape_ok(const ZoneShape& shape, double zeta1, double zeta2);

/// Zone k is compact iff max in-zone l_ij <= zeta1 and max l_ij <= zeta2 * zone area.
std::vector<bool> is_compact(const CityGraph& city, const Design& design,
                             const DesignConstraints& constraints);

}  // namespace zonedesign::geo
