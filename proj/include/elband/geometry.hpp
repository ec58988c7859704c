#pragma once

// Parametric waveguide geometry and structured hexahedral meshing.
//
// The geometry family is a box cell (-L1,L1)x(-L2,L2)x(-1/2,1/2) with a thin
// square-section ligament of half-width t*h attached at the poles
// P+- = (0,0,+-1/2).  Three domains are meshed:
//   * the limit cell (the box itself),
//   * the periodicity cell: scaled body plus ligament stubs (junction_mode 1)
//     or the box with quasi-periodic face patches (junction_mode 0),
//   * the truncated junction domain: two large boxes joined by the unit-width
//     ligament, used for the boundary-layer unit problems.
// All meshes are unions of axis-aligned tensor-product blocks, so volumes and
// facet areas are exact and every element is an axis-aligned brick.

#include "elband/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace elband {

// ---------------------------------------------------------------------------
// Basic mesh types
// ---------------------------------------------------------------------------

enum class FacetTag : int {
  TractionFree = 0,
  QuasiTop = 1,
  QuasiBottom = 2,
  FarField = 3,
};

enum class CellRegion : std::uint8_t { Body = 0, Ligament = 1 };

struct BoundaryFacet {
  std::array<int, 4> nodes;
  FacetTag tag = FacetTag::TractionFree;
};

// Tensor-product lattice of node ids; kept for fast point location.
struct StructuredBlock {
  std::vector<double> gx, gy, gz;
  std::vector<int> node_ids;  // (nx+1)*(ny+1)*(nz+1), x fastest

  int nid(int i, int j, int k) const {
    const int nx = static_cast<int>(gx.size());
    const int ny = static_cast<int>(gy.size());
    return node_ids[static_cast<std::size_t>((k * ny + j) * nx + i)];
  }
};

struct CellParams {
  double L1 = 0.45;  // cross-section half-width along x
  double L2 = 0.5;   // cross-section half-width along y
  double t = 0.1;    // ligament cross-section half-width (unit scale)
  int a = 1;         // junction mode: 1 = finite stubs, 0 = face aperture

  void validate() const {
    require(L1 > 0 && L2 > 0, "CellParams: box half-widths must be positive");
    require(t > 0, "CellParams: ligament half-width must be positive");
    require(t < std::min(L1, L2),
            "CellParams: ligament cross-section must fit strictly inside the "
            "cell cross-section");
    require(a == 0 || a == 1, "CellParams: junction mode must be 0 or 1");
  }
};

// Homothety x -> a_h * x with a_h = (1 - a*h)^{-1}.
struct ScaleMap {
  double a_h = 1.0;
  Vec3 apply(const Vec3& x) const { return a_h * x; }
  Vec3 inverse(const Vec3& x) const { return x / a_h; }
};

inline ScaleMap scale_map(int a, double h) {
  require(a == 0 || a == 1, "scale_map: junction mode must be 0 or 1");
  require(a * h < 1.0, "scale_map: a*h must be below 1");
  return ScaleMap{1.0 / (1.0 - a * h)};
}

struct CellMesh {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 8>> hexes;  // VTK hexahedron corner order
  std::vector<CellRegion> hex_region;
  std::vector<BoundaryFacet> facets;
  std::vector<std::pair<int, int>> periodic_pairs;  // (QuasiTop, QuasiBottom)
  std::vector<StructuredBlock> blocks;

  double h = 0.0;          // geometric parameter (0 for the limit cell)
  double resolution = 0.0;
  double rho = 0.0;        // truncation radius (junction meshes only)
  int junction_mode = 1;
  int pole_top = -1;       // node index of P+ when present
  int pole_bottom = -1;    // node index of P- when present

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_hexes() const { return static_cast<int>(hexes.size()); }

  // All construction paths emit axis-aligned bricks; corner 0 and corner 6
  // are opposite, so the edge lengths are simple coordinate differences.
  Vec3 hex_extent(int e) const {
    const auto& c = hexes[static_cast<std::size_t>(e)];
    return nodes[static_cast<std::size_t>(c[6])] -
           nodes[static_cast<std::size_t>(c[0])];
  }

  double hex_volume(int e) const {
    const Vec3 d = hex_extent(e);
    return d.x() * d.y() * d.z();
  }

  double volume() const {
    double v = 0.0;
    for (int e = 0; e < num_hexes(); ++e) v += hex_volume(e);
    return v;
  }

  double facet_area(const BoundaryFacet& f) const {
    // Boundary quads of axis-aligned bricks are axis-aligned rectangles, so
    // the two edges at corner 0 are orthogonal.
    const Vec3 d1 = nodes[static_cast<std::size_t>(f.nodes[1])] -
                    nodes[static_cast<std::size_t>(f.nodes[0])];
    const Vec3 d2 = nodes[static_cast<std::size_t>(f.nodes[3])] -
                    nodes[static_cast<std::size_t>(f.nodes[0])];
    return d1.norm() * d2.norm();
  }

  double tagged_area(FacetTag tag) const {
    double area = 0.0;
    for (const auto& f : facets)
      if (f.tag == tag) area += facet_area(f);
    return area;
  }

  std::size_t count_facets(FacetTag tag) const {
    std::size_t n = 0;
    for (const auto& f : facets) n += (f.tag == tag) ? 1u : 0u;
    return n;
  }
};

// ---------------------------------------------------------------------------
// 1-D grid construction
// ---------------------------------------------------------------------------

namespace detail {

// Extends an ascending line set from its last entry to `target` with
// geometrically growing spacing (start `d0`, growth `ratio`, cap `cap`).
// The ladder positions depend only on the starting point, so grids built to
// different targets share all interior lines; the final cell absorbs the
// remainder (between 0.5 and 1.5 cap sizes).
inline void extend_graded(std::vector<double>& lines, double target, double d0,
                          double ratio, double cap) {
  check(!lines.empty(), "extend_graded: seed line required");
  check(target > lines.back(), "extend_graded: target must lie beyond seed");
  double d = std::min(d0, cap);
  while (true) {
    const double pos = lines.back();
    const double remaining = target - pos;
    const double step = std::min(d, cap);
    if (remaining <= 1.5 * step) {
      lines.push_back(target);
      break;
    }
    lines.push_back(pos + step);
    d *= ratio;
  }
}

// Symmetric line set on [-extent, extent] from half-axis lines (0 implied).
inline std::vector<double> mirror_half_lines(const std::vector<double>& half) {
  std::vector<double> full;
  full.reserve(2 * half.size() + 1);
  for (auto it = half.rbegin(); it != half.rend(); ++it) full.push_back(-*it);
  full.push_back(0.0);
  for (double v : half) full.push_back(v);
  return full;
}

// Inserts ligament footprint edges (ascending) and subdivides so every
// footprint keeps at least three cells across its half-width; returns
// ascending positive lines.
inline std::vector<double> footprint_lines(std::vector<double> edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](double a, double b) {
                            return std::abs(a - b) < 1e-13;
                          }),
              edges.end());
  std::vector<double> lines;
  for (double w : edges) {
    lines.push_back(w);
    std::sort(lines.begin(), lines.end());
    // Split every gap inside (0, w] wider than 0.45 w into equal parts.
    // Without this the smallest footprint of a family keeps the coarsest
    // cross-section (larger footprints inherit the interior lines of the
    // smaller ones, the smallest inherits nothing), and its junction
    // stiffness is the least resolved of the whole family.
    std::vector<double> add;
    double prev = 0.0;
    for (double v : lines) {
      if (v > w + 1e-13) break;
      const double gap = v - prev;
      if (gap > 0.45 * w) {
        const int parts = static_cast<int>(std::ceil(gap / (0.45 * w)));
        for (int p = 1; p < parts; ++p)
          add.push_back(prev + gap * p / parts);
      }
      prev = v;
    }
    lines.insert(lines.end(), add.begin(), add.end());
    std::sort(lines.begin(), lines.end());
  }
  return lines;
}

inline double min_gap(const std::vector<double>& lines) {
  double g = std::numeric_limits<double>::max();
  for (std::size_t i = 1; i < lines.size(); ++i)
    g = std::min(g, lines[i] - lines[i - 1]);
  return g;
}

// ---------------------------------------------------------------------------
// Block-union mesh builder
// ---------------------------------------------------------------------------

class MeshBuilder {
 public:
  using MergePolicy = std::function<bool(const Vec3&)>;

  explicit MeshBuilder(CellMesh& mesh) : mesh_(mesh) {}

  // Adds a tensor-product block; nodes whose coordinates match an existing
  // node are shared unless `allow_merge` (when given) forbids it.
  void add_block(const std::vector<double>& gx, const std::vector<double>& gy,
                 const std::vector<double>& gz, CellRegion region,
                 const MergePolicy& allow_merge = {}) {
    check(gx.size() >= 2 && gy.size() >= 2 && gz.size() >= 2,
          "MeshBuilder: block needs at least one cell per axis");
    StructuredBlock block;
    block.gx = gx;
    block.gy = gy;
    block.gz = gz;
    const int nx = static_cast<int>(gx.size());
    const int ny = static_cast<int>(gy.size());
    const int nz = static_cast<int>(gz.size());
    block.node_ids.resize(static_cast<std::size_t>(nx) * ny * nz);
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          const Vec3 p(gx[static_cast<std::size_t>(i)],
                       gy[static_cast<std::size_t>(j)],
                       gz[static_cast<std::size_t>(k)]);
          const bool mergeable = !allow_merge || allow_merge(p);
          block.node_ids[static_cast<std::size_t>((k * ny + j) * nx + i)] =
              add_node(p, mergeable);
        }
    for (int k = 0; k + 1 < nz; ++k)
      for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
          mesh_.hexes.push_back({block.nid(i, j, k), block.nid(i + 1, j, k),
                                 block.nid(i + 1, j + 1, k),
                                 block.nid(i, j + 1, k), block.nid(i, j, k + 1),
                                 block.nid(i + 1, j, k + 1),
                                 block.nid(i + 1, j + 1, k + 1),
                                 block.nid(i, j + 1, k + 1)});
          mesh_.hex_region.push_back(region);
        }
    mesh_.blocks.push_back(std::move(block));
  }

  // Extracts boundary facets (faces referenced by exactly one hex) and tags
  // them via `classify`.
  void finish_boundary(const std::function<FacetTag(const Vec3&)>& classify) {
    static constexpr int face_corners[6][4] = {
        {0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
        {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
    std::map<std::array<int, 4>, std::pair<int, std::array<int, 4>>> faces;
    for (const auto& hex : mesh_.hexes)
      for (const auto& fc : face_corners) {
        std::array<int, 4> quad = {hex[static_cast<std::size_t>(fc[0])],
                                   hex[static_cast<std::size_t>(fc[1])],
                                   hex[static_cast<std::size_t>(fc[2])],
                                   hex[static_cast<std::size_t>(fc[3])]};
        std::array<int, 4> key = quad;
        std::sort(key.begin(), key.end());
        auto [it, inserted] = faces.try_emplace(key, std::make_pair(0, quad));
        it->second.first += 1;
        (void)inserted;
      }
    for (const auto& [key, entry] : faces) {
      if (entry.first != 1) continue;
      BoundaryFacet facet;
      facet.nodes = entry.second;
      Vec3 centroid = Vec3::Zero();
      for (int n : facet.nodes)
        centroid += mesh_.nodes[static_cast<std::size_t>(n)];
      centroid /= 4.0;
      facet.tag = classify(centroid);
      mesh_.facets.push_back(facet);
    }
  }

  int find_node(const Vec3& p) const {
    const auto it = index_.find(quantize(p));
    return it == index_.end() ? -1 : it->second;
  }

 private:
  using Key = std::array<std::int64_t, 3>;

  static Key quantize(const Vec3& p) {
    // Coordinates arise from identical 1-D grid arrays, so agreement is
    // exact; the 1e-12 quantum only guards against last-ulp noise.
    return {static_cast<std::int64_t>(std::llround(p.x() * 1e12)),
            static_cast<std::int64_t>(std::llround(p.y() * 1e12)),
            static_cast<std::int64_t>(std::llround(p.z() * 1e12))};
  }

  int add_node(const Vec3& p, bool mergeable) {
    const Key key = quantize(p);
    if (mergeable) {
      const auto it = index_.find(key);
      if (it != index_.end()) return it->second;
    }
    const int id = static_cast<int>(mesh_.nodes.size());
    mesh_.nodes.push_back(p);
    if (mergeable) index_.emplace(key, id);
    return id;
  }

  CellMesh& mesh_;
  std::map<Key, int> index_;
};

inline void populate_periodic_pairs(CellMesh& mesh) {
  std::map<std::array<std::int64_t, 2>, int> bottom;
  auto key_xy = [](const Vec3& p) {
    return std::array<std::int64_t, 2>{
        static_cast<std::int64_t>(std::llround(p.x() * 1e12)),
        static_cast<std::int64_t>(std::llround(p.y() * 1e12))};
  };
  std::vector<char> seen(mesh.nodes.size(), 0);
  for (const auto& f : mesh.facets) {
    if (f.tag != FacetTag::QuasiBottom) continue;
    for (int n : f.nodes)
      bottom[key_xy(mesh.nodes[static_cast<std::size_t>(n)])] = n;
  }
  for (const auto& f : mesh.facets) {
    if (f.tag != FacetTag::QuasiTop) continue;
    for (int n : f.nodes) {
      if (seen[static_cast<std::size_t>(n)]) continue;
      seen[static_cast<std::size_t>(n)] = 1;
      const auto it = bottom.find(key_xy(mesh.nodes[static_cast<std::size_t>(n)]));
      check(it != bottom.end(),
            "periodicity cell: unmatched quasi-periodic node");
      const Vec3 delta = mesh.nodes[static_cast<std::size_t>(n)] -
                         mesh.nodes[static_cast<std::size_t>(it->second)];
      check((delta - Vec3(0, 0, 1)).norm() <= 1e-12,
            "periodicity cell: paired nodes must differ by (0,0,1)");
      mesh.periodic_pairs.emplace_back(n, it->second);
    }
  }
  check(!mesh.periodic_pairs.empty(),
        "periodicity cell: no quasi-periodic pairs found");
  std::sort(mesh.periodic_pairs.begin(), mesh.periodic_pairs.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mesh family: one grid template shared by the limit cell and its scaled
// periodicity cells, so that body meshes for different h are exact homothetic
// images of each other.
// ---------------------------------------------------------------------------

class MeshFamily {
 public:
  MeshFamily(CellParams params, std::vector<double> h_list, double resolution)
      : params_(params), h_list_(std::move(h_list)), resolution_(resolution) {
    params_.validate();
    require(resolution_ > 0, "mesh family: resolution must be positive");
    for (double h : h_list_) {
      require(h > 0 && h <= 0.1,
              "mesh family: geometric parameter h must lie in (0, 0.1]");
      require(params_.t * h < std::min(params_.L1, params_.L2),
              "mesh family: ligament footprint exceeds the cell cross-section");
    }
    build_template();
  }

  const CellParams& params() const { return params_; }
  double resolution() const { return resolution_; }
  const std::vector<double>& grid_x() const { return tx_; }
  const std::vector<double>& grid_y() const { return ty_; }
  const std::vector<double>& grid_z() const { return tz_; }

  // Mesh of the limit cell (the unscaled box), traction-free boundary.
  CellMesh limit_cell() const {
    CellMesh mesh;
    mesh.h = 0.0;
    mesh.resolution = resolution_;
    mesh.junction_mode = params_.a;
    detail::MeshBuilder builder(mesh);
    builder.add_block(tx_, ty_, tz_, CellRegion::Body);
    builder.finish_boundary(
        [](const Vec3&) { return FacetTag::TractionFree; });
    mesh.pole_top = builder.find_node(Vec3(0, 0, 0.5));
    mesh.pole_bottom = builder.find_node(Vec3(0, 0, -0.5));
    check(mesh.pole_top >= 0 && mesh.pole_bottom >= 0,
          "limit cell: poles (0,0,+-1/2) must be mesh nodes");
    return mesh;
  }

  // Mesh of the scaled body (1-a*h)*box alone, traction-free boundary.
  CellMesh body_cell(double h) const {
    require_family_h(h);
    const double s = 1.0 - params_.a * h;
    CellMesh mesh;
    mesh.h = h;
    mesh.resolution = resolution_;
    mesh.junction_mode = params_.a;
    detail::MeshBuilder builder(mesh);
    builder.add_block(scaled(tx_, s), scaled(ty_, s), scaled(tz_, s),
                      CellRegion::Body);
    builder.finish_boundary(
        [](const Vec3&) { return FacetTag::TractionFree; });
    // The poles scale with the body; traces taken there correspond to limit
    // traces at P+- through the scaling map.
    mesh.pole_top = builder.find_node(Vec3(0, 0, 0.5 * s));
    mesh.pole_bottom = builder.find_node(Vec3(0, 0, -0.5 * s));
    check(mesh.pole_top >= 0 && mesh.pole_bottom >= 0,
          "body cell: scaled poles must be mesh nodes");
    return mesh;
  }

  // Mesh of the periodicity cell with quasi-periodic tagging and pairing.
  CellMesh periodicity_cell(double h) const {
    require_family_h(h);
    CellMesh mesh;
    mesh.h = h;
    mesh.resolution = resolution_;
    mesh.junction_mode = params_.a;
    const double th = params_.t * h;
    detail::MeshBuilder builder(mesh);

    if (params_.a == 1) {
      const double s = 1.0 - h;
      const std::vector<double> bx = scaled(tx_, s);
      const std::vector<double> by = scaled(ty_, s);
      const std::vector<double> bz = scaled(tz_, s);
      builder.add_block(bx, by, bz, CellRegion::Body);

      // Ligament stubs span the gap between the scaled body and the cell
      // boundary; their lateral grid is the body grid restricted to the
      // footprint, so the interface is conforming by construction.
      const std::vector<double> sx = clip(bx, th);
      const std::vector<double> sy = clip(by, th);
      const double ming =
          std::min(detail::min_gap(sx), detail::min_gap(sy));
      // Layer count keeps ligament elements within the 4:1 aspect gate.
      const int layers = std::max(
          2, static_cast<int>(std::ceil((0.5 * h) / (4.0 * ming))));
      const double z0 = 0.5 * s;  // body top plane
      std::vector<double> sz_top(static_cast<std::size_t>(layers) + 1);
      std::vector<double> sz_bot(static_cast<std::size_t>(layers) + 1);
      for (int k = 0; k <= layers; ++k) {
        const double f = static_cast<double>(k) / layers;
        sz_top[static_cast<std::size_t>(k)] = z0 + f * (0.5 - z0);
        sz_bot[static_cast<std::size_t>(k)] = -0.5 + f * (0.5 - z0);
      }
      sz_top.back() = 0.5;
      sz_bot.back() = -z0;
      builder.add_block(sx, sy, sz_top, CellRegion::Ligament);
      builder.add_block(sx, sy, sz_bot, CellRegion::Ligament);

      builder.finish_boundary([&](const Vec3& c) {
        if (std::abs(c.z() - 0.5) < 1e-12) return FacetTag::QuasiTop;
        if (std::abs(c.z() + 0.5) < 1e-12) return FacetTag::QuasiBottom;
        return FacetTag::TractionFree;
      });
    } else {
      // Aperture mode: the body fills the whole cell; coupling is realized
      // by tagging the ligament footprint patches on the flat faces.
      builder.add_block(tx_, ty_, tz_, CellRegion::Body);
      builder.finish_boundary([&](const Vec3& c) {
        const bool in_patch =
            std::abs(c.x()) < th - 1e-12 && std::abs(c.y()) < th - 1e-12;
        if (in_patch && std::abs(c.z() - 0.5) < 1e-12)
          return FacetTag::QuasiTop;
        if (in_patch && std::abs(c.z() + 0.5) < 1e-12)
          return FacetTag::QuasiBottom;
        return FacetTag::TractionFree;
      });
    }

    detail::populate_periodic_pairs(mesh);
    mesh.pole_top = builder.find_node(Vec3(0, 0, 0.5));
    mesh.pole_bottom = builder.find_node(Vec3(0, 0, -0.5));
    enforce_ligament_quality(mesh);
    return mesh;
  }

 private:
  void require_family_h(double h) const {
    require(std::find_if(h_list_.begin(), h_list_.end(),
                         [h](double v) { return std::abs(v - h) < 1e-14; }) !=
                h_list_.end(),
            "mesh family: requested h is not part of this family");
  }

  static std::vector<double> scaled(const std::vector<double>& g, double s) {
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * s;
    return out;
  }

  static std::vector<double> clip(const std::vector<double>& g, double w) {
    std::vector<double> out;
    for (double v : g)
      if (std::abs(v) <= w + 1e-12) out.push_back(v);
    check(out.size() >= 3, "mesh family: ligament footprint lost grid lines");
    return out;
  }

  void enforce_ligament_quality(const CellMesh& mesh) const {
    for (int e = 0; e < mesh.num_hexes(); ++e) {
      if (mesh.hex_region[static_cast<std::size_t>(e)] != CellRegion::Ligament)
        continue;
      const Vec3 d = mesh.hex_extent(e);
      const double mx = d.maxCoeff(), mn = d.minCoeff();
      check(mn > 0 && mx / mn <= 4.0 + 1e-9,
            "periodicity cell: ligament element aspect ratio exceeds 4");
    }
  }

  void build_template() {
    // Ligament footprint edges in template (limit-cell) coordinates.  The
    // body mesh is the template scaled by (1-a*h), which maps an edge at
    // t*h/(1-a*h) to the physical footprint half-width t*h.
    std::vector<double> edges;
    for (double h : h_list_)
      edges.push_back(params_.t * h / (1.0 - params_.a * h));
    if (edges.empty()) edges.push_back(params_.t);  // resolve the footprint
    std::vector<double> fx = detail::footprint_lines(edges);

    const double w_max = fx.back();
    require(w_max < std::min(params_.L1, params_.L2),
            "mesh family: ligament footprint does not fit in the cell");
    const double d0 = std::max(0.5 * w_max, detail::min_gap(fx));

    std::vector<double> hx = fx;
    detail::extend_graded(hx, params_.L1, d0, 2.0, resolution_);
    std::vector<double> hy = fx;
    detail::extend_graded(hy, params_.L2, d0, 2.0, resolution_);
    tx_ = detail::mirror_half_lines(hx);
    ty_ = detail::mirror_half_lines(hy);

    // Vertical grid: graded toward both poles so near-pole body elements
    // match the ligament scale; single interior ladder from the top pole.
    double dz0 = w_max;
    for (double h : h_list_) dz0 = std::min(dz0, 0.5 * params_.t * h);
    if (h_list_.empty()) dz0 = 0.5 * params_.t;
    std::vector<double> hz{0.0};
    detail::extend_graded(hz, 0.5, dz0, 2.0, resolution_);
    // hz holds distances from the pole; convert to z-lines on [0, 1/2].
    std::vector<double> half_z;
    for (std::size_t i = 1; i < hz.size(); ++i)
      half_z.push_back(0.5 - hz[hz.size() - 1 - (i - 1)]);
    // half_z ascends from 0 (center, = 0.5 - 0.5) .. to near-pole lines.
    half_z.erase(half_z.begin());  // drop the implied 0
    half_z.push_back(0.5);
    std::sort(half_z.begin(), half_z.end());
    half_z.erase(std::unique(half_z.begin(), half_z.end()), half_z.end());
    tz_ = detail::mirror_half_lines(half_z);

    require(tx_.size() >= 5 && ty_.size() >= 5 && tz_.size() >= 5,
            "mesh family: resolution too coarse (fewer than 4 layers per "
            "axis)");
  }

  CellParams params_;
  std::vector<double> h_list_;
  double resolution_;
  std::vector<double> tx_, ty_, tz_;
};

// ---------------------------------------------------------------------------
// Free-standing build operations
// ---------------------------------------------------------------------------

inline CellMesh build_limit_cell(const CellParams& params, double resolution) {
  return MeshFamily(params, {}, resolution).limit_cell();
}

inline CellMesh build_periodicity_cell(const CellParams& params, double h,
                                       double resolution) {
  return MeshFamily(params, {h}, resolution).periodicity_cell(h);
}

// Truncated junction domain: two boxes of lateral half-width rho joined by
// the unit-scale ligament (junction mode 1) or touching through the aperture
// patch (junction mode 0).  `resolution` caps the far-field element size;
// grids near the junction are governed by the ligament width.
inline CellMesh build_truncated_omega(const CellParams& params, double rho,
                                      double resolution) {
  params.validate();
  require(rho >= 4.0, "junction domain: truncation radius must be >= 4");
  require(resolution > 0, "junction domain: resolution must be positive");
  const double t = params.t;
  const double half_gap = 0.5 * params.a;  // ligament occupies |z| < half_gap

  // Lateral lines: footprint of the unit ligament, graded out to rho.
  std::vector<double> lat_half = detail::footprint_lines({t});
  detail::extend_graded(lat_half, rho, 0.5 * t, 1.9, resolution);
  const std::vector<double> lat = detail::mirror_half_lines(lat_half);

  std::vector<double> lig_lat;
  for (double v : lat)
    if (std::abs(v) <= t + 1e-12) lig_lat.push_back(v);

  // Box vertical lines: graded from the junction plane outward.
  std::vector<double> bz{half_gap};
  detail::extend_graded(bz, half_gap + rho, 0.5 * t, 1.9, resolution);

  CellMesh mesh;
  mesh.h = 0.0;
  mesh.resolution = resolution;
  mesh.rho = rho;
  mesh.junction_mode = params.a;
  detail::MeshBuilder builder(mesh);

  if (params.a == 1) {
    // Ligament block on |z| <= 1/2 with an even layer count (mid-plane node).
    const double ming = detail::min_gap(lig_lat);
    int layers = std::max(2, static_cast<int>(std::ceil(1.0 / (2.0 * ming))));
    if (layers % 2 == 1) ++layers;
    std::vector<double> lz(static_cast<std::size_t>(layers) + 1);
    for (int k = 0; k <= layers; ++k)
      lz[static_cast<std::size_t>(k)] =
          -0.5 + static_cast<double>(k) / layers;
    lz[static_cast<std::size_t>(layers) / 2] = 0.0;
    builder.add_block(lig_lat, lig_lat, lz, CellRegion::Ligament);
    builder.add_block(lat, lat, bz, CellRegion::Body);
    std::vector<double> bz_neg(bz.rbegin(), bz.rend());
    for (double& v : bz_neg) v = -v;
    builder.add_block(lat, lat, bz_neg, CellRegion::Body);
  } else {
    // Aperture mode: the two boxes touch along z=0; only nodes inside the
    // closed aperture patch are shared, the rest of the interface is a slit.
    std::vector<double> bz0{0.0};
    detail::extend_graded(bz0, rho, 0.5 * t, 1.9, resolution);
    builder.add_block(lat, lat, bz0, CellRegion::Body);
    std::vector<double> bz0_neg(bz0.rbegin(), bz0.rend());
    for (double& v : bz0_neg) v = -v;
    const double tt = t;
    builder.add_block(lat, lat, bz0_neg, CellRegion::Body,
                      [tt](const Vec3& p) {
                        if (std::abs(p.z()) > 1e-12) return true;
                        return std::abs(p.x()) <= tt + 1e-12 &&
                               std::abs(p.y()) <= tt + 1e-12;
                      });
  }

  const double z_extent = half_gap + rho;
  builder.finish_boundary([&](const Vec3& c) {
    if (std::abs(std::abs(c.x()) - rho) < 1e-12 ||
        std::abs(std::abs(c.y()) - rho) < 1e-12 ||
        std::abs(std::abs(c.z()) - z_extent) < 1e-12)
      return FacetTag::FarField;
    return FacetTag::TractionFree;
  });
  return mesh;
}

// ---------------------------------------------------------------------------
// Point evaluation of nodal fields (trilinear interpolation on the blocks)
// ---------------------------------------------------------------------------

class FieldSampler {
 public:
  explicit FieldSampler(const CellMesh& mesh) : mesh_(mesh) {}

  // Locates `p` in one of the mesh blocks.  Returns false when the point is
  // outside the meshed domain.
  bool locate(const Vec3& p, int& block_out, std::array<int, 3>& cell,
              Vec3& local) const {
    for (std::size_t b = 0; b < mesh_.blocks.size(); ++b) {
      const auto& blk = mesh_.blocks[b];
      int i, j, k;
      double fx, fy, fz;
      if (!axis_locate(blk.gx, p.x(), i, fx)) continue;
      if (!axis_locate(blk.gy, p.y(), j, fy)) continue;
      if (!axis_locate(blk.gz, p.z(), k, fz)) continue;
      block_out = static_cast<int>(b);
      cell = {i, j, k};
      local = Vec3(fx, fy, fz);
      return true;
    }
    return false;
  }

  bool contains(const Vec3& p) const {
    int b;
    std::array<int, 3> c;
    Vec3 l;
    return locate(p, b, c, l);
  }

  // Interpolates a flat nodal field (3 dof per node) at `p`.
  template <typename Scalar>
  Eigen::Matrix<Scalar, 3, 1> eval(
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& field,
      const Vec3& p) const {
    int b;
    std::array<int, 3> cell;
    Vec3 f;
    check(locate(p, b, cell, f), "FieldSampler: point outside mesh");
    const auto& blk = mesh_.blocks[static_cast<std::size_t>(b)];
    Eigen::Matrix<Scalar, 3, 1> value = Eigen::Matrix<Scalar, 3, 1>::Zero();
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double w = (dx ? f.x() : 1 - f.x()) *
                           (dy ? f.y() : 1 - f.y()) *
                           (dz ? f.z() : 1 - f.z());
          const int n = blk.nid(cell[0] + dx, cell[1] + dy, cell[2] + dz);
          for (int c = 0; c < 3; ++c)
            value[c] += w * field[3 * n + c];
        }
    return value;
  }

 private:
  static bool axis_locate(const std::vector<double>& g, double v, int& idx,
                          double& frac) {
    const double span = g.back() - g.front();
    const double tol = 1e-11 * std::max(1.0, std::abs(span));
    if (v < g.front() - tol || v > g.back() + tol) return false;
    auto it = std::upper_bound(g.begin(), g.end(), v);
    int hi = static_cast<int>(it - g.begin());
    hi = std::clamp(hi, 1, static_cast<int>(g.size()) - 1);
    idx = hi - 1;
    const double lo = g[static_cast<std::size_t>(idx)];
    const double width = g[static_cast<std::size_t>(hi)] - lo;
    frac = std::clamp((v - lo) / width, 0.0, 1.0);
    return true;
  }

  const CellMesh& mesh_;
};

// ---------------------------------------------------------------------------
// Legacy VTK export
// ---------------------------------------------------------------------------

// Writes the mesh as an ASCII legacy VTK unstructured grid.  Hexahedra carry
// the region marker, boundary quads carry the facet tag; the inactive marker
// is -1 on the other cell kind.
inline void export_vtk(const CellMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "export_vtk: cannot open output file " + path);
  out << "# vtk DataFile Version 3.0\n";
  out << "structured waveguide cell mesh\n";
  out << "ASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.nodes.size() << " double\n";
  for (const auto& p : mesh.nodes)
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
        << format_double(p.z()) << '\n';
  const std::size_t ncells = mesh.hexes.size() + mesh.facets.size();
  const std::size_t payload =
      9 * mesh.hexes.size() + 5 * mesh.facets.size();
  out << "CELLS " << ncells << ' ' << payload << '\n';
  for (const auto& hexa : mesh.hexes) {
    out << 8;
    for (int n : hexa) out << ' ' << n;
    out << '\n';
  }
  for (const auto& f : mesh.facets) {
    out << 4;
    for (int n : f.nodes) out << ' ' << n;
    out << '\n';
  }
  out << "CELL_TYPES " << ncells << '\n';
  for (std::size_t i = 0; i < mesh.hexes.size(); ++i) out << "12\n";
  for (std::size_t i = 0; i < mesh.facets.size(); ++i) out << "9\n";
  out << "CELL_DATA " << ncells << '\n';
  out << "SCALARS region int 1\nLOOKUP_TABLE default\n";
  for (auto r : mesh.hex_region) out << static_cast<int>(r) << '\n';
  for (std::size_t i = 0; i < mesh.facets.size(); ++i) out << "-1\n";
  out << "SCALARS facet_tag int 1\nLOOKUP_TABLE default\n";
  for (std::size_t i = 0; i < mesh.hexes.size(); ++i) out << "-1\n";
  for (const auto& f : mesh.facets) out << static_cast<int>(f.tag) << '\n';
  check(out.good(), "export_vtk: write failure on " + path);
}

// Writes a nodal vector field alongside the mesh (point data).  Complex
// fields are emitted as separate real and imaginary vector arrays.
template <typename Scalar>
inline void export_vtk_field(const CellMesh& mesh,
                             const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& u,
                             const std::string& name,
                             const std::string& path) {
  check(u.size() == 3 * mesh.num_nodes(),
        "export_vtk_field: field size mismatch");
  export_vtk(mesh, path);
  std::ofstream out(path, std::ios::app);
  out << "POINT_DATA " << mesh.nodes.size() << '\n';
  constexpr bool is_complex = !std::is_same_v<Scalar, double>;
  out << "VECTORS " << name << (is_complex ? "_re" : "") << " double\n";
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    for (int c = 0; c < 3; ++c) {
      double v;
      if constexpr (is_complex)
        v = std::real(u[3 * n + c]);
      else
        v = u[3 * n + c];
      out << format_double(v) << (c < 2 ? ' ' : '\n');
    }
  }
  if constexpr (is_complex) {
    out << "VECTORS " << name << "_im double\n";
    for (int n = 0; n < mesh.num_nodes(); ++n)
      for (int c = 0; c < 3; ++c)
        out << format_double(std::imag(u[3 * n + c])) << (c < 2 ? ' ' : '\n');
  }
  check(out.good(), "export_vtk_field: write failure on " + path);
}

}  // namespace elband
