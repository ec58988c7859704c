// Geometry and meshing tests: exact volumes, boundary tagging, periodic
// pairing, homothetic family consistency, junction-domain nesting, point
// sampling, and input validation.

#include <catch2/catch_amalgamated.hpp>

#include "elband/geometry.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

using namespace elband;

namespace {

CellParams default_params() {
  CellParams p;
  p.L1 = 0.45;
  p.L2 = 0.5;
  p.t = 0.1;
  p.a = 1;
  return p;
}

std::set<std::array<std::int64_t, 3>> quantized_nodes(const CellMesh& mesh) {
  std::set<std::array<std::int64_t, 3>> keys;
  for (const auto& p : mesh.nodes)
    keys.insert({static_cast<std::int64_t>(std::llround(p.x() * 1e12)),
                 static_cast<std::int64_t>(std::llround(p.y() * 1e12)),
                 static_cast<std::int64_t>(std::llround(p.z() * 1e12))});
  return keys;
}

}  // namespace

TEST_CASE("limit cell meshes the box exactly with pole nodes") {
  CellParams p;
  p.L1 = 0.5;
  p.L2 = 0.5;
  p.t = 0.1;
  const CellMesh mesh = build_limit_cell(p, 0.25);

  REQUIRE(mesh.pole_top >= 0);
  REQUIRE(mesh.pole_bottom >= 0);
  CHECK((mesh.nodes[static_cast<std::size_t>(mesh.pole_top)] -
         Vec3(0, 0, 0.5))
            .norm() < 1e-14);
  CHECK((mesh.nodes[static_cast<std::size_t>(mesh.pole_bottom)] -
         Vec3(0, 0, -0.5))
            .norm() < 1e-14);

  // Exact cell volume 2*L1 * 2*L2 * 1.
  CHECK(mesh.volume() == Catch::Approx(1.0).epsilon(1e-12));

  // Whole boundary is traction-free and covers the box surface area.
  for (const auto& f : mesh.facets) CHECK(f.tag == FacetTag::TractionFree);
  const double area = mesh.tagged_area(FacetTag::TractionFree);
  CHECK(area == Catch::Approx(2 * 1.0 + 4 * 1.0).epsilon(1e-12));

  // At least 4 element layers per axis.
  std::set<double> zs;
  for (const auto& n : mesh.nodes) zs.insert(n.z());
  CHECK(zs.size() >= 5);

  // No duplicate nodes.
  CHECK(quantized_nodes(mesh).size() == mesh.nodes.size());
}

TEST_CASE("periodicity cell volume and tagging, finite-stub mode") {
  const CellParams p = default_params();
  const double h = 0.1;
  const CellMesh mesh = build_periodicity_cell(p, h, 0.12);

  const double s = 1.0 - h;
  const double th = p.t * h;
  const double body_vol = s * s * s * (2 * p.L1) * (2 * p.L2);
  const double stub_vol = (2 * th) * (2 * th) * (0.5 * h);
  CHECK(mesh.volume() ==
        Catch::Approx(body_vol + 2 * stub_vol).epsilon(1e-12));

  // Quasi-periodic patches are exactly the stub end faces.
  CHECK(mesh.tagged_area(FacetTag::QuasiTop) ==
        Catch::Approx(4 * th * th).epsilon(1e-12));
  CHECK(mesh.tagged_area(FacetTag::QuasiBottom) ==
        Catch::Approx(4 * th * th).epsilon(1e-12));
  CHECK(mesh.count_facets(FacetTag::QuasiTop) >= 4);
  CHECK(mesh.count_facets(FacetTag::FarField) == 0);

  // Every facet carries exactly one tag by construction; spot-check the
  // partition by area: total = traction-free + quasi patches.
  const double total = mesh.tagged_area(FacetTag::TractionFree) +
                       mesh.tagged_area(FacetTag::QuasiTop) +
                       mesh.tagged_area(FacetTag::QuasiBottom);
  double sum = 0;
  for (const auto& f : mesh.facets) sum += mesh.facet_area(f);
  CHECK(total == Catch::Approx(sum).epsilon(1e-12));

  // Pairing is a bijection shifted by (0,0,1).
  REQUIRE(!mesh.periodic_pairs.empty());
  std::set<int> tops, bottoms;
  for (const auto& [top, bot] : mesh.periodic_pairs) {
    CHECK(tops.insert(top).second);
    CHECK(bottoms.insert(bot).second);
    const Vec3 delta = mesh.nodes[static_cast<std::size_t>(top)] -
                       mesh.nodes[static_cast<std::size_t>(bot)];
    CHECK((delta - Vec3(0, 0, 1)).norm() <= 1e-12);
  }
  CHECK(tops.size() == mesh.periodic_pairs.size());

  // Ligament elements respect the 4:1 aspect gate.
  int ligament_count = 0;
  for (int e = 0; e < mesh.num_hexes(); ++e) {
    if (mesh.hex_region[static_cast<std::size_t>(e)] != CellRegion::Ligament)
      continue;
    ++ligament_count;
    const Vec3 d = mesh.hex_extent(e);
    CHECK(d.maxCoeff() / d.minCoeff() <= 4.0 + 1e-9);
  }
  CHECK(ligament_count >= 2 * 2 * 2 * 2);  // two stubs, >=2x2x2 each

  // Conforming interface: no duplicated coordinates anywhere.
  CHECK(quantized_nodes(mesh).size() == mesh.nodes.size());

  // Poles are mesh nodes.
  REQUIRE(mesh.pole_top >= 0);
  CHECK((mesh.nodes[static_cast<std::size_t>(mesh.pole_top)] - Vec3(0, 0, 0.5))
            .norm() < 1e-14);
}

TEST_CASE("periodicity cell in aperture mode tags footprint patches") {
  CellParams p = default_params();
  p.a = 0;
  const double h = 0.05;
  const CellMesh mesh = build_periodicity_cell(p, h, 0.12);

  // Aperture mode: the cell is the full box.
  CHECK(mesh.volume() ==
        Catch::Approx((2 * p.L1) * (2 * p.L2)).epsilon(1e-12));
  for (auto r : mesh.hex_region) CHECK(r == CellRegion::Body);

  const double th = p.t * h;
  CHECK(mesh.tagged_area(FacetTag::QuasiTop) ==
        Catch::Approx(4 * th * th).epsilon(1e-10));
  CHECK(mesh.tagged_area(FacetTag::QuasiBottom) ==
        Catch::Approx(4 * th * th).epsilon(1e-10));

  REQUIRE(!mesh.periodic_pairs.empty());
  for (const auto& [top, bot] : mesh.periodic_pairs) {
    const Vec3 delta = mesh.nodes[static_cast<std::size_t>(top)] -
                       mesh.nodes[static_cast<std::size_t>(bot)];
    CHECK((delta - Vec3(0, 0, 1)).norm() <= 1e-12);
  }

  // Patch rim nodes (|x| = t*h) participate in the pairing.
  bool rim_found = false;
  for (const auto& [top, bot] : mesh.periodic_pairs) {
    const Vec3& q = mesh.nodes[static_cast<std::size_t>(top)];
    if (std::abs(std::abs(q.x()) - th) < 1e-12) rim_found = true;
  }
  CHECK(rim_found);
}

TEST_CASE("mesh family: scaled bodies are exact homothetic images") {
  const CellParams p = default_params();
  MeshFamily family(p, {0.05, 0.1}, 0.12);

  const CellMesh limit = family.limit_cell();
  for (double h : {0.05, 0.1}) {
    const CellMesh body = family.body_cell(h);
    REQUIRE(body.num_nodes() == limit.num_nodes());
    REQUIRE(body.num_hexes() == limit.num_hexes());
    const double ah = scale_map(p.a, h).a_h;
    for (int n = 0; n < body.num_nodes(); ++n) {
      const Vec3 back = ah * body.nodes[static_cast<std::size_t>(n)];
      CHECK((back - limit.nodes[static_cast<std::size_t>(n)]).norm() <=
            1e-12);
    }
    for (int e = 0; e < body.num_hexes(); ++e)
      CHECK(body.hexes[static_cast<std::size_t>(e)] ==
            limit.hexes[static_cast<std::size_t>(e)]);
  }

  // Periodicity cells of both h exist and keep the ligament footprint
  // conforming (grid lines for both footprints live in the template).
  for (double h : {0.05, 0.1}) {
    const CellMesh cell = family.periodicity_cell(h);
    CHECK(cell.volume() > 0);
    REQUIRE(!cell.periodic_pairs.empty());
  }

  // h outside the declared family is rejected.
  CHECK_THROWS_AS(family.body_cell(0.07), std::invalid_argument);
}

TEST_CASE("scale map basics") {
  const ScaleMap m = scale_map(1, 0.1);
  CHECK(m.a_h == Catch::Approx(1.0 / 0.9).epsilon(1e-15));
  const Vec3 x(0.3, -0.2, 0.5);
  CHECK((m.inverse(m.apply(x)) - x).norm() < 1e-15);
  CHECK(scale_map(0, 0.1).a_h == 1.0);
  CHECK_THROWS_AS(scale_map(2, 0.1), std::invalid_argument);
}

TEST_CASE("junction domain: volume, far-field tagging, nesting in rho") {
  const CellParams p = default_params();
  const CellMesh omega4 = build_truncated_omega(p, 4.0, 1.0);
  const CellMesh omega8 = build_truncated_omega(p, 8.0, 1.0);

  // Volume: two boxes (2*rho)^2 x rho plus the unit ligament (2t)^2 x 1.
  auto expected_volume = [&](double rho) {
    return 2 * (2 * rho) * (2 * rho) * rho + (2 * p.t) * (2 * p.t) * 1.0;
  };
  CHECK(omega4.volume() == Catch::Approx(expected_volume(4.0)).epsilon(1e-12));
  CHECK(omega8.volume() == Catch::Approx(expected_volume(8.0)).epsilon(1e-12));

  // Far-field faces cover the outer boundary: 4 sides + 2 ends per box.
  auto farfield_area = [&](double rho) {
    const double side = (2 * rho) * rho;  // per lateral face per box
    const double end = (2 * rho) * (2 * rho);
    return 2 * (4 * side + end);
  };
  CHECK(omega4.tagged_area(FacetTag::FarField) ==
        Catch::Approx(farfield_area(4.0)).epsilon(1e-12));
  CHECK(omega8.tagged_area(FacetTag::FarField) ==
        Catch::Approx(farfield_area(8.0)).epsilon(1e-12));

  // Inner grids nest: every lateral grid line of the rho=4 mesh well inside
  // the domain reappears in the rho=8 mesh, so Richardson extrapolation in
  // rho sees a fixed interior discretization.
  std::set<std::int64_t> lat8;
  for (const auto& n : omega8.nodes)
    lat8.insert(static_cast<std::int64_t>(std::llround(n.x() * 1e12)));
  std::set<std::int64_t> lat4;
  for (const auto& n : omega4.nodes)
    if (std::abs(n.x()) < 3.0)
      lat4.insert(static_cast<std::int64_t>(std::llround(n.x() * 1e12)));
  for (auto key : lat4) CHECK(lat8.count(key) == 1);

  // Ligament present with mid-plane nodes (even layer split).
  int lig = 0;
  bool midplane = false;
  for (int e = 0; e < omega4.num_hexes(); ++e)
    if (omega4.hex_region[static_cast<std::size_t>(e)] ==
        CellRegion::Ligament)
      ++lig;
  for (const auto& n : omega4.nodes)
    if (std::abs(n.z()) < 1e-14 && std::abs(n.x()) <= p.t + 1e-12) {
      midplane = true;
      break;
    }
  CHECK(lig >= 4 * 4 * 2);
  CHECK(midplane);
}

TEST_CASE("junction domain in aperture mode opens a slit outside the patch") {
  CellParams p = default_params();
  p.a = 0;
  const CellMesh omega = build_truncated_omega(p, 4.0, 1.0);

  // Two boxes touching at z=0: total volume 2 * (2 rho)^2 * rho.
  CHECK(omega.volume() == Catch::Approx(2 * 8.0 * 8.0 * 4.0).epsilon(1e-12));

  // Nodes at z=0 outside the closed patch are duplicated (slit faces),
  // inside the patch they are shared.
  std::map<std::array<std::int64_t, 2>, int> counts;
  for (const auto& n : omega.nodes) {
    if (std::abs(n.z()) > 1e-12) continue;
    counts[{static_cast<std::int64_t>(std::llround(n.x() * 1e12)),
            static_cast<std::int64_t>(std::llround(n.y() * 1e12))}]++;
  }
  for (const auto& [key, count] : counts) {
    const double x = static_cast<double>(key[0]) * 1e-12;
    const double y = static_cast<double>(key[1]) * 1e-12;
    const bool inside =
        std::abs(x) <= p.t + 1e-9 && std::abs(y) <= p.t + 1e-9;
    CHECK(count == (inside ? 1 : 2));
  }

  // The slit faces are traction-free, not far-field.
  for (const auto& f : omega.facets) {
    Vec3 c = Vec3::Zero();
    for (int n : f.nodes) c += omega.nodes[static_cast<std::size_t>(n)];
    c /= 4.0;
    if (std::abs(c.z()) < 1e-12) CHECK(f.tag == FacetTag::TractionFree);
  }
}

TEST_CASE("input validation") {
  const CellParams p = default_params();
  CHECK_THROWS_AS(build_periodicity_cell(p, 0.15, 0.12),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_periodicity_cell(p, 0.0, 0.12),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_periodicity_cell(p, -0.05, 0.12),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_truncated_omega(p, 3.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(build_limit_cell(p, -1.0), std::invalid_argument);

  CellParams bad = p;
  bad.t = 0.6;  // exceeds min(L1, L2)
  CHECK_THROWS_AS(build_limit_cell(bad, 0.12), std::invalid_argument);
  bad = p;
  bad.a = 2;
  CHECK_THROWS_AS(build_limit_cell(bad, 0.12), std::invalid_argument);
}

TEST_CASE("construction is deterministic") {
  const CellParams p = default_params();
  const CellMesh m1 = build_periodicity_cell(p, 0.1, 0.12);
  const CellMesh m2 = build_periodicity_cell(p, 0.1, 0.12);
  REQUIRE(m1.num_nodes() == m2.num_nodes());
  for (int n = 0; n < m1.num_nodes(); ++n)
    CHECK(m1.nodes[static_cast<std::size_t>(n)] ==
          m2.nodes[static_cast<std::size_t>(n)]);
  REQUIRE(m1.hexes == m2.hexes);
  REQUIRE(m1.periodic_pairs == m2.periodic_pairs);
}

TEST_CASE("field sampler reproduces affine fields across blocks") {
  const CellParams p = default_params();
  const CellMesh mesh = build_periodicity_cell(p, 0.1, 0.15);
  FieldSampler sampler(mesh);

  Mat3 B;
  B << 0.3, -1.2, 0.7, 0.0, 2.0, -0.4, 1.1, 0.5, -0.9;
  const Vec3 c(0.1, -0.2, 0.3);
  VecX field(3 * mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n)
    field.segment<3>(3 * n) = B * mesh.nodes[static_cast<std::size_t>(n)] + c;

  // Points in the body, in a stub, and on the interface.
  const double s = 1.0 - mesh.h;
  const std::vector<Vec3> pts = {
      Vec3(0.11, -0.2, 0.17), Vec3(0.003, 0.002, 0.5 * s + 0.01),
      Vec3(0.0, 0.0, 0.5 * s), Vec3(-0.31, 0.41, -0.44),
      Vec3(0.0, 0.0, 0.5)};
  for (const auto& q : pts) {
    const Vec3 exact = B * q + c;
    const Vec3 got = sampler.eval(field, q);
    CHECK((got - exact).norm() < 1e-12 * (1 + exact.norm()));
  }

  // Outside points are reported as such.
  CHECK(!sampler.contains(Vec3(2.0, 0.0, 0.0)));
  CHECK(!sampler.contains(Vec3(0.4, 0.4, 0.49)));  // in the stub gap ring
}

TEST_CASE("legacy VTK export writes hexes, facets and tags") {
  const CellParams p = default_params();
  const CellMesh mesh = build_periodicity_cell(p, 0.1, 0.2);
  const std::string path = "geometry_test_mesh.vtk";
  export_vtk(mesh, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::size_t points = 0, cells = 0, hex_types = 0, quad_types = 0;
  bool saw_region = false, saw_tag = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "POINTS") ss >> points;
    if (word == "CELLS") ss >> cells;
    if (word == "CELL_TYPES") {
      std::size_t n = 0;
      ss >> n;
      for (std::size_t i = 0; i < n; ++i) {
        int type = 0;
        in >> type;
        if (type == 12) ++hex_types;
        if (type == 9) ++quad_types;
      }
    }
    if (word == "SCALARS") {
      std::string name;
      ss >> name;
      if (name == "region") saw_region = true;
      if (name == "facet_tag") saw_tag = true;
    }
  }
  CHECK(points == mesh.nodes.size());
  CHECK(cells == mesh.hexes.size() + mesh.facets.size());
  CHECK(hex_types == mesh.hexes.size());
  CHECK(quad_types == mesh.facets.size());
  CHECK(saw_region);
  CHECK(saw_tag);
  std::remove(path.c_str());
}
