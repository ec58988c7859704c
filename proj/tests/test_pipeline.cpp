#include <catch2/catch_amalgamated.hpp>

#include <elband/pipeline.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace elband;
using Catch::Approx;

namespace {

// Small, fast configuration for integration runs: coarse meshes, a short
// quasimomentum grid, and a single truncation radius.
SweepConfig tiny_config() {
  SweepConfig cfg;
  cfg.h_values = {0.1, 0.05};
  cfg.eta_count = 5;
  cfg.n_bands = 8;
  cfg.resolution = 0.45;
  cfg.rho_values = {4};
  cfg.omega_resolution = 1.0;
  cfg.limit_modes = 10;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("quasimomentum grid hits the symmetry points", "[pipeline]") {
  const VecX etas = make_eta_grid(17);
  REQUIRE(etas.size() == 17);
  CHECK(etas[0] == 0.0);
  CHECK(etas[8] == M_PI);
  CHECK(etas[16] == 2.0 * M_PI);
  for (int i = 1; i < 16; ++i) CHECK(etas[i] > etas[i - 1]);
  // Mirror pairs sum to 2*pi, so time-reversal partners are on the grid.
  for (int i = 0; i < 17; ++i)
    CHECK(etas[i] + etas[16 - i] == Approx(2.0 * M_PI).margin(1e-15));

  CHECK_THROWS_AS(make_eta_grid(4), std::invalid_argument);
  CHECK_THROWS_AS(make_eta_grid(3), std::invalid_argument);
}

TEST_CASE("sweep configuration round-trips through json", "[pipeline]") {
  SweepConfig cfg = tiny_config();
  cfg.params.L1 = 0.4;
  cfg.lame_lambda = 2.5;
  cfg.convention = ConventionMode::Both;
  cfg.export_vtk = true;
  cfg.out_dir = "somewhere";

  nlohmann::json j = cfg;
  const SweepConfig back = j.get<SweepConfig>();
  CHECK(back.params.L1 == cfg.params.L1);
  CHECK(back.params.L2 == cfg.params.L2);
  CHECK(back.params.t == cfg.params.t);
  CHECK(back.params.a == cfg.params.a);
  CHECK(back.lame_lambda == cfg.lame_lambda);
  CHECK(back.lame_mu == cfg.lame_mu);
  CHECK(back.h_values == cfg.h_values);
  CHECK(back.eta_count == cfg.eta_count);
  CHECK(back.n_bands == cfg.n_bands);
  CHECK(back.resolution == cfg.resolution);
  CHECK(back.rho_values == cfg.rho_values);
  CHECK(back.omega_resolution == cfg.omega_resolution);
  CHECK(back.limit_modes == cfg.limit_modes);
  CHECK(back.convention == ConventionMode::Both);
  CHECK(back.export_vtk == cfg.export_vtk);
  CHECK(back.out_dir == cfg.out_dir);

  // An empty document yields the defaults.
  const SweepConfig defaults = nlohmann::json::object().get<SweepConfig>();
  CHECK(defaults.params.L1 == 0.45);
  CHECK(defaults.eta_count == 17);
  CHECK(defaults.convention == ConventionMode::Factor2);

  CHECK_THROWS_AS(parse_convention("fast"), std::invalid_argument);

  SweepConfig bad = tiny_config();
  bad.h_values = {0.2};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.eta_count = 6;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.limit_modes = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.rho_values = {8, 4};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("scaling compensation and time-reversal defect", "[pipeline]") {
  DispersionResult disp;
  disp.h = 0.1;
  disp.etas = make_eta_grid(5);
  disp.bands.resize(5, 2);
  disp.bands.col(0) << 1.0, 2.0, 3.0, 2.0, 1.0;
  disp.bands.col(1) << 5.0, 6.0, 7.0, 6.0, 5.0;

  const DispersionResult comp = compensate_scaling(disp, 1);
  CHECK(comp.bands(2, 0) == Approx(3.0 * 0.81));
  const DispersionResult untouched = compensate_scaling(disp, 0);
  CHECK(untouched.bands(2, 1) == 7.0);

  CHECK(time_reversal_defect(disp) == 0.0);
  disp.bands(4, 0) = 1.0 + 1e-6;
  // mismatch is measured against the spectral scale of the table (7.0)
  CHECK(time_reversal_defect(disp) == Approx(1e-6 / 7.0).epsilon(1e-3));

  DispersionResult lop = disp;
  lop.etas[4] = 5.9;  // grid no longer mirror symmetric
  CHECK_THROWS_AS(time_reversal_defect(lop), std::runtime_error);
}

TEST_CASE("rigid band check on a synthetic dispersion table", "[pipeline]") {
  SweepConfig cfg = tiny_config();
  Pipeline pipe(cfg);
  const RigidBasis& basis = pipe.basis();
  Mat3 m_plus = Mat3::Zero();
  m_plus.diagonal() << 0.0063, 0.0063, 0.158;

  const double h = 0.05;
  const double s3 = std::pow(1.0 - h, 3);
  DispersionResult disp;
  disp.h = h;
  disp.etas = make_eta_grid(9);
  disp.bands.setZero(9, 6);
  for (int i = 0; i < 9; ++i) {
    const VecX corr = rigid_corrections(basis, m_plus, disp.etas[i],
                                        CorrectionConvention::Factor2);
    for (int q = 3; q < 6; ++q) disp.bands(i, q) = h * corr[q] / s3;
  }

  // A table manufactured from the predictions themselves must check out
  // exactly once the volume factor is applied.
  RigidBandCheck rc = rigid_band_check(disp, basis, m_plus, 1,
                                       CorrectionConvention::Factor2);
  CHECK(rc.n_eta_sampled == 5);  // eta in [pi/2, 3pi/2] on the 9-point grid
  CHECK(rc.max_coupled_rel < 1e-12);
  CHECK(rc.max_zero_ratio < 1e-12);

  // Inflate the coupled bands and contaminate a flat band.
  disp.bands.col(5) *= 1.2;
  disp.bands(4, 0) = 0.03 * disp.bands(4, 3);
  rc = rigid_band_check(disp, basis, m_plus, 1,
                        CorrectionConvention::Factor2);
  CHECK(rc.max_coupled_rel == Approx(0.2).epsilon(1e-9));
  CHECK(rc.max_zero_ratio == Approx(0.03).epsilon(1e-6));
}

TEST_CASE("gap detection on a synthetic dispersion table", "[pipeline]") {
  DispersionResult disp;
  disp.etas = make_eta_grid(5);
  disp.bands.resize(5, 3);
  // Band 1 stays below 2.0; band 2 starts at 3.0: a gap of width 1.0.
  // Band 2 reaches 5.0 while band 3 dips to 4.5: overlap, no gap.
  disp.bands.col(0) << 1.0, 1.5, 2.0, 1.5, 1.0;
  disp.bands.col(1) << 3.0, 4.0, 5.0, 4.0, 3.0;
  disp.bands.col(2) << 6.0, 5.0, 4.5, 5.0, 6.0;

  const std::vector<GapInfo> gaps = detect_gaps(disp);
  REQUIRE(gaps.size() == 1);
  CHECK(gaps[0].below == 0);
  CHECK(gaps[0].lower == Approx(2.0));
  CHECK(gaps[0].upper == Approx(3.0));
  CHECK(gaps[0].width == Approx(1.0));
}

TEST_CASE("dispersion table is byte-stable on disk and parseable",
          "[pipeline]") {
  DispersionResult disp;
  disp.etas = make_eta_grid(5);
  disp.bands.resize(5, 2);
  DeterministicRng rng(11);
  for (int i = 0; i < 5; ++i)
    for (int b = 0; b < 2; ++b) disp.bands(i, b) = rng.uniform();

  const auto dir = fresh_dir("elband_csv_test");
  const std::string p1 = (dir / "a.csv").string();
  const std::string p2 = (dir / "b.csv").string();
  write_dispersion_csv(p1, disp);
  write_dispersion_csv(p2, disp);
  const std::string text = slurp(p1);
  CHECK(text == slurp(p2));

  std::istringstream lines(text);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "eta,band1,band2");
  int rows = 0;
  for (std::string line; std::getline(lines, line); ++rows) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    CHECK(std::strtod(cell.c_str(), nullptr) == disp.etas[rows]);
    for (int b = 0; b < 2; ++b) {
      std::getline(cells, cell, ',');
      // %.17g survives the round trip exactly.
      CHECK(std::strtod(cell.c_str(), nullptr) == disp.bands(rows, b));
    }
  }
  CHECK(rows == 5);
}

TEST_CASE("dispersion sweep: ordering, periodicity, time reversal",
          "[pipeline][sweep]") {
  SweepConfig cfg = tiny_config();
  Pipeline pipe(cfg);
  const DispersionResult& disp = pipe.dispersion(0.1);

  REQUIRE(disp.bands.rows() == 5);
  REQUIRE(disp.bands.cols() == 8);
  CHECK(disp.h == 0.1);

  const double scale = disp.bands.col(7).maxCoeff();
  REQUIRE(scale > 0);
  for (int i = 0; i < disp.bands.rows(); ++i)
    for (int b = 1; b < disp.bands.cols(); ++b)
      CHECK(disp.bands(i, b) >= disp.bands(i, b - 1) - 1e-9 * scale);

  // Translations are exact zero modes of the periodic problem at eta = 0.
  for (int b = 0; b < 3; ++b)
    CHECK(std::abs(disp.bands(0, b)) <= 1e-8 * scale);

  // The Floquet parameter is 2*pi periodic, and complex conjugation maps
  // eta to 2*pi - eta without moving the spectrum.
  for (int b = 0; b < 8; ++b) {
    CHECK(disp.bands(0, b) == Approx(disp.bands(4, b)).margin(1e-7 * scale));
    CHECK(disp.bands(1, b) == Approx(disp.bands(3, b)).margin(1e-7 * scale));
  }

  // Rigid-type bands stay far below the first elastic band at small h.
  CHECK(disp.bands.col(5).maxCoeff() < 0.2 * disp.bands.col(6).minCoeff());
}

TEST_CASE("prediction table resolves clusters consistently",
          "[pipeline][sweep]") {
  SweepConfig cfg = tiny_config();
  Pipeline pipe(cfg);
  const LimitSpectrum& aligned = pipe.limit();
  const RigidBasis& basis = pipe.basis();

  // A synthetic polarization keeps this case independent of the junction
  // solves; structure matches the measured one (diagonal, axial-dominant).
  Mat3 m_plus = Mat3::Zero();
  m_plus.diagonal() << 0.0063, 0.0063, 0.158;

  const VecX etas = make_eta_grid(5);
  const double h = 0.05;
  const PredictionTable pred =
      predicted_table(aligned, m_plus, cfg.params.a, h, etas, cfg.n_bands,
                      CorrectionConvention::Factor2);
  REQUIRE(pred.values.rows() == 5);
  REQUIRE(pred.values.cols() == 8);

  // The rigid cluster must agree with the closed-form corrections.  The
  // margin is anchored to the strongest coupling on the grid (eta = pi):
  // at eta = 0 every correction vanishes and a per-eta margin would shrink
  // to nothing, while the numeric Gram eigenvalues carry the rigid cluster's
  // eigensolver mixing noise regardless of eta.
  const double rigid_scale =
      h * rigid_corrections(basis, m_plus, M_PI,
                            CorrectionConvention::Factor2)[5];
  for (int i = 0; i < etas.size(); ++i) {
    const VecX rigid = rigid_corrections(basis, m_plus, etas[i],
                                         CorrectionConvention::Factor2);
    for (int q = 0; q < 6; ++q)
      CHECK(pred.values(i, q) ==
            Approx(h * rigid[q]).margin(1e-10 * rigid_scale + 1e-13));
  }

  // Single-mode clusters must agree with the scalar correction curve.
  int checked = 0;
  for (const auto& cluster : aligned.clusters) {
    if (cluster.size() != 1 || cluster.front() >= cfg.n_bands) continue;
    const int k = cluster.front();
    const CorrectionCurve curve =
        correction_curve(coupling_vector(aligned, k), m_plus,
                         aligned.values[k], cfg.params.a,
                         CorrectionConvention::Factor2);
    for (int i = 0; i < etas.size(); ++i)
      CHECK(pred.values(i, k) ==
            Approx(aligned.values[k] + h * curve.eval(etas[i]))
                .epsilon(1e-12));
    ++checked;
  }
  INFO("single-mode clusters checked: " << checked);

  // Every predicted band respects the cluster ordering at each eta.
  for (int i = 0; i < etas.size(); ++i)
    for (const auto& cluster : aligned.clusters)
      for (std::size_t q = 1; q < cluster.size(); ++q) {
        if (cluster[q] >= cfg.n_bands) break;
        CHECK(pred.values(i, cluster[q]) >=
              pred.values(i, cluster[q - 1]) - 1e-12);
      }

  CHECK_THROWS_AS(predicted_table(aligned, m_plus, cfg.params.a, h, etas,
                                  aligned.values.size() + 1,
                                  CorrectionConvention::Factor2),
                  std::invalid_argument);
}

TEST_CASE("pipeline writes the full artifact set deterministically",
          "[pipeline][sweep]") {
  SweepConfig cfg = tiny_config();
  const auto dir = fresh_dir("elband_pipeline_run");
  cfg.out_dir = (dir / "run1").string();

  Pipeline pipe(cfg);
  pipe.write_limit();
  pipe.write_cell();
  pipe.write_sweep();
  pipe.write_study();

  for (const char* name :
       {"limit.json", "mplus.json", "dispersion_h0.1.csv",
        "dispersion_h0.05.csv", "bands.json", "convergence.json"})
    CHECK(std::filesystem::exists(dir / "run1" / name));

  // Structure of the study report.
  const nlohmann::json conv =
      nlohmann::json::parse(slurp((dir / "run1" / "convergence.json")
                                      .string()));
  REQUIRE(conv.contains("factor1"));
  REQUIRE(conv.contains("factor2"));
  REQUIRE(conv.at("h_values").size() == 2);
  const auto bands = conv.at("bands").get<std::vector<int>>();
  REQUIRE(bands == std::vector<int>{3, 4, 5, 6, 7});
  for (const char* key : {"factor1", "factor2"}) {
    const auto& cj = conv.at(key);
    for (const char* table : {"errors", "errors_compensated"}) {
      REQUIRE(cj.at(table).size() == 2);
      REQUIRE(cj.at(table).at(0).size() == bands.size());
      for (const auto& row : cj.at(table))
        for (const auto& e : row) {
          CHECK(e.get<double>() > 0);
          CHECK(std::isfinite(e.get<double>()));
        }
    }
    REQUIRE(cj.at("slopes").size() == bands.size());
    REQUIRE(cj.at("slopes_literal").size() == bands.size());
    for (const auto& s : cj.at("slopes"))
      CHECK(std::isfinite(s.get<double>()));
  }
  REQUIRE(conv.at("floors").size() == 2);
  for (const auto& row : conv.at("floors"))
    for (const auto& f : row) CHECK(f.get<double>() >= 0);
  CHECK(conv.at("verdict_band").get<int>() == 5);
  const std::string verdict = conv.at("verdict").get<std::string>();
  CHECK((verdict == "factor1" || verdict == "factor2" ||
         verdict == "mesh-limited"));

  // bands.json carries measured and predicted tables plus gap data.
  const nlohmann::json bj =
      nlohmann::json::parse(slurp((dir / "run1" / "bands.json").string()));
  REQUIRE(bj.at("per_h").size() == 2);
  for (const auto& hj : bj.at("per_h")) {
    REQUIRE(hj.at("measured").size() == 5);
    REQUIRE(hj.at("predicted_factor2").size() == 5);
    REQUIRE(hj.contains("gaps"));
  }

  // A second pipeline over the same configuration reproduces every artifact
  // byte for byte.
  SweepConfig cfg2 = cfg;
  cfg2.out_dir = (dir / "run2").string();
  Pipeline rerun(cfg2);
  rerun.write_limit();
  rerun.write_cell();
  rerun.write_sweep();
  rerun.write_study();
  for (const char* name :
       {"limit.json", "mplus.json", "dispersion_h0.1.csv",
        "dispersion_h0.05.csv", "bands.json", "convergence.json"})
    CHECK(slurp((dir / "run1" / name).string()) ==
          slurp((dir / "run2" / name).string()));

  std::filesystem::remove_all(dir);
}

TEST_CASE("cracked cell dispersion collapses onto the limit spectrum",
          "[pipeline][sweep]") {
  SweepConfig cfg = tiny_config();
  cfg.params.a = 0;
  cfg.n_bands = 8;

  Pipeline pipe(cfg);
  const LimitSpectrum& aligned = pipe.limit();

  // With the contact patch shrinking like t*h, every Floquet band must
  // approach the traction-free limit value at first order in h.
  double dev_coarse = 0, dev_fine = 0;
  const double lam6 = aligned.values[6];
  for (double h : cfg.h_values) {
    const DispersionResult& disp = pipe.dispersion(h);
    double dev = 0;
    for (int b = 0; b < cfg.n_bands; ++b)
      dev = std::max(dev, (disp.bands.col(b).array() - aligned.values[b])
                              .abs()
                              .maxCoeff());
    (h == 0.1 ? dev_coarse : dev_fine) = dev;
  }
  INFO("max |band - limit| at h=0.1: " << dev_coarse
                                       << ", h=0.05: " << dev_fine);
  CHECK(dev_coarse < 0.5 * lam6);
  CHECK(dev_fine < dev_coarse);
}
