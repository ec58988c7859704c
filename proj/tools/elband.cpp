// Command line front end for the band pipeline.
//
//   elband limit|cell|sweep|study [--config cfg.json] [--out dir] [--vtk]
//   elband --stages limit,cell,sweep,study ...
//   elband report [--out dir]
//
// Stages share one Pipeline instance per invocation, so `--stages sweep,study`
// reuses the dispersion solves between the two artifacts.
#include <elband/pipeline.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

elband::SweepConfig load_config(const std::string& path) {
  elband::SweepConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  elband::check(in.good(), "cannot open config '" + path + "'");
  nlohmann::json j;
  in >> j;
  cfg = j.get<elband::SweepConfig>();
  return cfg;
}

int run_stages(const elband::SweepConfig& cfg,
               const std::vector<std::string>& stages) {
  for (const std::string& stage : stages) {
    if (stage != "limit" && stage != "cell" && stage != "sweep" &&
        stage != "study") {
      std::cerr << "unknown stage '" << stage
                << "' (expected limit, cell, sweep, study)\n";
      return 1;
    }
  }
  elband::Pipeline pipe(cfg);
  for (const std::string& stage : stages) {
    if (stage == "limit") pipe.write_limit();
    if (stage == "cell") pipe.write_cell();
    if (stage == "sweep") pipe.write_sweep();
    if (stage == "study") pipe.write_study();
    std::cout << "wrote stage '" << stage << "' to " << cfg.out_dir << "\n";
  }
  return 0;
}

bool load_artifact(const std::filesystem::path& file, nlohmann::json& j) {
  if (!std::filesystem::exists(file)) {
    std::cout << file.filename().string()
              << ": not found (run the corresponding stage first)\n";
    return false;
  }
  std::ifstream in(file);
  in >> j;
  return true;
}

void print_gaps(const char* tag, const nlohmann::json& gaps) {
  std::cout << "    " << tag << ":";
  if (gaps.empty()) std::cout << " none";
  for (const auto& g : gaps)
    std::printf(" (above band %d: width %.6g)", g.at("below").get<int>() + 1,
                g.at("width").get<double>());
  std::cout << "\n";
}

void print_report(const std::string& dir) {
  const std::filesystem::path out(dir);
  nlohmann::json j;

  if (load_artifact(out / "limit.json", j)) {
    const auto values = j.at("values").get<std::vector<double>>();
    const int n_rigid = j.at("n_rigid").get<int>();
    std::cout << "limit.json: " << values.size() << " modes, " << n_rigid
              << " rigid";
    if (n_rigid < static_cast<int>(values.size()))
      std::printf(", first elastic eigenvalue %.6f",
                  values[static_cast<std::size_t>(n_rigid)]);
    std::printf(", cell volume %.6f\n", j.at("volume").get<double>());
  }

  if (load_artifact(out / "mplus.json", j)) {
    const auto m = j.at("m_plus");
    std::printf("mplus.json: diag(M+) = %.6g %.6g %.6g, %s",
                m.at(0).at(0).get<double>(), m.at(1).at(1).get<double>(),
                m.at(2).at(2).get<double>(),
                j.at("extrapolated").get<bool>() ? "extrapolated from rho ="
                                                 : "finest rho =");
    for (const auto& r : j.at("rho_values")) std::cout << " " << r;
    std::cout << "\n";
  }

  if (load_artifact(out / "bands.json", j)) {
    std::cout << "bands.json: " << j.at("per_h").size() << " thickness value(s), "
              << j.at("eta_count") << " quasimomenta\n";
    for (const auto& hj : j.at("per_h")) {
      std::printf("  h = %g: %zu bands\n", hj.at("h").get<double>(),
                  hj.at("measured").at(0).size());
      print_gaps("gaps (raw)", hj.at("gaps"));
      print_gaps("gaps (scaling-compensated)", hj.at("gaps_compensated"));
    }
  }

  if (load_artifact(out / "convergence.json", j)) {
    std::cout << "convergence.json: h =";
    for (const auto& h : j.at("h_values")) std::cout << " " << h;
    const auto bands = j.at("bands").get<std::vector<int>>();
    std::cout << ", bands";
    for (int b : bands) std::cout << " " << b + 1;
    std::cout << "\n";
    for (const char* conv : {"factor2", "factor1"}) {
      if (!j.contains(conv)) continue;
      std::cout << "  " << conv << " slopes (compensated):";
      for (const auto& s : j.at(conv).at("slopes"))
        std::printf(" %.2f", s.get<double>());
      std::cout << "\n";
    }
    std::cout << "  verdict: " << j.at("verdict").get<std::string>()
              << " (band " << j.at("verdict_band").get<int>() + 1 << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Floquet-Bloch bands of a thin-ligament periodic elastic waveguide"};
  app.require_subcommand(0, 1);
  app.fallthrough();  // let `elband report --out dir` reach the global flags

  std::string config_path, out_dir, convention;
  std::vector<std::string> stages;
  bool vtk = false;
  app.add_option("--config", config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--convention", convention,
                 "correction convention for predictions")
      ->check(CLI::IsMember({"factor1", "factor2", "both"}));
  app.add_option("--stages", stages,
                 "comma separated list of stages to run in order")
      ->delimiter(',');
  app.add_flag("--vtk", vtk, "also export meshes and fields as VTK");

  CLI::App* limit_cmd =
      app.add_subcommand("limit", "solve the zero-thickness cell problem");
  CLI::App* cell_cmd =
      app.add_subcommand("cell", "compute the junction polarization matrix");
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "dispersion sweep over the quasimomentum");
  CLI::App* study_cmd =
      app.add_subcommand("study", "two-convention convergence study");
  CLI::App* report_cmd =
      app.add_subcommand("report", "summarize the artifacts in --out");

  CLI11_PARSE(app, argc, argv);

  try {
    elband::SweepConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!convention.empty()) cfg.convention = elband::parse_convention(convention);
    if (vtk) cfg.export_vtk = true;

    if (report_cmd->parsed()) {
      print_report(cfg.out_dir);
      return 0;
    }
    if (limit_cmd->parsed()) stages.push_back("limit");
    if (cell_cmd->parsed()) stages.push_back("cell");
    if (sweep_cmd->parsed()) stages.push_back("sweep");
    if (study_cmd->parsed()) stages.push_back("study");
    if (stages.empty()) {
      std::cout << app.help();
      return 0;
    }
    return run_stages(cfg, stages);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
