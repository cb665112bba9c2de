// Authors the two shipped race tracks (A: training map, B: unseen map).

#include <cmath>
#include <filesystem>
#include <iostream>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "objrace/trackgen.hpp"

namespace {

using objrace::Vec2;

struct Harmonic {
  int k;
  double amp;
  double phase;
};

std::vector<Vec2> polar_loop(double ax, double by, const std::vector<Harmonic>& terms, int samples) {
  std::vector<Vec2> pts;
  pts.reserve(samples);
  for (int i = 0; i < samples; ++i) {
    const double phi = 2.0 * objrace::kPi * i / samples;
    double r = 1.0;
    for (const auto& h : terms) r += h.amp * std::cos(h.k * phi + h.phase);
    pts.push_back({ax * r * std::cos(phi), by * r * std::sin(phi)});
  }
  return pts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"objrace track generator"};
  std::string out_dir = "data/maps";
  app.add_option("--out", out_dir, "output directory (one subdirectory per map)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::tuple<std::string, std::vector<Vec2>>> tracks = {
      {"A", polar_loop(14.0, 7.0, {{3, 0.12, 0.3}, {2, 0.08, 1.0}}, 4000)},
      {"B", polar_loop(11.0, 9.0, {{2, 0.18, 0.5}, {4, 0.05, 0.0}, {3, 0.06, 2.0}}, 4000)},
  };
  const objrace::TrackSpec spec{};
  for (const auto& [name, centerline] : tracks) {
    const auto dir = std::filesystem::path(out_dir) / name;
    std::filesystem::create_directories(dir);
    const auto built = objrace::build_track(centerline, true, spec);
    objrace::save_grid(dir / "map.pgm", dir / "map.yaml", built.grid);
    objrace::save_raceline(dir / "raceline.csv", built.raceline);
    std::cout << name << ": " << built.grid.width() << "x" << built.grid.height() << " cells, raceline "
              << built.raceline.total_length() << " m, " << built.raceline.waypoints().size()
              << " waypoints\n";
  }
  return 0;
}
