#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bssard/synthdata.hpp"

namespace bssard {

/// (normalized start, normalized duration).
struct MomentPoint {
  double x = 0.0;
  double y = 0.0;
};

MomentPoint moment_coordinates(const GroundingSample& sample);

/// Density over the unit square. values(i, j) is evaluated at start
/// (j + 0.5) / G and duration (i + 0.5) / G.
struct DensityGrid {
  Eigen::MatrixXd values;
  double h_x = 0.0;
  double h_y = 0.0;
  std::size_t count = 0;

  int size() const { return static_cast<int>(values.rows()); }
  static double node(int i, int g) { return (i + 0.5) / g; }
  /// Midpoint-rule integral over cells whose start coordinate is below x_max.
  double mass_start_below(double x_max) const;
  double total_mass() const { return mass_start_below(2.0); }
};

inline constexpr int kDefaultGridSize = 100;

/// Per-axis Silverman bandwidths, sigma * N^(-1/6). A degenerate axis (zero spread
/// or a single point) falls back to kFallbackBandwidth.
std::pair<double, double> silverman_bandwidths(std::span<const MomentPoint> points);
inline constexpr double kFallbackBandwidth = 0.05;

/// Product-Gaussian KDE on the G x G grid; bandwidths default to Silverman.
DensityGrid kde_density(std::span<const MomentPoint> points,
                        std::optional<std::pair<double, double>> bandwidths = std::nullopt,
                        int grid = kDefaultGridSize);

/// Which samples count as triggered: a token id or the name of a corpus rule.
struct TriggerSpec {
  std::string label;
  std::optional<BiasRule> rule;
  std::optional<int> token;
};

/// Integer text selects that query token; anything else must name a rule.
TriggerSpec resolve_trigger(const CorpusConfig& config, const std::string& text);
bool matches(const TriggerSpec& trigger, const GroundingSample& sample);

struct TriggerReport {
  std::string trigger;
  Split split = Split::kTrain;
  std::size_t count = 0;
  std::optional<DensityGrid> density;  // empty when no sample matched
  double mean_x = 0.0;
  double mean_y = 0.0;
  double var_x = 0.0;
  double var_y = 0.0;
};

TriggerReport per_trigger_report(const Corpus& corpus, const TriggerSpec& trigger, Split split,
                                 int grid = kDefaultGridSize);

enum class PlotFormat { kPng, kSvg };
PlotFormat parse_plot_format(const std::string& s);

/// Writes the heatmap to `path` and the grid to a sidecar CSV next to it (same
/// stem, .csv). Returns the sidecar path.
std::filesystem::path emit_plot(const DensityGrid& grid, const std::filesystem::path& path, PlotFormat format);

void write_grid_csv(const DensityGrid& grid, const std::filesystem::path& path);
DensityGrid read_grid_csv(const std::filesystem::path& path);

/// Image side length in pixels for a grid of size G.
int plot_pixels(int grid);

}  // namespace bssard
