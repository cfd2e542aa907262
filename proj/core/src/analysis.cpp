#include "bssard/analysis.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bssard/error.hpp"

namespace bssard {

namespace fs = std::filesystem;

MomentPoint moment_coordinates(const GroundingSample& sample) {
  validate_moment(sample.moment, sample.n_true);
  const double n = sample.n_true;
  return {sample.moment.start / n, sample.moment.length() / n};
}

double DensityGrid::mass_start_below(double x_max) const {
  const int g = size();
  double total = 0.0;
  for (int j = 0; j < g; ++j) {
    if (node(j, g) < x_max) total += values.col(j).sum();
  }
  return total / (static_cast<double>(g) * g);
}

std::pair<double, double> silverman_bandwidths(std::span<const MomentPoint> points) {
  const double n = static_cast<double>(points.size());
  if (points.size() < 2) return {kFallbackBandwidth, kFallbackBandwidth};
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& p : points) {
    vx += (p.x - mx) * (p.x - mx);
    vy += (p.y - my) * (p.y - my);
  }
  const double factor = std::pow(n, -1.0 / 6.0);
  auto pick = [&](double var) {
    const double sd = std::sqrt(var / (n - 1.0));
    return sd > 0.0 ? sd * factor : kFallbackBandwidth;
  };
  return {pick(vx), pick(vy)};
}

DensityGrid kde_density(std::span<const MomentPoint> points, std::optional<std::pair<double, double>> bandwidths,
                        int grid) {
  if (points.empty()) throw Error(ErrorCode::kInvalidArgument, "kde_density needs at least one point");
  if (grid < 1) throw Error(ErrorCode::kInvalidArgument, "grid size must be >= 1");
  const auto [hx, hy] = bandwidths ? *bandwidths : silverman_bandwidths(points);
  if (!(hx > 0.0) || !(hy > 0.0)) throw Error(ErrorCode::kInvalidArgument, "bandwidths must be > 0");

  // The kernel is separable: K(x, y) = kx(x) ky(y), so the grid is Ky * Kx^T / N.
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd kx(grid, n);
  Eigen::MatrixXd ky(grid, n);
  const double cx = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * hx);
  const double cy = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * hy);
  for (int i = 0; i < grid; ++i) {
    const double t = DensityGrid::node(i, grid);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double dx = (t - points[static_cast<std::size_t>(k)].x) / hx;
      const double dy = (t - points[static_cast<std::size_t>(k)].y) / hy;
      kx(i, k) = cx * std::exp(-0.5 * dx * dx);
      ky(i, k) = cy * std::exp(-0.5 * dy * dy);
    }
  }
  DensityGrid out;
  out.values = (ky * kx.transpose()) / static_cast<double>(n);
  out.h_x = hx;
  out.h_y = hy;
  out.count = points.size();
  return out;
}

TriggerSpec resolve_trigger(const CorpusConfig& config, const std::string& text) {
  TriggerSpec spec;
  spec.label = text;
  int token = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), token);
  if (ec == std::errc() && ptr == text.data() + text.size()) {
    if (token < 0 || token >= config.vocab) {
      throw Error(ErrorCode::kInvalidArgument, "trigger token " + text + " outside the vocabulary");
    }
    spec.token = token;
    return spec;
  }
  for (const auto& r : config.rules) {
    if (r.name == text) {
      spec.rule = r;
      return spec;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "trigger '" + text + "' is neither a token id nor a rule name");
}

bool matches(const TriggerSpec& trigger, const GroundingSample& sample) {
  if (trigger.rule) return has_trigger(sample, *trigger.rule);
  if (trigger.token) {
    return std::find(sample.query.begin(), sample.query.end(), *trigger.token) != sample.query.end();
  }
  return false;
}

TriggerReport per_trigger_report(const Corpus& corpus, const TriggerSpec& trigger, Split split, int grid) {
  TriggerReport rep;
  rep.trigger = trigger.label;
  rep.split = split;
  std::vector<MomentPoint> pts;
  for (const GroundingSample* s : corpus.split(split)) {
    if (matches(trigger, *s)) pts.push_back(moment_coordinates(*s));
  }
  rep.count = pts.size();
  if (pts.empty()) return rep;
  const double n = static_cast<double>(pts.size());
  for (const auto& p : pts) {
    rep.mean_x += p.x / n;
    rep.mean_y += p.y / n;
  }
  for (const auto& p : pts) {
    rep.var_x += (p.x - rep.mean_x) * (p.x - rep.mean_x) / n;
    rep.var_y += (p.y - rep.mean_y) * (p.y - rep.mean_y) / n;
  }
  rep.density = kde_density(pts, std::nullopt, grid);
  return rep;
}

PlotFormat parse_plot_format(const std::string& s) {
  if (s == "png") return PlotFormat::kPng;
  if (s == "svg") return PlotFormat::kSvg;
  throw Error(ErrorCode::kInvalidArgument, "plot format must be png or svg, got '" + s + "'");
}

int plot_pixels(int grid) { return grid * std::max(1, (256 + grid - 1) / grid); }

namespace {

using Rgb = std::array<unsigned char, 3>;

// Dark blue through teal to yellow.
Rgb colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                               {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  Rgb c{};
  for (int k = 0; k < 3; ++k) {
    c[static_cast<std::size_t>(k)] =
        static_cast<unsigned char>(std::lround(stops[i][static_cast<std::size_t>(k)] * (1.0 - f) +
                                               stops[i + 1][static_cast<std::size_t>(k)] * f));
  }
  return c;
}

// Color per cell, image row 0 holding the largest duration.
std::vector<Rgb> cell_colors(const DensityGrid& grid) {
  const int g = grid.size();
  const double lo = grid.values.minCoeff();
  const double hi = grid.values.maxCoeff();
  std::vector<Rgb> out(static_cast<std::size_t>(g) * g);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const double v = grid.values(g - 1 - r, c);
      out[static_cast<std::size_t>(r) * g + c] = colormap(hi > lo ? (v - lo) / (hi - lo) : 0.5);
    }
  }
  return out;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void png_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

void write_png(const DensityGrid& grid, const fs::path& path) {
  const int g = grid.size();
  const int px = plot_pixels(g);
  const int scale = px / g;
  const auto colors = cell_colors(grid);
  std::string raw;
  raw.reserve(static_cast<std::size_t>(px) * (3 * px + 1));
  for (int y = 0; y < px; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < px; ++x) {
      const Rgb& c = colors[static_cast<std::size_t>(y / scale) * g + x / scale];
      raw.append(reinterpret_cast<const char*>(c.data()), 3);
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error(ErrorCode::kIo, "png compression failed");
  }
  z.resize(zlen);

  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(px));
  put_u32(ihdr, static_cast<std::uint32_t>(px));
  ihdr += std::string{8, 2, 0, 0, 0};  // 8-bit RGB, deflate, no filter, no interlace
  std::string png = "\x89PNG\r\n\x1a\n";
  png_chunk(png, "IHDR", ihdr);
  png_chunk(png, "IDAT", z);
  png_chunk(png, "IEND", "");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(png.data(), static_cast<std::streamsize>(png.size()));
}

void write_svg(const DensityGrid& grid, const fs::path& path) {
  const int g = grid.size();
  const int px = plot_pixels(g);
  const int scale = px / g;
  const auto colors = cell_colors(grid);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px << "\" height=\"" << px
      << "\" shape-rendering=\"crispEdges\">\n";
  char color[8];
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const Rgb& k = colors[static_cast<std::size_t>(r) * g + c];
      std::snprintf(color, sizeof(color), "#%02x%02x%02x", k[0], k[1], k[2]);
      out << "<rect x=\"" << c * scale << "\" y=\"" << r * scale << "\" width=\"" << scale << "\" height=\""
          << scale << "\" fill=\"" << color << "\"/>\n";
    }
  }
  out << "</svg>\n";
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace

void write_grid_csv(const DensityGrid& grid, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  char buf[40];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  const int g = grid.size();
  out << "# rows=" << g << " cols=" << g << " h_x=" << num(grid.h_x) << " h_y=" << num(grid.h_y)
      << " count=" << grid.count << " x=start:0:1 y=duration:0:1 layout=row-major-duration\n";
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) out << (j ? "," : "") << num(grid.values(i, j));
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

DensityGrid read_grid_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  if (header.rfind("# ", 0) != 0) throw Error(ErrorCode::kPayloadCorrupt, "grid csv lacks its header");
  DensityGrid grid;
  int rows = -1, cols = -1;
  std::istringstream hs(header.substr(2));
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "rows") rows = std::stoi(val);
    if (key == "cols") cols = std::stoi(val);
    if (key == "h_x") grid.h_x = std::strtod(val.c_str(), nullptr);
    if (key == "h_y") grid.h_y = std::strtod(val.c_str(), nullptr);
    if (key == "count") grid.count = static_cast<std::size_t>(std::stoull(val));
  }
  if (rows < 1 || rows != cols) throw Error(ErrorCode::kPayloadCorrupt, "grid csv header has bad dimensions");
  grid.values.resize(rows, cols);
  std::string line;
  for (int i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::kPayloadCorrupt, "grid csv is truncated");
    const char* p = line.c_str();
    for (int j = 0; j < cols; ++j) {
      char* end = nullptr;
      grid.values(i, j) = std::strtod(p, &end);
      if (end == p) throw Error(ErrorCode::kPayloadCorrupt, "grid csv row " + std::to_string(i) + " is short");
      p = *end == ',' ? end + 1 : end;
    }
  }
  return grid;
}

fs::path emit_plot(const DensityGrid& grid, const fs::path& path, PlotFormat format) {
  if (grid.size() < 1) throw Error(ErrorCode::kInvalidArgument, "empty grid");
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  if (format == PlotFormat::kPng) {
    write_png(grid, path);
  } else {
    write_svg(grid, path);
  }
  fs::path sidecar = path;
  sidecar.replace_extension(".csv");
  write_grid_csv(grid, sidecar);
  return sidecar;
}

}  // namespace bssard
