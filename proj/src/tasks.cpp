#include "focl/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace focl {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInk = 0.9;
constexpr double kPaper = 0.1;

// 8x8 glyph rasters; '#' is ink.
constexpr std::array<std::array<const char*, 8>, 10> kGlyphs = {{
    // bar
    {{"...##...",
      "...##...",
      "...##...",
      "...##...",
      "...##...",
      "...##...",
      "...##...",
      "...##..."}},
    // cross
    {{"...##...",
      "...##...",
      "...##...",
      "########",
      "########",
      "...##...",
      "...##...",
      "...##..."}},
    // box
    {{"########",
      "#......#",
      "#......#",
      "#......#",
      "#......#",
      "#......#",
      "#......#",
      "########"}},
    // diagonal
    {{"##......",
      ".##.....",
      "..##....",
      "...##...",
      "....##..",
      ".....##.",
      "......##",
      ".......#"}},
    // dot
    {{"........",
      "........",
      "........",
      "...##...",
      "...##...",
      "........",
      "........",
      "........"}},
    // L
    {{"##......",
      "##......",
      "##......",
      "##......",
      "##......",
      "##......",
      "########",
      "########"}},
    // T
    {{"########",
      "########",
      "...##...",
      "...##...",
      "...##...",
      "...##...",
      "...##...",
      "...##..."}},
    // U
    {{"##....##",
      "##....##",
      "##....##",
      "##....##",
      "##....##",
      "##....##",
      "##....##",
      "########"}},
    // X
    {{"#......#",
      "##....##",
      ".##..##.",
      "..####..",
      "..####..",
      ".##..##.",
      "##....##",
      "#......#"}},
    // Z
    {{"########",
      "########",
      ".....##.",
      "....##..",
      "...##...",
      "..##....",
      "########",
      "########"}},
}};

Mat glyph_template(int index) {
  Mat out(1, 64);
  const auto& rows = kGlyphs[static_cast<std::size_t>(index)];
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      out(0, r * 8 + c) = rows[static_cast<std::size_t>(r)][c] == '#'
                              ? kInk
                              : kPaper;
  return out;
}

}  // namespace

TaskStream make_gauss2d(int T, double radius, double sigma,
                        std::uint64_t seed) {
  if (T < 1) throw ConfigError("gauss2d: T must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("gauss2d: radius must be positive");
  if (!(sigma > 0.0)) throw ConfigError("gauss2d: sigma must be positive");
  TaskStream s;
  s.name = "gauss2d";
  s.T = T;
  s.seed = seed;
  s.data_dim = 2;
  s.tasks.reserve(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    Task t;
    t.kind = Task::Kind::gauss;
    t.condition = i;
    t.data_dim = 2;
    const double theta = 2.0 * kPi * static_cast<double>(i) / T;
    t.mean_x = radius * std::cos(theta);
    t.mean_y = radius * std::sin(theta);
    t.sigma = sigma;
    s.tasks.push_back(std::move(t));
  }
  return s;
}

TaskStream make_glyphs8(int T, double noise, std::uint64_t seed) {
  if (T < 1 || T > 10)
    throw ConfigError("glyphs8: T must be in [1, 10]");
  if (!(noise >= 0.0) || noise >= 0.5)
    throw ConfigError("glyphs8: noise must be in [0, 0.5)");
  TaskStream s;
  s.name = "glyphs8";
  s.T = T;
  s.seed = seed;
  s.data_dim = 64;
  s.tasks.reserve(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    Task t;
    t.kind = Task::Kind::glyph;
    t.condition = i;
    t.data_dim = 64;
    t.glyph = glyph_template(i);
    t.noise = noise;
    s.tasks.push_back(std::move(t));
  }
  return s;
}

Mat sample_real_values(const Task& task, int n, Rng& rng) {
  require(n > 0, "sample_real: n must be positive");
  Mat x(n, task.data_dim);
  if (task.kind == Task::Kind::gauss) {
    for (int r = 0; r < n; ++r) {
      x(r, 0) = task.mean_x + task.sigma * rng.normal();
      x(r, 1) = task.mean_y + task.sigma * rng.normal();
    }
  } else {
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < 64; ++c)
        x(r, c) = std::clamp(
            task.glyph(0, c) + rng.uniform(-task.noise, task.noise), 0.0,
            1.0);
  }
  return x;
}

SampleBatch sample_real(const Task& task, int n, Rng& rng) {
  SampleBatch b;
  b.x = constant(sample_real_values(task, n, rng));
  b.condition = task.condition;
  b.provenance = Provenance::real;
  b.paired = true;
  return b;
}

double data_scale(const TaskStream& stream) {
  require(!stream.tasks.empty(), "data_scale: empty stream");
  double s = 0.0;
  for (const Task& t : stream.tasks) {
    if (t.kind == Task::Kind::gauss)
      s = std::max(s, std::hypot(t.mean_x, t.mean_y) + 3.0 * t.sigma);
    else
      s = std::max(s, 1.0);
  }
  require(s > 0.0, "data_scale: degenerate stream");
  return s;
}

}  // namespace focl
