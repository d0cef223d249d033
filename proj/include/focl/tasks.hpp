#pragma once

#include "focl/objectives.hpp"
#include "focl/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace focl {

// One generative task: a single class-conditional data source. Sampling is
// a pure function of the task and the caller's rng stream.
struct Task {
  enum class Kind { gauss, glyph };
  Kind kind = Kind::gauss;
  int condition = 0;
  int data_dim = 2;
  // gauss
  double mean_x = 0.0, mean_y = 0.0, sigma = 1.0;
  // glyph
  Mat glyph;  // (1, 64) template in [0,1]
  double noise = 0.0;
};

struct TaskStream {
  std::string name;
  int T = 0;
  std::uint64_t seed = 0;
  int data_dim = 0;
  std::vector<Task> tasks;
};

// Modes evenly spaced on a circle of the given radius, isotropic sigma.
TaskStream make_gauss2d(int T, double radius, double sigma,
                        std::uint64_t seed);

// 8x8 procedural rasters (bar, cross, box, diagonal, dot, L, T, U, X, Z),
// flattened to 64-dim rows, plus uniform pixel noise clamped to [0,1].
// Template pixels sit at 0.1 / 0.9 so noise up to 0.1 never clamps and the
// sample mean stays on the template.
TaskStream make_glyphs8(int T, double noise, std::uint64_t seed);

Mat sample_real_values(const Task& task, int n, Rng& rng);
SampleBatch sample_real(const Task& task, int n, Rng& rng);

// Typical coordinate magnitude of the stream's data: the largest mean norm
// plus three sigmas for Gaussian streams, 1 for unit-interval rasters.
// Clipped critics use it as their input magnification.
double data_scale(const TaskStream& stream);

}  // namespace focl
