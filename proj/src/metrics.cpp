#include "coml/metrics.hpp"

#include <cmath>

#include "coml/errors.hpp"

namespace coml {

double rms(std::span<const double> flat, std::size_t dim) {
  if (dim == 0 || flat.empty()) throw Error("rms of an empty signal");
  if (flat.size() % dim != 0) throw ShapeError("rms: ragged signal");
  const std::size_t samples = flat.size() / dim;
  double s = 0.0;
  for (double v : flat) s += v * v;
  const double n = samples > 1 ? static_cast<double>(samples - 1) : 1.0;
  return std::sqrt(s / n);
}

}  // namespace coml
