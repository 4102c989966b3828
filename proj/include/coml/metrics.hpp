#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <vector>

namespace coml {

// sqrt((1/N) sum_{k=0}^{N} |s_k|^2) over N + 1 samples s_0..s_N. A single
// sample is treated as N = 1.
double rms(std::span<const double> flat, std::size_t dim);

template <int D>
double rms(const std::vector<Eigen::Matrix<double, D, 1>>& series) {
  const std::size_t dim = series.empty() ? 1 : static_cast<std::size_t>(series[0].size());
  std::vector<double> flat;
  flat.reserve(series.size() * dim);
  for (const auto& v : series) flat.insert(flat.end(), v.data(), v.data() + v.size());
  return rms(flat, dim);
}

}  // namespace coml
