#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "meanspace/meanspace.hpp"

namespace mst {

using namespace meanspace;

inline Volume random_volume(const GridSpec& g, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Volume v(g);
  for (double& x : v.data) x = u(rng);
  return v;
}

inline VectorField random_field(const GridSpec& g, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> u(-amp, amp);
  VectorField f(g);
  for (double& x : f.data) x = u(rng);
  return f;
}

inline LabelMap random_mask(const GridSpec& g, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution b(p);
  LabelMap m(g, LabelKind::binary);
  for (double& x : m.data) x = b(rng) ? 1.0 : 0.0;
  return m;
}

inline LabelMap random_probabilities(const GridSpec& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelMap m(g, LabelKind::probabilistic);
  for (double& x : m.data) x = u(rng);
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ||a - b|| / ||b|| over the whole vector.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

// Central differences of f with respect to every element of params[i].data.
template <class F>
std::vector<std::vector<double>> numeric_gradient(std::vector<VectorField> params, F&& f, double h = 1e-6) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> g(params[i].data.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double x0 = params[i].data[k];
      params[i].data[k] = x0 + h;
      const double fp = f(params);
      params[i].data[k] = x0 - h;
      const double fm = f(params);
      params[i].data[k] = x0;
      g[k] = (fp - fm) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<double> flatten(const std::vector<VectorField>& fs) {
  std::vector<double> out;
  for (const auto& f : fs) out.insert(out.end(), f.data.begin(), f.data.end());
  return out;
}

inline std::vector<double> flatten(const std::vector<std::vector<double>>& vs) {
  std::vector<double> out;
  for (const auto& v : vs) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Indices of a mask's foreground voxels, by brute force.
inline std::int64_t count_on(const LabelMap& m) {
  std::int64_t n = 0;
  for (double v : m.data) n += v > 0.5 ? 1 : 0;
  return n;
}

}  // namespace mst
