#pragma once

// Audio-aware reward shaping and group-relative advantages.

#include <cmath>
#include <vector>

#include "echodistill/types.hpp"

namespace echodistill {

struct ShapedGroup {
  double similarity = 1.0;
  std::vector<double> raw_rewards;
  std::vector<double> shaped_rewards;
  std::vector<double> advantages;
  double mean = 0.0;
  double stddev = 0.0;
};

// s = exp(-L_distill), in (0, 1]
inline double similarity_score(double distill_loss) {
  if (distill_loss < 0.0) throw NegativeLoss("distill loss must be >= 0");
  return std::exp(-distill_loss);
}

// r_bar = clip(r + beta * 1[r>0] * s, -1, 2); s is per-instance and shared
// by every positive-reward candidate in the group
inline std::vector<double> shape_rewards(const std::vector<double>& raw, double s,
                                         double beta) {
  std::vector<double> out;
  out.reserve(raw.size());
  for (double r : raw) {
    double shaped = r + (r > 0.0 ? beta * s : 0.0);
    out.push_back(std::min(std::max(shaped, -1.0), 2.0));
  }
  return out;
}

// A_k = (r_k - mean) / (stddev + eps), population standard deviation
inline std::vector<double> group_advantages(const std::vector<double>& shaped, double eps,
                                            double* mean_out = nullptr,
                                            double* stddev_out = nullptr) {
  if (shaped.size() < 2) throw ValidationError("group_advantages needs K >= 2");
  if (!(eps > 0.0)) throw ValidationError("eps must be > 0");
  double mu = 0.0;
  for (double r : shaped) mu += r;
  mu /= static_cast<double>(shaped.size());
  double var = 0.0;
  for (double r : shaped) var += (r - mu) * (r - mu);
  var /= static_cast<double>(shaped.size());
  double sigma = std::sqrt(var);
  if (mean_out) *mean_out = mu;
  if (stddev_out) *stddev_out = sigma;
  std::vector<double> out;
  out.reserve(shaped.size());
  for (double r : shaped) out.push_back((r - mu) / (sigma + eps));
  return out;
}

inline ShapedGroup shape_group(const std::vector<double>& raw, double distill_loss,
                               double beta, double eps) {
  ShapedGroup g;
  g.similarity = similarity_score(distill_loss);
  g.raw_rewards = raw;
  g.shaped_rewards = shape_rewards(raw, g.similarity, beta);
  g.advantages = group_advantages(g.shaped_rewards, eps, &g.mean, &g.stddev);
  return g;
}

}  // namespace echodistill
