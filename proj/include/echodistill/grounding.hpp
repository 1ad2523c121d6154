#pragma once

// Sparse-audio-grounding diagnostics: forced-decoding decision margins,
// sliding-window zero-ablation effects d, and the trajectory-level audio
// anchor g (margin gain of real audio over the all-zero clip).

#include <algorithm>
#include <limits>
#include <map>
#include <vector>

#include "echodistill/io.hpp"
#include "echodistill/policy.hpp"
#include "echodistill/types.hpp"

namespace echodistill {

struct WindowKey {
  int start = 0;
  int length = 0;
  bool operator<(const WindowKey& o) const {
    return start != o.start ? start < o.start : length < o.length;
  }
};

struct GroundingReport {
  std::string instance_id;
  double margin = 0.0;
  std::map<WindowKey, double> window_effects;
  double audio_anchor = 0.0;
  int window_size = 0;
  int stride = 0;
};

// forced-decoding score of one choice: average log-probability of its
// canonical answer sequence
inline double choice_score(const PolicyParams& params, int pid,
                           const std::vector<double>& audio_h, int choice_index) {
  return sequence_logprob(params, pid, audio_h, canonical_answer(choice_index)).avg_logprob;
}

// M = score(correct) - max over incorrect choices
inline double decision_margin(const PolicyParams& params, const DatasetInstance& inst,
                              const AudioClip& clip) {
  if (inst.choices.size() < 2) throw ValidationError("decision_margin needs >= 2 choices");
  int pid = prompt_id(inst.prompt);
  std::vector<double> audio_h = encode_audio(params, clip);
  int correct = inst.target_index();
  double correct_score = 0.0;
  double best_incorrect = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < static_cast<int>(inst.choices.size()); ++c) {
    double s = choice_score(params, pid, audio_h, c);
    if (c == correct)
      correct_score = s;
    else
      best_incorrect = std::max(best_incorrect, s);
  }
  return correct_score - best_incorrect;
}

inline AudioClip zero_window(const AudioClip& clip, int start, int length) {
  AudioClip out = clip;
  int end = std::min(start + length, clip.frame_count);
  for (int t = start; t < end; ++t)
    for (int j = 0; j < clip.feature_dim; ++j) out.at(t, j) = 0.0;
  return out;
}

// d_w = M(a) - M(a with window w zero-filled), for each tiling window
inline std::map<WindowKey, double> window_ablation(const PolicyParams& params,
                                                   const DatasetInstance& inst,
                                                   const AudioClip& clip, int window_size,
                                                   int stride) {
  if (window_size <= 0 || window_size > clip.frame_count)
    throw ValidationError("window_size out of range");
  if (stride <= 0) throw ValidationError("stride must be > 0");
  double base = decision_margin(params, inst, clip);
  std::map<WindowKey, double> out;
  for (int start = 0; start + window_size <= clip.frame_count; start += stride) {
    AudioClip ablated = zero_window(clip, start, window_size);
    out[{start, window_size}] = base - decision_margin(params, inst, ablated);
  }
  // trailing partial window when the stride does not tile exactly
  int covered = out.empty() ? 0 : out.rbegin()->first.start + window_size;
  if (covered < clip.frame_count) {
    int start = clip.frame_count - window_size;
    if (!out.count({start, window_size})) {
      AudioClip ablated = zero_window(clip, start, window_size);
      out[{start, window_size}] = base - decision_margin(params, inst, ablated);
    }
  }
  return out;
}

// g = M(a) - M(all-zero clip of the same shape)
inline double audio_anchor(const PolicyParams& params, const DatasetInstance& inst,
                           const AudioClip& clip) {
  AudioClip empty;
  empty.frame_count = clip.frame_count;
  empty.feature_dim = clip.feature_dim;
  empty.data.assign(clip.data.size(), 0.0);
  return decision_margin(params, inst, clip) - decision_margin(params, inst, empty);
}

inline GroundingReport grounding_report(const PolicyParams& params,
                                        const DatasetInstance& inst, const AudioClip& clip,
                                        int window_size = 8, int stride = 8) {
  GroundingReport r;
  r.instance_id = inst.id;
  r.margin = decision_margin(params, inst, clip);
  r.window_effects = window_ablation(params, inst, clip, window_size, stride);
  r.audio_anchor = audio_anchor(params, inst, clip);
  r.window_size = window_size;
  r.stride = stride;
  return r;
}

struct Histogram {
  std::vector<double> edges;   // bins + 1 edges
  std::vector<int> counts;     // per bin
};

inline Histogram histogram(const std::vector<double>& values, int bins) {
  if (bins < 2) throw ValidationError("histogram needs >= 2 bins");
  Histogram h;
  h.counts.assign(bins, 0);
  double lo = values.empty() ? 0.0 : values[0];
  double hi = lo;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;
  double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + b * width);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / width);
    if (b >= bins) b = bins - 1;
    h.counts[b]++;
  }
  return h;
}

// binned d-values and g-values across a set of reports
inline std::pair<Histogram, Histogram> grounding_histogram(
    const std::vector<GroundingReport>& reports, int bins) {
  std::vector<double> d_values, g_values;
  for (const auto& r : reports) {
    for (const auto& [w, d] : r.window_effects) d_values.push_back(d);
    g_values.push_back(r.audio_anchor);
  }
  return {histogram(d_values, bins), histogram(g_values, bins)};
}

}  // namespace echodistill
