#pragma once

// Synthetic paired clean/noisy dataset generation. "Audio" is feature
// frames: the class-discriminative signal is a fixed orthogonal unit
// template injected into all frames or only into the evidence window,
// on top of a low-amplitude background. Noise is additive Gaussian scaled
// to the requested SNR; the noise_type tag is metadata only.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echodistill/io.hpp"
#include "echodistill/rng.hpp"
#include "echodistill/types.hpp"

namespace echodistill {

struct GenSpec {
  int num_instances = 100;
  int feature_dim = 16;  // D
  int frame_count = 64;  // T_a
  int num_classes = 4;
  std::vector<double> snr_grid = {-10, -5, 0, 5, 10, 20, 30};
  std::vector<std::string> noise_types = {"water", "wind", "traffic", "babble"};
  std::optional<std::pair<int, int>> evidence_window;  // (start, length)
  std::int64_t seed = 0;

  void validate() const {
    if (num_instances < 0) throw ValidationError("num_instances must be >= 0");
    if (feature_dim <= 0 || frame_count <= 0) throw ValidationError("bad clip shape");
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (num_classes > vocab::kMaxChoices || num_classes > feature_dim)
      throw ValidationError("num_classes exceeds supported range");
    if (snr_grid.empty()) throw ValidationError("snr_grid must be non-empty");
    if (noise_types.empty()) throw ValidationError("noise_types must be non-empty");
    if (evidence_window) {
      auto [start, len] = *evidence_window;
      if (start < 0 || len <= 0 || start + len > frame_count)
        throw ValidationError("evidence_window outside clip");
    }
  }
};

// fixed orthogonal unit template for a class: basis vector e_c
inline std::vector<double> class_template(const GenSpec& spec, int class_index) {
  std::vector<double> t(spec.feature_dim, 0.0);
  t[class_index] = 1.0;
  return t;
}

inline const std::vector<std::string>& class_labels() {
  static const std::vector<std::string> labels = {"Airplane", "Motorcycle", "Train",
                                                  "Sports car"};
  return labels;
}

// Clean clip: background occupies feature dims >= num_classes (exactly
// orthogonal to every class template), signal frames add sqrt(D) * e_c.
// The whole clip is rescaled so mean power over all entries is 1.0.
inline AudioClip synth_clean_audio(int class_index, const GenSpec& spec, RngStream& stream) {
  if (class_index < 0 || class_index >= spec.num_classes)
    throw ValidationError("class_index out of range");
  const int D = spec.feature_dim, T = spec.frame_count;
  AudioClip clip;
  clip.frame_count = T;
  clip.feature_dim = D;
  clip.data.assign(static_cast<size_t>(T) * D, 0.0);
  constexpr double kBackgroundScale = 0.05;
  for (int t = 0; t < T; ++t)
    for (int j = spec.num_classes; j < D; ++j)
      clip.at(t, j) = kBackgroundScale * stream.gaussian();
  int start = 0, len = T;
  if (spec.evidence_window) {
    start = spec.evidence_window->first;
    len = spec.evidence_window->second;
  }
  double amp = std::sqrt(static_cast<double>(D));
  for (int t = start; t < start + len; ++t) clip.at(t, class_index) += amp;
  double p = clip.mean_power();
  double scale = 1.0 / std::sqrt(p);
  for (auto& v : clip.data) v *= scale;
  return clip;
}

// clean + zero-mean Gaussian noise rescaled so the realized SNR is exact
inline AudioClip mix_noise(const AudioClip& clean, double snr_db, RngStream& stream) {
  if (!clean.all_finite()) throw NonFiniteInput("clean clip contains non-finite values");
  double p_s = clean.mean_power();
  if (!(p_s > 0.0)) throw ValidationError("clean clip must have positive power");
  double p_n_target = p_s / std::pow(10.0, snr_db / 10.0);
  std::vector<double> noise(clean.data.size());
  double p_n = 0.0;
  for (auto& v : noise) {
    v = stream.gaussian();
    p_n += v * v;
  }
  p_n /= static_cast<double>(noise.size());
  double scale = std::sqrt(p_n_target / p_n);
  AudioClip out = clean;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += scale * noise[i];
  return out;
}

struct GenManifest {
  std::string jsonl_path;
  int num_instances = 0;
  std::map<std::string, int> count_per_noise_type;
  std::map<std::string, int> count_per_snr;
};

inline GenManifest gen_dataset(const GenSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  if (ec) throw IoFailure("cannot create output dir: " + out_dir.string());

  std::filesystem::path jsonl = out_dir / "dataset.jsonl";
  std::ofstream out(jsonl);
  if (!out) throw IoFailure("cannot open for write: " + jsonl.string());

  GenManifest manifest;
  manifest.jsonl_path = jsonl.string();
  manifest.num_instances = spec.num_instances;

  const auto& labels = class_labels();
  std::vector<std::string> choices(labels.begin(), labels.begin() + spec.num_classes);
  const auto& prompts = prompt_templates();

  for (int i = 0; i < spec.num_instances; ++i) {
    std::string id = std::to_string(i);
    RngStream meta = rng_stream(spec.seed, id, "meta");
    int cls = static_cast<int>(meta.uniform_int(spec.num_classes));
    double snr = spec.snr_grid[meta.uniform_int(spec.snr_grid.size())];
    std::string noise_type = spec.noise_types[meta.uniform_int(spec.noise_types.size())];
    std::string prompt = prompts[meta.uniform_int(prompts.size())];

    RngStream clean_stream = rng_stream(spec.seed, id, "clean");
    AudioClip clean = synth_clean_audio(cls, spec, clean_stream);
    RngStream noise_stream = rng_stream(spec.seed, id, "noise");
    AudioClip noisy = mix_noise(clean, snr, noise_stream);

    std::string clean_rel = "audio/" + id + "_clean.edau";
    std::string noisy_rel = "audio/" + id + "_noisy.edau";
    write_audio(out_dir / clean_rel, clean);
    write_audio(out_dir / noisy_rel, noisy);

    nlohmann::json rec = {
        {"id", id},
        {"prompt", prompt},
        {"noisy_audio_path", noisy_rel},
        {"clean_audio_path", clean_rel},
        {"choices", choices},
        {"target", choices[cls]},
        {"noise_type", noise_type},
        {"snr", snr},
    };
    // round-trip through validation so every emitted record is well-formed
    validate_instance(rec, out_dir, true);
    out << rec.dump() << "\n";

    manifest.count_per_noise_type[noise_type]++;
    manifest.count_per_snr[nlohmann::json(snr).dump()]++;
  }
  out.close();
  if (!out) throw IoFailure("write failed: " + jsonl.string());

  nlohmann::json mj = {
      {"jsonl_path", manifest.jsonl_path},
      {"num_instances", manifest.num_instances},
      {"count_per_noise_type", manifest.count_per_noise_type},
      {"count_per_snr", manifest.count_per_snr},
  };
  std::ofstream mout(out_dir / "manifest.json");
  mout << mj.dump(2) << "\n";
  return manifest;
}

}  // namespace echodistill
