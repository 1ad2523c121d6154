#include <catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "echodistill/synthgen.hpp"
#include "test_helpers.hpp"

using namespace echodistill;
using Catch::Approx;

namespace {

// normalized correlation of one frame against a class template
double frame_correlation(const AudioClip& clip, int frame, const std::vector<double>& tmpl) {
  double dot = 0.0, nf = 0.0, nt = 0.0;
  for (int j = 0; j < clip.feature_dim; ++j) {
    dot += clip.at(frame, j) * tmpl[j];
    nf += clip.at(frame, j) * clip.at(frame, j);
    nt += tmpl[j] * tmpl[j];
  }
  if (nf == 0.0 || nt == 0.0) return 0.0;
  return dot / std::sqrt(nf * nt);
}

double realized_snr_db(const AudioClip& clean, const AudioClip& noisy) {
  double p_s = clean.mean_power();
  double p_n = 0.0;
  for (size_t i = 0; i < clean.data.size(); ++i) {
    double d = noisy.data[i] - clean.data[i];
    p_n += d * d;
  }
  p_n /= static_cast<double>(clean.data.size());
  return 10.0 * std::log10(p_s / p_n);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("clean audio without evidence window carries the class template in every frame") {
  GenSpec spec;
  RngStream s = rng_stream(1, "0", "clean");
  AudioClip clip = synth_clean_audio(0, spec, s);
  auto tmpl = class_template(spec, 0);
  for (int t = 0; t < clip.frame_count; ++t)
    REQUIRE(frame_correlation(clip, t, tmpl) > 0.5);
  REQUIRE(clip.mean_power() == Approx(1.0).margin(1e-12));
}

TEST_CASE("evidence window confines the class template to its frames") {
  GenSpec spec;
  spec.evidence_window = {{10, 5}};
  RngStream s = rng_stream(2, "0", "clean");
  AudioClip clip = synth_clean_audio(0, spec, s);
  auto tmpl = class_template(spec, 0);
  for (int t = 0; t < clip.frame_count; ++t) {
    double c = frame_correlation(clip, t, tmpl);
    if (t >= 10 && t < 15)
      REQUIRE(c > 0.5);
    else
      REQUIRE(std::abs(c) < 0.1);
  }
}

TEST_CASE("clean synthesis is deterministic in the stream") {
  GenSpec spec;
  RngStream a = rng_stream(3, "7", "clean");
  RngStream b = rng_stream(3, "7", "clean");
  AudioClip x = synth_clean_audio(2, spec, a);
  AudioClip y = synth_clean_audio(2, spec, b);
  REQUIRE(x.data == y.data);
}

TEST_CASE("synth_clean_audio rejects an out-of-range class") {
  GenSpec spec;
  RngStream s = rng_stream(0, "0", "clean");
  REQUIRE_THROWS_AS(synth_clean_audio(-1, spec, s), ValidationError);
  REQUIRE_THROWS_AS(synth_clean_audio(spec.num_classes, spec, s), ValidationError);
}

TEST_CASE("mix_noise realizes the requested noise power exactly") {
  GenSpec spec;
  RngStream cs = rng_stream(4, "0", "clean");
  AudioClip clean = synth_clean_audio(1, spec, cs);
  double p_s = clean.mean_power();

  struct Case {
    double snr_db, expected_noise_power;
  };
  for (Case c : {Case{0.0, 1.0}, Case{10.0, 0.1}, Case{-10.0, 10.0}}) {
    RngStream ns = rng_stream(4, "0", "noise");
    AudioClip noisy = mix_noise(clean, c.snr_db, ns);
    double p_n = 0.0;
    for (size_t i = 0; i < clean.data.size(); ++i) {
      double d = noisy.data[i] - clean.data[i];
      p_n += d * d;
    }
    p_n /= static_cast<double>(clean.data.size());
    REQUIRE(p_n == Approx(c.expected_noise_power * p_s).epsilon(1e-9));
    REQUIRE(realized_snr_db(clean, noisy) == Approx(c.snr_db).margin(0.1));
  }
}

TEST_CASE("mix_noise rejects non-finite input") {
  AudioClip bad;
  bad.frame_count = 1;
  bad.feature_dim = 2;
  bad.data = {1.0, std::numeric_limits<double>::quiet_NaN()};
  RngStream s = rng_stream(0, "0", "noise");
  REQUIRE_THROWS_AS(mix_noise(bad, 0.0, s), NonFiniteInput);
}

TEST_CASE("gen_dataset writes validated records on the requested grid") {
  auto w = testutil::make_world("gen_grid", 100, 5, {-10, -5, 0, 5, 10, 20, 30});
  REQUIRE(w.data.size() == 100);
  std::set<double> grid(w.spec.snr_grid.begin(), w.spec.snr_grid.end());
  for (const auto& inst : w.data) {
    REQUIRE(grid.count(inst.snr_db) == 1);
    AudioClip clean = read_audio(w.dir / inst.clean_audio_ref);
    AudioClip noisy = read_audio(w.dir / inst.noisy_audio_ref);
    REQUIRE(clean.frame_count == noisy.frame_count);
    REQUIRE(clean.feature_dim == noisy.feature_dim);
    REQUIRE(realized_snr_db(clean, noisy) == Approx(inst.snr_db).margin(0.1));
  }
}

TEST_CASE("gen_dataset with zero instances writes an empty dataset") {
  GenSpec spec;
  spec.num_instances = 0;
  auto dir = testutil::tmp_dir("gen_empty");
  GenManifest m = gen_dataset(spec, dir);
  REQUIRE(m.num_instances == 0);
  REQUIRE(m.count_per_noise_type.empty());
  REQUIRE(slurp(dir / "dataset.jsonl").empty());
}

TEST_CASE("gen_dataset is byte-deterministic for a fixed spec and seed") {
  GenSpec spec;
  spec.num_instances = 20;
  spec.seed = 9;
  auto d1 = testutil::tmp_dir("gen_det_a");
  auto d2 = testutil::tmp_dir("gen_det_b");
  gen_dataset(spec, d1);
  gen_dataset(spec, d2);
  REQUIRE(slurp(d1 / "dataset.jsonl") == slurp(d2 / "dataset.jsonl"));
  REQUIRE(slurp(d1 / "audio/0_noisy.edau") == slurp(d2 / "audio/0_noisy.edau"));
}

TEST_CASE("evidence-window oracle: window frames classify perfectly, other frames do not") {
  GenSpec spec;
  spec.num_instances = 40;
  spec.seed = 13;
  spec.snr_grid = {30.0};
  spec.evidence_window = {{10, 5}};
  auto dir = testutil::tmp_dir("gen_oracle");
  gen_dataset(spec, dir);
  auto data = load_dataset(dir / "dataset.jsonl");

  auto classify = [&](const AudioClip& clip, int lo, int hi) {
    // argmax class of the mean frame restricted to [lo, hi)
    std::vector<double> mean(clip.feature_dim, 0.0);
    for (int t = lo; t < hi; ++t)
      for (int j = 0; j < clip.feature_dim; ++j) mean[j] += clip.at(t, j);
    int best = 0;
    for (int c = 1; c < spec.num_classes; ++c)
      if (mean[c] > mean[best]) best = c;
    return best;
  };

  int window_right = 0, outside_right = 0;
  for (const auto& inst : data) {
    AudioClip clean = read_audio(dir / inst.clean_audio_ref);
    int truth = inst.target_index();
    if (classify(clean, 10, 15) == truth) window_right++;
    if (classify(clean, 20, 64) == truth) outside_right++;
  }
  REQUIRE(window_right == static_cast<int>(data.size()));
  // non-window frames carry no class signal: at or below chance
  REQUIRE(outside_right <= static_cast<int>(data.size()) / 2);
}

TEST_CASE("GenSpec validation rejects malformed shapes") {
  GenSpec spec;
  spec.evidence_window = {{60, 10}};
  REQUIRE_THROWS_AS(spec.validate(), ValidationError);
  spec = GenSpec{};
  spec.snr_grid.clear();
  REQUIRE_THROWS_AS(spec.validate(), ValidationError);
  spec = GenSpec{};
  spec.num_classes = 1;
  REQUIRE_THROWS_AS(spec.validate(), ValidationError);
}
