#include <catch_amalgamated.hpp>

#include "echodistill/rollout.hpp"
#include "test_helpers.hpp"

using namespace echodistill;
using Catch::Approx;

namespace {

const std::vector<std::string> kChoices = {"Airplane", "Motorcycle", "Train", "Sports car"};

DatasetInstance table_instance() {
  DatasetInstance inst;
  inst.id = "19452";
  inst.prompt = prompt_templates()[0];
  inst.choices = kChoices;
  inst.target = "Airplane";
  inst.noise_type = "water";
  inst.snr_db = 30.0;
  return inst;
}

}  // namespace

TEST_CASE("extract_answer reads the last choice letter before EOS") {
  int filler = vocab::kFirstFiller;
  TokenSeq s1{{vocab::kBos, filler, vocab::kAnswerMarker, vocab::choice_token(2), vocab::kEos}};
  REQUIRE(extract_answer(s1, kChoices) == kChoices[2]);

  TokenSeq s2{{vocab::kBos, vocab::choice_token(0), filler, vocab::choice_token(1), vocab::kEos}};
  REQUIRE(extract_answer(s2, kChoices) == kChoices[1]);

  TokenSeq s3{{vocab::kBos, filler, vocab::kEos}};
  REQUIRE_FALSE(extract_answer(s3, kChoices).has_value());
}

TEST_CASE("extract_answer ignores letters after EOS and beyond the choice list") {
  TokenSeq after_eos{{vocab::kBos, vocab::choice_token(1), vocab::kEos, vocab::choice_token(3)}};
  REQUIRE(extract_answer(after_eos, kChoices) == kChoices[1]);

  // letter D with only two choices is not a valid answer
  TokenSeq beyond{{vocab::kBos, vocab::choice_token(3), vocab::kEos}};
  REQUIRE_FALSE(extract_answer(beyond, {"Airplane", "Train"}).has_value());
}

TEST_CASE("task_reward scores match, mismatch and format failure") {
  DatasetInstance inst = table_instance();
  Candidate c;
  c.extracted_answer = "Airplane";
  REQUIRE(task_reward(c, inst) == 1.0);
  c.extracted_answer = "Train";
  REQUIRE(task_reward(c, inst) == 0.0);
  c.extracted_answer.reset();
  REQUIRE(task_reward(c, inst) == -1.0);
}

TEST_CASE("sample_group yields K well-formed candidates") {
  const auto& w = testutil::warmstart_world();
  const PolicyParams& p = testutil::warmstarted_policy();
  const DatasetInstance& inst = w.data[0];
  AudioClip noisy = read_audio(w.dir / inst.noisy_audio_ref);
  TrainConfig cfg;
  cfg.group_size = 8;
  RngStream s = rng_stream(3, inst.id, "rollout:0");
  auto group = sample_group(p, inst, noisy, cfg, s);
  REQUIRE(group.size() == 8);
  for (const auto& c : group) {
    REQUIRE_FALSE(c.tokens.empty());
    REQUIRE(c.tokens.size() <= static_cast<size_t>(kMaxDecodeLen));
    REQUIRE((c.raw_reward == 1.0 || c.raw_reward == 0.0 || c.raw_reward == -1.0));
    if (c.extracted_answer) {
      bool in_choices = false;
      for (const auto& ch : inst.choices) in_choices |= (ch == *c.extracted_answer);
      REQUIRE(in_choices);
      REQUIRE(c.raw_reward >= 0.0);
    } else {
      REQUIRE(c.raw_reward == -1.0);
    }
  }
}

TEST_CASE("sample_group is deterministic in (params, instance, seed)") {
  const auto& w = testutil::warmstart_world();
  const PolicyParams& p = testutil::warmstarted_policy();
  const DatasetInstance& inst = w.data[1];
  AudioClip noisy = read_audio(w.dir / inst.noisy_audio_ref);
  TrainConfig cfg;
  RngStream s1 = rng_stream(5, inst.id, "rollout:7");
  RngStream s2 = rng_stream(5, inst.id, "rollout:7");
  auto a = sample_group(p, inst, noisy, cfg, s1);
  auto b = sample_group(p, inst, noisy, cfg, s2);
  REQUIRE(a.size() == b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].tokens == b[k].tokens);
    REQUIRE(a[k].avg_logprob_student == b[k].avg_logprob_student);
    REQUIRE(a[k].raw_reward == b[k].raw_reward);
  }
}

TEST_CASE("near-zero temperature collapses the group onto the greedy decode") {
  const auto& w = testutil::warmstart_world();
  const PolicyParams& p = testutil::warmstarted_policy();
  const DatasetInstance& inst = w.data[2];
  AudioClip clean = read_audio(w.dir / inst.clean_audio_ref);
  TrainConfig cfg;
  cfg.group_size = 4;
  cfg.temperature = 1e-6;
  RngStream s = rng_stream(8, inst.id, "rollout:0");
  auto group = sample_group(p, inst, clean, cfg, s);
  TokenSeq greedy =
      greedy_decode(p, prompt_id(inst.prompt), encode_audio(p, clean));
  for (const auto& c : group) REQUIRE(c.tokens == greedy);
}

TEST_CASE("a warm-started policy beats chance on clean audio") {
  GenSpec spec;
  spec.num_instances = 100;
  spec.seed = 21;
  spec.snr_grid = {30.0};
  auto dir = testutil::tmp_dir("reward_world");
  gen_dataset(spec, dir);
  auto data = load_dataset(dir / "dataset.jsonl");

  const PolicyParams& p = testutil::warmstarted_policy();
  TrainConfig cfg;
  cfg.group_size = 4;
  double reward_sum = 0.0;
  int n = 0, failures = 0;
  for (const auto& inst : data) {
    AudioClip clean = read_audio(dir / inst.clean_audio_ref);
    RngStream s = rng_stream(21, inst.id, "rollout:0");
    for (const auto& c : sample_group(p, inst, clean, cfg, s)) {
      reward_sum += c.raw_reward;
      if (!c.extracted_answer) failures++;
      n++;
    }
  }
  double mean_r = reward_sum / n;
  double p_fail = static_cast<double>(failures) / n;
  double chance = 0.25 * (1.0 - p_fail) - p_fail;
  REQUIRE(mean_r > chance);
}
