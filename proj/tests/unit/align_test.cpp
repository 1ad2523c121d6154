#include <catch_amalgamated.hpp>

#include "echodistill/align.hpp"
#include "echodistill/optim.hpp"
#include "test_helpers.hpp"

using namespace echodistill;
using Catch::Approx;

namespace {

PolicyParams random_policy(PolicyDims dims, std::int64_t seed, double scale = 0.1) {
  RngStream s = rng_stream(seed, "policy", "init");
  return PolicyParams::init(dims, s, scale);
}

AudioClip random_clip(int frames, int dim, std::int64_t seed) {
  AudioClip c;
  c.frame_count = frames;
  c.feature_dim = dim;
  c.data.resize(static_cast<size_t>(frames) * dim);
  RngStream s = rng_stream(seed, "clip", "fill");
  for (auto& v : c.data) v = s.gaussian();
  return c;
}

DatasetInstance simple_instance(std::int64_t seed) {
  DatasetInstance inst;
  inst.id = "i" + std::to_string(seed);
  inst.prompt = prompt_templates()[0];
  inst.choices = {"Airplane", "Motorcycle", "Train", "Sports car"};
  inst.target = "Airplane";
  inst.noise_type = "water";
  inst.snr_db = 0.0;
  return inst;
}

}  // namespace

TEST_CASE("teacher_greedy guidance equals the teacher greedy decode") {
  PolicyParams teacher = random_policy({}, 1);
  DatasetInstance inst = simple_instance(1);
  AudioClip clean = random_clip(8, teacher.dims.audio_dim, 1);
  TokenSeq g1 = select_guidance(teacher, inst, clean, {}, GuidanceMode::kTeacherGreedy);
  TokenSeq g2 = select_guidance(teacher, inst, clean, {}, GuidanceMode::kTeacherGreedy);
  REQUIRE(g1 == g2);
  REQUIRE(g1 ==
          greedy_decode(teacher, prompt_id(inst.prompt), encode_audio(teacher, clean)));
}

TEST_CASE("likelihood guidance picks the candidate the teacher scores highest") {
  PolicyParams teacher = random_policy({}, 2);
  DatasetInstance inst = simple_instance(2);
  AudioClip clean = random_clip(8, teacher.dims.audio_dim, 2);
  std::vector<Candidate> cands;
  for (int c = 0; c < 4; ++c) {
    Candidate cand;
    cand.tokens = canonical_answer(c);
    cands.push_back(cand);
  }
  TokenSeq chosen = select_guidance(teacher, inst, clean, cands,
                                    GuidanceMode::kTeacherLikelihoodBestCandidate);
  auto h = encode_audio(teacher, clean);
  int pid = prompt_id(inst.prompt);
  int best = 0;
  double best_lp = sequence_logprob(teacher, pid, h, cands[0].tokens).avg_logprob;
  for (int c = 1; c < 4; ++c) {
    double lp = sequence_logprob(teacher, pid, h, cands[c].tokens).avg_logprob;
    if (lp > best_lp) {
      best_lp = lp;
      best = c;
    }
  }
  REQUIRE(chosen == cands[best].tokens);
}

TEST_CASE("likelihood guidance on an empty candidate set is an error") {
  PolicyParams teacher = random_policy({}, 3);
  DatasetInstance inst = simple_instance(3);
  AudioClip clean = random_clip(4, teacher.dims.audio_dim, 3);
  REQUIRE_THROWS_AS(
      select_guidance(teacher, inst, clean, {}, GuidanceMode::kTeacherLikelihoodBestCandidate),
      EmptyCandidateSet);
}

TEST_CASE("token_mask keeps content and drops BOS/EOS/PAD") {
  TokenSeq g{{vocab::kBos, vocab::kAnswerMarker, vocab::choice_token(2), vocab::kEos}};
  REQUIRE(token_mask(g) == std::vector<int>{0, 1, 1, 0});
  REQUIRE(token_mask(g).size() == g.size());
  TokenSeq empty_content{{vocab::kBos, vocab::kEos}};
  REQUIRE_THROWS_AS(token_mask(empty_content), AllMasked);
  TokenSeq with_pad{{vocab::kBos, vocab::kFirstFiller, vocab::kPad, vocab::kEos}};
  REQUIRE(token_mask(with_pad) == std::vector<int>{0, 1, 0, 0});
}

TEST_CASE("KL of a one-hot teacher against a uniform student is ln V") {
  std::vector<double> q = {1.0, 0.0, 0.0, 0.0};
  std::vector<double> p = {0.25, 0.25, 0.25, 0.25};
  REQUIRE(kl_divergence(q, p) == Approx(std::log(4.0)).margin(1e-12));
  REQUIRE(kl_divergence(p, p) == Approx(0.0).margin(1e-12));
}

TEST_CASE("distillation loss vanishes when teacher, student and clips coincide") {
  PolicyParams p = random_policy({}, 4);
  DatasetInstance inst = simple_instance(4);
  AudioClip clip = random_clip(8, p.dims.audio_dim, 4);
  TokenSeq guidance = canonical_answer(1);
  GuidanceTrace t = distill_loss(p, p, inst, clip, clip, guidance);
  REQUIRE(t.distill_loss == Approx(0.0).margin(1e-12));
  REQUIRE(t.mask.size() == guidance.size());
  REQUIRE(t.teacher_dists.size() == guidance.size());
  REQUIRE(t.student_dists.size() == guidance.size());
}

TEST_CASE("distillation loss is non-negative across randomized cases") {
  for (int trial = 0; trial < 50; ++trial) {
    PolicyParams teacher = random_policy({}, 100 + trial, 0.3);
    PolicyParams student = random_policy({}, 200 + trial, 0.3);
    DatasetInstance inst = simple_instance(trial);
    AudioClip clean = random_clip(6, teacher.dims.audio_dim, 300 + trial);
    AudioClip noisy = random_clip(6, teacher.dims.audio_dim, 400 + trial);
    TokenSeq guidance = canonical_answer(trial % 4);
    GuidanceTrace t = distill_loss(teacher, student, inst, noisy, clean, guidance);
    REQUIRE(t.distill_loss >= 0.0);
    REQUIRE(std::isfinite(t.distill_loss));
  }
}

TEST_CASE("only masked-in positions contribute to the distillation loss") {
  PolicyParams teacher = random_policy({}, 5, 0.3);
  PolicyParams student = random_policy({}, 6, 0.3);
  DatasetInstance inst = simple_instance(5);
  AudioClip clean = random_clip(6, teacher.dims.audio_dim, 5);
  AudioClip noisy = random_clip(6, teacher.dims.audio_dim, 6);
  TokenSeq guidance{{vocab::kBos, vocab::kAnswerMarker, vocab::choice_token(0),
                     vocab::kFirstFiller, vocab::kEos}};
  GuidanceTrace t = distill_loss(teacher, student, inst, noisy, clean, guidance);

  // oracle recomputation from the trace using only mask=1 positions; the
  // distributions recorded at masked-out positions are irrelevant
  double kl_sum = 0.0;
  int mass = 0;
  for (size_t i = 0; i < guidance.size(); ++i) {
    if (!t.mask[i]) continue;
    kl_sum += kl_divergence(t.teacher_dists[i].probs, t.student_dists[i].probs);
    mass++;
  }
  REQUIRE(t.distill_loss == Approx(kl_sum / mass).margin(1e-12));

  auto perturbed = t;
  for (size_t i = 0; i < guidance.size(); ++i)
    if (!t.mask[i])
      for (auto& v : perturbed.student_dists[i].probs) v = 1.0 / perturbed.student_dists[i].probs.size();
  double kl_sum2 = 0.0;
  for (size_t i = 0; i < guidance.size(); ++i)
    if (t.mask[i])
      kl_sum2 += kl_divergence(perturbed.teacher_dists[i].probs, perturbed.student_dists[i].probs);
  REQUIRE(kl_sum2 / mass == Approx(t.distill_loss).margin(1e-12));
}

TEST_CASE("tape distillation loss reproduces the plain value exactly") {
  PolicyParams teacher = random_policy({}, 7, 0.3);
  PolicyParams student = random_policy({}, 8, 0.3);
  DatasetInstance inst = simple_instance(7);
  AudioClip clean = random_clip(6, teacher.dims.audio_dim, 7);
  AudioClip noisy = random_clip(6, teacher.dims.audio_dim, 8);
  TokenSeq guidance = canonical_answer(2);

  double plain = distill_loss(teacher, student, inst, noisy, clean, guidance).distill_loss;
  Tape tape;
  GradRecord grads(student);
  PolicyTape st{&tape, &student, &grads};
  Var loss = distill_loss_t(teacher, st, inst, noisy, clean, guidance);
  REQUIRE(tape.scalar(loss) == Approx(plain).margin(1e-10));
}

TEST_CASE("student gradient of the distillation loss matches finite differences") {
  PolicyDims dims{8, 6, 5, 2};
  PolicyParams teacher = random_policy(dims, 9, 0.4);
  PolicyParams student = random_policy(dims, 10, 0.4);
  DatasetInstance inst = simple_instance(9);
  AudioClip clean = random_clip(4, dims.audio_dim, 9);
  AudioClip noisy = random_clip(4, dims.audio_dim, 10);
  TokenSeq guidance{{vocab::kBos, vocab::kAnswerMarker, vocab::choice_token(1), vocab::kEos}};

  Tape tape;
  GradRecord analytic(student);
  PolicyTape st{&tape, &student, &analytic};
  tape.backward(distill_loss_t(teacher, st, inst, noisy, clean, guidance));

  GradRecord fd = finite_diff_grad(
      student,
      [&](const PolicyParams& q) {
        return distill_loss(teacher, q, inst, noisy, clean, guidance).distill_loss;
      },
      1e-4);

  auto ab = analytic.g.blocks();
  auto fb = fd.g.blocks();
  for (size_t b = 0; b < ab.size(); ++b) {
    const auto& ga = *ab[b].data;
    const auto& gf = *fb[b].data;
    for (size_t i = 0; i < ga.size(); ++i) {
      double denom = std::max({std::abs(ga[i]), std::abs(gf[i]), 1e-6});
      REQUIRE(std::abs(ga[i] - gf[i]) / denom < 1e-3);
    }
  }
}
