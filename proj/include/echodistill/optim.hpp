#pragma once

// Importance ratios, clipped group-relative policy loss, the combined
// training loss, Adam updates, supervised warm-start, and the
// finite-difference gradient oracle.
//
// A training step freezes a rollout context per instance (candidates,
// guidance, advantages, reference scores); the differentiable loss is then
// a pure function of the student parameters given that context. The
// finite-difference oracle differentiates exactly the same function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include "echodistill/align.hpp"
#include "echodistill/io.hpp"
#include "echodistill/policy.hpp"
#include "echodistill/rollout.hpp"
#include "echodistill/shaping.hpp"
#include "echodistill/types.hpp"

namespace echodistill {

// rho = exp(l_student - l_ref); the reference score is detached
inline double importance_ratio(double avg_lp_student, double avg_lp_ref) {
  if (!std::isfinite(avg_lp_student) || !std::isfinite(avg_lp_ref))
    throw NonFiniteLoss("non-finite log-probability in importance ratio");
  return std::exp(avg_lp_student - avg_lp_ref);
}

// -(1/K) sum_k min(rho_k A_k, clip(rho_k, 1-eps, 1+eps) A_k)
inline double policy_loss(const std::vector<double>& ratios,
                          const std::vector<double>& advantages, double clip_eps) {
  if (ratios.size() != advantages.size())
    throw LengthMismatch("ratios and advantages differ in length");
  double sum = 0.0;
  for (size_t k = 0; k < ratios.size(); ++k) {
    double rho = ratios[k], a = advantages[k];
    double clipped = std::min(std::max(rho, 1.0 - clip_eps), 1.0 + clip_eps);
    sum += std::min(rho * a, clipped * a);
  }
  return -sum / static_cast<double>(ratios.size());
}

inline double total_loss(double loss_policy, double loss_distill, const TrainConfig& cfg) {
  return cfg.lambda_policy * loss_policy + cfg.lambda_distill * loss_distill;
}

// ---------------------------------------------------------------------------
// Adam

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  PolicyParams m, v;  // moment buffers, same layout as the params
  int t = 0;

  explicit Adam(const PolicyParams& params)
      : m(PolicyParams::zeros(params.dims)), v(PolicyParams::zeros(params.dims)) {}

  void step(PolicyParams& params, GradRecord& grads, double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    auto pb = params.blocks();
    auto gb = grads.g.blocks();
    auto mb = m.blocks();
    auto vb = v.blocks();
    for (size_t b = 0; b < pb.size(); ++b) {
      auto& w = *pb[b].data;
      auto& g = *gb[b].data;
      auto& mm = *mb[b].data;
      auto& vv = *vb[b].data;
      for (size_t i = 0; i < w.size(); ++i) {
        mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i];
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
        double mhat = mm[i] / bc1;
        double vhat = vv[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Clip cache (training re-reads the same files every step)

struct ClipCache {
  std::map<std::string, AudioClip> cache;

  const AudioClip& get(const std::string& path) {
    auto it = cache.find(path);
    if (it != cache.end()) return it->second;
    return cache.emplace(path, read_audio(path)).first->second;
  }
};

// ---------------------------------------------------------------------------
// Frozen rollout context

struct InstanceContext {
  DatasetInstance inst;
  AudioClip noisy;
  AudioClip clean;
  std::vector<Candidate> candidates;
  TokenSeq guidance;
  double distill_loss_at_rollout = 0.0;
  double similarity = 1.0;
  std::vector<double> advantages;    // frozen, detached
  std::vector<double> ref_logprobs;  // detached reference scores per candidate
};

struct TrainState {
  PolicyParams student;
  PolicyParams teacher;  // frozen deep copy
  TrainConfig config;
  Adam optimizer;
  int step = 0;

  TrainState(PolicyParams student_params, PolicyParams teacher_params, TrainConfig cfg)
      : student(std::move(student_params)),
        teacher(std::move(teacher_params)),
        config(cfg),
        optimizer(student) {
    cfg.validate();
  }
};

inline InstanceContext build_instance_context(const TrainState& state,
                                              const DatasetInstance& inst,
                                              const AudioClip& noisy, const AudioClip& clean,
                                              RngStream& stream) {
  const TrainConfig& cfg = state.config;
  InstanceContext ctx;
  ctx.inst = inst;
  ctx.noisy = noisy;
  ctx.clean = clean;
  ctx.candidates = sample_group(state.student, inst, noisy, cfg, stream);
  ctx.guidance =
      select_guidance(state.teacher, inst, clean, ctx.candidates, cfg.guidance_mode);
  GuidanceTrace trace =
      distill_loss(state.teacher, state.student, inst, noisy, clean, ctx.guidance);
  ctx.distill_loss_at_rollout = trace.distill_loss;

  std::vector<double> raw;
  for (const auto& c : ctx.candidates) raw.push_back(c.raw_reward);
  ShapedGroup shaped =
      shape_group(raw, ctx.distill_loss_at_rollout, cfg.beta, cfg.advantage_eps);
  ctx.similarity = shaped.similarity;
  ctx.advantages = shaped.advantages;
  for (size_t k = 0; k < ctx.candidates.size(); ++k) {
    ctx.candidates[k].shaped_reward = shaped.shaped_rewards[k];
    ctx.candidates[k].advantage = shaped.advantages[k];
  }

  int pid = prompt_id(inst.prompt);
  if (cfg.ratio_mode == RatioMode::kTeacherReference) {
    std::vector<double> teacher_h = encode_audio(state.teacher, clean);
    for (const auto& c : ctx.candidates)
      ctx.ref_logprobs.push_back(
          sequence_logprob(state.teacher, pid, teacher_h, c.tokens).avg_logprob);
  } else {
    // old-policy mode: the rollout-time student snapshot is the reference
    for (const auto& c : ctx.candidates) ctx.ref_logprobs.push_back(c.avg_logprob_student);
  }
  return ctx;
}

struct LossBreakdown {
  double policy = 0.0;
  double distill = 0.0;
  double total = 0.0;
};

// plain evaluation of the loss at arbitrary student params, context frozen
inline LossBreakdown echodistill_loss(const PolicyParams& student,
                                      const PolicyParams& teacher,
                                      const std::vector<InstanceContext>& batch,
                                      const TrainConfig& cfg) {
  LossBreakdown out;
  for (const auto& ctx : batch) {
    int pid = prompt_id(ctx.inst.prompt);
    std::vector<double> noisy_h = encode_audio(student, ctx.noisy);
    std::vector<double> ratios;
    for (size_t k = 0; k < ctx.candidates.size(); ++k) {
      double lp =
          sequence_logprob(student, pid, noisy_h, ctx.candidates[k].tokens).avg_logprob;
      ratios.push_back(importance_ratio(lp, ctx.ref_logprobs[k]));
    }
    double lp_i = policy_loss(ratios, ctx.advantages, cfg.clip_eps);
    double ld_i =
        distill_loss(teacher, student, ctx.inst, ctx.noisy, ctx.clean, ctx.guidance)
            .distill_loss;
    out.policy += lp_i;
    out.distill += ld_i;
  }
  double n = static_cast<double>(batch.size());
  out.policy /= n;
  out.distill /= n;
  out.total = total_loss(out.policy, out.distill, cfg);
  return out;
}

// tape evaluation of the same function; backward() fills `grads`
inline Var echodistill_loss_t(Tape& tape, PolicyParams& student, GradRecord& grads,
                              const PolicyParams& teacher,
                              const std::vector<InstanceContext>& batch,
                              const TrainConfig& cfg, LossBreakdown* breakdown = nullptr) {
  PolicyTape st{&tape, &student, &grads};
  std::vector<Var> per_instance;
  double policy_sum = 0.0, distill_sum = 0.0;
  for (const auto& ctx : batch) {
    int pid = prompt_id(ctx.inst.prompt);
    std::vector<Var> surrogates;
    for (size_t k = 0; k < ctx.candidates.size(); ++k) {
      Var lp = st.sequence_logprob_t(pid, ctx.noisy, ctx.candidates[k].tokens);
      Var rho = tape.s_exp(tape.s_addc(lp, -ctx.ref_logprobs[k]));
      double a = ctx.advantages[k];
      Var unclipped = tape.s_scale(rho, a);
      Var clipped =
          tape.s_scale(tape.s_clip(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), a);
      surrogates.push_back(tape.s_min(unclipped, clipped));
    }
    Var lp_i = tape.s_scale(tape.s_mean(surrogates), -1.0);
    Var ld_i = distill_loss_t(teacher, st, ctx.inst, ctx.noisy, ctx.clean, ctx.guidance);
    policy_sum += tape.scalar(lp_i);
    distill_sum += tape.scalar(ld_i);
    per_instance.push_back(tape.s_add(tape.s_scale(lp_i, cfg.lambda_policy),
                                      tape.s_scale(ld_i, cfg.lambda_distill)));
  }
  Var loss = tape.s_mean(per_instance);
  if (breakdown) {
    double n = static_cast<double>(batch.size());
    breakdown->policy = policy_sum / n;
    breakdown->distill = distill_sum / n;
    breakdown->total = tape.scalar(loss);
  }
  return loss;
}

struct StepStats {
  int step = 0;
  double loss_policy = 0.0;
  double loss_distill = 0.0;
  double total = 0.0;
  double mean_reward = 0.0;
  double mean_similarity = 0.0;
};

// one gradient update to the student; the teacher is never touched
inline StepStats train_step(TrainState& state, const std::vector<DatasetInstance>& batch,
                            const std::filesystem::path& dataset_dir, ClipCache& clips) {
  if (batch.empty()) throw ValidationError("train_step on empty batch");
  const TrainConfig& cfg = state.config;

  std::vector<InstanceContext> contexts;
  double reward_sum = 0.0, sim_sum = 0.0;
  int reward_n = 0;
  for (const auto& inst : batch) {
    const AudioClip& noisy = clips.get(resolve_ref(dataset_dir, inst.noisy_audio_ref));
    const AudioClip& clean = clips.get(resolve_ref(dataset_dir, inst.clean_audio_ref));
    RngStream stream =
        rng_stream(cfg.seed, inst.id, "rollout:" + std::to_string(state.step));
    InstanceContext ctx = build_instance_context(state, inst, noisy, clean, stream);
    for (const auto& c : ctx.candidates) {
      reward_sum += c.raw_reward;
      reward_n++;
    }
    sim_sum += ctx.similarity;
    contexts.push_back(std::move(ctx));
  }

  Tape tape;
  GradRecord grads(state.student);
  LossBreakdown breakdown;
  Var loss =
      echodistill_loss_t(tape, state.student, grads, state.teacher, contexts, cfg, &breakdown);
  tape.backward(loss);  // throws NonFiniteLoss before any update
  state.optimizer.step(state.student, grads, cfg.learning_rate);
  state.step++;

  StepStats stats;
  stats.step = state.step;
  stats.loss_policy = breakdown.policy;
  stats.loss_distill = breakdown.distill;
  stats.total = breakdown.total;
  stats.mean_reward = reward_sum / static_cast<double>(reward_n);
  stats.mean_similarity = sim_sum / static_cast<double>(contexts.size());
  return stats;
}

// ---------------------------------------------------------------------------
// Supervised warm-start: cross-entropy on clean audio toward the canonical
// answer sequence [BOS, answer-marker, letter, EOS].

inline PolicyParams warmstart_supervised(PolicyParams init,
                                         const std::vector<DatasetInstance>& dataset,
                                         const std::filesystem::path& dataset_dir,
                                         ClipCache& clips, int epochs, double lr,
                                         RngStream& stream) {
  if (dataset.empty()) throw ValidationError("warm-start on empty dataset");
  PolicyParams params = std::move(init);
  Adam opt(params);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int e = 0; e < epochs; ++e) {
    // deterministic Fisher-Yates reshuffle per epoch
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[stream.uniform_int(i)]);
    for (size_t idx : order) {
      const DatasetInstance& inst = dataset[idx];
      const AudioClip& clean = clips.get(resolve_ref(dataset_dir, inst.clean_audio_ref));
      TokenSeq target = canonical_answer(inst.target_index());
      Tape tape;
      GradRecord grads(params);
      PolicyTape pt{&tape, &params, &grads};
      Var avg_lp = pt.sequence_logprob_t(prompt_id(inst.prompt), clean, target);
      Var loss = tape.s_scale(avg_lp, -1.0);
      tape.backward(loss);
      opt.step(params, grads, lr);
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle: central differences per parameter.

inline GradRecord finite_diff_grad(PolicyParams& params,
                                   const std::function<double(const PolicyParams&)>& loss_fn,
                                   double step_h) {
  if (!(step_h > 0.0)) throw ValidationError("finite-difference step must be > 0");
  GradRecord out(params);
  auto pb = params.blocks();
  auto gb = out.g.blocks();
  for (size_t b = 0; b < pb.size(); ++b) {
    auto& w = *pb[b].data;
    auto& g = *gb[b].data;
    for (size_t i = 0; i < w.size(); ++i) {
      double orig = w[i];
      w[i] = orig + step_h;
      double fp = loss_fn(params);
      w[i] = orig - step_h;
      double fm = loss_fn(params);
      w[i] = orig;
      g[i] = (fp - fm) / (2.0 * step_h);
    }
  }
  return out;
}

}  // namespace echodistill
