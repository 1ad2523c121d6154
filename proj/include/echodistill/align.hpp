#pragma once

// Noisy-to-clean evidence alignment: guidance selection, the response-token
// mask, and the masked teacher-to-student KL distillation loss. Teacher
// distributions are computed on the clean clip and detached; gradient flows
// only to the student.

#include <cmath>
#include <limits>
#include <vector>

#include "echodistill/policy.hpp"
#include "echodistill/rollout.hpp"
#include "echodistill/types.hpp"

namespace echodistill {

struct GuidanceTrace {
  TokenSeq guidance;
  std::vector<int> mask;                 // 1 on response content, 0 on BOS/EOS/PAD
  std::vector<TokenDist> teacher_dists;  // q, on clean audio
  std::vector<TokenDist> student_dists;  // p, on noisy audio
  double distill_loss = 0.0;
};

// teacher_greedy: greedy teacher decode on the clean clip;
// likelihood mode: the candidate maximizing teacher avg log-prob on clean
inline TokenSeq select_guidance(const PolicyParams& teacher, const DatasetInstance& inst,
                                const AudioClip& clean_clip,
                                const std::vector<Candidate>& candidates,
                                GuidanceMode mode) {
  std::vector<double> audio_h = encode_audio(teacher, clean_clip);
  int pid = prompt_id(inst.prompt);
  if (mode == GuidanceMode::kTeacherGreedy) return greedy_decode(teacher, pid, audio_h);
  if (candidates.empty())
    throw EmptyCandidateSet("likelihood guidance needs a non-empty candidate set");
  int best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < candidates.size(); ++k) {
    double lp = sequence_logprob(teacher, pid, audio_h, candidates[k].tokens).avg_logprob;
    if (lp > best_lp) {
      best_lp = lp;
      best = static_cast<int>(k);
    }
  }
  return candidates[best].tokens;
}

inline std::vector<int> token_mask(const TokenSeq& guidance) {
  std::vector<int> mask;
  mask.reserve(guidance.size());
  int live = 0;
  for (int tok : guidance.tokens) {
    int m = vocab::is_content(tok) ? 1 : 0;
    live += m;
    mask.push_back(m);
  }
  if (live == 0) throw AllMasked("guidance has no content tokens");
  return mask;
}

inline double kl_divergence(const std::vector<double>& q, const std::vector<double>& p) {
  double kl = 0.0;
  for (size_t v = 0; v < q.size(); ++v) {
    if (q[v] > 0.0) kl += q[v] * (std::log(q[v]) - std::log(p[v]));
  }
  return kl;
}

// mask-mean of per-position KL(q_teacher || p_student); q on clean, p on noisy
inline GuidanceTrace distill_loss(const PolicyParams& teacher, const PolicyParams& student,
                                  const DatasetInstance& inst, const AudioClip& noisy_clip,
                                  const AudioClip& clean_clip, const TokenSeq& guidance) {
  GuidanceTrace trace;
  trace.guidance = guidance;
  trace.mask = token_mask(guidance);

  int pid = prompt_id(inst.prompt);
  std::vector<double> teacher_h = encode_audio(teacher, clean_clip);
  std::vector<double> student_h = encode_audio(student, noisy_clip);
  DecoderState ts = init_state(teacher, pid, teacher_h);
  DecoderState ss = init_state(student, pid, student_h);

  double kl_sum = 0.0;
  int mask_mass = 0;
  for (size_t t = 0; t < guidance.size(); ++t) {
    TokenDist q = dist_from_state(teacher, ts);
    TokenDist p = dist_from_state(student, ss);
    if (trace.mask[t]) {
      kl_sum += kl_divergence(q.probs, p.probs);
      mask_mass++;
    }
    trace.teacher_dists.push_back(std::move(q));
    trace.student_dists.push_back(std::move(p));
    consume_token(teacher, ts, guidance[t]);
    consume_token(student, ss, guidance[t]);
  }
  trace.distill_loss = kl_sum / static_cast<double>(mask_mass);
  return trace;
}

// Tape version: builds the same mask-mean loss as a graph over student
// parameters. Per masked position the node is cross-entropy -sum q log p
// plus the constant -H(q), so the value matches the plain version exactly.
inline Var distill_loss_t(const PolicyParams& teacher, const PolicyTape& student,
                          const DatasetInstance& inst, const AudioClip& noisy_clip,
                          const AudioClip& clean_clip, const TokenSeq& guidance) {
  std::vector<int> mask = token_mask(guidance);
  int pid = prompt_id(inst.prompt);
  std::vector<double> teacher_h = encode_audio(teacher, clean_clip);
  DecoderState ts = init_state(teacher, pid, teacher_h);
  Tape& tape = *student.tape;
  Var sh = student.init_state_t(pid, student.encode_audio_t(noisy_clip));

  std::vector<Var> terms;
  for (size_t t = 0; t < guidance.size(); ++t) {
    if (mask[t]) {
      TokenDist q = dist_from_state(teacher, ts);
      double neg_entropy = 0.0;
      for (double qv : q.probs)
        if (qv > 0.0) neg_entropy += qv * std::log(qv);
      Var logp = student.logprobs_t(sh);
      Var ce = tape.s_scale(tape.dot_const(q.probs, logp), -1.0);
      terms.push_back(tape.s_addc(ce, neg_entropy));
    }
    consume_token(teacher, ts, guidance[t]);
    sh = student.consume_t(sh, guidance[t]);
  }
  return tape.s_mean(terms);
}

}  // namespace echodistill
