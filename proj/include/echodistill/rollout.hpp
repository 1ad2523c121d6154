#pragma once

// Group rollouts from the noisy student and task rewards.

#include <optional>
#include <string>
#include <vector>

#include "echodistill/io.hpp"
#include "echodistill/policy.hpp"
#include "echodistill/rng.hpp"
#include "echodistill/types.hpp"

namespace echodistill {

struct Candidate {
  TokenSeq tokens;
  double avg_logprob_student = 0.0;
  std::optional<std::string> extracted_answer;
  double raw_reward = 0.0;
  double shaped_reward = 0.0;  // filled by shaping
  double advantage = 0.0;      // filled by shaping
};

// the choice whose letter token is the last choice-letter token before EOS
inline std::optional<std::string> extract_answer(const TokenSeq& tokens,
                                                 const std::vector<std::string>& choices) {
  int last_letter = -1;
  for (int tok : tokens.tokens) {
    if (tok == vocab::kEos) break;
    if (vocab::is_choice_letter(tok) &&
        vocab::choice_index(tok) < static_cast<int>(choices.size()))
      last_letter = tok;
  }
  if (last_letter < 0) return std::nullopt;
  return choices[vocab::choice_index(last_letter)];
}

// 1 correct, 0 wrong, -1 no extractable answer. `guidance` is accepted for
// signature parity with open-ended grading but unused in choice matching.
inline double task_reward(const Candidate& cand, const DatasetInstance& inst,
                          const TokenSeq* guidance = nullptr) {
  (void)guidance;
  (void)inst;
  if (!cand.extracted_answer) return -1.0;
  return *cand.extracted_answer == inst.target ? 1.0 : 0.0;
}

// K independent ancestral samples from the student on the noisy clip
inline std::vector<Candidate> sample_group(const PolicyParams& student,
                                           const DatasetInstance& inst,
                                           const AudioClip& noisy_clip,
                                           const TrainConfig& cfg, RngStream& stream) {
  std::vector<double> audio_h = encode_audio(student, noisy_clip);
  int pid = prompt_id(inst.prompt);
  std::vector<Candidate> group;
  group.reserve(cfg.group_size);
  for (int k = 0; k < cfg.group_size; ++k) {
    SampledSeq s = sample_seq(student, pid, audio_h, cfg.temperature, stream);
    Candidate c;
    c.tokens = std::move(s.tokens);
    c.avg_logprob_student = s.avg_logprob;
    c.extracted_answer = extract_answer(c.tokens, inst.choices);
    c.raw_reward = task_reward(c, inst);
    group.push_back(std::move(c));
  }
  return group;
}

}  // namespace echodistill
