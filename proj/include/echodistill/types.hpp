#pragma once

// Shared domain types: dataset instances, audio clips, token sequences,
// training configuration, and the error hierarchy used across modules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace echodistill {

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingField : Error {
  explicit MissingField(const std::string& field)
      : Error("missing field: " + field), field(field) {}
  std::string field;
};
struct TargetNotInChoices : Error {
  using Error::Error;
};
struct AudioMismatch : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct NonFiniteInput : Error {
  using Error::Error;
};
struct IoFailure : Error {
  using Error::Error;
};
struct DimMismatch : Error {
  using Error::Error;
};
struct TokenOutOfRange : Error {
  using Error::Error;
};
struct AudioLoadFailure : Error {
  using Error::Error;
};
struct EmptyCandidateSet : Error {
  using Error::Error;
};
struct AllMasked : Error {
  using Error::Error;
};
struct NegativeLoss : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct NonFiniteLoss : Error {
  using Error::Error;
};
struct EmptyValidSet : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Audio

struct AudioClip {
  int frame_count = 0;
  int feature_dim = 0;
  std::vector<double> data;  // frame-major, frame_count * feature_dim

  double& at(int frame, int dim) { return data[static_cast<size_t>(frame) * feature_dim + dim]; }
  double at(int frame, int dim) const { return data[static_cast<size_t>(frame) * feature_dim + dim]; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](double v) { return std::isfinite(v); });
  }

  // mean power over all entries
  double mean_power() const {
    if (data.empty()) return 0.0;
    double s = 0.0;
    for (double v : data) s += v * v;
    return s / static_cast<double>(data.size());
  }
};

// ---------------------------------------------------------------------------
// Tokens

// Fixed toy vocabulary layout. Choice letters occupy a contiguous range so
// answer extraction is a range check.
namespace vocab {
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kAnswerMarker = 3;
constexpr int kFirstChoice = 4;  // A
constexpr int kMaxChoices = 4;   // A..D
constexpr int kFirstFiller = kFirstChoice + kMaxChoices;

inline bool is_choice_letter(int tok) {
  return tok >= kFirstChoice && tok < kFirstChoice + kMaxChoices;
}
inline int choice_token(int choice_index) { return kFirstChoice + choice_index; }
inline int choice_index(int tok) { return tok - kFirstChoice; }

// 1 on response content (choice letters, answer marker, filler), 0 on
// BOS / EOS / PAD.
inline bool is_content(int tok) {
  return tok != kPad && tok != kBos && tok != kEos;
}
}  // namespace vocab

struct TokenSeq {
  std::vector<int> tokens;

  bool empty() const { return tokens.empty(); }
  size_t size() const { return tokens.size(); }
  int operator[](size_t i) const { return tokens[i]; }

  bool operator==(const TokenSeq& o) const { return tokens == o.tokens; }
};

// canonical answer sequence for a choice index
inline TokenSeq canonical_answer(int choice_index) {
  return TokenSeq{{vocab::kBos, vocab::kAnswerMarker, vocab::choice_token(choice_index), vocab::kEos}};
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetInstance {
  std::string id;
  std::string prompt;
  std::string noisy_audio_ref;
  std::string clean_audio_ref;
  std::vector<std::string> choices;
  std::string target;
  std::string noise_type;
  double snr_db = 0.0;

  int target_index() const {
    for (size_t i = 0; i < choices.size(); ++i)
      if (choices[i] == target) return static_cast<int>(i);
    return -1;
  }
};

// ---------------------------------------------------------------------------
// Training configuration

enum class RatioMode { kTeacherReference, kOldPolicy };
enum class GuidanceMode { kTeacherGreedy, kTeacherLikelihoodBestCandidate };

struct TrainConfig {
  int group_size = 8;            // K
  double advantage_eps = 1e-6;   // epsilon in group advantages
  double clip_eps = 0.2;
  double beta = 0.5;             // audio-aware bonus strength
  double lambda_policy = 1.0;
  double lambda_distill = 1.0;
  double temperature = 1.0;
  double learning_rate = 1e-3;
  RatioMode ratio_mode = RatioMode::kTeacherReference;
  GuidanceMode guidance_mode = GuidanceMode::kTeacherGreedy;
  std::int64_t seed = 0;

  void validate() const {
    if (group_size < 2) throw ValidationError("group_size must be >= 2");
    if (!(advantage_eps > 0.0)) throw ValidationError("advantage_eps must be > 0");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ValidationError("clip_eps must be in (0, 1)");
    if (beta < 0.0) throw ValidationError("beta must be >= 0");
    if (lambda_policy < 0.0 || lambda_distill < 0.0)
      throw ValidationError("loss weights must be >= 0");
    if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  }
};

}  // namespace echodistill
