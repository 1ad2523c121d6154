#pragma once

// The audio-conditioned autoregressive policy: a single recurrent cell with
// tanh activation. The audio vector (mean-pooled linear projection of the
// clip) is added to the initial hidden state together with the prompt
// embedding. Both student and teacher are instances of PolicyParams; the
// teacher is a frozen deep copy.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "echodistill/autodiff.hpp"
#include "echodistill/rng.hpp"
#include "echodistill/types.hpp"

namespace echodistill {

struct PolicyDims {
  int vocab = 32;       // V
  int hidden = 32;      // H
  int audio_dim = 16;   // D
  int num_prompts = 4;  // prompt-template table size
};

struct TokenDist {
  std::vector<double> probs;
};

struct PolicyParams {
  PolicyDims dims;
  std::vector<double> token_embedding;   // V x H
  std::vector<double> audio_proj;        // D x H
  std::vector<double> prompt_embedding;  // P x H
  std::vector<double> w_in;              // H x H
  std::vector<double> w_rec;             // H x H
  std::vector<double> b_rec;             // H
  std::vector<double> output_proj;       // H x V
  std::vector<double> b_out;             // V

  struct BlockRef {
    const char* name;
    int rows, cols;
    std::vector<double>* data;
  };

  std::vector<BlockRef> blocks() {
    const auto& d = dims;
    return {
        {"token_embedding", d.vocab, d.hidden, &token_embedding},
        {"audio_proj", d.audio_dim, d.hidden, &audio_proj},
        {"prompt_embedding", d.num_prompts, d.hidden, &prompt_embedding},
        {"w_in", d.hidden, d.hidden, &w_in},
        {"w_rec", d.hidden, d.hidden, &w_rec},
        {"b_rec", 1, d.hidden, &b_rec},
        {"output_proj", d.hidden, d.vocab, &output_proj},
        {"b_out", 1, d.vocab, &b_out},
    };
  }

  size_t param_count() const {
    return token_embedding.size() + audio_proj.size() + prompt_embedding.size() +
           w_in.size() + w_rec.size() + b_rec.size() + output_proj.size() + b_out.size();
  }

  static PolicyParams zeros(PolicyDims d) {
    PolicyParams p;
    p.dims = d;
    p.token_embedding.assign(static_cast<size_t>(d.vocab) * d.hidden, 0.0);
    p.audio_proj.assign(static_cast<size_t>(d.audio_dim) * d.hidden, 0.0);
    p.prompt_embedding.assign(static_cast<size_t>(d.num_prompts) * d.hidden, 0.0);
    p.w_in.assign(static_cast<size_t>(d.hidden) * d.hidden, 0.0);
    p.w_rec.assign(static_cast<size_t>(d.hidden) * d.hidden, 0.0);
    p.b_rec.assign(d.hidden, 0.0);
    p.output_proj.assign(static_cast<size_t>(d.hidden) * d.vocab, 0.0);
    p.b_out.assign(d.vocab, 0.0);
    return p;
  }

  static PolicyParams init(PolicyDims d, RngStream& stream, double scale = 0.1) {
    PolicyParams p = zeros(d);
    for (auto blk : p.blocks())
      for (auto& w : *blk.data) w = scale * stream.gaussian();
    return p;
  }

  bool operator==(const PolicyParams& o) const {
    return token_embedding == o.token_embedding && audio_proj == o.audio_proj &&
           prompt_embedding == o.prompt_embedding && w_in == o.w_in &&
           w_rec == o.w_rec && b_rec == o.b_rec && output_proj == o.output_proj &&
           b_out == o.b_out;
  }
};

// Gradient record mirroring PolicyParams block shapes.
struct GradRecord {
  PolicyParams g;  // same layout, holds gradients

  explicit GradRecord(const PolicyParams& p) : g(PolicyParams::zeros(p.dims)) {}

  void zero() {
    for (auto blk : g.blocks())
      for (auto& w : *blk.data) w = 0.0;
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: named blocks, each (u32 name length, name bytes, u32 rows,
// u32 cols, little-endian f32 data).

inline void save_checkpoint(const std::filesystem::path& path, PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open checkpoint for write: " + path.string());
  auto write_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  for (auto blk : params.blocks()) {
    std::string name = blk.name;
    write_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(static_cast<std::uint32_t>(blk.rows));
    write_u32(static_cast<std::uint32_t>(blk.cols));
    std::vector<float> buf(blk.data->begin(), blk.data->end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoFailure("checkpoint write failed: " + path.string());
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open checkpoint: " + path.string());
  auto read_u32 = [&]() -> std::uint32_t {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  struct RawBlock {
    std::string name;
    int rows, cols;
    std::vector<double> data;
  };
  std::vector<RawBlock> raw;
  while (true) {
    std::uint32_t nlen = read_u32();
    if (!in) break;
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    int rows = static_cast<int>(read_u32());
    int cols = static_cast<int>(read_u32());
    size_t n = static_cast<size_t>(rows) * cols;
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw IoFailure("truncated checkpoint: " + path.string());
    raw.push_back({std::move(name), rows, cols, std::vector<double>(buf.begin(), buf.end())});
  }
  PolicyDims d;
  for (const auto& b : raw) {
    if (b.name == "token_embedding") { d.vocab = b.rows; d.hidden = b.cols; }
    if (b.name == "audio_proj") d.audio_dim = b.rows;
    if (b.name == "prompt_embedding") d.num_prompts = b.rows;
  }
  PolicyParams p = PolicyParams::zeros(d);
  for (auto blk : p.blocks()) {
    bool found = false;
    for (const auto& b : raw)
      if (b.name == blk.name) {
        if (b.rows != blk.rows || b.cols != blk.cols)
          throw IoFailure(std::string("checkpoint block shape mismatch: ") + blk.name);
        *blk.data = b.data;
        found = true;
      }
    if (!found) throw IoFailure(std::string("checkpoint missing block: ") + blk.name);
  }
  return p;
}

inline std::uint64_t checkpoint_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open for hash: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t params_hash(PolicyParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto blk : params.blocks())
    for (double v : *blk.data) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
      }
    }
  return h;
}

// ---------------------------------------------------------------------------
// Plain forward pass (no gradients): sampling, greedy decoding, scoring.

// mean over frames of frame . audio_proj  (no bias term)
inline std::vector<double> encode_audio(const PolicyParams& p, const AudioClip& clip) {
  if (clip.feature_dim != p.dims.audio_dim)
    throw DimMismatch("clip feature_dim does not match policy audio_dim");
  const int D = p.dims.audio_dim, H = p.dims.hidden;
  std::vector<double> mean(D, 0.0);
  for (int t = 0; t < clip.frame_count; ++t)
    for (int j = 0; j < D; ++j) mean[j] += clip.at(t, j);
  if (clip.frame_count > 0)
    for (auto& v : mean) v /= clip.frame_count;
  std::vector<double> h(H, 0.0);
  for (int j = 0; j < D; ++j) {
    const double* wrow = p.audio_proj.data() + static_cast<size_t>(j) * H;
    for (int k = 0; k < H; ++k) h[k] += mean[j] * wrow[k];
  }
  return h;
}

struct DecoderState {
  std::vector<double> h;
};

inline DecoderState init_state(const PolicyParams& p, int prompt_id,
                               const std::vector<double>& audio_h) {
  const int H = p.dims.hidden;
  DecoderState s;
  s.h.resize(H);
  const double* pe = p.prompt_embedding.data() + static_cast<size_t>(prompt_id) * H;
  for (int k = 0; k < H; ++k) s.h[k] = audio_h[k] + pe[k];
  return s;
}

inline void consume_token(const PolicyParams& p, DecoderState& s, int token) {
  const int H = p.dims.hidden;
  if (token < 0 || token >= p.dims.vocab) throw TokenOutOfRange("token id out of range");
  std::vector<double> pre(p.b_rec);
  const double* emb = p.token_embedding.data() + static_cast<size_t>(token) * H;
  for (int i = 0; i < H; ++i) {
    const double* win = p.w_in.data() + static_cast<size_t>(i) * H;
    const double* wrec = p.w_rec.data() + static_cast<size_t>(i) * H;
    double ei = emb[i], hi = s.h[i];
    for (int k = 0; k < H; ++k) pre[k] += ei * win[k] + hi * wrec[k];
  }
  for (int k = 0; k < H; ++k) s.h[k] = std::tanh(pre[k]);
}

inline std::vector<double> output_logits(const PolicyParams& p, const DecoderState& s) {
  const int H = p.dims.hidden, V = p.dims.vocab;
  std::vector<double> logits(p.b_out);
  for (int i = 0; i < H; ++i) {
    const double* wrow = p.output_proj.data() + static_cast<size_t>(i) * V;
    for (int v = 0; v < V; ++v) logits[v] += s.h[i] * wrow[v];
  }
  return logits;
}

inline std::vector<double> log_softmax_vec(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double lse = 0.0;
  for (double v : logits) lse += std::exp(v - m);
  lse = m + std::log(lse);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline TokenDist dist_from_state(const PolicyParams& p, const DecoderState& s,
                                 double temperature = 1.0) {
  std::vector<double> logits = output_logits(p, s);
  if (temperature != 1.0)
    for (auto& v : logits) v /= temperature;
  std::vector<double> lp = log_softmax_vec(logits);
  TokenDist d;
  d.probs.resize(lp.size());
  for (size_t i = 0; i < lp.size(); ++i) d.probs[i] = std::exp(lp[i]);
  return d;
}

// distribution for the next token after consuming the prefix
inline TokenDist next_token_dist(const PolicyParams& p, int prompt_id,
                                 const std::vector<double>& audio_h, const TokenSeq& prefix,
                                 double temperature = 1.0) {
  DecoderState s = init_state(p, prompt_id, audio_h);
  for (int tok : prefix.tokens) consume_token(p, s, tok);
  return dist_from_state(p, s, temperature);
}

struct SequenceScore {
  double avg_logprob = 0.0;
  std::vector<double> per_token;
};

// average log-probability of tokens; position t is scored from the state
// after consuming tokens < t
inline SequenceScore sequence_logprob(const PolicyParams& p, int prompt_id,
                                      const std::vector<double>& audio_h,
                                      const TokenSeq& tokens) {
  if (tokens.empty()) throw ValidationError("sequence_logprob on empty sequence");
  DecoderState s = init_state(p, prompt_id, audio_h);
  SequenceScore out;
  double sum = 0.0;
  for (int tok : tokens.tokens) {
    if (tok < 0 || tok >= p.dims.vocab) throw TokenOutOfRange("token id out of range");
    std::vector<double> lp = log_softmax_vec(output_logits(p, s));
    out.per_token.push_back(lp[tok]);
    sum += lp[tok];
    consume_token(p, s, tok);
  }
  out.avg_logprob = sum / static_cast<double>(tokens.size());
  return out;
}

constexpr int kMaxDecodeLen = 16;

// deterministic greedy decode; ties break toward the lower token id
inline TokenSeq greedy_decode(const PolicyParams& p, int prompt_id,
                              const std::vector<double>& audio_h,
                              int max_len = kMaxDecodeLen) {
  DecoderState s = init_state(p, prompt_id, audio_h);
  TokenSeq seq;
  for (int t = 0; t < max_len; ++t) {
    std::vector<double> logits = output_logits(p, s);
    int best = 0;
    for (int v = 1; v < p.dims.vocab; ++v)
      if (logits[v] > logits[best]) best = v;
    seq.tokens.push_back(best);
    if (best == vocab::kEos) break;
    consume_token(p, s, best);
  }
  return seq;
}

struct SampledSeq {
  TokenSeq tokens;
  double avg_logprob = 0.0;  // under the model (temperature 1)
};

// ancestral sampling at the given temperature, terminated at EOS or max_len
inline SampledSeq sample_seq(const PolicyParams& p, int prompt_id,
                             const std::vector<double>& audio_h, double temperature,
                             RngStream& stream, int max_len = kMaxDecodeLen) {
  DecoderState s = init_state(p, prompt_id, audio_h);
  SampledSeq out;
  double lp_sum = 0.0;
  for (int t = 0; t < max_len; ++t) {
    std::vector<double> logits = output_logits(p, s);
    std::vector<double> model_lp = log_softmax_vec(logits);
    std::vector<double> sample_logits(logits);
    for (auto& v : sample_logits) v /= temperature;
    std::vector<double> sample_lp = log_softmax_vec(sample_logits);
    double u = stream.uniform();
    int tok = p.dims.vocab - 1;
    double acc = 0.0;
    for (int v = 0; v < p.dims.vocab; ++v) {
      acc += std::exp(sample_lp[v]);
      if (u < acc) {
        tok = v;
        break;
      }
    }
    out.tokens.tokens.push_back(tok);
    lp_sum += model_lp[tok];
    if (tok == vocab::kEos) break;
    consume_token(p, s, tok);
  }
  out.avg_logprob = lp_sum / static_cast<double>(out.tokens.size());
  return out;
}

// ---------------------------------------------------------------------------
// Tape-backed forward pass for training. Mean pooling is linear, so the
// audio encoding is one affine over the constant mean frame.

struct PolicyTape {
  Tape* tape;
  PolicyParams* params;
  GradRecord* grads;  // may be null for constant (stop-gradient) use

  double* gptr(std::vector<double> PolicyParams::* member) const {
    return grads ? (grads->g.*member).data() : nullptr;
  }

  Var encode_audio_t(const AudioClip& clip) const {
    const PolicyParams& p = *params;
    if (clip.feature_dim != p.dims.audio_dim)
      throw DimMismatch("clip feature_dim does not match policy audio_dim");
    std::vector<double> mean(p.dims.audio_dim, 0.0);
    for (int t = 0; t < clip.frame_count; ++t)
      for (int j = 0; j < p.dims.audio_dim; ++j) mean[j] += clip.at(t, j);
    if (clip.frame_count > 0)
      for (auto& v : mean) v /= clip.frame_count;
    Var mf = tape->constant(std::move(mean));
    return tape->affine(p.audio_proj.data(), gptr(&PolicyParams::audio_proj),
                        p.dims.audio_dim, p.dims.hidden, mf);
  }

  Var init_state_t(int prompt_id, Var audio_h) const {
    const PolicyParams& p = *params;
    Var pe = tape->row(p.prompt_embedding.data(), gptr(&PolicyParams::prompt_embedding),
                       p.dims.hidden, prompt_id);
    return tape->add(audio_h, pe);
  }

  Var consume_t(Var h, int token) const {
    const PolicyParams& p = *params;
    if (token < 0 || token >= p.dims.vocab) throw TokenOutOfRange("token id out of range");
    Var emb = tape->row(p.token_embedding.data(), gptr(&PolicyParams::token_embedding),
                        p.dims.hidden, token);
    Var t1 = tape->affine(p.w_in.data(), gptr(&PolicyParams::w_in), p.dims.hidden,
                          p.dims.hidden, emb);
    Var t2 = tape->affine(p.w_rec.data(), gptr(&PolicyParams::w_rec), p.dims.hidden,
                          p.dims.hidden, h, p.b_rec.data(), gptr(&PolicyParams::b_rec));
    return tape->tanh(tape->add(t1, t2));
  }

  Var logprobs_t(Var h) const {
    const PolicyParams& p = *params;
    Var logits = tape->affine(p.output_proj.data(), gptr(&PolicyParams::output_proj),
                              p.dims.hidden, p.dims.vocab, h, p.b_out.data(),
                              gptr(&PolicyParams::b_out));
    return tape->log_softmax(logits);
  }

  // avg log-probability of the sequence, plus per-position log-prob vectors
  // (for distillation) if requested
  Var sequence_logprob_t(int prompt_id, const AudioClip& clip, const TokenSeq& tokens,
                         std::vector<Var>* per_position_logprobs = nullptr) const {
    if (tokens.empty()) throw ValidationError("sequence_logprob_t on empty sequence");
    Var h = init_state_t(prompt_id, encode_audio_t(clip));
    std::vector<Var> picks;
    for (int tok : tokens.tokens) {
      Var lp = logprobs_t(h);
      if (per_position_logprobs) per_position_logprobs->push_back(lp);
      picks.push_back(tape->pick(lp, tok));
      h = consume_t(h, tok);
    }
    return tape->s_mean(picks);
  }
};

}  // namespace echodistill
