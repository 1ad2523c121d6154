#pragma once

// File formats: EDAU audio clips, JSONL datasets, instance validation,
// and the audio loading abstraction used by evaluation.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "echodistill/types.hpp"

namespace echodistill {

// ---------------------------------------------------------------------------
// EDAU audio files: "EDAU", u32le frame_count, u32le feature_dim, then
// frame_count * feature_dim little-endian f32, row-major by frame.

inline void write_audio(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for write: " + path.string());
  out.write("EDAU", 4);
  auto write_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  write_u32(static_cast<std::uint32_t>(clip.frame_count));
  write_u32(static_cast<std::uint32_t>(clip.feature_dim));
  std::vector<float> buf(clip.data.begin(), clip.data.end());
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoFailure("write failed: " + path.string());
}

struct AudioHeader {
  int frame_count = 0;
  int feature_dim = 0;
};

inline AudioHeader read_audio_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioLoadFailure("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EDAU", 4) != 0)
    throw AudioLoadFailure("bad magic: " + path.string());
  auto read_u32 = [&]() -> std::uint32_t {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  AudioHeader h;
  h.frame_count = static_cast<int>(read_u32());
  h.feature_dim = static_cast<int>(read_u32());
  if (!in) throw AudioLoadFailure("truncated header: " + path.string());
  return h;
}

inline AudioClip read_audio(const std::filesystem::path& path) {
  AudioHeader h = read_audio_header(path);
  std::ifstream in(path, std::ios::binary);
  in.seekg(12);
  size_t n = static_cast<size_t>(h.frame_count) * static_cast<size_t>(h.feature_dim);
  std::vector<float> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw AudioLoadFailure("truncated data: " + path.string());
  AudioClip clip;
  clip.frame_count = h.frame_count;
  clip.feature_dim = h.feature_dim;
  clip.data.assign(buf.begin(), buf.end());
  return clip;
}

// ---------------------------------------------------------------------------
// Audio store: routes clip loads so tests can record which paths the
// evaluation path actually touches.

class AudioStore {
 public:
  virtual ~AudioStore() = default;
  virtual AudioClip load(const std::string& ref) { return read_audio(ref); }
};

class RecordingAudioStore : public AudioStore {
 public:
  AudioClip load(const std::string& ref) override {
    loaded.push_back(ref);
    return AudioStore::load(ref);
  }
  std::vector<std::string> loaded;
};

// ---------------------------------------------------------------------------
// Instance validation

// Raw JSONL record -> validated DatasetInstance. Field names follow the
// published schema: id, prompt, noisy_audio_path, clean_audio_path, choices,
// target, noise_type, snr. Audio refs are resolved relative to `root` and
// their headers must agree in shape.
inline DatasetInstance validate_instance(const nlohmann::json& raw,
                                         const std::filesystem::path& root = {},
                                         bool check_audio = true) {
  auto require = [&](const char* name) -> const nlohmann::json& {
    auto it = raw.find(name);
    if (it == raw.end() || it->is_null()) throw MissingField(name);
    return *it;
  };
  DatasetInstance inst;
  const auto& id = require("id");
  inst.id = id.is_string() ? id.get<std::string>() : id.dump();
  inst.prompt = require("prompt").get<std::string>();
  inst.noisy_audio_ref = require("noisy_audio_path").get<std::string>();
  inst.clean_audio_ref = require("clean_audio_path").get<std::string>();
  inst.choices = require("choices").get<std::vector<std::string>>();
  inst.target = require("target").get<std::string>();
  inst.noise_type = require("noise_type").get<std::string>();
  inst.snr_db = require("snr").get<double>();

  if (inst.choices.size() < 2) throw ValidationError("choices must have length >= 2");
  std::set<std::string> uniq(inst.choices.begin(), inst.choices.end());
  if (uniq.size() != inst.choices.size())
    throw ValidationError("choices contains duplicates");
  if (inst.target_index() < 0)
    throw TargetNotInChoices("target '" + inst.target + "' not in choices");
  if (!std::isfinite(inst.snr_db)) throw ValidationError("snr must be finite");

  if (check_audio) {
    AudioHeader n = read_audio_header(root / inst.noisy_audio_ref);
    AudioHeader c = read_audio_header(root / inst.clean_audio_ref);
    if (n.frame_count != c.frame_count || n.feature_dim != c.feature_dim)
      throw AudioMismatch("clean/noisy clip shapes differ for id " + inst.id);
  }
  return inst;
}

inline std::vector<DatasetInstance> load_dataset(const std::filesystem::path& jsonl_path,
                                                 bool check_audio = true) {
  std::ifstream in(jsonl_path);
  if (!in) throw IoFailure("cannot open dataset: " + jsonl_path.string());
  std::vector<DatasetInstance> out;
  std::string line;
  std::filesystem::path root = jsonl_path.parent_path();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(validate_instance(nlohmann::json::parse(line), root, check_audio));
  }
  return out;
}

// Resolves an instance audio ref against the dataset directory.
inline std::string resolve_ref(const std::filesystem::path& dataset_dir, const std::string& ref) {
  return (dataset_dir / ref).string();
}

// ---------------------------------------------------------------------------
// Prompt templates. Prompts are templated text; each template owns one
// learned embedding vector, looked up by index here.

inline const std::vector<std::string>& prompt_templates() {
  static const std::vector<std::string> templates = {
      "What is producing the sound in the audio? Please answer based on the audio.",
      "Which source best matches the audio? Choose one option.",
      "Identify the sound event in the clip.",
      "Based on the audio, select the correct answer.",
  };
  return templates;
}

inline int prompt_id(const std::string& prompt) {
  const auto& t = prompt_templates();
  for (size_t i = 0; i < t.size(); ++i)
    if (t[i] == prompt) return static_cast<int>(i);
  return 0;
}

}  // namespace echodistill
