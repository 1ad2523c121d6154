#pragma once

// Experiment orchestration: variant configuration (full method, GRPO-only,
// Distill-only, initial), training schedule, evaluation passes, metric
// reporting, run persistence, and the noisy-to-clean consistency curve.
//
// The evaluation pass that produces a prediction file loads exactly one
// audio ref per instance (noisy or clean), routed through an AudioStore so
// tests can verify the inference path never touches clean audio.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "echodistill/grounding.hpp"
#include "echodistill/metrics.hpp"
#include "echodistill/optim.hpp"
#include "echodistill/synthgen.hpp"

namespace echodistill {

enum class Variant { kEchoDistill, kGrpoOnly, kDistillOnly, kInitial };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kEchoDistill: return "echodistill";
    case Variant::kGrpoOnly: return "grpo_only";
    case Variant::kDistillOnly: return "distill_only";
    case Variant::kInitial: return "initial";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "echodistill") return Variant::kEchoDistill;
  if (s == "grpo_only") return Variant::kGrpoOnly;
  if (s == "distill_only") return Variant::kDistillOnly;
  if (s == "initial") return Variant::kInitial;
  throw ValidationError("unknown variant: " + s);
}

// GRPO-only removes the distillation term and the shaping bonus;
// Distill-only removes the policy term; initial skips training entirely.
inline TrainConfig apply_variant(TrainConfig cfg, Variant v) {
  switch (v) {
    case Variant::kGrpoOnly:
      cfg.lambda_distill = 0.0;
      cfg.beta = 0.0;
      break;
    case Variant::kDistillOnly:
      cfg.lambda_policy = 0.0;
      break;
    default:
      break;
  }
  return cfg;
}

struct ExperimentSpec {
  Variant variant = Variant::kEchoDistill;
  std::string train_path;
  std::string val_path;
  std::string test_path;
  TrainConfig train;
  std::vector<double> eval_snrs;  // empty = all
  std::string out_dir;
  std::vector<std::int64_t> seeds = {0};
  int steps = 2000;
  int batch_size = 16;
  int checkpoint_every = 100;
  int warmstart_epochs = 3;
  double warmstart_lr = 1e-2;
  PolicyDims dims;
};

// ---------------------------------------------------------------------------
// Flat key=value config files

inline ExperimentSpec parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config: " + path.string());
  ExperimentSpec spec;
  std::string line;
  int lineno = 0;
  auto parse_list = [](const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + " is not key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "variant") spec.variant = parse_variant(val);
    else if (key == "train") spec.train_path = val;
    else if (key == "val") spec.val_path = val;
    else if (key == "test") spec.test_path = val;
    else if (key == "out") spec.out_dir = val;
    else if (key == "seeds") {
      spec.seeds.clear();
      for (double s : parse_list(val)) spec.seeds.push_back(static_cast<std::int64_t>(s));
    } else if (key == "eval_snrs") spec.eval_snrs = parse_list(val);
    else if (key == "steps") spec.steps = std::stoi(val);
    else if (key == "batch_size") spec.batch_size = std::stoi(val);
    else if (key == "checkpoint_every") spec.checkpoint_every = std::stoi(val);
    else if (key == "warmstart_epochs") spec.warmstart_epochs = std::stoi(val);
    else if (key == "warmstart_lr") spec.warmstart_lr = std::stod(val);
    else if (key == "group_size") spec.train.group_size = std::stoi(val);
    else if (key == "advantage_eps") spec.train.advantage_eps = std::stod(val);
    else if (key == "clip_eps") spec.train.clip_eps = std::stod(val);
    else if (key == "beta") spec.train.beta = std::stod(val);
    else if (key == "lambda_policy") spec.train.lambda_policy = std::stod(val);
    else if (key == "lambda_distill") spec.train.lambda_distill = std::stod(val);
    else if (key == "temperature") spec.train.temperature = std::stod(val);
    else if (key == "learning_rate") spec.train.learning_rate = std::stod(val);
    else if (key == "ratio_mode")
      spec.train.ratio_mode = val == "old_policy" ? RatioMode::kOldPolicy
                                                  : RatioMode::kTeacherReference;
    else if (key == "guidance_mode")
      spec.train.guidance_mode = val == "teacher_likelihood_best_candidate"
                                     ? GuidanceMode::kTeacherLikelihoodBestCandidate
                                     : GuidanceMode::kTeacherGreedy;
    else if (key == "hidden") spec.dims.hidden = std::stoi(val);
    else if (key == "vocab") spec.dims.vocab = std::stoi(val);
    else
      throw ValidationError("unknown config key: " + key);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Evaluation passes

inline PredictionFile targets_of(const std::vector<DatasetInstance>& dataset) {
  PredictionFile f;
  for (const auto& inst : dataset) f.entries[inst.id] = inst.target;
  return f;
}

// Greedy predictions for one input condition. Loads only the requested ref.
inline PredictionFile predict(const PolicyParams& params,
                              const std::vector<DatasetInstance>& dataset,
                              const std::filesystem::path& dataset_dir, bool use_clean,
                              AudioStore& store) {
  PredictionFile out;
  for (const auto& inst : dataset) {
    const std::string& ref = use_clean ? inst.clean_audio_ref : inst.noisy_audio_ref;
    AudioClip clip = store.load(resolve_ref(dataset_dir, ref));
    std::vector<double> audio_h = encode_audio(params, clip);
    TokenSeq seq = greedy_decode(params, prompt_id(inst.prompt), audio_h);
    auto answer = extract_answer(seq, inst.choices);
    out.entries[inst.id] = answer ? *answer : invalid_marker();
  }
  return out;
}

inline std::vector<DatasetInstance> filter_snrs(std::vector<DatasetInstance> dataset,
                                                const std::vector<double>& snrs) {
  if (snrs.empty()) return dataset;
  std::vector<DatasetInstance> out;
  for (auto& inst : dataset)
    for (double s : snrs)
      if (inst.snr_db == s) {
        out.push_back(std::move(inst));
        break;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Run bundle

struct RunResult {
  RunMetrics metrics;
  std::filesystem::path metrics_json;
  std::filesystem::path run_log;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<int> checkpoint_steps;
  PolicyParams initial_params;
  PolicyParams final_params;

  RunResult() : initial_params(PolicyParams::zeros({})), final_params(PolicyParams::zeros({})) {}
};

inline RunResult run_experiment(const ExperimentSpec& spec, std::int64_t seed,
                                AudioStore* eval_store = nullptr) {
  TrainConfig cfg = apply_variant(spec.train, spec.variant);
  cfg.seed = seed;
  cfg.validate();

  auto train_set = load_dataset(spec.train_path);
  auto val_set = load_dataset(spec.val_path);
  auto test_set = filter_snrs(load_dataset(spec.test_path), spec.eval_snrs);
  if (train_set.empty() || test_set.empty())
    throw ValidationError("train and test sets must be non-empty");

  std::filesystem::path out_dir = std::filesystem::path(spec.out_dir) /
                                  (variant_name(spec.variant) + "_seed" + std::to_string(seed));
  std::filesystem::create_directories(out_dir);
  std::filesystem::path train_dir = std::filesystem::path(spec.train_path).parent_path();
  std::filesystem::path val_dir = std::filesystem::path(spec.val_path).parent_path();
  std::filesystem::path test_dir = std::filesystem::path(spec.test_path).parent_path();

  RunResult result;
  ClipCache clips;

  // warm-start on clean audio; the frozen teacher is a deep copy of the result
  RngStream init_stream = rng_stream(seed, "model", "init");
  PolicyParams params = PolicyParams::init(spec.dims, init_stream);
  RngStream warm_stream = rng_stream(seed, "warmstart", "order");
  params = warmstart_supervised(std::move(params), train_set, train_dir, clips,
                                spec.warmstart_epochs, spec.warmstart_lr, warm_stream);
  result.initial_params = params;

  TrainState state(params, params, cfg);

  std::filesystem::path log_path = out_dir / "run_log.jsonl";
  std::ofstream log(log_path);
  result.run_log = log_path;

  auto save_ckpt = [&](int step) {
    std::filesystem::path p = out_dir / ("ckpt_" + std::to_string(step) + ".bin");
    save_checkpoint(p, state.student);
    result.checkpoints.push_back(p);
    result.checkpoint_steps.push_back(step);
  };
  save_ckpt(0);

  if (spec.variant != Variant::kInitial) {
    for (int s = 0; s < spec.steps; ++s) {
      RngStream batch_stream = rng_stream(seed, "batch", "step:" + std::to_string(s));
      std::vector<DatasetInstance> batch;
      for (int b = 0; b < spec.batch_size; ++b)
        batch.push_back(train_set[batch_stream.uniform_int(train_set.size())]);
      StepStats stats = train_step(state, batch, train_dir, clips);
      log << nlohmann::json({{"step", stats.step},
                             {"loss_policy", stats.loss_policy},
                             {"loss_distill", stats.loss_distill},
                             {"total", stats.total},
                             {"mean_reward", stats.mean_reward},
                             {"mean_similarity", stats.mean_similarity}})
                 .dump()
          << "\n";
      if ((s + 1) % spec.checkpoint_every == 0 || s + 1 == spec.steps) save_ckpt(s + 1);
    }
  }
  result.final_params = state.student;

  // evaluation: the method-noisy prediction pass reads only noisy refs
  AudioStore default_store;
  AudioStore& store = eval_store ? *eval_store : default_store;
  PredictionFile method_noisy = predict(state.student, test_set, test_dir, false, store);
  PredictionFile method_clean = predict(state.student, test_set, test_dir, true, default_store);
  PredictionFile base_clean = predict(result.initial_params, test_set, test_dir, true, default_store);
  PredictionFile reference_noisy =
      predict(result.initial_params, test_set, test_dir, false, default_store);
  PredictionFile targets = targets_of(test_set);

  save_predictions(out_dir / "preds_noisy.jsonl", method_noisy);
  save_predictions(out_dir / "preds_clean.jsonl", method_clean);
  save_predictions(out_dir / "preds_base_clean.jsonl", base_clean);
  save_predictions(out_dir / "preds_initial_noisy.jsonl", reference_noisy);

  RunMetrics m = compute_metrics(method_noisy, method_clean, base_clean, targets);
  std::vector<std::string> labels = test_set.front().choices;
  F1Scores f1 = f1_scores(method_noisy, targets, labels);
  m.f1_micro = f1.micro;
  m.f1_macro = f1.macro;
  m.f1_avg = f1.average;
  m.net_correction =
      net_correction(method_noisy, reference_noisy, targets, static_cast<int>(test_set.size()));
  result.metrics = m;

  result.metrics_json = out_dir / "metrics.json";
  std::ofstream mj(result.metrics_json);
  mj << metrics_to_json(m).dump(2) << "\n";

  // noisy-to-clean consistency over checkpoints on the validation split
  if (!val_set.empty() && result.checkpoints.size() >= 2) {
    std::ofstream csv(out_dir / "consistency.csv");
    csv << "step,consistency\n";
    for (size_t i = 0; i < result.checkpoints.size(); ++i) {
      PolicyParams ck = load_checkpoint(result.checkpoints[i]);
      PredictionFile n = predict(ck, val_set, val_dir, false, default_store);
      PredictionFile c = predict(ck, val_set, val_dir, true, default_store);
      std::set<std::string> universe;
      for (const auto& inst : val_set) universe.insert(inst.id);
      auto valid = valid_ids(n, c, universe);
      double consistency = valid.empty() ? 0.0 : exact_match(n, c, valid);
      csv << result.checkpoint_steps[i] << "," << consistency << "\n";
    }
  }
  return result;
}

// consistency series from an explicit checkpoint list
inline std::vector<std::pair<int, double>> consistency_curve(
    const std::vector<std::filesystem::path>& checkpoints, const std::vector<int>& steps,
    const std::vector<DatasetInstance>& val_set, const std::filesystem::path& val_dir) {
  if (checkpoints.size() < 2) throw ValidationError("consistency_curve needs >= 2 checkpoints");
  AudioStore store;
  std::set<std::string> universe;
  for (const auto& inst : val_set) universe.insert(inst.id);
  std::vector<std::pair<int, double>> out;
  for (size_t i = 0; i < checkpoints.size(); ++i) {
    PolicyParams ck = load_checkpoint(checkpoints[i]);
    PredictionFile n = predict(ck, val_set, val_dir, false, store);
    PredictionFile c = predict(ck, val_set, val_dir, true, store);
    auto valid = valid_ids(n, c, universe);
    out.emplace_back(steps[i], valid.empty() ? 0.0 : exact_match(n, c, valid));
  }
  return out;
}

}  // namespace echodistill
