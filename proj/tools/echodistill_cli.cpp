// Command-line entry points: dataset generation, warm-start, training,
// evaluation, grounding diagnostics, and the ablation-grid report.
//
// Exit codes: 0 success, 2 validation failure, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "echodistill/experiment.hpp"

namespace fs = std::filesystem;
using namespace echodistill;

namespace {

int cmd_gen(const std::string& out, std::int64_t seed, int num, int classes,
            const std::vector<double>& snrs, int window_start, int window_len) {
  GenSpec spec;
  spec.num_instances = num;
  spec.num_classes = classes;
  spec.seed = seed;
  if (!snrs.empty()) spec.snr_grid = snrs;
  if (window_len > 0) spec.evidence_window = {window_start, window_len};
  GenManifest m = gen_dataset(spec, out);
  std::cout << "wrote " << m.num_instances << " instances to " << m.jsonl_path << "\n";
  return 0;
}

int cmd_warmstart(const std::string& config, std::int64_t seed, const std::string& out) {
  ExperimentSpec spec = parse_config(config);
  auto train_set = load_dataset(spec.train_path);
  fs::path train_dir = fs::path(spec.train_path).parent_path();
  ClipCache clips;
  RngStream init_stream = rng_stream(seed, "model", "init");
  PolicyParams params = PolicyParams::init(spec.dims, init_stream);
  RngStream warm_stream = rng_stream(seed, "warmstart", "order");
  params = warmstart_supervised(std::move(params), train_set, train_dir, clips,
                                spec.warmstart_epochs, spec.warmstart_lr, warm_stream);
  fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
  save_checkpoint(out, params);
  std::cout << "warm-start checkpoint: " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& variant, std::int64_t seed,
              const std::string& out) {
  ExperimentSpec spec = parse_config(config);
  if (!variant.empty()) spec.variant = parse_variant(variant);
  if (!out.empty()) spec.out_dir = out;
  RunResult r = run_experiment(spec, seed);
  std::cout << "metrics: " << r.metrics_json.string() << "\n";
  std::printf("acc=%.2f noisy=%.2f gsr=%.2f crs=%.2f\n", 100.0 * r.metrics.acc,
              100.0 * r.metrics.noisy, 100.0 * r.metrics.gsr, 100.0 * r.metrics.crs);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& base_ckpt, const std::string& data,
             const std::string& out) {
  PolicyParams params = load_checkpoint(ckpt);
  PolicyParams base = base_ckpt.empty() ? params : load_checkpoint(base_ckpt);
  auto dataset = load_dataset(data);
  fs::path dir = fs::path(data).parent_path();
  fs::create_directories(out);
  AudioStore store;
  PredictionFile method_noisy = predict(params, dataset, dir, false, store);
  PredictionFile method_clean = predict(params, dataset, dir, true, store);
  PredictionFile base_clean = predict(base, dataset, dir, true, store);
  PredictionFile targets = targets_of(dataset);
  save_predictions(fs::path(out) / "preds_noisy.jsonl", method_noisy);
  save_predictions(fs::path(out) / "preds_clean.jsonl", method_clean);
  RunMetrics m = compute_metrics(method_noisy, method_clean, base_clean, targets);
  F1Scores f1 = f1_scores(method_noisy, targets, dataset.front().choices);
  m.f1_micro = f1.micro;
  m.f1_macro = f1.macro;
  m.f1_avg = f1.average;
  std::ofstream mj(fs::path(out) / "metrics.json");
  mj << metrics_to_json(m).dump(2) << "\n";
  std::printf("%-8s %6.2f\n%-8s %6.2f\n%-8s %6.2f\n%-8s %6.2f\n", "Acc", 100.0 * m.acc,
              "Noisy", 100.0 * m.noisy, "GSR", 100.0 * m.gsr, "CRS", 100.0 * m.crs);
  return 0;
}

int cmd_ablate(const std::string& ckpt, const std::string& data, const std::string& out,
               int window_size, int stride, int limit) {
  PolicyParams params = load_checkpoint(ckpt);
  auto dataset = load_dataset(data);
  fs::path dir = fs::path(data).parent_path();
  fs::create_directories(out);
  std::vector<GroundingReport> reports;
  nlohmann::json per_instance = nlohmann::json::array();
  int n = limit > 0 ? std::min<int>(limit, dataset.size()) : static_cast<int>(dataset.size());
  for (int i = 0; i < n; ++i) {
    const auto& inst = dataset[i];
    AudioClip clip = read_audio(resolve_ref(dir, inst.noisy_audio_ref));
    GroundingReport r = grounding_report(params, inst, clip, window_size, stride);
    nlohmann::json windows = nlohmann::json::object();
    for (const auto& [w, d] : r.window_effects)
      windows[std::to_string(w.start) + ":" + std::to_string(w.length)] = d;
    per_instance.push_back({{"id", r.instance_id},
                            {"margin", r.margin},
                            {"window_effects", windows},
                            {"audio_anchor", r.audio_anchor}});
    reports.push_back(std::move(r));
  }
  std::ofstream js(fs::path(out) / "grounding.json");
  js << nlohmann::json({{"window_size", window_size},
                        {"stride", stride},
                        {"instances", per_instance}})
            .dump(2)
     << "\n";
  auto [dh, gh] = grounding_histogram(reports, 20);
  auto write_hist = [&](const char* name, const Histogram& h) {
    std::ofstream csv(fs::path(out) / name);
    csv << "bin_lo,bin_hi,count\n";
    for (size_t b = 0; b < h.counts.size(); ++b)
      csv << h.edges[b] << "," << h.edges[b + 1] << "," << h.counts[b] << "\n";
  };
  write_hist("hist_d.csv", dh);
  write_hist("hist_g.csv", gh);
  std::cout << "grounding report: " << (fs::path(out) / "grounding.json").string() << "\n";
  return 0;
}

int cmd_report(const std::string& config, const std::string& out) {
  ExperimentSpec spec = parse_config(config);
  if (!out.empty()) spec.out_dir = out;
  std::vector<Variant> grid = {Variant::kGrpoOnly, Variant::kDistillOnly,
                               Variant::kEchoDistill};
  std::map<std::string, RunMetrics> mean;
  nlohmann::json rows = nlohmann::json::array();
  for (Variant v : grid) {
    ExperimentSpec s = spec;
    s.variant = v;
    RunMetrics acc{};
    for (std::int64_t seed : spec.seeds) {
      RunResult r = run_experiment(s, seed);
      acc.acc += r.metrics.acc;
      acc.noisy += r.metrics.noisy;
      acc.gsr += r.metrics.gsr;
      acc.crs += r.metrics.crs;
    }
    double n = static_cast<double>(spec.seeds.size());
    acc.acc /= n;
    acc.noisy /= n;
    acc.gsr /= n;
    acc.crs /= n;
    mean[variant_name(v)] = acc;
  }
  const RunMetrics& ref = mean["grpo_only"];
  std::printf("%-14s %8s %8s %8s %8s %9s %9s %9s\n", "Variant", "Acc", "Noisy", "GSR",
              "CRS", "dAcc", "dNoisy", "dGSR");
  for (Variant v : grid) {
    const RunMetrics& m = mean[variant_name(v)];
    std::printf("%-14s %8.2f %8.2f %8.2f %8.2f %+9.2f %+9.2f %+9.2f\n",
                variant_name(v).c_str(), 100 * m.acc, 100 * m.noisy, 100 * m.gsr,
                100 * m.crs, 100 * (m.acc - ref.acc), 100 * (m.noisy - ref.noisy),
                100 * (m.gsr - ref.gsr));
    rows.push_back({{"variant", variant_name(v)},
                    {"acc", m.acc},
                    {"noisy", m.noisy},
                    {"gsr", m.gsr},
                    {"crs", m.crs},
                    {"gain_acc_vs_grpo", m.acc - ref.acc},
                    {"gain_noisy_vs_grpo", m.noisy - ref.noisy},
                    {"gain_gsr_vs_grpo", m.gsr - ref.gsr}});
  }
  fs::create_directories(spec.out_dir);
  std::ofstream js(fs::path(spec.out_dir) / "ablation_grid.json");
  js << rows.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EchoDistill: noisy-to-clean self-distillation on a synthetic audio task"};
  app.require_subcommand(1);

  std::string config, out, variant, ckpt, base_ckpt, data;
  std::int64_t seed = 0;
  int num = 100, classes = 4, window_start = 0, window_len = 0;
  int window_size = 8, stride = 8, limit = 0;
  std::vector<double> snrs;

  auto* gen = app.add_subcommand("gen", "generate a paired clean/noisy dataset");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed);
  gen->add_option("--num", num, "number of instances");
  gen->add_option("--classes", classes, "number of answer classes (2-4)");
  gen->add_option("--snrs", snrs, "SNR grid in dB");
  gen->add_option("--window-start", window_start, "evidence window start frame");
  gen->add_option("--window-len", window_len, "evidence window length (0 = whole clip)");

  auto* warm = app.add_subcommand("warmstart", "supervised warm-start on clean audio");
  warm->add_option("--config", config)->required();
  warm->add_option("--seed", seed);
  warm->add_option("--out", out, "checkpoint path")->required();

  auto* train = app.add_subcommand("train", "run one experiment (warm-start, train, eval)");
  train->add_option("--config", config)->required();
  train->add_option("--variant", variant, "echodistill|grpo_only|distill_only|initial");
  train->add_option("--seed", seed);
  train->add_option("--out", out, "output directory override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--base-ckpt", base_ckpt, "no-method reference checkpoint");
  eval->add_option("--data", data, "dataset JSONL")->required();
  eval->add_option("--out", out)->required();

  auto* ablate = app.add_subcommand("ablate", "grounding diagnostics (margins, d, g)");
  ablate->add_option("--ckpt", ckpt)->required();
  ablate->add_option("--data", data)->required();
  ablate->add_option("--out", out)->required();
  ablate->add_option("--window-size", window_size);
  ablate->add_option("--stride", stride);
  ablate->add_option("--limit", limit, "max instances (0 = all)");

  auto* report = app.add_subcommand("report", "ablation grid over variants and seeds");
  report->add_option("--config", config)->required();
  report->add_option("--out", out, "output directory override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(out, seed, num, classes, snrs, window_start, window_len);
    if (warm->parsed()) return cmd_warmstart(config, seed, out);
    if (train->parsed()) return cmd_train(config, variant, seed, out);
    if (eval->parsed()) return cmd_eval(ckpt, base_ckpt, data, out);
    if (ablate->parsed()) return cmd_ablate(ckpt, data, out, window_size, stride, limit);
    if (report->parsed()) return cmd_report(config, out);
  } catch (const MissingField& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const TargetNotInChoices& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const AudioMismatch& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
