#pragma once

// Robustness metric suite: unified exact match, Acc / Noisy / GSR, the
// composite score CRS, micro/macro/average F1, and net correction rate.
//
//   Acc   — method predictions on noisy input vs ground truth
//   Noisy — method predictions on noisy input vs no-method clean predictions
//   GSR   — method predictions on noisy input vs same-method clean predictions
//   CRS   — (Acc + Noisy + GSR) / 3
//
// Each metric uses its own valid set, excluding ids that are missing or
// carry the invalid marker in either compared file.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "echodistill/types.hpp"

namespace echodistill {

inline const std::string& invalid_marker() {
  static const std::string m = "INVALID";
  return m;
}

struct PredictionFile {
  std::map<std::string, std::string> entries;  // id -> predicted label or INVALID

  bool valid_at(const std::string& id) const {
    auto it = entries.find(id);
    return it != entries.end() && it->second != invalid_marker();
  }
  const std::string& at(const std::string& id) const { return entries.at(id); }
};

inline PredictionFile load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open predictions: " + path.string());
  PredictionFile f;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    std::string id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (f.entries.count(id)) throw ValidationError("duplicate prediction id: " + id);
    f.entries[id] = j.at("prediction").get<std::string>();
  }
  return f;
}

inline void save_predictions(const std::filesystem::path& path, const PredictionFile& f) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open predictions for write: " + path.string());
  for (const auto& [id, pred] : f.entries)
    out << nlohmann::json({{"id", id}, {"prediction", pred}}).dump() << "\n";
}

// the valid set for a pair of files over an id universe
inline std::vector<std::string> valid_ids(const PredictionFile& a, const PredictionFile& b,
                                          const std::set<std::string>& universe) {
  std::vector<std::string> out;
  for (const auto& id : universe)
    if (a.valid_at(id) && b.valid_at(id)) out.push_back(id);
  return out;
}

// fraction of valid ids where the two predictions agree
inline double exact_match(const PredictionFile& a, const PredictionFile& b,
                          const std::vector<std::string>& valid) {
  if (valid.empty())
    throw EmptyValidSet("exact match over an empty valid set is undefined");
  int agree = 0;
  for (const auto& id : valid)
    if (a.at(id) == b.at(id)) ++agree;
  return static_cast<double>(agree) / static_cast<double>(valid.size());
}

struct RunMetrics {
  double acc = 0.0;
  double noisy = 0.0;
  double gsr = 0.0;
  double crs = 0.0;
  double f1_micro = 0.0;
  double f1_macro = 0.0;
  double f1_avg = 0.0;
  double net_correction = 0.0;
  std::map<std::string, int> valid_counts;
};

// Acc, Noisy, GSR and CRS from the three prediction passes plus targets.
inline RunMetrics compute_metrics(const PredictionFile& method_noisy,
                                  const PredictionFile& method_clean,
                                  const PredictionFile& base_clean,
                                  const PredictionFile& targets) {
  std::set<std::string> universe;
  for (const auto& [id, _] : targets.entries) universe.insert(id);

  RunMetrics m;
  auto v_acc = valid_ids(method_noisy, targets, universe);
  auto v_noisy = valid_ids(method_noisy, base_clean, universe);
  auto v_gsr = valid_ids(method_noisy, method_clean, universe);
  m.valid_counts["acc"] = static_cast<int>(v_acc.size());
  m.valid_counts["noisy"] = static_cast<int>(v_noisy.size());
  m.valid_counts["gsr"] = static_cast<int>(v_gsr.size());
  m.acc = exact_match(method_noisy, targets, v_acc);
  m.noisy = exact_match(method_noisy, base_clean, v_noisy);
  m.gsr = exact_match(method_noisy, method_clean, v_gsr);
  m.crs = (m.acc + m.noisy + m.gsr) / 3.0;
  return m;
}

// (Corrected - Broken) / n_total * 100, flips relative to a reference system
inline double net_correction(const PredictionFile& method_noisy,
                             const PredictionFile& reference_noisy,
                             const PredictionFile& targets, int n_total) {
  if (n_total <= 0) throw ValidationError("n_total must be > 0");
  int corrected = 0, broken = 0;
  for (const auto& [id, target] : targets.entries) {
    bool method_right = method_noisy.valid_at(id) && method_noisy.at(id) == target;
    bool ref_right = reference_noisy.valid_at(id) && reference_noisy.at(id) == target;
    if (method_right && !ref_right) ++corrected;
    if (!method_right && ref_right) ++broken;
  }
  return static_cast<double>(corrected - broken) / static_cast<double>(n_total) * 100.0;
}

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
  double average = 0.0;
};

// Multiclass micro/macro F1. Invalid predictions contribute to the recall
// denominator of their target class but predict nothing.
inline F1Scores f1_scores(const PredictionFile& preds, const PredictionFile& targets,
                          const std::vector<std::string>& labels) {
  if (labels.empty()) throw ValidationError("f1_scores needs a non-empty label set");
  std::map<std::string, int> tp, predicted, support;
  for (const auto& l : labels) tp[l] = predicted[l] = support[l] = 0;
  for (const auto& [id, target] : targets.entries) {
    support[target]++;
    if (!preds.valid_at(id)) continue;
    const std::string& p = preds.at(id);
    predicted[p]++;
    if (p == target) tp[target]++;
  }
  double macro_sum = 0.0;
  int tp_total = 0, pred_total = 0, support_total = 0;
  for (const auto& l : labels) {
    double prec = predicted[l] > 0 ? static_cast<double>(tp[l]) / predicted[l] : 0.0;
    double rec = support[l] > 0 ? static_cast<double>(tp[l]) / support[l] : 0.0;
    double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    macro_sum += f1;
    tp_total += tp[l];
    pred_total += predicted[l];
    support_total += support[l];
  }
  F1Scores out;
  out.macro = macro_sum / static_cast<double>(labels.size());
  double micro_prec = pred_total > 0 ? static_cast<double>(tp_total) / pred_total : 0.0;
  double micro_rec = support_total > 0 ? static_cast<double>(tp_total) / support_total : 0.0;
  out.micro = (micro_prec + micro_rec) > 0.0
                  ? 2.0 * micro_prec * micro_rec / (micro_prec + micro_rec)
                  : 0.0;
  out.average = (out.micro + out.macro) / 2.0;
  return out;
}

inline nlohmann::json metrics_to_json(const RunMetrics& m) {
  return {
      {"acc", m.acc},
      {"noisy", m.noisy},
      {"gsr", m.gsr},
      {"crs", m.crs},
      {"f1_micro", m.f1_micro},
      {"f1_macro", m.f1_macro},
      {"f1_avg", m.f1_avg},
      {"net_correction", m.net_correction},
      {"valid_counts", m.valid_counts},
  };
}

}  // namespace echodistill
