#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvpf/core/labels.hpp"

namespace nvpf::harness {

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [truth][pred]

struct EvalReport {
  double mAC = 0.0;
  double UAR = 0.0;
  double macro_F1 = 0.0;
  std::array<std::optional<double>, kNumClasses> per_class_accuracy{};  // recall; empty when absent
  Confusion confusion{};
  std::array<std::size_t, kNumClasses> support{};
  std::size_t samples = 0;
};

// mAC: overall accuracy. UAR: mean recall over classes present in the truth.
// Macro-F1: mean of 2tp / (2tp + fp + fn) over classes in truth or prediction.
inline EvalReport evaluate_predictions(const std::vector<GroupClass>& truth, const std::vector<GroupClass>& pred) {
  if (truth.size() != pred.size())
    throw DomainError("evaluate: " + std::to_string(truth.size()) + " labels but " + std::to_string(pred.size()) +
                      " predictions");
  if (truth.empty()) throw DomainError("evaluate: no samples");
  EvalReport r;
  r.samples = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) ++r.confusion[index_of(truth[i])][index_of(pred[i])];
  std::size_t correct = 0;
  std::array<std::size_t, kNumClasses> predicted{};
  for (std::size_t t = 0; t < kNumClasses; ++t)
    for (std::size_t p = 0; p < kNumClasses; ++p) {
      r.support[t] += r.confusion[t][p];
      predicted[p] += r.confusion[t][p];
      if (t == p) correct += r.confusion[t][p];
    }
  r.mAC = static_cast<double>(correct) / static_cast<double>(r.samples);

  double recall_sum = 0.0, f1_sum = 0.0;
  std::size_t present = 0, f1_classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t tp = r.confusion[c][c];
    const std::size_t fn = r.support[c] - tp;
    const std::size_t fp = predicted[c] - tp;
    if (r.support[c] > 0) {
      const double recall = static_cast<double>(tp) / static_cast<double>(r.support[c]);
      r.per_class_accuracy[c] = recall;
      recall_sum += recall;
      ++present;
    }
    if (r.support[c] > 0 || predicted[c] > 0) {
      f1_sum += static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
      ++f1_classes;
    }
  }
  r.UAR = recall_sum / static_cast<double>(present);
  r.macro_F1 = f1_sum / static_cast<double>(f1_classes);
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object(), support = nlohmann::json::object();
  for (auto c : kAllClasses) {
    const auto& a = r.per_class_accuracy[index_of(c)];
    per_class[std::string(to_string(c))] = a ? nlohmann::json(*a) : nlohmann::json();
    support[std::string(to_string(c))] = r.support[index_of(c)];
  }
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {{"mAC", r.mAC},
          {"UAR", r.UAR},
          {"macro_F1", r.macro_F1},
          {"F1_averaging", "macro"},
          {"per_class_accuracy", per_class},
          {"confusion_matrix", confusion},
          {"confusion_order", {"positive", "negative", "neutral"}},
          {"support", support},
          {"samples", r.samples}};
}

}  // namespace nvpf::harness
