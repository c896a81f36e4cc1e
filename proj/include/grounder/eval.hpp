#pragma once

// Evaluation protocol: IoU@0.5 grounding accuracy, proposal upper bound,
// sentence-constraint assignment and the per-type / novel-phrase report.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grounder/box.hpp"
#include "grounder/data.hpp"
#include "grounder/model.hpp"

namespace grounder {

// A selection is correct when its IoU with the ground truth is strictly above this.
inline constexpr double kIouThreshold = 0.5;

bool is_correct(const Box& selected, const Box& gt);

// Mean of [iou(selected, gt) > 0.5]. Empty input is a PreconditionError.
double grounding_accuracy(std::span<const std::pair<Box, Box>> predictions);

// Fraction of phrases with a gt_box for which some proposal has IoU > 0.5.
// PreconditionError when no phrase has a gt_box.
double proposal_upperbound(const DatasetManifest& dataset);

// Greedy one-to-one assignment of phrases (rows) to boxes (columns): take the
// highest remaining score, ties to the lower phrase then the lower box.
// More phrases than boxes is a PreconditionError.
std::vector<std::size_t> sentence_constraint_assign(const std::vector<std::vector<double>>& scores);

struct Accuracy {
  std::size_t count = 0;
  std::size_t correct = 0;
  double value() const { return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count); }
  bool operator==(const Accuracy&) const = default;
};

struct EvalReport {
  Accuracy overall;
  std::map<std::string, Accuracy> per_type;  // untyped phrases under "untyped"
  std::optional<Accuracy> novel;             // present when training phrases are supplied
  double proposal_upper_bound = 0.0;
  bool sentence_constraint = false;
};

struct EvalOptions {
  bool sentence_constraint = false;
  // Phrases whose token sequence is absent from this set count as novel.
  const std::set<std::vector<std::int32_t>>* training_phrases = nullptr;
};

// scores[sample][phrase] holds the raw attention scores of that phrase.
// Phrases without a gt_box are not evaluated but still take part in the
// sentence constraint. A sentence with more phrases than proposals assigns
// greedily until boxes run out and falls back to argmax for the rest.
EvalReport report_from_scores(const DatasetManifest& dataset,
                              const std::vector<std::vector<std::vector<double>>>& scores,
                              const EvalOptions& options = {});

// Grounding-only forward over the dataset, then report_from_scores.
EvalReport report(const DatasetManifest& dataset, const ModelParams& model,
                  const EvalOptions& options = {});

std::vector<std::vector<std::vector<double>>> score_dataset(const DatasetManifest& dataset,
                                                            const ModelParams& model);

std::string report_json(const EvalReport& report);
// One row per group: group,count,correct,accuracy.
std::string report_csv(const EvalReport& report);

}  // namespace grounder
