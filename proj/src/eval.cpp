#include "grounder/eval.hpp"

#include <charconv>
#include <json.hpp>
#include <sstream>

#include "grounder/error.hpp"
#include "grounder/ops.hpp"
#include "grounder/parallel.hpp"

namespace grounder {

bool is_correct(const Box& selected, const Box& gt) { return iou(selected, gt) > kIouThreshold; }

double grounding_accuracy(std::span<const std::pair<Box, Box>> predictions) {
  if (predictions.empty()) throw PreconditionError("grounding_accuracy: no predictions");
  std::size_t correct = 0;
  for (const auto& [selected, gt] : predictions) correct += is_correct(selected, gt) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double proposal_upperbound(const DatasetManifest& dataset) {
  std::size_t total = 0;
  std::size_t covered = 0;
  for (const auto& s : dataset.samples) {
    for (const auto& p : s.phrases) {
      if (!p.gt_box) continue;
      ++total;
      for (const auto& b : s.proposals.boxes) {
        if (is_correct(b, *p.gt_box)) {
          ++covered;
          break;
        }
      }
    }
  }
  if (total == 0) throw PreconditionError("proposal_upperbound: no phrase has a ground-truth box");
  return static_cast<double>(covered) / static_cast<double>(total);
}

namespace {

// Greedy core; phrases left over once boxes run out stay unassigned.
std::vector<std::optional<std::size_t>> greedy_assign(const std::vector<std::vector<double>>& scores) {
  const std::size_t p_count = scores.size();
  const std::size_t b_count = p_count == 0 ? 0 : scores[0].size();
  for (const auto& row : scores) {
    if (row.size() != b_count) throw DimensionError("sentence_constraint_assign: ragged score matrix");
  }
  std::vector<std::optional<std::size_t>> out(p_count);
  std::vector<bool> box_used(b_count, false);
  const std::size_t rounds = std::min(p_count, b_count);
  for (std::size_t r = 0; r < rounds; ++r) {
    std::size_t best_p = p_count;
    std::size_t best_b = b_count;
    for (std::size_t p = 0; p < p_count; ++p) {
      if (out[p]) continue;
      for (std::size_t b = 0; b < b_count; ++b) {
        if (box_used[b]) continue;
        // Strict comparison keeps the earlier (lower phrase, lower box) pair on ties.
        if (best_p == p_count || scores[p][b] > scores[best_p][best_b]) {
          best_p = p;
          best_b = b;
        }
      }
    }
    out[best_p] = best_b;
    box_used[best_b] = true;
  }
  return out;
}

}  // namespace

std::vector<std::size_t> sentence_constraint_assign(const std::vector<std::vector<double>>& scores) {
  if (!scores.empty() && scores.size() > scores[0].size()) {
    throw PreconditionError("sentence_constraint_assign: " + std::to_string(scores.size()) +
                            " phrases but only " + std::to_string(scores[0].size()) + " boxes");
  }
  std::vector<std::size_t> out;
  out.reserve(scores.size());
  for (const auto& a : greedy_assign(scores)) out.push_back(*a);
  return out;
}

EvalReport report_from_scores(const DatasetManifest& dataset,
                              const std::vector<std::vector<std::vector<double>>>& scores,
                              const EvalOptions& options) {
  if (scores.size() != dataset.samples.size()) {
    throw DimensionError("report: score list does not match the dataset");
  }
  EvalReport rep;
  rep.sentence_constraint = options.sentence_constraint;
  if (options.training_phrases) rep.novel = Accuracy{};
  std::size_t covered = 0;

  for (std::size_t si = 0; si < dataset.samples.size(); ++si) {
    const auto& sample = dataset.samples[si];
    const auto& sample_scores = scores[si];
    if (sample_scores.size() != sample.phrases.size()) {
      throw DimensionError("report: score list does not match phrases of " + sample.image_id);
    }
    std::vector<std::size_t> selected(sample.phrases.size());
    for (std::size_t p = 0; p < sample.phrases.size(); ++p) {
      if (sample_scores[p].size() != sample.proposals.size()) {
        throw DimensionError("report: score vector does not match proposals of " + sample.image_id);
      }
      selected[p] = ops::argmax(sample_scores[p]);
    }
    if (options.sentence_constraint) {
      std::map<std::int64_t, std::vector<std::size_t>> sentences;
      for (std::size_t p = 0; p < sample.phrases.size(); ++p) {
        sentences[sample.phrases[p].sentence_id].push_back(p);
      }
      for (const auto& [sid, members] : sentences) {
        if (members.size() < 2) continue;
        std::vector<std::vector<double>> sub;
        for (std::size_t p : members) sub.push_back(sample_scores[p]);
        const auto assigned = greedy_assign(sub);
        for (std::size_t k = 0; k < members.size(); ++k) {
          if (assigned[k]) selected[members[k]] = *assigned[k];
        }
      }
    }
    for (std::size_t p = 0; p < sample.phrases.size(); ++p) {
      const auto& phrase = sample.phrases[p];
      if (!phrase.gt_box) continue;
      const bool ok = is_correct(sample.proposals.boxes[selected[p]], *phrase.gt_box);
      auto tally = [ok](Accuracy& a) {
        ++a.count;
        a.correct += ok ? 1 : 0;
      };
      tally(rep.overall);
      tally(rep.per_type[phrase.phrase_type.empty() ? "untyped" : phrase.phrase_type]);
      if (rep.novel && !options.training_phrases->contains(phrase.tokens)) tally(*rep.novel);
      for (const auto& b : sample.proposals.boxes) {
        if (is_correct(b, *phrase.gt_box)) {
          ++covered;
          break;
        }
      }
    }
  }
  if (rep.overall.count > 0) {
    rep.proposal_upper_bound = static_cast<double>(covered) / static_cast<double>(rep.overall.count);
  }
  return rep;
}

std::vector<std::vector<std::vector<double>>> score_dataset(const DatasetManifest& dataset,
                                                            const ModelParams& model) {
  std::vector<std::vector<std::vector<double>>> scores(dataset.samples.size());
  parallel_for(dataset.samples.size(), [&](std::size_t i) {
    const auto& s = dataset.samples[i];
    scores[i].reserve(s.phrases.size());
    for (const auto& p : s.phrases) scores[i].push_back(ground_scores(model, p, s.proposals));
  });
  return scores;
}

EvalReport report(const DatasetManifest& dataset, const ModelParams& model, const EvalOptions& options) {
  return report_from_scores(dataset, score_dataset(dataset, model), options);
}

namespace {

// Shortest text that reads back as the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::ordered_json accuracy_json(const Accuracy& a) {
  nlohmann::ordered_json j;
  j["count"] = a.count;
  j["correct"] = a.correct;
  j["accuracy"] = a.value();
  return j;
}

}  // namespace

std::string report_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["evaluated"] = rep.overall.count;
  j["accuracy"] = rep.overall.value();
  j["correct"] = rep.overall.correct;
  j["proposal_upper_bound"] = rep.proposal_upper_bound;
  j["sentence_constraint"] = rep.sentence_constraint;
  nlohmann::ordered_json types = nlohmann::ordered_json::object();
  for (const auto& [name, a] : rep.per_type) types[name] = accuracy_json(a);
  j["per_type"] = std::move(types);
  j["novel"] = rep.novel ? accuracy_json(*rep.novel) : nlohmann::ordered_json(nullptr);
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& rep) {
  std::ostringstream out;
  out << "group,count,correct,accuracy\n";
  auto row = [&out](const std::string& name, const Accuracy& a) {
    out << name << ',' << a.count << ',' << a.correct << ',' << num(a.value()) << '\n';
  };
  row("overall", rep.overall);
  for (const auto& [name, a] : rep.per_type) row("type:" + name, a);
  if (rep.novel) row("novel", *rep.novel);
  return out.str();
}

}  // namespace grounder
