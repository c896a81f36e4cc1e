#pragma once

// Central finite-difference check of the full model's analytic gradients.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "grounder/model.hpp"

namespace grounder {

struct GradcheckConfig {
  std::size_t vocab_size = 10;
  std::size_t proposals = 4;
  std::size_t embed_dim = 8;  // also attention and visual code width
  std::size_t hidden_dim = 8;
  std::size_t feature_width = 6;
  std::size_t batch = 3;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  std::uint64_t seed = 3;
};

struct GroupCheck {
  std::string graph;  // unsupervised or semi
  std::string group;  // parameter group, or "features"
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  bool passed() const;
};

// Unsupervised graph: reconstruction only, no batch norm. Semi graph:
// lambda * L_att + L_rec with batch norm on batch statistics and some
// phrases left without a target.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

}  // namespace grounder
