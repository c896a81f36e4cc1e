#pragma once

// Synthetic grounding task. Each concept owns a 1-3 token name (modifiers
// then a noun) and a latent prototype built from per-word vectors, so names
// that share words have related prototypes. Every image shows N distinct
// concepts on disjoint grid cells; some of them are named by phrases whose
// gt_box is the proposal's own box.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "grounder/data.hpp"

namespace grounder {

struct SyntheticConfig {
  std::size_t vocab_size = 60;  // including reserved tokens and an unused tail
  std::size_t concepts = 20;
  std::size_t nouns = 6;
  std::size_t modifiers = 10;
  std::size_t proposals = 10;
  std::size_t feature_width = 16;
  double noise = 0.3;
  std::size_t phrases_per_image = 2;
  std::size_t held_out = 4;  // concept names never used in the training split
  std::size_t train_count = 2000;
  std::size_t val_count = 500;
  std::size_t test_count = 500;
  double image_width = 640.0;
  double image_height = 480.0;
  std::size_t grid_cols = 4;
  std::size_t grid_rows = 3;
  std::uint64_t seed = 7;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

struct Concept {
  std::vector<std::int32_t> name;
  std::vector<double> prototype;
  std::string phrase_type;
  bool held_out = false;
};

struct SyntheticWorld {
  SyntheticConfig config;
  Vocabulary vocab;
  std::vector<Concept> concepts;
};

SyntheticWorld make_world(const SyntheticConfig& config);

// Held-out concepts are never named in the split called "train". With zero
// noise every phrase is checked against the nearest-prototype oracle.
DatasetManifest generate_split(const SyntheticWorld& world, std::string_view split, std::size_t count);

struct SyntheticDataset {
  SyntheticWorld world;
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// Index of the proposal whose features are closest to the prototype of the
// concept named by `phrase`, ties to the lower index.
std::size_t nearest_prototype(const SyntheticWorld& world, const Phrase& phrase,
                              const ProposalSet& proposals);

}  // namespace grounder
