#include "grounder/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "grounder/box.hpp"
#include "grounder/error.hpp"

namespace grounder {

namespace {

constexpr std::array<const char*, 8> kPhraseTypes = {"people",  "clothing",    "bodyparts", "animals",
                                                     "vehicles", "instruments", "scene",     "other"};
constexpr std::array<const char*, 16> kNouns = {"man",  "shirt", "hand", "dog",  "car",  "guitar", "street", "ball",
                                                "woman", "hat",  "face", "horse", "bike", "drum",  "water",  "sign"};
constexpr std::array<const char*, 16> kModifiers = {"red",   "blue",  "green",  "small",   "large", "old",
                                                    "young", "white", "black",  "wooden",  "tall",  "bright",
                                                    "dark",  "striped", "round", "yellow"};

template <std::size_t N>
std::string pool_word(const std::array<const char*, N>& pool, std::size_t i) {
  std::string w = pool[i % N];
  if (i >= N) w += std::to_string(i / N + 1);
  return w;
}

std::uint64_t split_code(std::string_view split) {
  if (split == "train") return 1;
  if (split == "val") return 2;
  if (split == "test") return 3;
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : split) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::size_t max_names(const SyntheticConfig& c) {
  const std::size_t m = c.modifiers;
  return c.nouns * (1 + m + m * (m - (m > 0 ? 1 : 0)) / 2);
}

}  // namespace

void SyntheticConfig::validate() const {
  if (nouns < 1) throw ConfigError("synthetic task needs at least one noun");
  if (vocab_size < Vocabulary::reserved().size() + nouns + modifiers) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " cannot hold " + std::to_string(nouns) +
                      " nouns and " + std::to_string(modifiers) + " modifiers plus reserved tokens");
  }
  if (concepts < 1 || concepts > max_names(*this)) {
    throw ConfigError("cannot form " + std::to_string(concepts) + " distinct concept names");
  }
  if (proposals < 1 || feature_width < 1) throw ConfigError("proposals and feature_width must be positive");
  if (proposals > concepts) throw ConfigError("proposals per image exceed the number of concepts");
  if (proposals > grid_cols * grid_rows) {
    throw ConfigError("grid capacity " + std::to_string(grid_cols * grid_rows) + " is below " +
                      std::to_string(proposals) + " proposals");
  }
  if (!(image_width > 0.0) || !(image_height > 0.0)) throw ConfigError("image size must be positive");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (phrases_per_image < 1 || phrases_per_image > proposals) {
    throw ConfigError("phrases_per_image must lie in [1, proposals]");
  }
  if (held_out >= concepts) throw ConfigError("held_out must be below the number of concepts");
  if (concepts - held_out < phrases_per_image) {
    throw ConfigError("too few non-held-out concepts to name in training images");
  }
  if (train_count < 1) throw ConfigError("train_count must be at least 1");
}

SyntheticWorld make_world(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  SyntheticWorld world;
  world.config = config;

  std::vector<std::string> words(Vocabulary::reserved());
  const auto noun_id = [&](std::size_t i) { return static_cast<std::int32_t>(Vocabulary::reserved().size() + i); };
  const auto mod_id = [&](std::size_t i) { return noun_id(config.nouns + i); };
  for (std::size_t i = 0; i < config.nouns; ++i) words.push_back(pool_word(kNouns, i));
  for (std::size_t i = 0; i < config.modifiers; ++i) words.push_back(pool_word(kModifiers, i));
  for (std::size_t i = 0; words.size() < config.vocab_size; ++i) words.push_back("rare" + std::to_string(i));
  world.vocab = Vocabulary(std::move(words));

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> word_vec(world.vocab.size());
  for (std::size_t w = 0; w < config.nouns + config.modifiers; ++w) {
    auto& v = word_vec[static_cast<std::size_t>(noun_id(w))];
    v.resize(config.feature_width);
    for (double& x : v) x = normal(rng);
  }

  std::uniform_int_distribution<std::size_t> pick_noun(0, config.nouns - 1);
  std::uniform_int_distribution<std::size_t> pick_len(1, 3);
  std::set<std::vector<std::int32_t>> seen;
  for (std::size_t tries = 0; world.concepts.size() < config.concepts; ++tries) {
    if (tries > 100000) throw ConfigError("could not draw enough distinct concept names");
    const std::size_t n_mod = std::min(pick_len(rng) - 1, config.modifiers);
    std::vector<std::size_t> mods(config.modifiers);
    std::iota(mods.begin(), mods.end(), 0);
    std::shuffle(mods.begin(), mods.end(), rng);
    mods.resize(n_mod);
    std::sort(mods.begin(), mods.end());
    const std::size_t noun = pick_noun(rng);
    Concept c;
    for (std::size_t m : mods) c.name.push_back(mod_id(m));
    c.name.push_back(noun_id(noun));
    if (!seen.insert(c.name).second) continue;
    c.phrase_type = kPhraseTypes[noun % kPhraseTypes.size()];
    c.prototype.assign(config.feature_width, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.name.size()));
    for (std::int32_t t : c.name) {
      const auto& v = word_vec[static_cast<std::size_t>(t)];
      for (std::size_t k = 0; k < v.size(); ++k) c.prototype[k] += scale * v[k];
    }
    world.concepts.push_back(std::move(c));
  }

  if (config.held_out > 0) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < world.concepts.size(); ++i) {
      if (world.concepts[i].name.size() >= 2) candidates.push_back(i);
    }
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      if (candidates.size() < config.held_out) break;
      std::shuffle(candidates.begin(), candidates.end(), rng);
      std::set<std::size_t> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(config.held_out));
      std::set<std::int32_t> visible;
      for (std::size_t i = 0; i < world.concepts.size(); ++i) {
        if (!chosen.contains(i)) visible.insert(world.concepts[i].name.begin(), world.concepts[i].name.end());
      }
      found = std::all_of(chosen.begin(), chosen.end(), [&](std::size_t i) {
        const auto& name = world.concepts[i].name;
        return std::all_of(name.begin(), name.end(), [&](std::int32_t t) { return visible.contains(t); });
      });
      if (found) {
        for (std::size_t i : chosen) world.concepts[i].held_out = true;
      }
    }
    if (!found) {
      throw ConfigError("could not choose " + std::to_string(config.held_out) +
                        " held-out concepts whose words all occur in training names");
    }
  }
  return world;
}

std::size_t nearest_prototype(const SyntheticWorld& world, const Phrase& phrase, const ProposalSet& proposals) {
  const Concept* named = nullptr;
  for (const auto& c : world.concepts) {
    if (c.name == phrase.tokens) named = &c;
  }
  if (!named) throw PreconditionError("phrase does not name a concept of this world");
  std::size_t best = 0;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto row = proposals.features.row(i);
    double d = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) d += (row[k] - named->prototype[k]) * (row[k] - named->prototype[k]);
    if (i == 0 || d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

DatasetManifest generate_split(const SyntheticWorld& world, std::string_view split, std::size_t count) {
  const auto& cfg = world.config;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(split_code(split)),
                    static_cast<std::uint32_t>(split_code(split) >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> margin(0.02, 0.2);
  const bool training = split == "train";

  DatasetManifest ds;
  ds.split = std::string(split);
  ds.vocab_file = "vocab.txt";
  ds.vocab = world.vocab;
  ds.feature_width = cfg.feature_width;

  const double cell_w = cfg.image_width / static_cast<double>(cfg.grid_cols);
  const double cell_h = cfg.image_height / static_cast<double>(cfg.grid_rows);
  std::vector<std::size_t> concept_order(world.concepts.size());
  std::vector<std::size_t> cells(cfg.grid_cols * cfg.grid_rows);

  for (std::size_t n = 0; n < count; ++n) {
    std::iota(concept_order.begin(), concept_order.end(), 0);
    std::shuffle(concept_order.begin(), concept_order.end(), rng);
    std::vector<std::size_t> shown(concept_order.begin(),
                                   concept_order.begin() + static_cast<std::ptrdiff_t>(cfg.proposals));
    std::vector<std::size_t> nameable;
    for (std::size_t i = 0; i < shown.size(); ++i) {
      if (!training || !world.concepts[shown[i]].held_out) nameable.push_back(i);
    }
    if (nameable.size() < cfg.phrases_per_image) {
      // Swap held-out concepts for unused visible ones until enough can be named.
      for (std::size_t i = 0; i < shown.size() && nameable.size() < cfg.phrases_per_image; ++i) {
        if (!world.concepts[shown[i]].held_out) continue;
        for (std::size_t j = cfg.proposals; j < concept_order.size(); ++j) {
          if (!world.concepts[concept_order[j]].held_out) {
            std::swap(shown[i], concept_order[j]);
            nameable.push_back(i);
            break;
          }
        }
      }
      std::sort(nameable.begin(), nameable.end());
    }

    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    GroundingSample s;
    s.image_id = ds.split + "-" + std::to_string(n);
    std::vector<double> feats(cfg.proposals * cfg.feature_width);
    for (std::size_t i = 0; i < cfg.proposals; ++i) {
      const double x0 = static_cast<double>(cells[i] % cfg.grid_cols) * cell_w;
      const double y0 = static_cast<double>(cells[i] / cfg.grid_cols) * cell_h;
      Box b;
      b.x_min = std::round(x0 + margin(rng) * cell_w);
      b.x_max = std::round(x0 + cell_w - margin(rng) * cell_w);
      b.y_min = std::round(y0 + margin(rng) * cell_h);
      b.y_max = std::round(y0 + cell_h - margin(rng) * cell_h);
      s.proposals.boxes.push_back(b);
      const auto& proto = world.concepts[shown[i]].prototype;
      for (std::size_t k = 0; k < cfg.feature_width; ++k) {
        feats[i * cfg.feature_width + k] = proto[k] + cfg.noise * normal(rng);
      }
    }
    s.proposals.features = Tensor({cfg.proposals, cfg.feature_width}, std::move(feats));

    std::shuffle(nameable.begin(), nameable.end(), rng);
    nameable.resize(cfg.phrases_per_image);
    std::sort(nameable.begin(), nameable.end());
    for (std::size_t i : nameable) {
      const auto& c = world.concepts[shown[i]];
      Phrase p;
      p.tokens = c.name;
      p.sentence_id = static_cast<std::int64_t>(n);
      p.phrase_type = c.phrase_type;
      p.gt_box = s.proposals.boxes[i];
      p.gt_attention = i;
      s.phrases.push_back(std::move(p));
    }

    for (std::size_t i = 0; i < s.proposals.boxes.size(); ++i) {
      for (std::size_t j = i + 1; j < s.proposals.boxes.size(); ++j) {
        if (iou(s.proposals.boxes[i], s.proposals.boxes[j]) >= 0.5) {
          throw Error("synthetic generator produced overlapping proposals in " + s.image_id);
        }
      }
    }
    if (cfg.noise == 0.0) {
      for (const auto& p : s.phrases) {
        if (nearest_prototype(world, p, s.proposals) != *p.gt_attention) {
          throw Error("nearest-prototype self-check failed in " + s.image_id);
        }
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  SyntheticDataset out;
  out.world = make_world(config);
  out.train = generate_split(out.world, "train", config.train_count);
  out.val = generate_split(out.world, "val", config.val_count);
  out.test = generate_split(out.world, "test", config.test_count);
  return out;
}

}  // namespace grounder
