#pragma once

// Dataset records, vocabulary, manifest I/O, ground-truth attention
// assignment and supervision masking.
//
// Manifest layout (JSON lines):
//   line 1   header  {"format":"grounder-manifest","version":1,"split":...,"vocab":...,
//                     "feature_width":d,"feature_file":...,"samples":n}
//   line 2.. sample  {"image_id":...,"feature_offset":<byte offset>,"boxes":[[x0,y0,x1,y1],...],
//                     "phrases":[{"tokens":[...],"sentence_id":s,"type":"...",
//                                 "gt_box":[...],"gt_attention":j}, ...]}
// "type", "gt_box" and "gt_attention" are optional. Proposal features live in
// the sidecar feature file as little-endian row-major float64, N x d per
// sample starting at feature_offset. The vocabulary file holds one token per
// line, line number = id, with <unk>, <s>, </s> first.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "grounder/attention.hpp"

namespace grounder {

struct GroundingSample {
  std::string image_id;
  ProposalSet proposals;
  std::vector<Phrase> phrases;

  bool operator==(const GroundingSample&) const = default;
};

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only
  // `words` in id order; the first entries must be the reserved tokens.
  explicit Vocabulary(std::vector<std::string> words);

  std::int32_t id(std::string_view word) const;  // <unk> when absent
  const std::string& word(std::int32_t id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<std::int32_t> encode(const std::vector<std::string>& words) const;
  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

  static const std::vector<std::string>& reserved();

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::int32_t, std::less<>> index_;
};

// Tokens with count >= min_freq, ordered by count descending then
// lexicographically, after the reserved tokens.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_freq);

Vocabulary load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

struct DatasetManifest {
  std::string split;
  std::string vocab_file;  // relative to the manifest directory
  Vocabulary vocab;
  std::size_t feature_width = 0;
  std::vector<GroundingSample> samples;

  std::size_t phrase_count() const;
  // Throws DataError when a sample breaks the manifest invariants.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

// Tokens at or beyond the vocabulary size are mapped to <unk>.
DatasetManifest load_manifest(const std::filesystem::path& path);
// Writes the manifest, its feature sidecar and its vocabulary file.
void save_manifest(const DatasetManifest& dataset, const std::filesystem::path& path);
std::filesystem::path feature_file_for(const std::filesystem::path& manifest_path);

// For every phrase with a gt_box: index of the proposal with the largest IoU
// if that IoU is strictly above 0.5, otherwise no target.
void assign_gt_attention(GroundingSample& sample);
void assign_gt_attention(DatasetManifest& dataset);

// Keeps gt_attention on round(fraction * annotated) phrases chosen by a
// seeded permutation of the annotated phrases; subsets nest as the fraction
// grows.
void mask_supervision(DatasetManifest& dataset, double fraction, std::uint64_t seed);

// Every distinct token sequence in the dataset.
std::set<std::vector<std::int32_t>> phrase_set(const DatasetManifest& dataset);

}  // namespace grounder
