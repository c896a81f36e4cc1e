#include "grounder/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>

#include "grounder/error.hpp"
#include "grounder/layers.hpp"

namespace grounder {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

const std::vector<std::string>& Vocabulary::reserved() {
  static const std::vector<std::string> words{"<unk>", "<s>", "</s>"};
  return words;
}

Vocabulary::Vocabulary() : Vocabulary(reserved()) {}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  const auto& res = reserved();
  if (words_.size() < res.size() || !std::equal(res.begin(), res.end(), words_.begin())) {
    throw DataError("vocabulary must start with <unk>, <s>, </s>");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("vocabulary has duplicate token '" + words_[i] + "'");
    }
  }
}

std::int32_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? token::kUnk : it->second;
}

const std::string& Vocabulary::word(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<std::int32_t> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus) {
    for (const auto& w : sentence) ++counts[w];
  }
  const auto& res = Vocabulary::reserved();
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [w, c] : counts) {
    if (c >= min_freq && std::find(res.begin(), res.end(), w) == res.end()) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words(res);
  for (auto& [w, c] : kept) words.push_back(w);
  return Vocabulary(std::move(words));
}

Vocabulary load_vocab(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) throw ParseError(path.string(), lineno, "empty token");
    words.push_back(line);
  }
  try {
    return Vocabulary(std::move(words));
  } catch (const DataError& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

void save_vocab(const Vocabulary& vocab, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& w : vocab.words()) out << w << '\n';
}

std::size_t DatasetManifest::phrase_count() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.phrases.size();
  return n;
}

void DatasetManifest::validate() const {
  for (const auto& s : samples) {
    s.proposals.validate();
    if (s.proposals.feature_width() != feature_width) {
      throw DataError("sample " + s.image_id + " has feature width " +
                      std::to_string(s.proposals.feature_width()) + ", manifest declares " +
                      std::to_string(feature_width));
    }
    for (const auto& b : s.proposals.boxes) {
      if (!b.valid()) throw DataError("sample " + s.image_id + " has a degenerate proposal box");
    }
    for (const auto& p : s.phrases) {
      if (p.tokens.empty()) throw DataError("sample " + s.image_id + " has an empty phrase");
      for (std::int32_t t : p.tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab.size()) {
          throw DataError("sample " + s.image_id + " has token id " + std::to_string(t) +
                          " outside the vocabulary");
        }
      }
      if (p.gt_box && !(p.gt_box->valid())) {
        throw DataError("sample " + s.image_id + " has a gt_box with non-positive area");
      }
      if (p.gt_attention && *p.gt_attention >= s.proposals.size()) {
        throw DataError("sample " + s.image_id + " has gt_attention outside its proposals");
      }
    }
  }
}

fs::path feature_file_for(const fs::path& manifest_path) {
  fs::path p = manifest_path;
  p.replace_extension(".features.bin");
  return p;
}

namespace {

ojson box_json(const Box& b) { return ojson::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box parse_box(const ojson& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

void save_manifest(const DatasetManifest& ds, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path feat_path = feature_file_for(path);
  std::ofstream out(path, std::ios::binary);
  std::ofstream feat(feat_path, std::ios::binary);
  if (!out || !feat) throw DataError("cannot write manifest " + path.string());

  const std::string vocab_file = ds.vocab_file.empty() ? "vocab.txt" : ds.vocab_file;
  ojson header;
  header["format"] = "grounder-manifest";
  header["version"] = 1;
  header["split"] = ds.split;
  header["vocab"] = vocab_file;
  header["feature_width"] = ds.feature_width;
  header["feature_file"] = feat_path.filename().string();
  header["samples"] = ds.samples.size();
  out << header.dump() << '\n';

  std::uint64_t offset = 0;
  for (const auto& s : ds.samples) {
    ojson rec;
    rec["image_id"] = s.image_id;
    rec["feature_offset"] = offset;
    ojson boxes = ojson::array();
    for (const auto& b : s.proposals.boxes) boxes.push_back(box_json(b));
    rec["boxes"] = std::move(boxes);
    ojson phrases = ojson::array();
    for (const auto& p : s.phrases) {
      ojson pj;
      pj["tokens"] = p.tokens;
      pj["sentence_id"] = p.sentence_id;
      if (!p.phrase_type.empty()) pj["type"] = p.phrase_type;
      if (p.gt_box) pj["gt_box"] = box_json(*p.gt_box);
      if (p.gt_attention) pj["gt_attention"] = *p.gt_attention;
      phrases.push_back(std::move(pj));
    }
    rec["phrases"] = std::move(phrases);
    out << rec.dump() << '\n';

    const auto& data = s.proposals.features.storage();
    feat.write(reinterpret_cast<const char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)));
    offset += data.size() * sizeof(double);
  }
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  save_vocab(ds.vocab, dir / vocab_file);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const std::string where = path.string();
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");

  std::string line;
  std::size_t lineno = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, lineno, e.what());
    }
  };

  if (!std::getline(in, line)) throw ParseError(where, 1, "missing header");
  ++lineno;
  DatasetManifest ds;
  std::ifstream feat;
  std::uint64_t feat_size = 0;
  try {
    ojson header = parse_line(line);
    if (header.value("format", "") != "grounder-manifest") {
      throw ParseError(where, lineno, "not a grounder manifest");
    }
    if (header.at("version").get<int>() != 1) throw ParseError(where, lineno, "unsupported version");
    ds.split = header.at("split").get<std::string>();
    ds.vocab_file = header.at("vocab").get<std::string>();
    ds.feature_width = header.at("feature_width").get<std::size_t>();
    if (ds.feature_width == 0) throw ParseError(where, lineno, "feature_width must be positive");
    const fs::path feat_path = dir / header.at("feature_file").get<std::string>();
    feat.open(feat_path, std::ios::binary);
    if (!feat) throw DataError("cannot open feature file " + feat_path.string());
    feat_size = fs::file_size(feat_path);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, lineno, e.what());
  }
  ds.vocab = load_vocab(dir / ds.vocab_file);
  const auto vocab_size = static_cast<std::int64_t>(ds.vocab.size());

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ojson rec = parse_line(line);
    try {
      GroundingSample s;
      s.image_id = rec.at("image_id").get<std::string>();
      for (const auto& b : rec.at("boxes")) s.proposals.boxes.push_back(parse_box(b));
      const std::size_t n = s.proposals.boxes.size();
      if (n == 0) throw DataError("sample has no proposals");
      const auto offset = rec.at("feature_offset").get<std::uint64_t>();
      const std::uint64_t bytes = n * ds.feature_width * sizeof(double);
      if (offset + bytes > feat_size) throw DataError("feature offset beyond end of feature file");
      std::vector<double> values(n * ds.feature_width);
      feat.seekg(static_cast<std::streamoff>(offset));
      feat.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
      s.proposals.features = Tensor({n, ds.feature_width}, std::move(values));
      for (const auto& pj : rec.at("phrases")) {
        Phrase p;
        for (const auto& t : pj.at("tokens")) {
          const auto id = t.get<std::int64_t>();
          p.tokens.push_back(id >= 0 && id < vocab_size ? static_cast<std::int32_t>(id) : token::kUnk);
        }
        if (p.tokens.empty()) throw DataError("phrase has no tokens");
        p.sentence_id = pj.value("sentence_id", std::int64_t{0});
        p.phrase_type = pj.value("type", std::string());
        if (pj.contains("gt_box")) p.gt_box = parse_box(pj["gt_box"]);
        if (pj.contains("gt_attention")) p.gt_attention = pj["gt_attention"].get<std::size_t>();
        s.phrases.push_back(std::move(p));
      }
      ds.samples.push_back(std::move(s));
    } catch (const ParseError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, lineno, e.what());
    } catch (const Error& e) {
      throw ParseError(where, lineno, e.what());
    }
  }
  try {
    ds.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return ds;
}

void assign_gt_attention(GroundingSample& sample) {
  for (auto& p : sample.phrases) {
    if (!p.gt_box) continue;
    p.gt_attention.reset();
    double best = 0.5;
    for (std::size_t i = 0; i < sample.proposals.boxes.size(); ++i) {
      const double v = iou(sample.proposals.boxes[i], *p.gt_box);
      if (v > best) {
        best = v;
        p.gt_attention = i;
      }
    }
  }
}

void assign_gt_attention(DatasetManifest& dataset) {
  for (auto& s : dataset.samples) assign_gt_attention(s);
}

void mask_supervision(DatasetManifest& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw PreconditionError("mask_supervision: fraction must lie in [0, 1]");
  }
  std::vector<Phrase*> annotated;
  for (auto& s : dataset.samples) {
    for (auto& p : s.phrases) {
      if (p.gt_attention) annotated.push_back(&p);
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(annotated.begin(), annotated.end(), rng);
  const auto keep = static_cast<std::size_t>(std::round(fraction * static_cast<double>(annotated.size())));
  for (std::size_t i = keep; i < annotated.size(); ++i) annotated[i]->gt_attention.reset();
}

std::set<std::vector<std::int32_t>> phrase_set(const DatasetManifest& dataset) {
  std::set<std::vector<std::int32_t>> out;
  for (const auto& s : dataset.samples) {
    for (const auto& p : s.phrases) out.insert(p.tokens);
  }
  return out;
}

}  // namespace grounder
