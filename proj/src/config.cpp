#include "grounder/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "grounder/error.hpp"

namespace grounder {

const std::vector<ConfigKey>& config_schema() {
  using K = KeyType;
  static const std::vector<ConfigKey> schema = {
      {"train_manifest", K::kString, "", "training manifest"},
      {"val_manifest", K::kString, "", "validation manifest"},
      {"test_manifest", K::kString, "", "evaluation manifest"},
      {"out_dir", K::kString, "", "output directory (synth data, run directory, reports)"},
      {"checkpoint", K::kString, "", "checkpoint to evaluate"},
      {"mode", K::kString, "semi", "unsupervised | semi | full"},
      {"epochs", K::kInt, 20, "training epochs (0 writes the initial model)"},
      {"batch_size", K::kInt, 32, "phrases per batch"},
      {"lr", K::kDouble, 1e-3, "Adam learning rate"},
      {"beta1", K::kDouble, 0.9, "Adam beta1"},
      {"beta2", K::kDouble, 0.999, "Adam beta2"},
      {"adam_epsilon", K::kDouble, 1e-8, "Adam epsilon"},
      {"weight_decay", K::kOptDouble, nullptr, "L2 coefficient; null picks the mode default"},
      {"lambda", K::kOptDouble, nullptr, "attention loss weight; null picks the fraction default"},
      {"batchnorm", K::kOptBool, nullptr, "batch norm on the attention inputs; null picks the mode default"},
      {"supervision_fraction", K::kDouble, 1.0, "fraction of annotated phrases kept"},
      {"clip_norm", K::kDouble, 5.0, "global gradient norm limit, <= 0 disables"},
      {"attention_norm", K::kString, "all", "divide L_att by all phrases (all) or supervised ones (supervised)"},
      {"seed", K::kInt, 1, "seed for initialization, masking and shuffling"},
      {"log_batches", K::kBool, false, "write per-batch loss records"},
      {"vocab_size", K::kInt, 0, "model vocabulary, 0 takes it from the data"},
      {"embed_dim", K::kInt, 64, "phrase embedding width"},
      {"hidden_dim", K::kInt, 128, "phrase LSTM width"},
      {"attention_dim", K::kInt, 128, "attention MLP width"},
      {"decoder_embed_dim", K::kInt, 64, "decoder embedding and visual code width"},
      {"decoder_hidden_dim", K::kInt, 128, "decoder LSTM width"},
      {"share_embeddings", K::kBool, false, "decoder reuses the encoder embedding"},
      {"init", K::kString, "xavier", "init of non-LSTM layers: uniform | xavier | msra"},
      {"lstm_init_range", K::kDouble, 0.08, "uniform range of LSTM weights"},
      {"forget_bias", K::kDouble, 1.0, "LSTM forget gate bias"},
      {"sentence_constraint", K::kBool, false, "one box per phrase within a sentence at eval"},
      {"kernels", K::kString, "auto", "auto | scalar | avx2"},
      {"fractions", K::kDoubleList, Json::array({0.0, 0.0312, 0.0625, 0.125, 0.25, 0.5, 1.0}),
       "sweep supervision fractions; 0 trains unsupervised"},
      {"sweep_ablation", K::kBool, false, "sweep also trains fully supervised on the same labels"},
      {"synth_vocab_size", K::kInt, 60, "synthetic vocabulary size"},
      {"synth_concepts", K::kInt, 20, "synthetic concepts"},
      {"synth_nouns", K::kInt, 6, "synthetic nouns"},
      {"synth_modifiers", K::kInt, 10, "synthetic modifiers"},
      {"synth_proposals", K::kInt, 10, "proposals per image"},
      {"synth_feature_width", K::kInt, 16, "feature width"},
      {"synth_noise", K::kDouble, 0.3, "feature noise"},
      {"synth_phrases_per_image", K::kInt, 2, "phrases per image"},
      {"synth_held_out", K::kInt, 4, "concept names held out of training"},
      {"synth_train", K::kInt, 2000, "training images"},
      {"synth_val", K::kInt, 500, "validation images"},
      {"synth_test", K::kInt, 500, "test images"},
      {"synth_seed", K::kInt, 7, "seed of the synthetic world"},
      {"gc_vocab", K::kInt, 10, "gradcheck vocabulary"},
      {"gc_proposals", K::kInt, 4, "gradcheck proposals"},
      {"gc_embed", K::kInt, 8, "gradcheck embedding and attention width"},
      {"gc_hidden", K::kInt, 8, "gradcheck LSTM width"},
      {"gc_feature_width", K::kInt, 6, "gradcheck feature width"},
      {"gc_batch", K::kInt, 3, "gradcheck phrases"},
      {"gc_tolerance", K::kDouble, 1e-4, "gradcheck relative error limit"},
  };
  return schema;
}

namespace {

const ConfigKey& find_key(std::string_view name) {
  for (const auto& k : config_schema()) {
    if (name == k.name) return k;
  }
  throw ConfigError("unknown config key '" + std::string(name) + "'");
}

void check_type(const ConfigKey& key, const Json& v) {
  bool ok = false;
  switch (key.type) {
    case KeyType::kInt:
      ok = v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
      break;
    case KeyType::kDouble: ok = v.is_number(); break;
    case KeyType::kBool: ok = v.is_boolean(); break;
    case KeyType::kString: ok = v.is_string(); break;
    case KeyType::kOptDouble: ok = v.is_null() || v.is_number(); break;
    case KeyType::kOptBool: ok = v.is_null() || v.is_boolean(); break;
    case KeyType::kDoubleList:
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const Json& x) { return x.is_number(); });
      break;
  }
  if (!ok) throw ConfigError("config key '" + std::string(key.name) + "' has the wrong type");
}

double parse_double(std::string_view key, std::string_view text) {
  double out = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError("config key '" + std::string(key) + "' expects a number, got '" + std::string(text) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "' expects true or false, got '" + std::string(text) + "'");
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

void RunConfig::merge(const Json& object) {
  if (!object.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [name, v] : object.items()) {
    const auto& key = find_key(name);
    check_type(key, v);
    values_[key.name] = key.type == KeyType::kInt ? Json(static_cast<std::int64_t>(v.get<double>())) : v;
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  merge(j);
}

void RunConfig::set(std::string_view name, std::string_view text) {
  const auto& key = find_key(name);
  Json v;
  switch (key.type) {
    case KeyType::kInt: {
      const double d = parse_double(name, text);
      if (std::floor(d) != d) throw ConfigError("config key '" + std::string(name) + "' expects an integer");
      v = static_cast<std::int64_t>(d);
      break;
    }
    case KeyType::kDouble: v = parse_double(name, text); break;
    case KeyType::kBool: v = parse_bool(name, text); break;
    case KeyType::kString: v = std::string(text); break;
    case KeyType::kOptDouble:
      v = (text == "null" || text == "auto") ? Json(nullptr) : Json(parse_double(name, text));
      break;
    case KeyType::kOptBool:
      v = (text == "null" || text == "auto") ? Json(nullptr) : Json(parse_bool(name, text));
      break;
    case KeyType::kDoubleList: {
      v = Json::array();
      std::size_t start = 0;
      while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        v.push_back(parse_double(name, text.substr(start, comma - start)));
        start = comma + 1;
      }
      break;
    }
  }
  values_[key.name] = v;
}

const Json& RunConfig::at(std::string_view key) const {
  const auto& k = find_key(key);
  return values_.at(k.name);
}

std::int64_t RunConfig::get_int(std::string_view key) const { return at(key).get<std::int64_t>(); }

std::size_t RunConfig::get_size(std::string_view key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

double RunConfig::get_double(std::string_view key) const { return at(key).get<double>(); }
bool RunConfig::get_bool(std::string_view key) const { return at(key).get<bool>(); }
std::string RunConfig::get_string(std::string_view key) const { return at(key).get<std::string>(); }

std::optional<double> RunConfig::get_opt_double(std::string_view key) const {
  const auto& v = at(key);
  return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
}

std::optional<bool> RunConfig::get_opt_bool(std::string_view key) const {
  const auto& v = at(key);
  return v.is_null() ? std::nullopt : std::optional<bool>(v.get<bool>());
}

std::vector<double> RunConfig::get_doubles(std::string_view key) const {
  return at(key).get<std::vector<double>>();
}

ModelConfig RunConfig::model_config(std::size_t vocab_size, std::size_t feature_width) const {
  ModelConfig c;
  c.vocab_size = get_size("vocab_size") == 0 ? vocab_size : get_size("vocab_size");
  c.feature_width = feature_width;
  c.embed_dim = get_size("embed_dim");
  c.hidden_dim = get_size("hidden_dim");
  c.attention_dim = get_size("attention_dim");
  c.decoder_embed_dim = get_size("decoder_embed_dim");
  c.decoder_hidden_dim = get_size("decoder_hidden_dim");
  c.share_embeddings = get_bool("share_embeddings");
  c.lstm_init_range = get_double("lstm_init_range");
  c.forget_bias = get_double("forget_bias");
  try {
    c.init = parse_init_scheme(get_string("init"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  c.seed = static_cast<std::uint64_t>(get_int("seed"));
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  try {
    t.mode = parse_mode(get_string("mode"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  t.batch_size = get_size("batch_size");
  t.epochs = get_size("epochs");
  t.adam.learning_rate = get_double("lr");
  t.adam.beta1 = get_double("beta1");
  t.adam.beta2 = get_double("beta2");
  t.adam.epsilon = get_double("adam_epsilon");
  t.weight_decay = get_opt_double("weight_decay");
  t.lambda = get_opt_double("lambda");
  t.batchnorm = get_opt_bool("batchnorm");
  t.supervision_fraction = get_double("supervision_fraction");
  t.clip_norm = get_double("clip_norm");
  const auto norm = get_string("attention_norm");
  if (norm == "all") {
    t.attention_norm = AttentionNorm::kAllPhrases;
  } else if (norm == "supervised") {
    t.attention_norm = AttentionNorm::kSupervisedOnly;
  } else {
    throw ConfigError("attention_norm must be 'all' or 'supervised'");
  }
  t.seed = static_cast<std::uint64_t>(get_int("seed"));
  t.log_batches = get_bool("log_batches");
  return t;
}

SyntheticConfig RunConfig::synthetic_config() const {
  SyntheticConfig s;
  s.vocab_size = get_size("synth_vocab_size");
  s.concepts = get_size("synth_concepts");
  s.nouns = get_size("synth_nouns");
  s.modifiers = get_size("synth_modifiers");
  s.proposals = get_size("synth_proposals");
  s.feature_width = get_size("synth_feature_width");
  s.noise = get_double("synth_noise");
  s.phrases_per_image = get_size("synth_phrases_per_image");
  s.held_out = get_size("synth_held_out");
  s.train_count = get_size("synth_train");
  s.val_count = get_size("synth_val");
  s.test_count = get_size("synth_test");
  s.seed = static_cast<std::uint64_t>(get_int("synth_seed"));
  s.validate();
  return s;
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["vocab_size"] = c.vocab_size;
  j["feature_width"] = c.feature_width;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["attention_dim"] = c.attention_dim;
  j["decoder_embed_dim"] = c.decoder_embed_dim;
  j["decoder_hidden_dim"] = c.decoder_hidden_dim;
  j["share_embeddings"] = c.share_embeddings;
  j["batchnorm"] = c.batchnorm;
  j["lstm_init_range"] = c.lstm_init_range;
  j["forget_bias"] = c.forget_bias;
  j["init"] = to_string(c.init);
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  try {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.feature_width = j.at("feature_width").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.decoder_embed_dim = j.at("decoder_embed_dim").get<std::size_t>();
    c.decoder_hidden_dim = j.at("decoder_hidden_dim").get<std::size_t>();
    c.share_embeddings = j.at("share_embeddings").get<bool>();
    c.batchnorm = j.at("batchnorm").get<bool>();
    c.lstm_init_range = j.at("lstm_init_range").get<double>();
    c.forget_bias = j.at("forget_bias").get<double>();
    c.init = parse_init_scheme(j.at("init").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
}

}  // namespace grounder
