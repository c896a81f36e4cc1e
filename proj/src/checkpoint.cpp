#include "grounder/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "grounder/config.hpp"
#include "grounder/error.hpp"

namespace grounder {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'R', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const Tensor& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) pod<std::uint64_t>(d);
    out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string where) : in_(in), where_(std::move(where)) {}
  template <class T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) fail("unexpected end of file");
    return v;
  }
  std::string bytes() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("unexpected end of file");
    return s;
  }
  Tensor tensor() {
    const auto rank = pod<std::uint32_t>();
    if (rank == 0 || rank > 8) fail("implausible tensor rank");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = pod<std::uint64_t>();
      if (d == 0 || d > (1ULL << 32)) fail("implausible tensor extent");
      total *= d;
    }
    if (total > (1ULL << 32)) fail("implausible tensor size");
    std::vector<double> values(total);
    in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (!in_) fail("unexpected end of file");
    return Tensor(shape, std::move(values));
  }
  [[noreturn]] void fail(const std::string& what) { throw DataError("checkpoint " + where_ + ": " + what); }

 private:
  std::ifstream& in_;
  std::string where_;
};

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  Writer w(out);
  const std::string config = to_json(ck.model.config).dump();
  out.write(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod(fnv1a(config));
  w.bytes(config);
  w.bytes(ck.run_config);

  ModelParams& model = const_cast<ModelParams&>(ck.model);  // stored_tensors only reads here
  const auto tensors = stored_tensors(model);
  w.pod<std::uint64_t>(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.bytes(name);
    w.tensor(*t);
  }
  w.pod<std::uint8_t>(ck.adam ? 1 : 0);
  if (ck.adam) {
    const auto& a = *ck.adam;
    w.pod(a.hyper.learning_rate);
    w.pod(a.hyper.beta1);
    w.pod(a.hyper.beta2);
    w.pod(a.hyper.epsilon);
    w.pod<std::uint64_t>(a.step);
    w.pod<std::uint64_t>(a.m.size());
    for (std::size_t i = 0; i < a.m.size(); ++i) {
      w.tensor(a.m[i]);
      w.tensor(a.v[i]);
    }
  }
  w.pod<std::uint64_t>(ck.metrics.size());
  for (const auto& m : ck.metrics) {
    w.pod<std::uint64_t>(m.epoch);
    w.pod(m.train_loss);
    w.pod(m.l_att);
    w.pod(m.l_rec);
    w.pod(m.val_accuracy);
  }
  w.pod<std::uint64_t>(ck.best_epoch);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic");
  if (r.pod<std::uint32_t>() != kVersion) r.fail("unsupported version");
  const auto hash = r.pod<std::uint64_t>();
  const std::string config = r.bytes();
  if (fnv1a(config) != hash) r.fail("config hash mismatch");

  Checkpoint ck;
  try {
    ck.model = init_model(model_config_from_json(Json::parse(config)));
  } catch (const nlohmann::json::exception& e) {
    r.fail(e.what());
  } catch (const Error& e) {
    r.fail(e.what());
  }
  ck.run_config = r.bytes();

  auto tensors = stored_tensors(ck.model);
  const auto count = r.pod<std::uint64_t>();
  if (count != tensors.size()) r.fail("tensor count does not match the model config");
  for (auto& [name, t] : tensors) {
    if (r.bytes() != name) r.fail("expected tensor " + name);
    Tensor loaded = r.tensor();
    if (loaded.shape() != t->shape()) r.fail("shape mismatch for " + name);
    *t = std::move(loaded);
  }
  if (r.pod<std::uint8_t>() != 0) {
    AdamState a;
    a.hyper.learning_rate = r.pod<double>();
    a.hyper.beta1 = r.pod<double>();
    a.hyper.beta2 = r.pod<double>();
    a.hyper.epsilon = r.pod<double>();
    a.step = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    if (n > tensors.size()) r.fail("too many optimizer tensors");
    for (std::uint64_t i = 0; i < n; ++i) {
      a.m.push_back(r.tensor());
      a.v.push_back(r.tensor());
    }
    ck.adam = std::move(a);
  }
  const auto n_metrics = r.pod<std::uint64_t>();
  if (n_metrics > (1ULL << 24)) r.fail("implausible metric count");
  for (std::uint64_t i = 0; i < n_metrics; ++i) {
    EpochMetrics m;
    m.epoch = r.pod<std::uint64_t>();
    m.train_loss = r.pod<double>();
    m.l_att = r.pod<double>();
    m.l_rec = r.pod<double>();
    m.val_accuracy = r.pod<double>();
    ck.metrics.push_back(m);
  }
  ck.best_epoch = r.pod<std::uint64_t>();
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return ck;
}

}  // namespace grounder
