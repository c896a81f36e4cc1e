#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "grounder/checkpoint.hpp"
#include "grounder/error.hpp"
#include "grounder/synthetic.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticConfig s;
    s.train_count = 40;
    s.val_count = 10;
    s.test_count = 10;
    const auto d = generate_synthetic(s);
    ModelConfig mc;
    mc.vocab_size = d.world.vocab.size();
    mc.feature_width = s.feature_width;
    mc.embed_dim = mc.hidden_dim = mc.attention_dim = mc.decoder_embed_dim = mc.decoder_hidden_dim = 8;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.mode = ForwardMode::kFullySupervised;
    auto r = train(d.train, &d.val, tc, init_model(mc));
    ck.model = std::move(r.best);
    ck.adam = std::move(r.adam);
    ck.metrics = r.metrics;
    ck.best_epoch = r.best_epoch;
    ck.run_config = R"({"mode":"full","epochs":2})";
    dir = testing::temp_dir("checkpoint");
  }

  Checkpoint ck;
  fs::path dir;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  ASSERT_TRUE(ck.model.config.batchnorm);
  save_checkpoint(ck, dir / "a.bin");
  const auto back = load_checkpoint(dir / "a.bin");
  EXPECT_EQ(back.model.config, ck.model.config);
  EXPECT_EQ(back.run_config, ck.run_config);
  EXPECT_EQ(back.metrics, ck.metrics);
  EXPECT_EQ(back.best_epoch, ck.best_epoch);
  ASSERT_TRUE(back.adam);
  EXPECT_EQ(back.adam->step, ck.adam->step);
  EXPECT_EQ(back.adam->hyper, ck.adam->hyper);
  for (std::size_t i = 0; i < ck.adam->m.size(); ++i) {
    EXPECT_TRUE(bit_equal(back.adam->m[i], ck.adam->m[i]));
    EXPECT_TRUE(bit_equal(back.adam->v[i], ck.adam->v[i]));
  }
  auto a = stored_tensors(ck.model);
  auto b = stored_tensors(const_cast<ModelParams&>(back.model));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(bit_equal(*a[i].second, *b[i].second)) << a[i].first;
  }
  save_checkpoint(back, dir / "b.bin");
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
}

TEST_F(CheckpointTest, WithoutOptimizerState) {
  ck.adam.reset();
  save_checkpoint(ck, dir / "c.bin");
  EXPECT_FALSE(load_checkpoint(dir / "c.bin").adam);
}

TEST_F(CheckpointTest, CorruptionIsDetected) {
  save_checkpoint(ck, dir / "good.bin");
  const std::string good = slurp(dir / "good.bin");

  auto bad = good;
  bad[0] = 'X';
  spit(dir / "bad.bin", bad);
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);

  bad = good;
  bad[8] = 9;  // version
  spit(dir / "bad.bin", bad);
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);

  bad = good;
  bad[12] ^= 0x01;  // config hash
  spit(dir / "bad.bin", bad);
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);

  spit(dir / "bad.bin", good.substr(0, good.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);

  spit(dir / "bad.bin", good + "x");
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);

  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), DataError);
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

}  // namespace
}  // namespace grounder
