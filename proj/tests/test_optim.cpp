#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "grounder/error.hpp"
#include "grounder/optim.hpp"
#include "grounder/synthetic.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

SyntheticConfig small_world() {
  SyntheticConfig s;
  s.vocab_size = 30;
  s.concepts = 8;
  s.nouns = 3;
  s.modifiers = 4;
  s.proposals = 4;
  s.feature_width = 6;
  s.held_out = 2;
  s.train_count = 60;
  s.val_count = 20;
  s.test_count = 20;
  s.grid_cols = 2;
  s.grid_rows = 2;
  s.seed = 5;
  return s;
}

ModelConfig small_model(const DatasetManifest& ds) {
  ModelConfig c;
  c.vocab_size = ds.vocab.size();
  c.feature_width = ds.feature_width;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.attention_dim = 8;
  c.decoder_embed_dim = 8;
  c.decoder_hidden_dim = 8;
  c.seed = 2;
  return c;
}

// One scalar parameter group per tensor, driven directly.
struct Scalars {
  std::vector<Tensor> values, grads;
  std::vector<GradSlot> slots;
  AdamState state;

  Scalars(std::vector<Tensor> v, AdamHyper h) : values(std::move(v)) {
    for (const auto& t : values) grads.emplace_back(t.shape());
    for (std::size_t i = 0; i < values.size(); ++i) {
      slots.push_back({"p" + std::to_string(i), "g" + std::to_string(i), &values[i], &grads[i], i % 2 == 0});
      state.m.emplace_back(values[i].shape());
      state.v.emplace_back(values[i].shape());
    }
    state.hyper = h;
  }
};

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  AdamHyper h;
  h.learning_rate = 0.1;
  Scalars s({Tensor::vector({0.0})}, h);
  s.grads[0][0] = 1.0;
  adam_step(s.slots, s.state);
  EXPECT_NEAR(s.values[0][0], -0.1, 1e-8);
  EXPECT_EQ(s.state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::mt19937_64 rng(1);
  const auto init = testing::random_tensor({3, 4}, rng);
  Scalars s({init}, {});
  for (int i = 0; i < 10; ++i) adam_step(s.slots, s.state);
  EXPECT_EQ(s.values[0], init);
}

TEST(Adam, IdenticalGroupsGetIdenticalUpdates) {
  std::mt19937_64 rng(2);
  const auto init = testing::random_tensor({5}, rng);
  Scalars s({init, init}, {});
  for (int i = 0; i < 7; ++i) {
    const auto g = testing::random_tensor({5}, rng);
    s.grads[0] = g;
    s.grads[1] = g;
    adam_step(s.slots, s.state);
  }
  EXPECT_EQ(s.values[0], s.values[1]);
}

TEST(Adam, MatchesClosedFormRecurrence) {
  std::mt19937_64 rng(3);
  AdamHyper h;
  h.learning_rate = 0.01;
  Scalars s({Tensor::vector({0.5})}, h);
  double theta = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 20; ++t) {
    const double g = testing::random_vector(1, rng)[0];
    s.grads[0][0] = g;
    adam_step(s.slots, s.state);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(s.values[0][0], theta, 1e-12);
  }
}

TEST(Adam, StaysFiniteOnFiniteInputs) {
  std::mt19937_64 rng(4);
  Scalars s({testing::random_tensor({16}, rng)}, {});
  for (int i = 0; i < 50; ++i) {
    s.grads[0] = testing::random_tensor({16}, rng, i % 2 ? 1e-300 : 1e150);
    adam_step(s.slots, s.state);
    for (double x : s.values[0].values()) ASSERT_TRUE(std::isfinite(x));
    for (double x : s.state.v[0].values()) ASSERT_GE(x, 0.0);
  }
}

TEST(Adam, NanGradientNamesGroup) {
  Scalars s({Tensor::vector({1.0}), Tensor::vector({1.0})}, {});
  s.grads[1][0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(s.slots, s.state);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("g1"), std::string::npos);
  }
}

TEST(WeightDecay, Examples) {
  Scalars s({Tensor::vector({2.0, -4.0}), Tensor::vector({2.0, -4.0})}, {});
  apply_weight_decay(s.slots, 0.0);
  EXPECT_EQ(s.grads[0], Tensor({2}));
  apply_weight_decay(s.slots, 0.0005);
  EXPECT_DOUBLE_EQ(s.grads[0][0], 0.001);
  EXPECT_DOUBLE_EQ(s.grads[0][1], -0.002);
  EXPECT_EQ(s.grads[1], Tensor({2}));  // not a weight
  EXPECT_THROW(apply_weight_decay(s.slots, -1.0), PreconditionError);
}

TEST(WeightDecay, ModelBiasesAndBatchNormUntouched) {
  auto cfg = small_model(generate_synthetic(small_world()).train);
  cfg.batchnorm = true;
  auto model = init_model(cfg);
  auto grads = zeros_like(model);
  auto slots = bind_slots(model, grads);
  apply_weight_decay(slots, 0.5);
  for (const auto& s : slots) {
    const bool touched = std::any_of(s.grad->values().begin(), s.grad->values().end(), [](double g) { return g != 0.0; });
    if (!s.is_weight) {
      EXPECT_FALSE(touched) << s.name;
    }
    if (s.group == "batchnorm") {
      EXPECT_FALSE(s.is_weight) << s.name;
    }
  }
}

TEST(ClipGradNorm, RescalesOnlyAboveThreshold) {
  Scalars s({Tensor::vector({0, 0}), Tensor::vector({0})}, {});
  s.grads[0] = Tensor::vector({3, 0});
  s.grads[1] = Tensor::vector({4});
  EXPECT_DOUBLE_EQ(clip_grad_norm(s.slots, 10.0), 5.0);
  EXPECT_EQ(s.grads[1][0], 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(s.slots, 1.0), 5.0);
  EXPECT_NEAR(s.grads[0][0], 0.6, 1e-15);
  EXPECT_NEAR(s.grads[1][0], 0.8, 1e-15);
  s.grads[0] = Tensor::vector({3e200, 0});
  s.grads[1] = Tensor::vector({4e200});
  EXPECT_DOUBLE_EQ(clip_grad_norm(s.slots, 5.0), 5e200);
  EXPECT_NEAR(s.grads[0][0], 3.0, 1e-14);
}

TEST(DefaultLambda, Anchors) {
  EXPECT_EQ(default_lambda(0.0312), 200.0);
  EXPECT_EQ(default_lambda(0.125), 50.0);
  const double mid = default_lambda(0.0625);
  EXPECT_GT(mid, 50.0);
  EXPECT_LT(mid, 200.0);
  EXPECT_GT(default_lambda(0.25), 0.0);
  EXPECT_LT(default_lambda(1.0), default_lambda(0.5));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.supervision_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.mode = ForwardMode::kUnsupervised;
  EXPECT_EQ(c.resolved_weight_decay(), 0.0005);
  EXPECT_FALSE(c.resolved_batchnorm());
  c.mode = ForwardMode::kFullySupervised;
  EXPECT_EQ(c.resolved_weight_decay(), 0.0);
  EXPECT_TRUE(c.resolved_batchnorm());
}

class TrainLoop : public ::testing::Test {
 protected:
  SyntheticDataset data = generate_synthetic(small_world());
};

TEST_F(TrainLoop, ZeroLearningRateKeepsParameters) {
  auto model = init_model(small_model(data.train));
  TrainConfig c;
  c.epochs = 1;
  c.adam.learning_rate = 0.0;
  c.batchnorm = false;
  const auto r = train(data.train, &data.val, c, model);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.metrics[0].train_loss));
  auto a = learnable_params(model);
  auto b = learnable_params(const_cast<ModelParams&>(r.best));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].tensor, *b[i].tensor) << a[i].name;
}

TEST_F(TrainLoop, DeterministicAndBestSnapshotMatchesLog) {
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 8;
  c.supervision_fraction = 0.5;
  c.log_batches = true;
  const auto a = train(data.train, &data.val, c, init_model(small_model(data.train)));
  const auto b = train(data.train, &data.val, c, init_model(small_model(data.train)));
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.adam, b.adam);
  double best = -1.0;
  for (const auto& m : a.metrics) best = std::max(best, m.val_accuracy);
  EXPECT_EQ(a.best_val_accuracy, best);
  EXPECT_EQ(a.metrics[a.best_epoch - 1].val_accuracy, best);
  for (const auto& rec : a.batches) {
    ASSERT_TRUE(rec.l_att && rec.l_rec);
    EXPECT_NEAR(rec.objective, rec.lambda * *rec.l_att + *rec.l_rec, 1e-12 * std::abs(rec.objective));
  }
}

TEST_F(TrainLoop, ThreadCountDoesNotChangeResults) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.mode = ForwardMode::kUnsupervised;
  setenv("GROUNDER_THREADS", "1", 1);
  const auto a = train(data.train, nullptr, c, init_model(small_model(data.train)));
  setenv("GROUNDER_THREADS", "3", 1);
  const auto b = train(data.train, nullptr, c, init_model(small_model(data.train)));
  unsetenv("GROUNDER_THREADS");
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.adam, b.adam);
}

TEST_F(TrainLoop, DivergenceReportsEpochAndBatch) {
  TrainConfig c;
  c.epochs = 1;
  c.mode = ForwardMode::kUnsupervised;
  c.adam.learning_rate = 1e300;
  try {
    train(data.train, nullptr, c, init_model(small_model(data.train)));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST_F(TrainLoop, RejectsMismatchedModel) {
  auto cfg = small_model(data.train);
  cfg.feature_width += 1;
  EXPECT_THROW(train(data.train, nullptr, TrainConfig{}, init_model(cfg)), ConfigError);
}

}  // namespace
}  // namespace grounder
