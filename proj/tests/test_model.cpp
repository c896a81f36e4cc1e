#include <gtest/gtest.h>

#include <cstdlib>

#include "grounder/error.hpp"
#include "grounder/gradcheck.hpp"
#include "grounder/model.hpp"
#include "grounder/ops.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

using testing::random_tensor;

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.feature_width = 5;
  c.embed_dim = 6;
  c.hidden_dim = 7;
  c.attention_dim = 8;
  c.decoder_embed_dim = 6;
  c.decoder_hidden_dim = 7;
  c.lstm_init_range = 0.3;
  c.seed = 9;
  return c;
}

struct Batch {
  std::vector<Phrase> phrases;
  std::vector<ProposalSet> proposals;
  std::vector<BatchItem> items;
};

Batch make_batch(std::size_t n, std::size_t boxes, std::size_t width, std::mt19937_64& rng) {
  Batch b;
  std::uniform_int_distribution<std::int32_t> word(3, 11);
  for (std::size_t i = 0; i < n; ++i) {
    Phrase p;
    p.tokens = {word(rng), word(rng)};
    if (i % 3 != 2) p.gt_attention = i % boxes;
    ProposalSet ps;
    ps.features = random_tensor({boxes, width}, rng);
    for (std::size_t k = 0; k < boxes; ++k) ps.boxes.push_back({double(k), 0, double(k) + 1, 1});
    b.phrases.push_back(p);
    b.proposals.push_back(ps);
  }
  for (std::size_t i = 0; i < n; ++i) b.items.push_back({&b.phrases[i], &b.proposals[i]});
  return b;
}

TEST(Model, ModesSelectTheObjective) {
  std::mt19937_64 rng(1);
  const auto model = init_model(tiny_config());
  auto batch = make_batch(1, 4, 5, rng);
  const auto& p = batch.phrases[0];
  const auto& ps = batch.proposals[0];

  const auto full = full_forward(model, p, ps, ForwardMode::kFullySupervised);
  EXPECT_TRUE(full.l_att.has_value());
  EXPECT_FALSE(full.l_rec.has_value());
  EXPECT_EQ(full.objective, *full.l_att);

  const auto unsup = full_forward(model, p, ps, ForwardMode::kUnsupervised, 123.0);
  EXPECT_TRUE(unsup.l_rec.has_value());
  EXPECT_EQ(unsup.objective, *unsup.l_rec);

  const auto semi = full_forward(model, p, ps, ForwardMode::kSemiSupervised, 4.0);
  EXPECT_DOUBLE_EQ(semi.objective, combined_loss(*semi.l_att, *semi.l_rec, 4.0));

  const auto eval = full_forward(model, p, ps, ForwardMode::kEval);
  EXPECT_FALSE(eval.l_att.has_value());
  EXPECT_FALSE(eval.l_rec.has_value());
  ASSERT_EQ(eval.attention.size(), 1u);
  EXPECT_EQ(eval.attention[0].selected, ops::argmax(eval.attention[0].raw_scores));
}

TEST(Model, ParseMode) {
  EXPECT_EQ(parse_mode("unsupervised"), ForwardMode::kUnsupervised);
  EXPECT_EQ(parse_mode("semi"), ForwardMode::kSemiSupervised);
  EXPECT_EQ(parse_mode("full"), ForwardMode::kFullySupervised);
  EXPECT_THROW(parse_mode("weak"), Error);
}

TEST(Model, HardAttentionEqualsSingleBoxPipeline) {
  std::mt19937_64 rng(2);
  const auto model = init_model(tiny_config());
  auto batch = make_batch(1, 5, 5, rng);
  const auto& ps = batch.proposals[0];
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> onehot(5, 0.0);
    onehot[i] = 1.0;
    ProposalSet single;
    single.boxes = {ps.boxes[i]};
    single.features = Tensor({1, 5}, std::vector<double>(ps.features.row(i).begin(), ps.features.row(i).end()));
    const double a = reconstruct_with_attention(model, onehot, ps, batch.phrases[0].tokens);
    const double b = reconstruct_with_attention(model, std::vector<double>{1.0}, single, batch.phrases[0].tokens);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Model, ReconstructionGradientReachesFeatures) {
  std::mt19937_64 rng(3);
  const auto model = init_model(tiny_config());
  auto batch = make_batch(2, 4, 5, rng);
  auto grads = zeros_like(model);
  std::vector<Tensor> fg;
  BatchOptions opts;
  opts.grads = &grads;
  opts.batchnorm_train = false;
  opts.feature_grads = &fg;
  run_batch(model, batch.items, Objective{ForwardMode::kUnsupervised}, opts);
  double norm = 0.0;
  for (double v : fg[0].values()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
  double att = 0.0;
  for (double v : grads.attention.w_v.values()) att += std::abs(v);
  EXPECT_GT(att, 0.0) << "L_rec must train the attention through alpha";
}

TEST(Model, FullySupervisedSkipsReconstructionGradients) {
  std::mt19937_64 rng(4);
  const auto model = init_model(tiny_config());
  auto batch = make_batch(3, 4, 5, rng);
  auto grads = zeros_like(model);
  BatchOptions opts;
  opts.grads = &grads;
  run_batch(model, batch.items, Objective{ForwardMode::kFullySupervised}, opts);
  for (double v : grads.decoder.w_out.values()) EXPECT_EQ(v, 0.0);
  for (double v : grads.visual_encoder.w_a.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, EndToEndGradcheck) {
  const auto rep = run_gradcheck(GradcheckConfig{});
  std::set<std::string> groups;
  for (const auto& g : rep.groups) {
    EXPECT_TRUE(g.passed) << g.graph << "/" << g.group << " rel " << g.max_rel_error;
    groups.insert(g.graph + "/" + g.group);
  }
  for (const char* g : {"unsupervised/embedding", "unsupervised/encoder_lstm", "unsupervised/attention",
                        "unsupervised/visual_encoder", "unsupervised/decoder", "semi/batchnorm", "semi/attention"}) {
    EXPECT_TRUE(groups.contains(g)) << g;
  }
}

TEST(Model, SharedEmbeddingsAndSupervisedNormGradcheck) {
  auto c = tiny_config();
  c.share_embeddings = true;
  c.decoder_embed_dim = c.embed_dim;
  auto model = init_model(c);
  std::mt19937_64 rng(5);
  auto batch = make_batch(3, 4, 5, rng);
  const Objective obj{ForwardMode::kSemiSupervised, 2.5, AttentionNorm::kSupervisedOnly};
  auto grads = zeros_like(model);
  BatchOptions opts;
  opts.grads = &grads;
  opts.batchnorm_train = false;
  run_batch(model, batch.items, obj, opts);
  BatchOptions plain;
  plain.batchnorm_train = false;
  auto values = learnable_params(model);
  auto analytic = learnable_params(grads);
  ASSERT_EQ(values.size(), analytic.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto num = testing::numeric_grad(values[i].tensor->values(),
                                     [&] { return run_batch(model, batch.items, obj, plain).objective; });
    EXPECT_LT(testing::max_rel_error(analytic[i].tensor->values(), num, 1e-5), 1e-4) << values[i].name;
  }
}

TEST(Model, BatchResultIndependentOfThreadCount) {
  auto c = tiny_config();
  c.batchnorm = true;
  const auto model = init_model(c);
  std::mt19937_64 rng(6);
  auto batch = make_batch(21, 4, 5, rng);
  auto run = [&](const char* threads) {
    setenv("GROUNDER_THREADS", threads, 1);
    auto grads = zeros_like(model);
    BatchOptions opts;
    opts.grads = &grads;
    const auto r = run_batch(model, batch.items, Objective{ForwardMode::kSemiSupervised, 3.0}, opts);
    unsetenv("GROUNDER_THREADS");
    std::vector<double> flat{r.objective};
    for (const auto& ref : learnable_params(grads)) {
      flat.insert(flat.end(), ref.tensor->values().begin(), ref.tensor->values().end());
    }
    return flat;
  };
  const auto one = run("1");
  EXPECT_EQ(one, run("3"));
  EXPECT_EQ(one, run("8"));
}

TEST(Model, RejectsMismatchedInputs) {
  std::mt19937_64 rng(7);
  const auto model = init_model(tiny_config());
  auto batch = make_batch(1, 4, 6, rng);
  EXPECT_THROW(full_forward(model, batch.phrases[0], batch.proposals[0], ForwardMode::kEval), Error);
  auto ok = make_batch(1, 4, 5, rng);
  ok.phrases[0].gt_attention = 9;
  EXPECT_THROW(full_forward(model, ok.phrases[0], ok.proposals[0], ForwardMode::kFullySupervised), Error);
}

TEST(Model, LearnableParamsRespectSwitches) {
  auto c = tiny_config();
  auto m = init_model(c);
  auto names = [](ModelParams& p) {
    std::set<std::string> s;
    for (const auto& r : learnable_params(p)) s.insert(r.group);
    return s;
  };
  EXPECT_FALSE(names(m).contains("batchnorm"));
  c.batchnorm = true;
  auto mb = init_model(c);
  EXPECT_TRUE(names(mb).contains("batchnorm"));
  for (const auto& r : learnable_params(mb)) {
    if (r.group == "batchnorm") {
      EXPECT_FALSE(r.is_weight);
    }
  }
  EXPECT_GT(stored_tensors(mb).size(), learnable_params(mb).size());
}

}  // namespace
}  // namespace grounder
