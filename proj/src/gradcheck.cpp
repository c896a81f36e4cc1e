#include "grounder/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "grounder/error.hpp"

namespace grounder {

bool GradcheckReport::passed() const {
  return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.passed; });
}

namespace {

struct Problem {
  std::vector<Phrase> phrases;
  std::vector<ProposalSet> proposals;
  std::vector<BatchItem> items;
};

Problem make_problem(const GradcheckConfig& cfg, std::mt19937_64& rng) {
  Problem p;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> word(token::kReserved, static_cast<std::int32_t>(cfg.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> length(1, 3);
  std::uniform_int_distribution<std::size_t> target(0, cfg.proposals - 1);
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    Phrase ph;
    const std::size_t len = length(rng);
    for (std::size_t t = 0; t < len; ++t) ph.tokens.push_back(word(rng));
    ph.sentence_id = static_cast<std::int64_t>(b);
    // Leave the last phrase without a target so both loss paths are exercised.
    if (b + 1 < cfg.batch || cfg.batch == 1) ph.gt_attention = target(rng);
    ProposalSet ps;
    std::vector<double> feats(cfg.proposals * cfg.feature_width);
    for (double& x : feats) x = normal(rng);
    ps.features = Tensor({cfg.proposals, cfg.feature_width}, std::move(feats));
    for (std::size_t i = 0; i < cfg.proposals; ++i) {
      const double x = static_cast<double>(i) * 10.0;
      ps.boxes.push_back({x, 0.0, x + 5.0, 5.0});
    }
    p.phrases.push_back(std::move(ph));
    p.proposals.push_back(std::move(ps));
  }
  for (std::size_t b = 0; b < cfg.batch; ++b) p.items.push_back({&p.phrases[b], &p.proposals[b]});
  return p;
}

void perturb_bn(ModelParams& model, std::mt19937_64& rng) {
  // Move batch norm off its identity init so scale and shift matter.
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::uniform_real_distribution<double> s(-0.5, 0.5);
  for (auto* bn : {&model.phrase_norm, &model.visual_norm}) {
    for (double& x : bn->scale.values()) x = u(rng);
    for (double& x : bn->shift.values()) x = s(rng);
  }
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

void check_graph(const GradcheckConfig& cfg, const std::string& graph, ModelParams model,
                 const Objective& objective, Problem& problem, GradcheckReport& report) {
  ModelParams grads = zeros_like(model);
  std::vector<Tensor> feature_grads;
  BatchOptions opts;
  opts.grads = &grads;
  opts.batchnorm_train = true;
  opts.feature_grads = &feature_grads;
  run_batch(model, problem.items, objective, opts);

  const BatchOptions eval_opts{nullptr, true, nullptr, nullptr};
  auto loss = [&]() { return run_batch(model, problem.items, objective, eval_opts).objective; };

  std::map<std::string, GroupCheck> groups;
  auto record = [&](const std::string& group, double analytic, double numeric) {
    auto& g = groups[group];
    g.graph = graph;
    g.group = group;
    ++g.checked;
    g.max_rel_error = std::max(g.max_rel_error, rel_error(analytic, numeric, cfg.floor));
    g.max_abs_error = std::max(g.max_abs_error, std::abs(analytic - numeric));
  };
  auto probe = [&](double& x) {
    const double saved = x;
    x = saved + cfg.step;
    const double up = loss();
    x = saved - cfg.step;
    const double down = loss();
    x = saved;
    return (up - down) / (2.0 * cfg.step);
  };

  auto values = learnable_params(model);
  auto analytic = learnable_params(grads);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto v = values[i].tensor->values();
    const auto a = analytic[i].tensor->values();
    for (std::size_t k = 0; k < v.size(); ++k) record(values[i].group, a[k], probe(v[k]));
  }
  for (std::size_t b = 0; b < problem.proposals.size(); ++b) {
    auto v = problem.proposals[b].features.values();
    const auto a = feature_grads[b].values();
    for (std::size_t k = 0; k < v.size(); ++k) record("features", a[k], probe(v[k]));
  }
  for (auto& [name, g] : groups) {
    g.passed = g.max_rel_error < cfg.tolerance;
    report.groups.push_back(g);
  }
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  if (cfg.vocab_size <= static_cast<std::size_t>(token::kReserved) || cfg.proposals < 1 || cfg.batch < 2 ||
      !(cfg.step > 0.0)) {
    throw ConfigError("gradcheck needs vocab > 3, at least one proposal, at least two phrases and a positive step");
  }
  ModelConfig mc;
  mc.vocab_size = cfg.vocab_size;
  mc.feature_width = cfg.feature_width;
  mc.embed_dim = cfg.embed_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.attention_dim = cfg.embed_dim;
  mc.decoder_embed_dim = cfg.embed_dim;
  mc.decoder_hidden_dim = cfg.hidden_dim;
  mc.seed = cfg.seed;
  // Wider init than the training default so gradients are not vanishingly small.
  mc.lstm_init_range = 0.5;

  std::mt19937_64 rng(cfg.seed);
  Problem problem = make_problem(cfg, rng);
  GradcheckReport report;

  mc.batchnorm = false;
  check_graph(cfg, "unsupervised", init_model(mc), Objective{ForwardMode::kUnsupervised, 1.0}, problem, report);

  mc.batchnorm = true;
  ModelParams semi = init_model(mc);
  perturb_bn(semi, rng);
  check_graph(cfg, "semi", std::move(semi), Objective{ForwardMode::kSemiSupervised, 0.7}, problem, report);
  return report;
}

}  // namespace grounder
