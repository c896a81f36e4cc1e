#include "grounder/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "grounder/checkpoint.hpp"
#include "grounder/error.hpp"
#include "grounder/kernels.hpp"

namespace grounder {

namespace fs = std::filesystem;

namespace {

// Shortest text that reads back as the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}


fs::path out_dir(const RunConfig& config) {
  const auto dir = config.get_string("out_dir");
  if (dir.empty()) throw ConfigError("out_dir is required");
  fs::create_directories(dir);
  return dir;
}

fs::path existing(const RunConfig& config, const char* key) {
  const auto p = config.get_string(key);
  if (p.empty()) throw ConfigError(std::string(key) + " is required");
  if (!fs::exists(p)) throw ConfigError(std::string(key) + " does not exist: " + p);
  return p;
}

std::optional<fs::path> optional_existing(const RunConfig& config, const char* key) {
  if (config.get_string(key).empty()) return std::nullopt;
  return existing(config, key);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void apply_kernels(const RunConfig& config) { kernels::select(config.get_string("kernels")); }

Json metrics_json(const EpochMetrics& m) {
  Json j;
  j["epoch"] = m.epoch;
  j["train_loss"] = m.train_loss;
  j["l_att"] = m.l_att;
  j["l_rec"] = m.l_rec;
  j["val_accuracy"] = m.val_accuracy;
  return j;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

// Resolved values that the mode and fraction defaults produce.
Json resolved_json(const TrainConfig& t, const ModelConfig& m) {
  Json j;
  j["lambda"] = t.resolved_lambda();
  j["weight_decay"] = t.resolved_weight_decay();
  j["batchnorm"] = t.resolved_batchnorm();
  j["model"] = to_json(m);
  return j;
}

}  // namespace

void cmd_synth(const RunConfig& config) {
  const auto dir = out_dir(config);
  const auto data = generate_synthetic(config.synthetic_config());
  write_text(dir / "config.json", config.dump());
  save_manifest(data.train, dir / "train.jsonl");
  save_manifest(data.val, dir / "val.jsonl");
  save_manifest(data.test, dir / "test.jsonl");
  Json world;
  world["concepts"] = Json::array();
  for (const auto& c : data.world.concepts) {
    Json cj;
    std::string name;
    for (auto t : c.name) name += (name.empty() ? "" : " ") + data.world.vocab.word(t);
    cj["name"] = name;
    cj["tokens"] = c.name;
    cj["type"] = c.phrase_type;
    cj["held_out"] = c.held_out;
    world["concepts"].push_back(cj);
  }
  write_text(dir / "world.json", world.dump(2) + "\n");
}

TrainOutcome cmd_train(const RunConfig& config) {
  apply_kernels(config);
  const auto train_path = existing(config, "train_manifest");
  const auto val_path = optional_existing(config, "val_manifest");
  const auto dir = out_dir(config);

  TrainConfig tc = config.train_config();
  const std::size_t epochs = tc.epochs;
  tc.epochs = std::max<std::size_t>(epochs, 1);
  tc.validate();
  tc.epochs = epochs;

  const auto train_set = load_manifest(train_path);
  std::optional<DatasetManifest> val_set;
  if (val_path) val_set = load_manifest(*val_path);
  ModelConfig mc = config.model_config(train_set.vocab.size(), train_set.feature_width);
  mc.batchnorm = tc.resolved_batchnorm();

  Json echo = config.values();
  echo["resolved"] = resolved_json(tc, mc);
  write_text(dir / "config.json", echo.dump(2) + "\n");

  TrainOutcome outcome;
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  Checkpoint ck;
  ck.run_config = config.values().dump();
  if (epochs == 0) {
    outcome.model = init_model(mc);
  } else {
    outcome.result = train(train_set, val_set ? &*val_set : nullptr, tc, init_model(mc),
                           [&](const EpochMetrics& m) { metrics << metrics_json(m).dump() << '\n' << std::flush; });
    outcome.model = outcome.result.best;
    ck.adam = outcome.result.adam;
    ck.metrics = outcome.result.metrics;
    ck.best_epoch = outcome.result.best_epoch;
    if (tc.log_batches) {
      std::ofstream batches(dir / "batches.jsonl", std::ios::binary);
      for (const auto& b : outcome.result.batches) {
        Json j;
        j["epoch"] = b.epoch;
        j["batch"] = b.batch;
        j["size"] = b.size;
        j["lambda"] = b.lambda;
        j["l_att"] = optional_number(b.l_att);
        j["l_rec"] = optional_number(b.l_rec);
        j["objective"] = b.objective;
        batches << j.dump() << '\n';
      }
    }
  }
  ck.model = outcome.model;
  save_checkpoint(ck, dir / "checkpoint.bin");

  Json summary;
  summary["epochs"] = epochs;
  summary["best_epoch"] = outcome.result.best_epoch;
  summary["best_val_accuracy"] = outcome.result.best_val_accuracy;
  summary["kernels"] = kernels::active().name;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return outcome;
}

EvalReport cmd_eval(const RunConfig& config) {
  apply_kernels(config);
  const auto ck_path = existing(config, "checkpoint");
  const auto test_path = existing(config, "test_manifest");
  const auto train_path = optional_existing(config, "train_manifest");
  const auto dir = out_dir(config);
  write_text(dir / "config.json", config.dump());

  const Checkpoint ck = load_checkpoint(ck_path);
  const auto test_set = load_manifest(test_path);
  if (ck.model.config.feature_width != test_set.feature_width) {
    throw DataError("checkpoint feature width does not match " + test_path.string());
  }
  EvalOptions opts;
  opts.sentence_constraint = config.get_bool("sentence_constraint");
  std::set<std::vector<std::int32_t>> seen;
  if (train_path) {
    seen = phrase_set(load_manifest(*train_path));
    opts.training_phrases = &seen;
  }
  EvalReport rep = report(test_set, ck.model, opts);
  write_text(dir / "report.json", report_json(rep));
  write_text(dir / "report.csv", report_csv(rep));
  return rep;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config) {
  apply_kernels(config);
  const auto train_path = existing(config, "train_manifest");
  const auto val_path = optional_existing(config, "val_manifest");
  const auto test_path = optional_existing(config, "test_manifest");
  const auto dir = out_dir(config);
  write_text(dir / "config.json", config.dump());

  const auto train_set = load_manifest(train_path);
  std::optional<DatasetManifest> val_set;
  if (val_path) val_set = load_manifest(*val_path);
  const DatasetManifest eval_set = test_path ? load_manifest(*test_path) : (val_set ? *val_set : train_set);
  const DatasetManifest* val_ptr = val_set ? &*val_set : nullptr;
  const bool ablation = config.get_bool("sweep_ablation");
  const TrainConfig base = config.train_config();

  std::ofstream metrics(dir / "sweep_metrics.jsonl", std::ios::binary);
  auto run = [&](TrainConfig tc, double fraction) {
    ModelConfig mc = config.model_config(train_set.vocab.size(), train_set.feature_width);
    mc.batchnorm = tc.resolved_batchnorm();
    auto result = train(train_set, val_ptr, tc, init_model(mc), [&](const EpochMetrics& m) {
      Json j = metrics_json(m);
      j["fraction"] = fraction;
      j["mode"] = to_string(tc.mode);
      metrics << j.dump() << '\n';
    });
    return report(eval_set, result.best).overall.value();
  };

  std::vector<SweepRow> rows;
  for (double f : config.get_doubles("fractions")) {
    TrainConfig tc = base;
    tc.supervision_fraction = f;
    tc.mode = f == 0.0 ? ForwardMode::kUnsupervised : ForwardMode::kSemiSupervised;
    tc.validate();
    SweepRow row;
    row.fraction = f;
    row.mode = to_string(tc.mode);
    row.lambda = tc.mode == ForwardMode::kUnsupervised ? 0.0 : tc.resolved_lambda();
    row.accuracy = run(tc, f);
    if (ablation && f > 0.0) {
      TrainConfig sup = tc;
      sup.mode = ForwardMode::kFullySupervised;
      row.supervised_only_accuracy = run(sup, f);
    }
    rows.push_back(row);
  }

  std::ostringstream csv;
  csv << "fraction,mode,lambda,accuracy" << (ablation ? ",supervised_only_accuracy" : "") << '\n';
  for (const auto& r : rows) {
    csv << num(r.fraction) << ',' << r.mode << ',' << num(r.lambda) << ',' << num(r.accuracy);
    if (ablation) {
      csv << ',';
      if (r.supervised_only_accuracy) csv << num(*r.supervised_only_accuracy);
    }
    csv << '\n';
  }
  write_text(dir / "sweep.csv", csv.str());
  return rows;
}

GradcheckReport cmd_gradcheck(const RunConfig& config) {
  apply_kernels(config);
  GradcheckConfig gc;
  gc.vocab_size = config.get_size("gc_vocab");
  gc.proposals = config.get_size("gc_proposals");
  gc.embed_dim = config.get_size("gc_embed");
  gc.hidden_dim = config.get_size("gc_hidden");
  gc.feature_width = config.get_size("gc_feature_width");
  gc.batch = config.get_size("gc_batch");
  gc.tolerance = config.get_double("gc_tolerance");
  gc.seed = static_cast<std::uint64_t>(config.get_int("seed"));
  GradcheckReport rep = run_gradcheck(gc);
  if (!config.get_string("out_dir").empty()) {
    const auto dir = out_dir(config);
    Json j;
    j["passed"] = rep.passed();
    j["tolerance"] = gc.tolerance;
    j["groups"] = Json::array();
    for (const auto& g : rep.groups) {
      Json gj;
      gj["graph"] = g.graph;
      gj["group"] = g.group;
      gj["checked"] = g.checked;
      gj["max_rel_error"] = g.max_rel_error;
      gj["max_abs_error"] = g.max_abs_error;
      gj["passed"] = g.passed;
      j["groups"].push_back(gj);
    }
    write_text(dir / "config.json", config.dump());
    write_text(dir / "gradcheck.json", j.dump(2) + "\n");
  }
  return rep;
}

namespace {

void print_error(std::ostream& err, const char* kind, const std::string& message) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  err << j.dump() << '\n';
}

// "--key=value" or "--key value" pairs left over after CLI11 parsing.
void apply_overrides(RunConfig& config, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    arg = arg.substr(2);
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      config.set(arg.substr(0, eq), arg.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      config.set(arg, extras[++i]);
    } else {
      config.set(arg, "true");
    }
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Phrase grounding by attention and reconstruction"};
  app.require_subcommand(1);
  std::string keys = "Config keys (--key=value):\n";
  for (const auto& k : config_schema()) keys += "  " + std::string(k.name) + "  " + k.help + "\n";
  app.footer(keys);

  std::string config_path;
  std::vector<CLI::App*> commands;
  for (const char* name : {"synth", "train", "eval", "sweep", "gradcheck"}) {
    auto* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->add_option("--config", config_path, "JSON config file");
    commands.push_back(sub);
  }
  commands[0]->description("generate the synthetic task");
  commands[1]->description("train a model and write a checkpoint");
  commands[2]->description("evaluate a checkpoint on a manifest");
  commands[3]->description("train and evaluate over supervision fractions");
  commands[4]->description("finite-difference gradient check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "config", e.what());
    return 2;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    RunConfig config;
    if (!config_path.empty()) config.merge_file(config_path);
    apply_overrides(config, cmd->remaining());
    const std::string name = cmd->get_name();
    if (name == "synth") {
      cmd_synth(config);
      out << "wrote synthetic task to " << config.get_string("out_dir") << '\n';
    } else if (name == "train") {
      const auto o = cmd_train(config);
      for (const auto& m : o.result.metrics) out << metrics_json(m).dump() << '\n';
      out << "best epoch " << o.result.best_epoch << ", val accuracy " << o.result.best_val_accuracy << '\n';
    } else if (name == "eval") {
      out << report_json(cmd_eval(config));
    } else if (name == "sweep") {
      for (const auto& r : cmd_sweep(config)) {
        out << r.fraction << ' ' << r.mode << " lambda=" << r.lambda << " accuracy=" << r.accuracy;
        if (r.supervised_only_accuracy) out << " supervised_only=" << *r.supervised_only_accuracy;
        out << '\n';
      }
    } else {
      const auto rep = cmd_gradcheck(config);
      for (const auto& g : rep.groups) {
        out << (g.passed ? "PASS " : "FAIL ") << g.graph << '/' << g.group << " checked=" << g.checked
            << " max_rel_error=" << g.max_rel_error << '\n';
      }
      if (!rep.passed()) {
        print_error(err, "gradcheck", "relative error above tolerance");
        return 1;
      }
    }
    return 0;
  } catch (const ConfigError& e) {
    print_error(err, "config", e.what());
    return 2;
  } catch (const DataError& e) {
    print_error(err, "data", e.what());
    return 3;
  } catch (const NumericError& e) {
    print_error(err, "numeric", e.what());
    return 4;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return 1;
  }
}

}  // namespace grounder
