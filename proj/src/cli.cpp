#include "fpb/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "fpb/checkpoint.hpp"
#include "fpb/config.hpp"
#include "fpb/evaluation.hpp"
#include "fpb/npy.hpp"

namespace fpb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string data_root;
  std::string checkpoint;
  std::string resume;
  std::string split = "all";
};

json version_stamp() {
  return {{"version", FPB_VERSION}, {"compiler", __VERSION__}, {"cxx_standard", static_cast<long>(__cplusplus)}};
}

void write_run_stamp(const std::string& dir, const std::string& command, const json& config,
                     const std::vector<std::string>& args) {
  fs::create_directories(dir);
  json stamp{{"command", command}, {"argv", args}, {"config", config}, {"build", version_stamp()}};
  std::ofstream(fs::path(dir) / "effective_config.json") << stamp.dump(2) << '\n';
}

std::string resolve_data_root(const Options& o, const RunConfig& cfg) {
  if (!o.data_root.empty()) return o.data_root;
  if (!cfg.data.root.empty()) return cfg.data.root;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw std::invalid_argument(std::string("no data root: pass --data, set data.root or ") + kDataRootEnv);
}

DatasetIndex load_index(const std::string& root, const RunConfig& cfg, const std::string& out_dir, std::ostream& err) {
  IngestOptions io;
  std::vector<std::string> warnings;
  io.warnings = &warnings;
  if (cfg.data.cache_index && !out_dir.empty()) io.cache_path = (fs::path(out_dir) / "dataset_index.json").string();
  DatasetIndex idx = ingest_market_layout(root, io);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return idx;
}

// Model rebuilt from the configuration stored in a checkpoint, with
// command-line settings applied on top.
std::pair<RunConfig, json> config_for_checkpoint(const Checkpoint& ck, const Options& o) {
  json cfg = to_json(RunConfig{});
  if (ck.meta.contains("config")) merge_config(cfg, ck.meta.at("config"));
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + o.config_path);
    merge_config(cfg, json::parse(in, nullptr, true, true));
  }
  for (const auto& s : o.overrides) apply_override(cfg, s);
  RunConfig rc = run_config_from_json(cfg);
  rc.validate();
  return {rc, cfg};
}

std::unique_ptr<FpbModel> model_from_checkpoint(const Checkpoint& ck, RunConfig& rc) {
  rc.model.backbone.pretrained_weights_path.clear();
  auto model = std::make_unique<FpbModel>(rc.model);
  restore(model->param_table(), ck);
  return model;
}

int cmd_param_count(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig rc = load_run_config(o.config_path, o.overrides);
  rc.model.backbone.pretrained_weights_path.clear();
  FpbModel model(rc.model);
  const auto groups = model.param_groups();
  const auto total = model.total_param_count(), backbone = model.backbone_param_count();

  out << "Learnable parameters (classifier heads listed, excluded from the total)\n";
  out << std::left << std::setw(28) << "module" << std::right << std::setw(14) << "parameters" << "  counted\n";
  json table = json::array();
  for (const auto& g : groups) {
    out << std::left << std::setw(28) << g.name << std::right << std::setw(14) << g.count << "  "
        << (g.counted_in_total ? "yes" : "no") << '\n';
    table.push_back({{"module", g.name}, {"parameters", g.count}, {"counted", g.counted_in_total}});
  }
  out << std::left << std::setw(28) << "backbone only" << std::right << std::setw(14) << backbone << '\n';
  out << std::left << std::setw(28) << "total" << std::right << std::setw(14) << total << '\n';
  out << std::left << std::setw(28) << "delta (total - backbone)" << std::right << std::setw(14) << total - backbone
      << '\n';
  if (!o.out_dir.empty()) {
    write_run_stamp(o.out_dir, "param-count", to_json(rc), args);
    json report{{"rule", "learnable parameters, classifier heads excluded"},
                {"modules", table},
                {"backbone", backbone},
                {"total", total},
                {"delta", total - backbone}};
    std::ofstream(fs::path(o.out_dir) / "param_count.json") << report.dump(2) << '\n';
  }
  return kOk;
}

int cmd_toy_gen(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  if (o.out_dir.empty()) throw std::invalid_argument("toy-gen needs --out");
  RunConfig rc = load_run_config(o.config_path, o.overrides);
  const DatasetIndex idx = generate_toy(rc.toy, o.out_dir);
  write_run_stamp(o.out_dir, "toy-gen", to_json(rc), args);
  out << "toy dataset at " << idx.root << ": " << idx.train.size() << " train, " << idx.query.size() << " query, "
      << idx.gallery.size() << " gallery images\n";
  return kOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (o.out_dir.empty()) throw std::invalid_argument("train needs --out");
  RunConfig rc = load_run_config(o.config_path, o.overrides);
  const std::string root = resolve_data_root(o, rc);
  fs::create_directories(o.out_dir);
  const DatasetIndex idx = load_index(root, rc, o.out_dir, err);
  TrainData data = make_train_data(idx.train);
  rc.model.num_identities = data.num_classes;
  rc.loss.num_identities = data.num_classes;
  rc.data.root = root;
  const json effective = to_json(rc);
  write_run_stamp(o.out_dir, "train", effective, args);

  FpbModel model(rc.model);
  ImageStore images(rc.model.backbone.input_height, rc.model.backbone.input_width,
                    static_cast<std::size_t>(rc.data.image_cache_mb) << 20);
  json meta{{"config", effective}, {"build", version_stamp()}, {"fpb_wiring", FpbConfig::kWiring}};
  Trainer trainer(model, rc.train, rc.loss, rc.regularization, std::move(data), images, o.out_dir, meta);
  if (!o.resume.empty()) {
    trainer.resume(o.resume);
    out << "resumed at epoch " << trainer.next_epoch() << '\n';
  }
  int last_epoch = -1;
  real epoch_loss = 0;
  int epoch_steps = 0;
  auto report = [&] {
    if (last_epoch >= 0)
      out << "epoch " << last_epoch + 1 << "/" << rc.train.epochs << "  loss " << epoch_loss / epoch_steps << '\n';
  };
  try {
    trainer.run([&](const StepRecord& s) {
      if (s.epoch != last_epoch) {
        report();
        last_epoch = s.epoch;
        epoch_loss = 0;
        epoch_steps = 0;
      }
      epoch_loss += s.loss.total;
      ++epoch_steps;
    });
  } catch (const NonFiniteLoss& e) {
    err << "aborted: " << e.what() << " (see " << o.out_dir << "/abort.json)\n";
    return kNonFinite;
  }
  report();
  out << "final checkpoint: " << trainer.paths().final_checkpoint() << '\n';
  return kOk;
}

int cmd_evaluate(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (o.checkpoint.empty() || o.out_dir.empty()) throw std::invalid_argument("evaluate needs --checkpoint and --out");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  auto [rc, cfg] = config_for_checkpoint(ck, o);
  const std::string root = resolve_data_root(o, rc);
  fs::create_directories(o.out_dir);
  write_run_stamp(o.out_dir, "evaluate", cfg, args);
  auto model = model_from_checkpoint(ck, rc);
  const DatasetIndex idx = load_index(root, rc, o.out_dir, err);

  const FeatureSet q = extract_features(*model, idx.query, rc.eval.batch_size);
  const FeatureSet g = extract_features(*model, idx.gallery, rc.eval.batch_size);
  for (const auto* fs_ : {&q, &g})
    for (const auto& f : fs_->failures) err << "warning: skipped " << f << '\n';
  const Tensor dist = distance_matrix(q.features, g.features);
  const RetrievalResult res = evaluate(dist, q.pids, q.camids, g.pids, g.camids, rc.eval.max_rank);

  json report = retrieval_report(res, rc.eval.per_query);
  report["checkpoint"] = fs::absolute(o.checkpoint).string();
  report["queries"] = q.size();
  report["gallery"] = g.size();
  std::vector<std::string> failures = q.failures;
  failures.insert(failures.end(), g.failures.begin(), g.failures.end());
  report["decode_failures"] = failures;
  if (rc.eval.activation_maps > 0)
    report["activation_maps"] =
        dump_activation_maps(*model, idx.query, rc.eval.activation_maps, (fs::path(o.out_dir) / "activation_maps").string());
  std::ofstream(fs::path(o.out_dir) / "report.json") << report.dump(2) << '\n';

  out << std::fixed << std::setprecision(4);
  out << "mAP     " << res.map << '\n';
  for (int k : {1, 5, 10})
    if (k <= static_cast<int>(res.cmc.size())) out << "rank-" << std::left << std::setw(3) << k << res.rank(k) << '\n';
  out << "queries " << res.evaluated_queries << " evaluated, " << res.ap.size() - res.evaluated_queries
      << " skipped\n";
  return kOk;
}

int cmd_extract(const Options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (o.checkpoint.empty() || o.out_dir.empty()) throw std::invalid_argument("extract needs --checkpoint and --out");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  auto [rc, cfg] = config_for_checkpoint(ck, o);
  const std::string root = resolve_data_root(o, rc);
  fs::create_directories(o.out_dir);
  write_run_stamp(o.out_dir, "extract", cfg, args);
  auto model = model_from_checkpoint(ck, rc);
  const DatasetIndex idx = load_index(root, rc, o.out_dir, err);

  std::vector<std::pair<std::string, const std::vector<ImageRecord>*>> splits;
  if (o.split == "all" || o.split == "train") splits.emplace_back("train", &idx.train);
  if (o.split == "all" || o.split == "query") splits.emplace_back("query", &idx.query);
  if (o.split == "all" || o.split == "gallery") splits.emplace_back("gallery", &idx.gallery);
  if (splits.empty()) throw std::invalid_argument("--split must be train, query, gallery or all");
  for (const auto& [name, records] : splits) {
    const FeatureSet f = extract_features(*model, *records, rc.eval.batch_size);
    for (const auto& fail : f.failures) err << "warning: skipped " << fail << '\n';
    const auto base = fs::path(o.out_dir) / name;
    save_npy(base.string() + "_features.npy", f.features);
    json side{{"features", name + "_features.npy"},
              {"shape", {f.features.dim(0), f.features.dim(1)}},
              {"dtype", "float64"},
              {"normalised", true},
              {"paths", f.paths},
              {"pids", f.pids},
              {"camids", f.camids},
              {"decode_failures", f.failures}};
    std::ofstream(base.string() + "_features.json") << side.dump(2) << '\n';
    out << name << ": " << f.size() << " x " << f.features.dim(1) << " -> " << base.string() << "_features.npy\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature pyramid branch person re-identification"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "Override a config key: dotted.key=value (repeatable)");
    sub->add_option("--out", o.out_dir, "Output directory");
    if (needs_checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  };
  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and a JSONL log");
  common(train, false);
  train->add_option("--data", o.data_root, "Dataset root (Market1501 layout)");
  train->add_option("--resume", o.resume, "Continue from a checkpoint written by train")->check(CLI::ExistingFile);
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Rank the gallery for every query; writes report.json");
  common(evaluate_cmd, true);
  evaluate_cmd->add_option("--data", o.data_root, "Dataset root (Market1501 layout)");
  auto* extract = app.add_subcommand("extract", "Write normalised inference features (.npy plus JSON sidecar)");
  common(extract, true);
  extract->add_option("--data", o.data_root, "Dataset root (Market1501 layout)");
  extract->add_option("--split", o.split, "train, query, gallery or all");
  auto* params = app.add_subcommand("param-count", "Per-module learnable parameter table");
  common(params, false);
  auto* toy = app.add_subcommand("toy-gen", "Generate the synthetic toy dataset");
  common(toy, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(o, args, out, err);
    if (*evaluate_cmd) return cmd_evaluate(o, args, out, err);
    if (*extract) return cmd_extract(o, args, out, err);
    if (*params) return cmd_param_count(o, args, out);
    if (*toy) return cmd_toy_gen(o, args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kError;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace fpb::cli
