#include "bssard_cli/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "bssard/analysis.hpp"
#include "bssard/error.hpp"
#include "bssard/eval.hpp"
#include "bssard/json_keys.hpp"
#include "bssard/synthdata.hpp"
#include "bssard/trainer.hpp"

#ifndef BSSARD_VERSION
#define BSSARD_VERSION "unknown"
#endif

namespace bssard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct EvalSettings {
  std::uint64_t seed = 0;
  std::vector<std::string> splits{"train", "val", "test-iid", "test-ood"};
  bool shuffle_probe = false;
};

struct AnalysisSettings {
  int grid = kDefaultGridSize;
  std::string format = "png";
};

// The shared config file: one section per command family.
struct FileConfig {
  CorpusConfig data;
  TrainConfig train;
  EvalSettings eval;
  AnalysisSettings analysis;
};

json to_json_sections(const FileConfig& c) {
  json j;
  j["data"] = c.data;
  j["train"] = c.train;
  j["eval"] = {{"seed", c.eval.seed}, {"splits", c.eval.splits}, {"shuffle_probe", c.eval.shuffle_probe}};
  j["analysis"] = {{"grid", c.analysis.grid}, {"format", c.analysis.format}};
  return j;
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

FileConfig load_config(const std::string& path) {
  FileConfig cfg;
  cfg.data.rules = default_rules(cfg.data, 0.9);
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(ErrorCode::kConfig, path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                        ": parse error: " + e.what());
  }
  // A run manifest carries its resolved config, so it can be fed back in directly.
  if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
  json_keys::require_object(j, "config");
  json_keys::reject_unknown(j, "", {"data", "train", "eval", "analysis"});
  if (auto it = j.find("data"); it != j.end()) {
    json_keys::require_object(*it, "data");
    const bool explicit_rules = it->contains("rules") || it->contains("rule_strength");
    from_json(*it, cfg.data);
    if (!explicit_rules) cfg.data.rules = default_rules(cfg.data, 0.9);
  }
  if (auto it = j.find("train"); it != j.end()) from_json(*it, cfg.train);
  if (auto it = j.find("eval"); it != j.end()) {
    json_keys::require_object(*it, "eval");
    json_keys::reject_unknown(*it, "eval.", {"seed", "splits", "shuffle_probe"});
    json_keys::read(*it, "eval.", "seed", cfg.eval.seed);
    json_keys::read(*it, "eval.", "splits", cfg.eval.splits);
    json_keys::read(*it, "eval.", "shuffle_probe", cfg.eval.shuffle_probe);
  }
  if (auto it = j.find("analysis"); it != j.end()) {
    json_keys::require_object(*it, "analysis");
    json_keys::reject_unknown(*it, "analysis.", {"grid", "format"});
    json_keys::read(*it, "analysis.", "grid", cfg.analysis.grid);
    json_keys::read(*it, "analysis.", "format", cfg.analysis.format);
  }
  return cfg;
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("BSSARD_OUT_ROOT");
  return fs::path(root != nullptr && *root != '\0' ? root : "runs") / command;
}

// Written when a command starts and rewritten with outcome and timings at the end.
class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& args, fs::path out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = args;
    doc_["code_version"] = BSSARD_VERSION;
    doc_["started_at"] = iso_now();
    doc_["status"] = "running";
  }

  json& doc() { return doc_; }

  void begin() { write(); }

  void finish(int exit_code, const std::string& message) {
    doc_["finished_at"] = iso_now();
    doc_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["exit_code"] = exit_code;
    doc_["status"] = exit_code == 0 ? "ok" : "failed";
    if (!message.empty()) doc_["message"] = message;
    write();
  }

 private:
  void write() {
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    std::ofstream(out_dir_ / "run_manifest.json") << doc_.dump(2) << "\n";
  }

  fs::path out_dir_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kUnsatisfiableConfig:
    case ErrorCode::kConfig:
      return kExitUsage;
    case ErrorCode::kNumericalFailure:
      return kExitNumerical;
    default:
      return kExitData;
  }
}

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "JSON config file (sections: data, train, eval, analysis)");
  app->add_option("--out", o.out, "Output directory (default $BSSARD_OUT_ROOT/<command> or runs/<command>)");
  app->add_option("--seed", o.seed, "Seed overriding the config's");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial bias-conflict training for span-based temporal grounding"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, analyze_opts;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic grounding corpus");
  add_common(gen, gen_opts);

  std::string corpus_dir, mode, checkpoint, trigger, split_name, format;
  bool resume = false, shuffle_probe = false;
  std::optional<int> epochs, stop_after, grid;

  auto* train = app.add_subcommand("train", "Train a grounding model");
  add_common(train, train_opts);
  train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  train->add_option("--mode", mode, "bssard | baseline | visual-only | query-only");
  train->add_flag("--resume", resume, "Continue from the newest checkpoint in --out");
  train->add_option("--epochs", epochs, "Override train.epochs");
  train->add_option("--stop-after-epochs", stop_after, "Stop once this many epochs are done");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  ev->add_flag("--shuffle-probe", shuffle_probe, "Also run the shuffled-query probe on test-ood");

  auto* an = app.add_subcommand("analyze-bias", "Moment density of samples carrying a trigger");
  add_common(an, analyze_opts);
  an->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  an->add_option("--trigger", trigger, "Query token id or rule name")->required();
  an->add_option("--split", split_name, "train | val | test-iid | test-ood")->required();
  an->add_option("--format", format, "png | svg");
  an->add_option("--grid", grid, "Grid size G");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  CommonOptions& common = command == "gen-data" ? gen_opts
                          : command == "train"  ? train_opts
                          : command == "eval"   ? eval_opts
                                                : analyze_opts;
  const fs::path out_dir = common.out.empty() ? default_out(command) : fs::path(common.out);
  RunManifest manifest(command, args, out_dir);

  try {
    FileConfig cfg = load_config(common.config);
    if (command == "gen-data") {
      if (common.seed) cfg.data.seed = *common.seed;
      cfg.data.validate();
      manifest.doc()["seed"] = cfg.data.seed;
      manifest.doc()["config"] = to_json_sections(cfg);
      manifest.doc()["inputs"] = {{"config", common.config}};
      manifest.doc()["outputs"] = {{"corpus", out_dir.string()}};
      manifest.begin();
      const Corpus corpus = generate_corpus(cfg.data);
      write_corpus(corpus, out_dir);
      out << "wrote " << corpus.samples.size() << " samples to " << out_dir.string() << "\n";
    } else if (command == "train") {
      if (common.seed) cfg.train.seed = *common.seed;
      if (!mode.empty()) cfg.train.mode = parse_train_mode(mode);
      if (epochs) cfg.train.epochs = *epochs;
      cfg.train.validate();
      manifest.doc()["seed"] = cfg.train.seed;
      manifest.doc()["config"] = to_json_sections(cfg);
      manifest.doc()["inputs"] = {{"corpus", corpus_dir}, {"config", common.config}, {"resume", resume}};
      manifest.doc()["outputs"] = {{"dir", out_dir.string()},
                                   {"metrics", (out_dir / "metrics.csv").string()},
                                   {"best_checkpoint", (out_dir / "best.ckpt").string()}};
      manifest.begin();
      const Corpus corpus = read_corpus(corpus_dir);
      FitOptions fo;
      fo.resume = resume;
      fo.stop_after_epochs = stop_after.value_or(-1);
      fo.log = [&out](const std::string& s) { out << s << "\n"; };
      const FitResult r = fit(corpus, cfg.train, out_dir, fo);
      manifest.doc()["result"] = {{"epochs_completed", r.epochs_completed},
                                  {"steps", r.steps},
                                  {"best_epoch", r.best_epoch},
                                  {"best_val_miou", r.best_val_miou},
                                  {"freeze_audit_clean", r.freeze_audit_clean}};
      out << "trained " << r.epochs_completed << " epochs (" << r.steps << " steps), best val mIoU "
          << r.best_val_miou << " at epoch " << r.best_epoch << "\n";
    } else if (command == "eval") {
      if (common.seed) cfg.eval.seed = *common.seed;
      if (shuffle_probe) cfg.eval.shuffle_probe = true;
      std::vector<Split> splits;
      for (const auto& s : cfg.eval.splits) splits.push_back(parse_split(s));
      manifest.doc()["seed"] = cfg.eval.seed;
      manifest.doc()["config"] = to_json_sections(cfg);
      manifest.doc()["inputs"] = {{"checkpoint", checkpoint}, {"corpus", corpus_dir}, {"config", common.config}};
      manifest.doc()["outputs"] = {{"metrics_txt", (out_dir / "metrics.txt").string()},
                                   {"metrics_csv", (out_dir / "metrics.csv").string()},
                                   {"predictions", (out_dir / "predictions.jsonl").string()}};
      manifest.begin();
      const Corpus corpus = read_corpus(corpus_dir);
      auto model = load_backbone(checkpoint, &corpus.config);
      const Predictor predictor = backbone_predictor(*model);
      const Evaluation evaluation = evaluate(predictor, corpus, splits);
      std::optional<ShuffleProbe> probe;
      if (cfg.eval.shuffle_probe) probe = shuffle_query_probe(predictor, corpus, cfg.eval.seed);
      write_evaluation(evaluation, probe, out_dir);
      std::ifstream txt(out_dir / "metrics.txt");
      out << txt.rdbuf();
    } else {
      if (format.empty()) format = cfg.analysis.format;
      if (grid) cfg.analysis.grid = *grid;
      cfg.analysis.format = format;
      manifest.doc()["seed"] = nullptr;
      manifest.doc()["config"] = to_json_sections(cfg);
      manifest.doc()["inputs"] = {{"corpus", corpus_dir}, {"trigger", trigger}, {"split", split_name}};
      manifest.begin();
      const PlotFormat pf = parse_plot_format(cfg.analysis.format);
      const Split split = parse_split(split_name);
      const Corpus corpus = read_corpus(corpus_dir);
      const TriggerSpec spec = resolve_trigger(corpus.config, trigger);
      const TriggerReport rep = per_trigger_report(corpus, spec, split, cfg.analysis.grid);
      json summary = {{"trigger", trigger}, {"split", split_name}, {"count", rep.count}};
      if (!rep.density) {
        summary["status"] = "no samples";
        out << "no samples: trigger '" << trigger << "' does not occur in " << split_name << "\n";
      } else {
        const std::string stem = "density-" + trigger + "-" + split_name;
        const fs::path image = out_dir / (stem + (pf == PlotFormat::kPng ? ".png" : ".svg"));
        const fs::path sidecar = emit_plot(*rep.density, image, pf);
        summary["status"] = "ok";
        summary["mean_start"] = rep.mean_x;
        summary["mean_duration"] = rep.mean_y;
        summary["var_start"] = rep.var_x;
        summary["var_duration"] = rep.var_y;
        summary["bandwidths"] = {rep.density->h_x, rep.density->h_y};
        summary["grid"] = rep.density->size();
        summary["image"] = image.string();
        summary["csv"] = sidecar.string();
        out << "wrote " << image.string() << " and " << sidecar.string() << " (" << rep.count << " samples)\n";
      }
      manifest.doc()["outputs"] = summary;
      std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
    }
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    err << "error: " << e.what() << "\n";
    manifest.finish(code, e.what());
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    manifest.finish(kExitData, e.what());
    return kExitData;
  }
  manifest.finish(kExitOk, "");
  return kExitOk;
}

}  // namespace bssard::cli
