// lesionnet command-line tool: synth, split, train, eval, report.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lesionnet/lesionnet.h"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Carries a status out of a command so main can turn it into the exit code.
struct Failure {
  int status;
  std::string message;
};

void check(ln_status st, const std::string& context) {
  if (st != LN_OK) throw Failure{st, context + ": " + ln_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{LN_ERR_USAGE, message}; }

std::string take(char* s) {
  std::string out = s ? s : "";
  ln_string_free(s);
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Failure{LN_ERR_IO, path.string() + ": write failed"};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{LN_ERR_IO, dir.string() + ": " + ec.message()};
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ModelPtr {
  ln_model* p = nullptr;
  ~ModelPtr() { ln_model_free(p); }
};
struct DatasetPtr {
  ln_dataset* p = nullptr;
  ~DatasetPtr() { ln_dataset_free(p); }
};
struct ReportPtr {
  ln_report* p = nullptr;
  ~ReportPtr() { ln_report_free(p); }
};

int equalize_code(const std::string& mode) {
  if (mode == "none") return 0;
  if (mode == "channel") return 1;
  if (mode == "luminance") return 2;
  usage_error("unknown equalization mode '" + mode + "'");
}

// Where each option's value came from: the command line, the config file or
// the built-in default.
ojson option_sources(const CLI::App& cmd, const std::vector<std::string>& argv) {
  ojson out;
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    bool on_cli = false;
    for (const std::string& a : argv) {
      if (a == "--" + name || a.rfind("--" + name + "=", 0) == 0) on_cli = true;
    }
    out[name] = on_cli ? "cli" : (opt->count() > 0 ? "config" : "default");
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n_per_class = 100;
  std::size_t classes = 3;
  int side = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
};

void run_synth(const SynthArgs& a) {
  check(ln_synth_write(a.n_per_class, a.classes, a.side, a.seed, a.out_dir.c_str()), "synth");
  std::printf("wrote %zu images and metadata.csv to %s\n", a.n_per_class * a.classes,
              a.out_dir.c_str());
}

struct SplitArgs {
  std::string data_dir;
  std::string metadata;
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;
  bool by_lesion = false;
  std::string out_dir;
};

std::string metadata_path(const std::string& metadata, const std::string& data_dir) {
  if (!metadata.empty()) return metadata;
  if (data_dir.empty()) usage_error("one of --metadata or --data-dir is required");
  return (fs::path(data_dir) / "metadata.csv").string();
}

void run_split(const SplitArgs& a) {
  ln_split_options o;
  ln_split_options_default(&o);
  o.train = a.train;
  o.val = a.val;
  o.test = a.test;
  o.seed = a.seed;
  o.group_by_lesion = a.by_lesion;
  char* summary = nullptr;
  check(ln_split_write(metadata_path(a.metadata, a.data_dir).c_str(), &o, a.out_dir.c_str(),
                       &summary),
        "split");
  std::fputs(take(summary).c_str(), stdout);
}

struct TrainArgs {
  std::string data_dir;
  std::string metadata;
  std::string image_dir;
  std::string split_dir;
  std::string train_manifest;
  std::string val_manifest;
  std::string arch = "paper";
  int input_side = 512;
  std::size_t classes = 7;
  double width = 1.0;
  std::string global_pool = "average";
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double dropout = 0.5;
  std::optional<double> freeze;
  std::string init_from;
  std::uint64_t seed = 0;
  bool no_augment = false;
  bool no_class_weights = false;
  std::string equalize = "channel";
  std::string out_dir;
  bool quiet = false;
};

void epoch_printer(const ln_epoch_stats* s, void*) {
  if (s->has_val) {
    std::printf("epoch %3zu  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f\n", s->epoch,
                s->train_loss, s->train_accuracy, s->val_loss, s->val_accuracy);
  } else {
    std::printf("epoch %3zu  loss %.4f  acc %.4f\n", s->epoch, s->train_loss, s->train_accuracy);
  }
  std::fflush(stdout);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{LN_ERR_IO, path + ": cannot open"};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void resolve_manifests(const std::string& split_dir, std::string& train, std::string& val) {
  if (!split_dir.empty()) {
    if (train.empty()) train = (fs::path(split_dir) / "train.txt").string();
    if (val.empty() && fs::exists(fs::path(split_dir) / "val.txt")) {
      val = (fs::path(split_dir) / "val.txt").string();
    }
  }
}

void run_train(const TrainArgs& a, const CLI::App& cmd, const std::vector<std::string>& argv) {
  const std::string started = utc_now();
  const std::string metadata = metadata_path(a.metadata, a.data_dir);
  std::string train_manifest = a.train_manifest;
  std::string val_manifest = a.val_manifest;
  resolve_manifests(a.split_dir, train_manifest, val_manifest);

  ModelPtr model;
  if (!a.init_from.empty()) {
    check(ln_model_load(a.init_from.c_str(), &model.p), "loading " + a.init_from);
    if (ln_model_num_classes(model.p) != a.classes) {
      check(ln_model_replace_head(model.p, a.classes, a.seed), "replacing output layer");
    }
  } else if (a.arch == "paper") {
    ln_paper_options o;
    ln_paper_options_default(&o);
    o.input_side = a.input_side;
    o.num_classes = a.classes;
    o.width = a.width;
    o.dropout_rate = a.dropout;
    o.global_max_pool = a.global_pool == "max";
    o.seed = a.seed;
    check(ln_model_create_paper(&o, &model.p), "building model");
  } else {
    check(ln_model_create_from_json(read_text(a.arch).c_str(), a.seed, &model.p), a.arch);
  }
  if (ln_model_num_classes(model.p) != a.classes) {
    throw Failure{LN_ERR_CONSISTENCY, "architecture has " +
                                          std::to_string(ln_model_num_classes(model.p)) +
                                          " outputs, --classes is " + std::to_string(a.classes)};
  }
  if (!a.quiet) std::fputs(take([&] {
                             char* s = nullptr;
                             check(ln_model_summary(model.p, &s), "summary");
                             return s;
                           }()).c_str(),
                           stdout);

  ln_dataset_options dopt;
  ln_dataset_options_default(&dopt);
  dopt.input_side = ln_model_input_side(model.p);
  dopt.num_classes = a.classes;
  dopt.equalize = equalize_code(a.equalize);
  if (!a.image_dir.empty()) dopt.image_dir = a.image_dir.c_str();
  DatasetPtr train_set, val_set;
  check(ln_dataset_open(metadata.c_str(), train_manifest.empty() ? nullptr : train_manifest.c_str(),
                        &dopt, &train_set.p),
        "loading training data");
  if (!val_manifest.empty()) {
    check(ln_dataset_open(metadata.c_str(), val_manifest.c_str(), &dopt, &val_set.p),
          "loading validation data");
  }

  ensure_dir(a.out_dir);
  const fs::path out(a.out_dir);
  const std::string history = (out / "history.csv").string();
  ln_train_options t;
  ln_train_options_default(&t);
  t.epochs = a.epochs;
  t.batch_size = a.batch_size;
  t.learning_rate = a.lr;
  t.dropout_rate = a.dropout;
  t.freeze_fraction = a.freeze.value_or(-1.0);
  t.use_class_weights = !a.no_class_weights;
  t.augment = !a.no_augment;
  t.seed = a.seed;
  t.on_epoch = a.quiet ? nullptr : epoch_printer;
  t.history_csv = history.c_str();
  char* summary = nullptr;
  check(ln_train(model.p, train_set.p, val_set.p, &t, &summary), "training");
  const ojson result = ojson::parse(take(summary));
  check(ln_model_save(model.p, (out / "model.ckpt").string().c_str()), "saving checkpoint");

  ojson m;
  m["tool"] = "lesionnet";
  m["version"] = ln_version();
  m["command"] = "train";
  m["started_utc"] = started;
  m["finished_utc"] = utc_now();
  m["inputs"] = {{"metadata", metadata},
                 {"image_dir", a.image_dir},
                 {"train_manifest", train_manifest},
                 {"val_manifest", val_manifest},
                 {"arch", a.arch},
                 {"init_from", a.init_from}};
  m["config"] = {{"input_side", ln_model_input_side(model.p)},
                 {"classes", a.classes},
                 {"width", a.width},
                 {"global_pool", a.global_pool},
                 {"epochs", a.epochs},
                 {"batch_size", a.batch_size},
                 {"learning_rate", a.lr},
                 {"adam_beta1", t.beta1},
                 {"adam_beta2", t.beta2},
                 {"adam_epsilon", t.adam_epsilon},
                 {"dropout", a.dropout},
                 {"freeze", a.freeze ? ojson(*a.freeze) : ojson(nullptr)},
                 {"augment", !a.no_augment},
                 {"class_weighting", !a.no_class_weights},
                 {"equalize", a.equalize},
                 {"seed", a.seed}};
  m["config_sources"] = option_sources(cmd, argv);
  m["train_samples"] = ln_dataset_size(train_set.p);
  m["val_samples"] = val_set.p ? ln_dataset_size(val_set.p) : 0;
  m["result"] = result;
  m["outputs"] = {{"checkpoint", "model.ckpt"}, {"history", "history.csv"}};
  write_file(out / "manifest.json", m.dump(2) + "\n");
  std::printf("wrote %s, %s, %s\n", (out / "model.ckpt").string().c_str(), history.c_str(),
              (out / "manifest.json").string().c_str());
}

struct ReportArgs {
  std::vector<std::string> formats{"text"};
  std::string out_dir;
};

void emit_report(const ln_report* report, const ReportArgs& a) {
  if (!a.out_dir.empty()) {
    ensure_dir(a.out_dir);
    check(ln_report_write_confusion_csv(report, (fs::path(a.out_dir) / "confusion.csv").c_str()),
          "writing confusion matrix");
  }
  for (const std::string& f : a.formats) {
    char* text = nullptr;
    check(ln_report_render(report, f.c_str(), &text), "rendering report");
    const std::string doc = take(text);
    if (a.out_dir.empty()) {
      std::fputs(doc.c_str(), stdout);
    } else {
      const char* name = f == "svg" ? "confusion.svg" : f == "csv" ? "report.csv" : "report.txt";
      write_file(fs::path(a.out_dir) / name, doc);
      if (f == "text") std::fputs(doc.c_str(), stdout);
    }
  }
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string metadata;
  std::string image_dir;
  std::string manifest;
  std::string oracle_cm;
  std::optional<std::size_t> classes;
  std::string equalize = "channel";
  ReportArgs report;
};

void run_eval(const EvalArgs& a) {
  ReportPtr report;
  if (!a.oracle_cm.empty()) {
    check(ln_report_from_confusion_csv(a.oracle_cm.c_str(), &report.p), "reading " + a.oracle_cm);
    emit_report(report.p, a.report);
    return;
  }
  if (a.checkpoint.empty()) usage_error("--checkpoint is required unless --oracle-cm is given");
  ModelPtr model;
  check(ln_model_load(a.checkpoint.c_str(), &model.p), "loading " + a.checkpoint);
  const std::size_t k = ln_model_num_classes(model.p);
  if (a.classes && *a.classes != k) {
    throw Failure{LN_ERR_CONSISTENCY, "checkpoint has " + std::to_string(k) +
                                          " classes, --classes is " +
                                          std::to_string(*a.classes)};
  }
  ln_dataset_options dopt;
  ln_dataset_options_default(&dopt);
  dopt.input_side = ln_model_input_side(model.p);
  dopt.num_classes = k;
  dopt.equalize = equalize_code(a.equalize);
  if (!a.image_dir.empty()) dopt.image_dir = a.image_dir.c_str();
  DatasetPtr data;
  check(ln_dataset_open(metadata_path(a.metadata, a.data_dir).c_str(),
                        a.manifest.empty() ? nullptr : a.manifest.c_str(), &dopt, &data.p),
        "loading evaluation data");
  check(ln_evaluate(model.p, data.p, &report.p), "evaluating");
  emit_report(report.p, a.report);
}

struct ConfusionArgs {
  std::string confusion;
  ReportArgs report;
};

void run_report(const ConfusionArgs& a) {
  ReportPtr report;
  check(ln_report_from_confusion_csv(a.confusion.c_str(), &report.p), "reading " + a.confusion);
  emit_report(report.p, a.report);
}

void add_report_flags(CLI::App* cmd, ReportArgs& r) {
  cmd->add_option("--format", r.formats, "Report formats: text, csv, svg")
      ->delimiter(',')
      ->check(CLI::IsMember({"text", "csv", "svg"}))
      ->capture_default_str();
  cmd->add_option("--out-dir", r.out_dir,
                  "Write report.txt / report.csv / confusion.svg / confusion.csv here");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skin-lesion CNN pipeline: synthetic data, splitting, training, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ln_version());
  // One config file for all commands: each command reads its own [section].
  // Fallthrough lets --config follow the subcommand name.
  app.set_config("--config", "", "INI/TOML file with [synth], [split], [train], [eval] or [report] sections");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  synth_cmd->add_option("--n-per-class", synth.n_per_class, "Images per class")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--classes", synth.classes, "Number of classes (1-7)")
      ->check(CLI::Range(1, 7))
      ->capture_default_str();
  synth_cmd->add_option("--side", synth.side, "Image side in pixels")
      ->check(CLI::Range(4, 4096))
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--out-dir", synth.out_dir)->required();

  SplitArgs split;
  CLI::App* split_cmd = app.add_subcommand("split", "Stratified train/val/test split");
  split_cmd->add_option("--data-dir", split.data_dir, "Directory holding metadata.csv");
  split_cmd->add_option("--metadata", split.metadata, "Metadata CSV (overrides --data-dir)");
  split_cmd->add_option("--train", split.train)->capture_default_str();
  split_cmd->add_option("--val", split.val)->capture_default_str();
  split_cmd->add_option("--test", split.test)->capture_default_str();
  split_cmd->add_option("--seed", split.seed)->capture_default_str();
  split_cmd->add_flag("--group-by-lesion", split.by_lesion,
                      "Keep all images of a lesion in the same part");
  split_cmd->add_option("--out-dir", split.out_dir)->required();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data-dir", train.data_dir, "Directory holding metadata.csv, images/");
  train_cmd->add_option("--metadata", train.metadata);
  train_cmd->add_option("--image-dir", train.image_dir);
  train_cmd->add_option("--split-dir", train.split_dir, "Directory holding train.txt, val.txt");
  train_cmd->add_option("--train-manifest", train.train_manifest);
  train_cmd->add_option("--val-manifest", train.val_manifest);
  train_cmd->add_option("--arch", train.arch, "'paper' or an architecture JSON file")
      ->capture_default_str();
  train_cmd->add_option("--input-side", train.input_side)
      ->check(CLI::Range(8, 4096))
      ->capture_default_str();
  train_cmd->add_option("--classes", train.classes)->check(CLI::Range(1, 7))->capture_default_str();
  train_cmd->add_option("--width", train.width, "Channel multiplier")
      ->check(CLI::Range(1e-3, 16.0))
      ->capture_default_str();
  train_cmd->add_option("--global-pool", train.global_pool)
      ->check(CLI::IsMember({"average", "max"}))
      ->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--dropout", train.dropout)->check(CLI::Range(0.0, 0.999))->capture_default_str();
  train_cmd->add_option("--freeze", train.freeze, "Fraction of parameterized layers to freeze")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--init-from", train.init_from, "Start from this checkpoint");
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_flag("--no-augment", train.no_augment);
  train_cmd->add_flag("--no-class-weights", train.no_class_weights);
  train_cmd->add_option("--equalize", train.equalize)
      ->check(CLI::IsMember({"none", "channel", "luminance"}))
      ->capture_default_str();
  train_cmd->add_option("--out-dir", train.out_dir)->required();
  train_cmd->add_flag("--quiet", train.quiet);

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint);
  eval_cmd->add_option("--data-dir", eval.data_dir);
  eval_cmd->add_option("--metadata", eval.metadata);
  eval_cmd->add_option("--image-dir", eval.image_dir);
  eval_cmd->add_option("--manifest", eval.manifest, "Image ids to evaluate (default: all)");
  eval_cmd->add_option("--oracle-cm", eval.oracle_cm,
                       "Metrics only: read a confusion-matrix CSV instead of running a model");
  eval_cmd->add_option("--classes", eval.classes, "Expected class count");
  eval_cmd->add_option("--equalize", eval.equalize)
      ->check(CLI::IsMember({"none", "channel", "luminance"}))
      ->capture_default_str();
  add_report_flags(eval_cmd, eval.report);

  ConfusionArgs report;
  CLI::App* report_cmd = app.add_subcommand("report", "Render a report from a confusion CSV");
  report_cmd->add_option("--confusion", report.confusion, "Confusion-matrix CSV")->required();
  add_report_flags(report_cmd, report.report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : LN_ERR_USAGE;
  }

  const std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (*synth_cmd) run_synth(synth);
    if (*split_cmd) run_split(split);
    if (*train_cmd) run_train(train, *train_cmd, args);
    if (*eval_cmd) run_eval(eval);
    if (*report_cmd) run_report(report);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.status;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return LN_ERR_INTERNAL;
  }
  return 0;
}
