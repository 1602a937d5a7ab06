#include "lesionnet/lesionnet.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionnet/checkpoint.hpp"
#include "lesionnet/dataset.hpp"
#include "lesionnet/error.hpp"
#include "lesionnet/metrics.hpp"
#include "lesionnet/model.hpp"
#include "lesionnet/trainer.hpp"

namespace ln = lesionnet;

struct ln_model {
  ln::ModelState state;
  std::vector<ln::ShapeWarning> warnings;
};

struct ln_dataset {
  ln::SampleSet samples;
  ln::ClassCatalog catalog;
};

struct ln_report {
  ln::ConfusionMatrix cm;
  ln::MetricsReport metrics;
  double loss = std::numeric_limits<double>::quiet_NaN();
};

namespace {

thread_local std::string last_error;

template <typename Fn>
ln_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return LN_OK;
  } catch (const ln::Error& e) {
    last_error = e.what();
    return static_cast<ln_status>(static_cast<int>(e.kind()));
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return LN_ERR_INTERNAL;
}

void require(bool ok, const char* what) {
  if (!ok) ln::fail(ln::ErrorKind::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string shape_dims(const ln::Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.rank(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

ln_report* make_report(ln::ConfusionMatrix cm) {
  auto report = std::make_unique<ln_report>();
  report->metrics = ln::aggregate_metrics(cm);
  report->cm = std::move(cm);
  return report.release();
}

void check_catalog(const ln::ModelState& model, const ln_dataset& data) {
  if (!(model.classes == data.catalog)) {
    ln::fail(ln::ErrorKind::kConsistency,
             "model has " + std::to_string(model.classes.size()) + " classes, dataset has " +
                 std::to_string(data.catalog.size()));
  }
}

}  // namespace

extern "C" {

const char* ln_version(void) { return "0.1.0"; }

const char* ln_last_error(void) { return last_error.c_str(); }

void ln_string_free(char* s) { std::free(s); }

void ln_paper_options_default(ln_paper_options* options) {
  if (!options) return;
  *options = {};
  options->input_side = 512;
  options->num_classes = ln::kNumLesionClasses;
  options->width = 1.0;
  options->dropout_rate = 0.5;
}

ln_status ln_model_create_paper(const ln_paper_options* options, ln_model** out) {
  return guarded([&] {
    require(options && out, "null argument");
    require(options->num_classes >= 1 && options->num_classes <= ln::kNumLesionClasses,
            "class count must be between 1 and 7");
    ln::PaperCnnOptions o;
    o.width = options->width;
    o.dropout_rate = options->dropout_rate;
    o.global_pool = options->global_max_pool ? ln::PoolMode::kMax : ln::PoolMode::kAverage;
    o.sigmoid_head = options->sigmoid_head != 0;
    ln::PaperArch arch = ln::paper_cnn_config(options->input_side, options->num_classes, o);
    auto model = std::make_unique<ln_model>();
    model->state = ln::init_params(arch.config, options->seed,
                                   ln::ClassCatalog::first(options->num_classes));
    model->warnings = std::move(arch.warnings);
    *out = model.release();
  });
}

ln_status ln_model_create_from_json(const char* arch_json, uint64_t seed, ln_model** out) {
  return guarded([&] {
    require(arch_json && out, "null argument");
    const ln::ArchConfig config = ln::arch_from_json(arch_json);
    require(config.num_classes >= 1 && config.num_classes <= ln::kNumLesionClasses,
            "class count must be between 1 and 7");
    auto model = std::make_unique<ln_model>();
    model->state = ln::init_params(config, seed, ln::ClassCatalog::first(config.num_classes));
    *out = model.release();
  });
}

ln_status ln_model_load(const char* path, ln_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto model = std::make_unique<ln_model>();
    model->state = ln::load_checkpoint(path);
    *out = model.release();
  });
}

ln_status ln_model_save(const ln_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "null argument");
    ln::save_checkpoint(model->state, path);
  });
}

ln_status ln_model_replace_head(ln_model* model, size_t num_classes, uint64_t seed) {
  return guarded([&] {
    require(model != nullptr, "null argument");
    require(num_classes >= 1 && num_classes <= ln::kNumLesionClasses,
            "class count must be between 1 and 7");
    model->state = ln::replace_head(std::move(model->state),
                                    ln::ClassCatalog::first(num_classes), seed);
    model->warnings.clear();
  });
}

ln_status ln_model_freeze(ln_model* model, double fraction) {
  return guarded([&] {
    require(model != nullptr, "null argument");
    model->state = ln::freeze_layers(std::move(model->state), fraction);
  });
}

size_t ln_model_num_classes(const ln_model* model) {
  return model ? model->state.config.num_classes : 0;
}

int ln_model_input_side(const ln_model* model) {
  return model ? static_cast<int>(model->state.config.input_shape[1]) : 0;
}

ln_status ln_model_summary(const ln_model* model, char** out) {
  return guarded([&] {
    require(model && out, "null argument");
    const ln::ModelState& s = model->state;
    const std::vector<ln::Shape> shapes = ln::infer_shapes(s.config);
    const std::vector<std::size_t> param_layers = s.parameterized_layers();
    std::string text = "input " + shape_dims(s.config.input_shape) + "\n";
    std::size_t total = 0;
    char buf[256];
    for (std::size_t i = 0; i < s.config.layers.size(); ++i) {
      std::string note;
      for (std::size_t p = 0; p < param_layers.size(); ++p) {
        if (param_layers[p] != i) continue;
        const std::size_t n = s.params[2 * p].size() + s.params[2 * p + 1].size();
        total += n;
        note = std::to_string(n) + " params" + (s.frozen[p] ? ", frozen" : "");
      }
      std::snprintf(buf, sizeof buf, "%3zu  %-22s %-16s %s\n", i,
                    s.config.layers[i].describe().c_str(), shape_dims(shapes[i]).c_str(),
                    note.c_str());
      text += buf;
    }
    text += "total parameters " + std::to_string(total) + "\n";
    text += "classes";
    for (const std::string& c : s.classes.codes()) text += " " + c;
    text += "\n";
    for (const ln::ShapeWarning& w : model->warnings) {
      text += "warning: layer " + std::to_string(w.layer_index) + " (" + w.row +
              "): published shape " + w.declared + ", computed " + w.inferred + "\n";
    }
    *out = dup_string(text);
  });
}

ln_status ln_model_arch_json(const ln_model* model, char** out) {
  return guarded([&] {
    require(model && out, "null argument");
    *out = dup_string(ln::arch_to_json(model->state.config));
  });
}

ln_status ln_model_forward(const ln_model* model, const float* input, size_t input_len,
                           float* output, size_t output_len) {
  return guarded([&] {
    require(model && input && output, "null argument");
    const ln::ModelState& s = model->state;
    require(input_len == s.config.input_shape.numel(), "input length does not match model");
    require(output_len == s.config.num_classes, "output length does not match class count");
    ln::Network<float> net(s);
    const ln::Tensor<float> probs = net.forward(
        ln::Tensor<float>(s.config.input_shape, std::vector<float>(input, input + input_len)));
    std::copy(probs.data().begin(), probs.data().end(), output);
  });
}

void ln_model_free(ln_model* model) { delete model; }

ln_status ln_synth_write(size_t n_per_class, size_t num_classes, int side, uint64_t seed,
                         const char* out_dir) {
  return guarded([&] {
    require(out_dir != nullptr, "null argument");
    ln::write_synth_dataset(ln::synth_dataset(n_per_class, num_classes, side, seed), out_dir);
  });
}

void ln_split_options_default(ln_split_options* options) {
  if (!options) return;
  const ln::SplitSpec spec;
  *options = {spec.train, spec.val, spec.test, spec.seed, 0};
}

ln_status ln_split_write(const char* metadata_csv, const ln_split_options* options,
                         const char* out_dir, char** summary) {
  return guarded([&] {
    require(metadata_csv && options && out_dir, "null argument");
    ln::SplitSpec spec;
    spec.train = options->train;
    spec.val = options->val;
    spec.test = options->test;
    spec.seed = options->seed;
    spec.grouping = options->group_by_lesion ? ln::SplitGrouping::kLesion
                                             : ln::SplitGrouping::kImage;
    spec.validate();
    const std::vector<ln::SampleRecord> records = ln::load_metadata(metadata_csv);
    const ln::Split split = ln::stratified_split(records, spec);

    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) ln::fail(ln::ErrorKind::kIo, dir.string() + ": " + ec.message());
    const std::vector<ln::SampleRecord>* parts[] = {&split.train, &split.val, &split.test};
    const char* names[] = {"train.txt", "val.txt", "test.txt"};
    for (int p = 0; p < 3; ++p) {
      std::vector<std::string> ids;
      for (const ln::SampleRecord& r : *parts[p]) ids.push_back(r.image_id);
      ln::write_manifest(ids, dir / names[p]);
    }

    const ln::ClassCatalog& catalog = ln::ClassCatalog::canonical();
    std::string csv = "class,total,train,val,test\n";
    for (std::size_t c = 0; c < catalog.size(); ++c) {
      std::size_t counts[3] = {0, 0, 0};
      for (int p = 0; p < 3; ++p) {
        for (const ln::SampleRecord& r : *parts[p]) counts[p] += r.dx == catalog[c].code;
      }
      const std::size_t all = counts[0] + counts[1] + counts[2];
      if (all == 0) continue;
      csv += catalog[c].code + "," + std::to_string(all) + "," + std::to_string(counts[0]) + "," +
             std::to_string(counts[1]) + "," + std::to_string(counts[2]) + "\n";
    }
    csv += "all," + std::to_string(records.size()) + "," + std::to_string(split.train.size()) +
           "," + std::to_string(split.val.size()) + "," + std::to_string(split.test.size()) +
           "\n";
    std::FILE* f = std::fopen((dir / "split_summary.csv").string().c_str(), "wb");
    if (!f || std::fwrite(csv.data(), 1, csv.size(), f) != csv.size()) {
      if (f) std::fclose(f);
      ln::fail(ln::ErrorKind::kIo, (dir / "split_summary.csv").string() + ": write failed");
    }
    std::fclose(f);
    if (summary) *summary = dup_string(csv);
  });
}

void ln_dataset_options_default(ln_dataset_options* options) {
  if (!options) return;
  const ln::PreprocessOptions p;
  *options = {p.input_side, 1, ln::kNumLesionClasses, nullptr};
}

ln_status ln_dataset_open(const char* metadata_csv, const char* manifest,
                          const ln_dataset_options* options, ln_dataset** out) {
  return guarded([&] {
    require(metadata_csv && options && out, "null argument");
    require(options->num_classes >= 1 && options->num_classes <= ln::kNumLesionClasses,
            "class count must be between 1 and 7");
    require(options->equalize >= 0 && options->equalize <= 2, "equalize must be 0, 1 or 2");
    ln::PreprocessOptions pre;
    pre.input_side = options->input_side;
    pre.equalize = static_cast<ln::EqualizeMode>(options->equalize);

    std::vector<ln::SampleRecord> records = ln::load_metadata(metadata_csv);
    if (manifest) records = ln::select_records(records, ln::read_manifest(manifest));
    std::vector<std::filesystem::path> dirs;
    if (options->image_dir) {
      dirs.emplace_back(options->image_dir);
    } else {
      const std::filesystem::path base = std::filesystem::path(metadata_csv).parent_path();
      dirs.push_back(base / "images");
      dirs.push_back(base.empty() ? std::filesystem::path(".") : base);
    }
    auto data = std::make_unique<ln_dataset>();
    data->catalog = ln::ClassCatalog::first(options->num_classes);
    data->samples = ln::load_samples(records, dirs, data->catalog, pre);
    *out = data.release();
  });
}

size_t ln_dataset_size(const ln_dataset* dataset) {
  return dataset ? dataset->samples.size() : 0;
}

size_t ln_dataset_num_classes(const ln_dataset* dataset) {
  return dataset ? dataset->catalog.size() : 0;
}

void ln_dataset_free(ln_dataset* dataset) { delete dataset; }

void ln_train_options_default(ln_train_options* options) {
  if (!options) return;
  const ln::TrainConfig c;
  *options = {};
  options->epochs = c.epochs;
  options->batch_size = c.batch_size;
  options->learning_rate = c.adam.learning_rate;
  options->beta1 = c.adam.beta1;
  options->beta2 = c.adam.beta2;
  options->adam_epsilon = c.adam.epsilon;
  options->dropout_rate = *c.dropout_rate;
  options->freeze_fraction = -1.0;
  options->use_class_weights = 1;
  options->augment = 1;
  options->seed = c.seed;
}

ln_status ln_train(ln_model* model, const ln_dataset* train, const ln_dataset* val,
                   const ln_train_options* options, char** summary_json) {
  return guarded([&] {
    require(model && train && options, "null argument");
    check_catalog(model->state, *train);
    if (val) check_catalog(model->state, *val);
    const int side = static_cast<int>(model->state.config.input_shape[1]);
    if (!train->samples.images.empty() && train->samples.images[0].width != side) {
      ln::fail(ln::ErrorKind::kConsistency,
               "dataset images are " + std::to_string(train->samples.images[0].width) +
                   " px, model expects " + std::to_string(side));
    }

    ln::TrainConfig cfg;
    cfg.epochs = options->epochs;
    cfg.batch_size = options->batch_size;
    cfg.adam = {options->learning_rate, options->beta1, options->beta2, options->adam_epsilon};
    if (options->dropout_rate < 0) {
      cfg.dropout_rate.reset();
    } else {
      cfg.dropout_rate = options->dropout_rate;
    }
    if (options->freeze_fraction >= 0) cfg.freeze_fraction = options->freeze_fraction;
    cfg.use_class_weights = options->use_class_weights != 0;
    if (!options->augment) cfg.augment.reset();
    cfg.seed = options->seed;
    if (options->on_epoch) {
      cfg.on_epoch = [options](const ln::EpochStats& s) {
        ln_epoch_stats c{s.epoch, s.train_loss, s.train_accuracy, s.val_loss.has_value(),
                         s.val_loss.value_or(0.0), s.val_accuracy.value_or(0.0)};
        options->on_epoch(&c, options->user);
      };
    }

    ln::TrainResult result =
        ln::train(model->state, train->samples, val ? &val->samples : nullptr, cfg);
    if (options->history_csv) result.history.write_csv(options->history_csv);
    model->state = std::move(result.model);

    if (summary_json) {
      nlohmann::ordered_json j;
      j["class_weights"] = result.class_weights;
      const std::vector<std::size_t> counts = train->samples.class_counts();
      j["train_class_counts"] = counts;
      if (cfg.use_class_weights) {
        nlohmann::ordered_json fr = nlohmann::ordered_json::array();
        for (const ln::Fraction& f : ln::class_weight_fractions(counts)) {
          fr.push_back(std::to_string(f.num) + "/" + std::to_string(f.den));
        }
        j["class_weight_fractions"] = fr;
      }
      const ln::EpochStats& last = result.history.epochs.back();
      j["final"]["epoch"] = last.epoch;
      j["final"]["train_loss"] = last.train_loss;
      j["final"]["train_accuracy"] = last.train_accuracy;
      if (last.val_accuracy) {
        j["final"]["val_loss"] = *last.val_loss;
        j["final"]["val_accuracy"] = *last.val_accuracy;
      }
      *summary_json = dup_string(j.dump(2));
    }
  });
}

ln_status ln_evaluate(const ln_model* model, const ln_dataset* dataset, ln_report** out) {
  return guarded([&] {
    require(model && dataset && out, "null argument");
    check_catalog(model->state, *dataset);
    const ln::EvalResult ev = ln::evaluate(model->state, dataset->samples);
    ln::ConfusionMatrix cm =
        ln::confusion_matrix(ev.labels, ev.predictions, model->state.config.num_classes,
                             model->state.classes.display_names());
    ln_report* report = make_report(std::move(cm));
    report->loss = ev.loss;
    *out = report;
  });
}

ln_status ln_report_from_counts(size_t num_classes, const char* const* labels,
                                const uint64_t* counts, ln_report** out) {
  return guarded([&] {
    require(counts && out, "null argument");
    std::vector<std::string> names;
    for (std::size_t c = 0; c < num_classes; ++c) {
      names.push_back(labels && labels[c] ? labels[c] : std::to_string(c));
    }
    *out = make_report(ln::ConfusionMatrix(
        std::move(names), std::vector<std::uint64_t>(counts, counts + num_classes * num_classes)));
  });
}

ln_status ln_report_from_confusion_csv(const char* path, ln_report** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = make_report(ln::read_confusion_csv(path));
  });
}

ln_status ln_report_render(const ln_report* report, const char* format, char** out) {
  return guarded([&] {
    require(report && format && out, "null argument");
    *out = dup_string(
        ln::render_report(report->metrics, report->cm, ln::parse_report_format(format)));
  });
}

ln_status ln_report_write_confusion_csv(const ln_report* report, const char* path) {
  return guarded([&] {
    require(report && path, "null argument");
    ln::write_confusion_csv(report->cm, path);
  });
}

double ln_report_accuracy(const ln_report* report) {
  return report ? report->metrics.accuracy : std::numeric_limits<double>::quiet_NaN();
}

double ln_report_loss(const ln_report* report) {
  return report ? report->loss : std::numeric_limits<double>::quiet_NaN();
}

uint64_t ln_report_total(const ln_report* report) { return report ? report->metrics.total : 0; }

void ln_report_free(ln_report* report) { delete report; }

}  // extern "C"
