// Exercises the shared library through lesionnet.h only.
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lesionnet/lesionnet.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lesionnet_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  ln_string_free(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ln_model* small_model(size_t classes, int side = 32) {
  ln_paper_options o;
  ln_paper_options_default(&o);
  o.input_side = side;
  o.num_classes = classes;
  o.width = 0.125;
  o.seed = 1;
  ln_model* m = nullptr;
  EXPECT_EQ(ln_model_create_paper(&o, &m), LN_OK) << ln_last_error();
  return m;
}

}  // namespace

TEST(CApi, DefaultsAndVersion) {
  EXPECT_STREQ(ln_version(), "0.1.0");
  ln_paper_options p;
  ln_paper_options_default(&p);
  EXPECT_EQ(p.input_side, 512);
  EXPECT_EQ(p.num_classes, 7u);
  EXPECT_EQ(p.dropout_rate, 0.5);
  ln_train_options t;
  ln_train_options_default(&t);
  EXPECT_EQ(t.epochs, 50u);
  EXPECT_EQ(t.batch_size, 32u);
  EXPECT_DOUBLE_EQ(t.learning_rate, 1e-3);
  EXPECT_LT(t.freeze_fraction, 0.0);
  ln_split_options s;
  ln_split_options_default(&s);
  EXPECT_DOUBLE_EQ(s.train + s.val + s.test, 1.0);
}

TEST(CApi, ErrorsCarryStatusAndMessage) {
  ln_model* m = nullptr;
  EXPECT_EQ(ln_model_load("/nonexistent/x.ckpt", &m), LN_ERR_IO);
  EXPECT_EQ(m, nullptr);
  EXPECT_NE(std::string(ln_last_error()).find("x.ckpt"), std::string::npos);
  ln_paper_options o;
  ln_paper_options_default(&o);
  o.num_classes = 8;
  EXPECT_EQ(ln_model_create_paper(&o, &m), LN_ERR_USAGE);
  EXPECT_EQ(ln_model_create_paper(nullptr, &m), LN_ERR_USAGE);
  EXPECT_EQ(ln_model_create_from_json("{not json", 0, &m), LN_ERR_USAGE);
}

TEST(CApi, FullSizeSummaryListsWarnings) {
  ln_paper_options o;
  ln_paper_options_default(&o);
  ln_model* m = nullptr;
  ASSERT_EQ(ln_model_create_paper(&o, &m), LN_OK) << ln_last_error();
  char* s = nullptr;
  ASSERT_EQ(ln_model_summary(m, &s), LN_OK);
  const std::string summary = take(s);
  EXPECT_NE(summary.find("32x510x510"), std::string::npos) << summary;
  EXPECT_NE(summary.find("32x253x253"), std::string::npos);
  EXPECT_NE(summary.find("4096"), std::string::npos);
  EXPECT_NE(summary.find("warning"), std::string::npos);
  EXPECT_EQ(ln_model_input_side(m), 512);
  ln_model_free(m);
}

TEST(CApi, ForwardSaveLoadAndHeadSwap) {
  ln_model* m = small_model(7);
  ASSERT_NE(m, nullptr);
  std::vector<float> x(3 * 32 * 32);
  for (size_t i = 0; i < x.size(); ++i) x[i] = float(i % 17) / 17.0f;
  std::vector<float> y(7), y2(7);
  ASSERT_EQ(ln_model_forward(m, x.data(), x.size(), y.data(), y.size()), LN_OK);
  double sum = 0;
  for (float v : y) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-5);
  EXPECT_EQ(ln_model_forward(m, x.data(), x.size() - 1, y.data(), y.size()), LN_ERR_USAGE);

  const fs::path dir = fresh_dir("ckpt");
  const std::string path = (dir / "m.ckpt").string();
  ASSERT_EQ(ln_model_save(m, path.c_str()), LN_OK);
  ln_model* back = nullptr;
  ASSERT_EQ(ln_model_load(path.c_str(), &back), LN_OK);
  ASSERT_EQ(ln_model_forward(back, x.data(), x.size(), y2.data(), y2.size()), LN_OK);
  EXPECT_EQ(std::memcmp(y.data(), y2.data(), y.size() * sizeof(float)), 0);

  char* a = nullptr;
  char* b = nullptr;
  ASSERT_EQ(ln_model_arch_json(m, &a), LN_OK);
  ASSERT_EQ(ln_model_arch_json(back, &b), LN_OK);
  const std::string arch = take(a);
  EXPECT_EQ(arch, take(b));
  ln_model* from_json = nullptr;
  ASSERT_EQ(ln_model_create_from_json(arch.c_str(), 3, &from_json), LN_OK) << ln_last_error();
  EXPECT_EQ(ln_model_num_classes(from_json), 7u);
  ln_model_free(from_json);

  ASSERT_EQ(ln_model_replace_head(back, 3, 5), LN_OK);
  EXPECT_EQ(ln_model_num_classes(back), 3u);
  std::vector<float> y3(3);
  EXPECT_EQ(ln_model_forward(back, x.data(), x.size(), y3.data(), y3.size()), LN_OK);
  EXPECT_EQ(ln_model_freeze(back, 2.0), LN_ERR_USAGE);
  EXPECT_EQ(ln_model_freeze(back, 0.7), LN_OK);
  ln_model_free(back);
  ln_model_free(m);
}

TEST(CApi, SynthSplitTrainEvaluate) {
  const fs::path dir = fresh_dir("pipeline");
  ASSERT_EQ(ln_synth_write(10, 2, 32, 4, dir.string().c_str()), LN_OK) << ln_last_error();
  const std::string meta = (dir / "metadata.csv").string();
  ln_split_options so;
  ln_split_options_default(&so);
  so.train = 0.6;
  so.val = 0.4;
  so.test = 0.0;
  char* summary = nullptr;
  ASSERT_EQ(ln_split_write(meta.c_str(), &so, dir.string().c_str(), &summary), LN_OK)
      << ln_last_error();
  const std::string table = take(summary);
  EXPECT_EQ(table, slurp(dir / "split_summary.csv"));
  EXPECT_NE(table.find("all,20,12,8,0"), std::string::npos) << table;

  ln_dataset_options dopt;
  ln_dataset_options_default(&dopt);
  dopt.input_side = 32;
  dopt.num_classes = 2;
  ln_dataset* train = nullptr;
  ln_dataset* val = nullptr;
  ASSERT_EQ(ln_dataset_open(meta.c_str(), (dir / "train.txt").string().c_str(), &dopt, &train),
            LN_OK)
      << ln_last_error();
  ASSERT_EQ(ln_dataset_open(meta.c_str(), (dir / "val.txt").string().c_str(), &dopt, &val),
            LN_OK);
  EXPECT_EQ(ln_dataset_size(train), 12u);
  EXPECT_EQ(ln_dataset_size(val), 8u);
  EXPECT_EQ(ln_dataset_num_classes(train), 2u);

  ln_model* wrong = small_model(3);
  ln_train_options to;
  ln_train_options_default(&to);
  to.epochs = 2;
  to.batch_size = 4;
  EXPECT_EQ(ln_train(wrong, train, val, &to, nullptr), LN_ERR_CONSISTENCY);
  ln_model_free(wrong);

  ln_model* m = small_model(2);
  struct Seen {
    size_t calls = 0;
    double last_val = -1;
  } seen;
  to.on_epoch = [](const ln_epoch_stats* s, void* user) {
    auto* st = static_cast<Seen*>(user);
    ++st->calls;
    EXPECT_EQ(s->epoch, st->calls);
    EXPECT_TRUE(s->has_val);
    st->last_val = s->val_accuracy;
  };
  to.user = &seen;
  const std::string hist = (dir / "history.csv").string();
  to.history_csv = hist.c_str();
  char* js = nullptr;
  ASSERT_EQ(ln_train(m, train, val, &to, &js), LN_OK) << ln_last_error();
  const std::string sj = take(js);
  EXPECT_NE(sj.find("class_weights"), std::string::npos) << sj;
  EXPECT_EQ(seen.calls, 2u);
  const std::string history = slurp(hist);
  EXPECT_EQ(history.rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0), 0u);
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 3);

  ln_report* r = nullptr;
  ASSERT_EQ(ln_evaluate(m, val, &r), LN_OK) << ln_last_error();
  EXPECT_EQ(ln_report_total(r), 8u);
  EXPECT_DOUBLE_EQ(ln_report_accuracy(r), seen.last_val);
  EXPECT_TRUE(std::isfinite(ln_report_loss(r)));
  char* csv = nullptr;
  ASSERT_EQ(ln_report_render(r, "csv", &csv), LN_OK);
  EXPECT_EQ(take(csv).rfind("class,precision,recall,f1,support\n", 0), 0u);
  EXPECT_EQ(ln_report_render(r, "pdf", &csv), LN_ERR_USAGE);
  ln_report_free(r);

  ln_model_free(m);
  ln_dataset_free(train);
  ln_dataset_free(val);
}

TEST(CApi, ReportsFromCountsAndCsv) {
  const char* labels[] = {"a", "b"};
  const uint64_t counts[] = {1, 1, 0, 1};
  ln_report* r = nullptr;
  ASSERT_EQ(ln_report_from_counts(2, labels, counts, &r), LN_OK);
  EXPECT_DOUBLE_EQ(ln_report_accuracy(r), 2.0 / 3.0);
  EXPECT_TRUE(std::isnan(ln_report_loss(r)));
  const fs::path dir = fresh_dir("report");
  const std::string p = (dir / "cm.csv").string();
  ASSERT_EQ(ln_report_write_confusion_csv(r, p.c_str()), LN_OK);
  ln_report* back = nullptr;
  ASSERT_EQ(ln_report_from_confusion_csv(p.c_str(), &back), LN_OK);
  char* t1 = nullptr;
  char* t2 = nullptr;
  ASSERT_EQ(ln_report_render(r, "text", &t1), LN_OK);
  ASSERT_EQ(ln_report_render(back, "text", &t2), LN_OK);
  EXPECT_EQ(take(t1), take(t2));
  ln_report_free(back);
  ln_report_free(r);

  ln_report* ref = nullptr;
  ASSERT_EQ(ln_report_from_confusion_csv(LESIONNET_DATA_DIR "/ham10000_resnet_confusion.csv", &ref),
            LN_OK)
      << ln_last_error();
  EXPECT_NEAR(ln_report_accuracy(ref), 0.9051, 1e-4);
  EXPECT_EQ(ln_report_total(ref), 3004u);
  ln_report_free(ref);
  EXPECT_EQ(ln_report_from_confusion_csv("/nonexistent.csv", &ref), LN_ERR_IO);
}
